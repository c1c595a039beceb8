#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "nnprobe/stats.hpp"
#include "nnprobe/transform.hpp"

namespace nnprobe::transform {

using nlohmann::json;

const std::vector<double>* Table::column(std::string_view name) const {
  for (const auto& [n, values] : columns)
    if (n == name) return &values;
  return nullptr;
}

double reduce(AggFn fn, std::span<const double> values) {
  switch (fn) {
    case AggFn::count: return static_cast<double>(values.size());
    case AggFn::sum: {
      double s = 0;
      for (double v : values) s += v;
      return s;
    }
    default: break;
  }
  const auto m = stats::moments(values);
  switch (fn) {
    case AggFn::mean: return m.mean;
    case AggFn::var: return m.variance;
    case AggFn::min: return m.min;
    case AggFn::max: return m.max;
    case AggFn::skew: return m.skew;
    default: return 0;
  }
}

Binned bin_values(std::span<const double> values, std::int64_t bins, double lo, double hi) {
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  Binned out;
  out.edges.resize(static_cast<std::size_t>(bins + 1));
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::int64_t i = 0; i <= bins; ++i) out.edges[static_cast<std::size_t>(i)] = lo + width * static_cast<double>(i);
  out.edges.back() = hi;
  out.counts.assign(static_cast<std::size_t>(bins), 0.0);
  for (double v : values) {
    if (!(v >= lo && v <= hi)) continue;
    auto idx = static_cast<std::int64_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
    idx = std::clamp<std::int64_t>(idx, 0, bins - 1);
    // Correct for rounding so membership agrees with the published edges.
    while (idx > 0 && v < out.edges[static_cast<std::size_t>(idx)]) --idx;
    while (idx < bins - 1 && v >= out.edges[static_cast<std::size_t>(idx + 1)]) ++idx;
    out.counts[static_cast<std::size_t>(idx)] += 1.0;
  }
  return out;
}

namespace {

using BranchSet = std::vector<std::pair<std::string, Value>>;
using State = std::variant<Value, BranchSet>;
using Labels = std::optional<std::span<const std::int64_t>>;

const Array& need_array(const Value& v, std::string_view op) {
  if (const auto* a = std::get_if<Array>(&v)) return *a;
  throw InvalidArgument(std::string(op) + " expects an array, got a table");
}

std::int64_t norm_axis(std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw InvalidArgument("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return axis;
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisView {
  std::int64_t outer = 1, extent = 1, inner = 1;
};
AxisView view_axis(const Shape& shape, std::int64_t axis) {
  AxisView v;
  for (std::int64_t i = 0; i < axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
  v.extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

Array do_reshape(const Array& a, const ops::Reshape& r) {
  Shape shape = r.shape;
  const auto n = static_cast<std::int64_t>(a.values.size());
  std::int64_t known = 1;
  std::optional<std::size_t> inferred;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) inferred = i;
    else known *= shape[i];
  }
  if (inferred) {
    if (known == 0 || n % known != 0)
      throw InvalidArgument("cannot reshape " + std::to_string(n) + " elements into " + shape_string(r.shape));
    shape[*inferred] = n / known;
  }
  if (element_count(shape) != n)
    throw InvalidArgument("cannot reshape " + shape_string(a.shape) + " into " + shape_string(r.shape));
  return Array{shape, a.values};
}

Array do_slice(const Array& a, const ops::Slice& s) {
  if (a.is_scalar()) throw InvalidArgument("cannot slice a scalar");
  const auto axis = norm_axis(s.axis, a.shape.size());
  const auto v = view_axis(a.shape, axis);
  auto clampi = [&](std::optional<std::int64_t> x, std::int64_t fallback) {
    if (!x) return fallback;
    std::int64_t i = *x < 0 ? *x + v.extent : *x;
    return std::clamp<std::int64_t>(i, 0, v.extent);
  };
  const auto start = clampi(s.start, 0);
  const auto stop = clampi(s.stop, v.extent);
  const std::int64_t count = stop > start ? (stop - start + s.step - 1) / s.step : 0;
  Array out;
  out.shape = a.shape;
  out.shape[static_cast<std::size_t>(axis)] = count;
  out.values.reserve(static_cast<std::size_t>(v.outer * count * v.inner));
  for (std::int64_t o = 0; o < v.outer; ++o)
    for (std::int64_t k = 0; k < count; ++k) {
      const auto base = (o * v.extent + start + k * s.step) * v.inner;
      out.values.insert(out.values.end(), a.values.begin() + base, a.values.begin() + base + v.inner);
    }
  return out;
}

bool compare(Cmp c, double x, double y) {
  switch (c) {
    case Cmp::gt: return x > y;
    case Cmp::ge: return x >= y;
    case Cmp::lt: return x < y;
    case Cmp::le: return x <= y;
    case Cmp::eq: return x == y;
  }
  return false;
}

Value do_agg(const Value& in, const ops::Agg& a) {
  if (const auto* t = std::get_if<Table>(&in)) {
    if (a.axis && *a.axis != 0) throw InvalidArgument("agg on a table supports axis all or 0 only");
    Table out;
    for (const auto& [name, col] : t->columns) out.add(name, {reduce(a.fn, col)});
    return out;
  }
  const auto& arr = std::get<Array>(in);
  if (!a.axis) return Array::scalar(reduce(a.fn, arr.values));
  const auto axis = norm_axis(*a.axis, arr.shape.size());
  const auto v = view_axis(arr.shape, axis);
  Array out;
  for (std::size_t i = 0; i < arr.shape.size(); ++i)
    if (static_cast<std::int64_t>(i) != axis) out.shape.push_back(arr.shape[i]);
  out.values.resize(static_cast<std::size_t>(v.outer * v.inner));
  std::vector<double> lane(static_cast<std::size_t>(v.extent));
  for (std::int64_t o = 0; o < v.outer; ++o)
    for (std::int64_t i = 0; i < v.inner; ++i) {
      for (std::int64_t k = 0; k < v.extent; ++k)
        lane[static_cast<std::size_t>(k)] = arr.values[static_cast<std::size_t>((o * v.extent + k) * v.inner + i)];
      out.values[static_cast<std::size_t>(o * v.inner + i)] = reduce(a.fn, lane);
    }
  return out;
}

Table do_histogram(const Array& a, const ops::Histogram& h) {
  double lo, hi;
  if (h.range) {
    std::tie(lo, hi) = *h.range;
  } else {
    if (a.values.empty()) throw InvalidArgument("histogram of empty input needs an explicit range");
    auto [mn, mx] = std::minmax_element(a.values.begin(), a.values.end());
    lo = *mn;
    hi = *mx;
  }
  auto b = bin_values(a.values, h.bins, lo, hi);
  Table t;
  t.add("bin_edges", std::move(b.edges));
  t.add("counts", std::move(b.counts));
  return t;
}

Table do_density(const Array& a, const ops::Density& d) {
  if (a.values.empty()) throw InvalidArgument("density of empty input");
  auto [mn, mx] = std::minmax_element(a.values.begin(), a.values.end());
  auto b = bin_values(a.values, d.bins, *mn, *mx);
  const double total = std::accumulate(b.counts.begin(), b.counts.end(), 0.0);
  const double width = (b.edges.back() - b.edges.front()) / static_cast<double>(d.bins);
  for (auto& c : b.counts) c /= total * width;
  Table t;
  t.add("bin_edges", std::move(b.edges));
  t.add("density", std::move(b.counts));
  return t;
}

std::vector<double> normalize_values(const std::vector<double>& v, NormMode mode) {
  std::vector<double> out(v.size(), 0.0);
  if (v.empty()) return out;
  const auto m = stats::moments(v);
  if (mode == NormMode::minmax) {
    if (m.max == m.min) return out;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - m.min) / (m.max - m.min);
  } else {
    const double sd = std::sqrt(m.variance);
    if (sd == 0) return out;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - m.mean) / sd;
  }
  return out;
}

Table do_groupby(const Array& a, const ops::GroupByClass& g, const Labels& labels) {
  if (!labels) throw InvalidArgument("groupby_class requires class labels");
  if (a.is_scalar() || a.shape.front() != static_cast<std::int64_t>(labels->size()))
    throw InvalidArgument("groupby_class: labels (" + std::to_string(labels->size()) +
                          ") not aligned with first dimension of " + shape_string(a.shape));
  const auto rows = a.shape.front();
  const auto inner = rows ? static_cast<std::int64_t>(a.values.size()) / rows : 0;
  std::map<std::int64_t, std::vector<std::int64_t>> members;
  for (std::int64_t r = 0; r < rows; ++r) members[(*labels)[static_cast<std::size_t>(r)]].push_back(r);
  Table t;
  std::vector<double> lane;
  for (const auto& [cls, idx] : members) {
    std::vector<double> col(static_cast<std::size_t>(inner));
    lane.resize(idx.size());
    for (std::int64_t i = 0; i < inner; ++i) {
      for (std::size_t k = 0; k < idx.size(); ++k) lane[k] = a.values[static_cast<std::size_t>(idx[k] * inner + i)];
      col[static_cast<std::size_t>(i)] = reduce(g.fn, lane);
    }
    t.add("class" + std::to_string(cls), std::move(col));
  }
  return t;
}

Table do_top_k(const Array& a, const ops::TopK& op) {
  std::vector<std::size_t> order(a.values.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) { return op.by == TopBy::abs ? std::abs(a.values[i]) : a.values[i]; };
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(op.k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t x, std::size_t y) {
                      const double kx = key(x), ky = key(y);
                      return kx != ky ? kx > ky : x < y;
                    });
  Table t;
  std::vector<double> index, value;
  for (std::size_t i = 0; i < k; ++i) {
    index.push_back(static_cast<double>(order[i]));
    value.push_back(a.values[order[i]]);
  }
  t.add("index", std::move(index));
  t.add("value", std::move(value));
  return t;
}

Table do_merge(const BranchSet& branches, const ops::Merge& m) {
  Table out;
  for (const auto& name : m.names) {
    auto it = std::find_if(branches.begin(), branches.end(), [&](const auto& b) { return b.first == name; });
    if (it == branches.end()) throw InvalidArgument("merge: no branch named '" + name + "'");
    if (const auto* a = std::get_if<Array>(&it->second)) {
      out.add(name, a->values);
    } else {
      for (const auto& [col, values] : std::get<Table>(it->second).columns) out.add(name + "." + col, values);
    }
  }
  return out;
}

Value run(Value data, const TransformSpec& spec, const Labels& labels);

State step(State state, const TransformOp& op, const Labels& labels) {
  if (auto* merge = std::get_if<ops::Merge>(&op.op)) {
    if (!std::holds_alternative<BranchSet>(state)) throw InvalidArgument("merge without a preceding branch");
    return Value{do_merge(std::get<BranchSet>(state), *merge)};
  }
  if (std::holds_alternative<BranchSet>(state))
    throw InvalidArgument(std::string(op.name()) + " after branch; expected merge");
  Value& v = std::get<Value>(state);

  return std::visit(
      [&](const auto& o) -> State {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, ops::Reshape>) {
          return Value{do_reshape(need_array(v, "reshape"), o)};
        } else if constexpr (std::is_same_v<T, ops::Flatten>) {
          const auto& a = need_array(v, "flatten");
          return Value{Array::vector(a.values)};
        } else if constexpr (std::is_same_v<T, ops::Slice>) {
          return Value{do_slice(need_array(v, "slice"), o)};
        } else if constexpr (std::is_same_v<T, ops::Filter>) {
          std::vector<double> kept;
          for (double x : need_array(v, "filter").values)
            if (compare(o.cmp, x, o.value)) kept.push_back(x);
          return Value{Array::vector(std::move(kept))};
        } else if constexpr (std::is_same_v<T, ops::Agg>) {
          return do_agg(v, o);
        } else if constexpr (std::is_same_v<T, ops::Histogram>) {
          return Value{do_histogram(need_array(v, "histogram"), o)};
        } else if constexpr (std::is_same_v<T, ops::Density>) {
          return Value{do_density(need_array(v, "density"), o)};
        } else if constexpr (std::is_same_v<T, ops::Normalize>) {
          if (auto* t = std::get_if<Table>(&v)) {
            Table out;
            for (const auto& [name, col] : t->columns) out.add(name, normalize_values(col, o.mode));
            return Value{out};
          }
          const auto& a = std::get<Array>(v);
          return Value{Array{a.shape, normalize_values(a.values, o.mode)}};
        } else if constexpr (std::is_same_v<T, ops::GroupByClass>) {
          return Value{do_groupby(need_array(v, "groupby_class"), o, labels)};
        } else if constexpr (std::is_same_v<T, ops::Sort>) {
          auto values = need_array(v, "sort").values;
          if (o.descending) std::sort(values.begin(), values.end(), std::greater<>());
          else std::sort(values.begin(), values.end());
          return Value{Array::vector(std::move(values))};
        } else if constexpr (std::is_same_v<T, ops::TopK>) {
          return Value{do_top_k(need_array(v, "top_k"), o)};
        } else if constexpr (std::is_same_v<T, ops::Branch>) {
          BranchSet out;
          for (const auto& [name, sub] : o.specs) {
            try {
              out.emplace_back(name, run(v, sub, labels));
            } catch (const Error& e) {
              throw InvalidArgument("branch '" + name + "': " + e.what());
            }
          }
          return out;
        } else {
          return state;  // merge handled above
        }
      },
      op.op);
}

Value run(Value data, const TransformSpec& spec, const Labels& labels) {
  State state = std::move(data);
  std::size_t open_branch = 0;
  for (std::size_t i = 0; i < spec.ops.size(); ++i) {
    try {
      state = step(std::move(state), spec.ops[i], labels);
    } catch (const TransformError&) {
      throw;
    } catch (const Error& e) {
      throw TransformError(i, std::string(spec.ops[i].name()) + ": " + e.what());
    }
    if (std::holds_alternative<ops::Branch>(spec.ops[i].op)) open_branch = i;
  }
  if (std::holds_alternative<BranchSet>(state))
    throw TransformError(open_branch, "branch is never merged");
  return std::get<Value>(std::move(state));
}

}  // namespace

Value apply_transform(Value data, const TransformSpec& spec, std::optional<std::span<const std::int64_t>> labels) {
  return run(std::move(data), spec, labels);
}

json to_json(const Value& value) {
  if (const auto* a = std::get_if<Array>(&value)) {
    if (a->is_scalar()) return json{{"kind", "scalar"}, {"value", a->values.front()}};
    return json{{"kind", "array"}, {"shape", a->shape}, {"values", a->values}};
  }
  json cols = json::array();
  for (const auto& [name, values] : std::get<Table>(value).columns) cols.push_back({{"name", name}, {"values", values}});
  return json{{"kind", "table"}, {"columns", cols}};
}

}  // namespace nnprobe::transform
