#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "nnprobe/backbone.hpp"
#include "nnprobe/interest.hpp"
#include "nnprobe/rng.hpp"
#include "nnprobe/transform.hpp"

namespace oracles {

namespace {

using nnprobe::Rng;
using nnprobe::Shape;
namespace tf = nnprobe::transform;
namespace store = nnprobe::store;

class Recorder {
 public:
  explicit Recorder(SuiteResult& r) : r_(r) {}

  void check(bool ok, const std::string& what) {
    ++r_.cases;
    if (!ok) fail(what);
  }
  void close(double got, double want, const std::string& what) {
    ++r_.cases;
    const double err = (std::isnan(got) != std::isnan(want)) ? INFINITY
                       : std::isnan(got)                      ? 0.0
                                                              : std::abs(got - want) / std::max(1.0, std::abs(want));
    r_.max_error = std::max(r_.max_error, err);
    if (!(err <= kTolerance)) {
      std::ostringstream os;
      os.precision(17);
      os << what << ": got " << got << ", want " << want;
      fail(os.str());
    }
  }
  void close(const std::vector<double>& got, const std::vector<double>& want, const std::string& what) {
    if (got.size() != want.size()) {
      check(false, what + ": length " + std::to_string(got.size()) + " vs " + std::to_string(want.size()));
      return;
    }
    for (std::size_t i = 0; i < got.size(); ++i) close(got[i], want[i], what + "[" + std::to_string(i) + "]");
  }
  template <typename F>
  void no_throw(F&& f, const std::string& what) {
    try {
      f();
    } catch (const std::exception& e) {
      check(false, what + ": threw " + e.what());
    }
  }

 private:
  void fail(const std::string& what) {
    if (r_.failures++ == 0) r_.first_failure = what;
  }
  SuiteResult& r_;
};

template <typename F>
SuiteResult run_suite(const std::string& name, std::size_t seeds, F&& body) {
  SuiteResult r;
  r.name = name;
  r.seeds = seeds;
  Recorder rec(r);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto tag = name + " seed " + std::to_string(s);
    rec.no_throw([&] { body(static_cast<std::uint64_t>(s), rec, tag); }, tag);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng.next() % static_cast<std::uint64_t>(hi - lo + 1));
}

// ---- reference arithmetic -------------------------------------------------

struct RefMoments {
  double mean, var, skew, min, max, sum;
};

RefMoments ref_moments(const std::vector<double>& v) {
  long double s = 0;
  for (double x : v) s += x;
  const long double n = static_cast<long double>(v.size());
  const long double mean = s / n;
  long double m2 = 0, m3 = 0;
  for (double x : v) {
    const long double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  RefMoments r{};
  r.mean = static_cast<double>(mean);
  r.var = static_cast<double>(m2);
  r.skew = m2 == 0 ? 0.0 : static_cast<double>(m3 / std::pow(m2, 1.5L));
  r.min = *std::min_element(v.begin(), v.end());
  r.max = *std::max_element(v.begin(), v.end());
  r.sum = static_cast<double>(s);
  return r;
}

double ref_reduce(tf::AggFn fn, const std::vector<double>& v) {
  if (fn == tf::AggFn::count) return static_cast<double>(v.size());
  const auto m = ref_moments(v);
  switch (fn) {
    case tf::AggFn::mean: return m.mean;
    case tf::AggFn::var: return m.var;
    case tf::AggFn::min: return m.min;
    case tf::AggFn::max: return m.max;
    case tf::AggFn::sum: return m.sum;
    case tf::AggFn::skew: return m.skew;
    default: return NAN;
  }
}

// ---- reference tensor indexing --------------------------------------------

std::vector<std::int64_t> unravel(std::int64_t flat, const Shape& shape) {
  std::vector<std::int64_t> idx(shape.size());
  for (std::size_t i = shape.size(); i-- > 0;) {
    idx[i] = flat % shape[i];
    flat /= shape[i];
  }
  return idx;
}

std::int64_t ravel(const std::vector<std::int64_t>& idx, const Shape& shape) {
  std::int64_t flat = 0;
  for (std::size_t i = 0; i < shape.size(); ++i) flat = flat * shape[i] + idx[i];
  return flat;
}

std::int64_t count_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

tf::Array ref_slice(const tf::Array& a, std::int64_t axis, std::optional<std::int64_t> start,
                    std::optional<std::int64_t> stop, std::int64_t step) {
  const auto n = a.shape[static_cast<std::size_t>(axis)];
  auto fix = [n](std::optional<std::int64_t> x, std::int64_t dflt) {
    if (!x) return dflt;
    auto v = *x < 0 ? *x + n : *x;
    return std::max<std::int64_t>(0, std::min(v, n));
  };
  std::vector<std::int64_t> picked;
  for (auto i = fix(start, 0); i < fix(stop, n); i += step) picked.push_back(i);
  tf::Array out;
  out.shape = a.shape;
  out.shape[static_cast<std::size_t>(axis)] = static_cast<std::int64_t>(picked.size());
  const auto total = count_of(out.shape);
  for (std::int64_t f = 0; f < total; ++f) {
    auto idx = unravel(f, out.shape);
    idx[static_cast<std::size_t>(axis)] = picked[static_cast<std::size_t>(idx[static_cast<std::size_t>(axis)])];
    out.values.push_back(a.values[static_cast<std::size_t>(ravel(idx, a.shape))]);
  }
  return out;
}

tf::Array ref_agg_axis(const tf::Array& a, tf::AggFn fn, std::int64_t axis) {
  tf::Array out;
  for (std::size_t i = 0; i < a.shape.size(); ++i)
    if (static_cast<std::int64_t>(i) != axis) out.shape.push_back(a.shape[i]);
  const auto total = count_of(out.shape);
  for (std::int64_t f = 0; f < total; ++f) {
    const auto oidx = unravel(f, out.shape);
    std::vector<double> lane;
    for (std::int64_t k = 0; k < a.shape[static_cast<std::size_t>(axis)]; ++k) {
      auto idx = oidx;
      idx.insert(idx.begin() + axis, k);
      lane.push_back(a.values[static_cast<std::size_t>(ravel(idx, a.shape))]);
    }
    out.values.push_back(ref_reduce(fn, lane));
  }
  return out;
}

struct RefHist {
  std::vector<double> edges, counts;
  double in_range = 0;
};

RefHist ref_histogram(const std::vector<double>& v, std::int64_t bins, double lo, double hi) {
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  RefHist h;
  for (std::int64_t i = 0; i <= bins; ++i)
    h.edges.push_back(i == bins ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double x : v) {
    if (x < lo || x > hi) continue;
    h.in_range += 1;
    std::size_t b = 0;
    while (b + 1 < static_cast<std::size_t>(bins) && x >= h.edges[b + 1]) ++b;
    h.counts[b] += 1;
  }
  return h;
}

// Counts per published bin: left-inclusive, last bin right-inclusive.
std::vector<double> ref_counts(const std::vector<double>& v, const std::vector<double>& edges) {
  std::vector<double> counts(edges.size() - 1, 0.0);
  for (double x : v) {
    if (x < edges.front() || x > edges.back()) continue;
    for (std::size_t b = 0; b < counts.size(); ++b)
      if (x < edges[b + 1] || b + 1 == counts.size()) {
        counts[b] += 1;
        break;
      }
  }
  return counts;
}

Shape random_shape(Rng& rng, std::int64_t budget) {
  const auto rank = uniform_int(rng, 1, 4);
  Shape s;
  for (std::int64_t i = 0; i < rank - 1; ++i) {
    const auto cap = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::pow(static_cast<double>(budget), 1.0 / static_cast<double>(rank - i)) * 2));
    const auto d = std::min(uniform_int(rng, 1, cap), budget);
    s.push_back(d);
    budget = std::max<std::int64_t>(1, budget / d);
  }
  s.push_back(std::max<std::int64_t>(1, budget));
  std::shuffle(s.begin(), s.end(), std::mt19937_64(rng.next()));
  return s;
}

tf::Array random_array(Rng& rng, std::uint64_t seed) {
  // Every tenth seed uses the full 1e5-element budget.
  const std::int64_t budget =
      seed % 10 == 0 ? 100000 : static_cast<std::int64_t>(std::exp(rng.uniform(0.0, std::log(20000.0))));
  tf::Array a;
  a.shape = random_shape(rng, std::max<std::int64_t>(1, budget));
  const auto n = count_of(a.shape);
  const bool integral = seed % 3 == 1;  // integral data produces ties
  const double scale = rng.uniform(0.1, 50.0), shift = rng.uniform(-5.0, 5.0);
  for (std::int64_t i = 0; i < n; ++i)
    a.values.push_back(integral ? std::round(rng.normal() * 4) : rng.normal(shift, scale));
  return a;
}

const tf::Array& as_array(const tf::Value& v) { return std::get<tf::Array>(v); }
const tf::Table& as_table(const tf::Value& v) { return std::get<tf::Table>(v); }

tf::Value run_spec(const tf::Array& a, const nlohmann::json& spec,
                std::optional<std::span<const std::int64_t>> labels = {}) {
  return tf::apply_transform(a, tf::parse_transform(spec), labels);
}

const std::vector<double>& col(const tf::Value& v, const std::string& name) {
  const auto* c = as_table(v).column(name);
  if (!c) throw std::runtime_error("missing column " + name);
  return *c;
}

const char* kFns[] = {"mean", "var", "min", "max", "sum", "count", "skew"};

void transform_case(std::uint64_t seed, Recorder& rec, const std::string& tag) {
  Rng rng(seed * 7919 + 17);
  const auto a = random_array(rng, seed);
  const auto n = static_cast<std::int64_t>(a.values.size());
  const auto rank = static_cast<std::int64_t>(a.shape.size());

  {  // reshape and flatten keep values, change shape only
    const auto r = as_array(run_spec(a, {{{"op", "reshape"}, {"shape", {a.shape.back(), -1}}}}));
    rec.check(r.values == a.values && r.shape == Shape{a.shape.back(), n / a.shape.back()}, tag + " reshape");
    const auto f = as_array(run_spec(a, {{{"op", "flatten"}}}));
    rec.check(f.values == a.values && f.shape == Shape{n}, tag + " flatten");
  }
  {  // slice on every axis
    for (std::int64_t axis = 0; axis < rank; ++axis) {
      const auto extent = a.shape[static_cast<std::size_t>(axis)];
      std::optional<std::int64_t> start, stop;
      if (rng.uniform() < 0.8) start = uniform_int(rng, -extent - 2, extent + 2);
      if (rng.uniform() < 0.8) stop = uniform_int(rng, -extent - 2, extent + 2);
      const auto step = uniform_int(rng, 1, 4);
      nlohmann::json op{{"op", "slice"}, {"axis", axis}, {"step", step}};
      if (start) op["start"] = *start;
      if (stop) op["stop"] = *stop;
      nlohmann::json spec = nlohmann::json::array();
      spec.push_back(op);
      const auto got = as_array(run_spec(a, spec));
      const auto want = ref_slice(a, axis, start, stop, step);
      rec.check(got.shape == want.shape, tag + " slice shape axis " + std::to_string(axis));
      rec.check(got.values == want.values, tag + " slice values axis " + std::to_string(axis));
    }
  }
  {  // filter, every comparator
    const double threshold = rng.uniform() < 0.5 ? a.values[static_cast<std::size_t>(uniform_int(rng, 0, n - 1))]
                                                 : rng.normal();
    const std::pair<const char*, std::function<bool(double)>> cmps[] = {
        {"gt", [&](double x) { return x > threshold; }}, {"ge", [&](double x) { return x >= threshold; }},
        {"lt", [&](double x) { return x < threshold; }}, {"le", [&](double x) { return x <= threshold; }},
        {"eq", [&](double x) { return x == threshold; }}};
    for (const auto& [name, pred] : cmps) {
      std::vector<double> want;
      std::copy_if(a.values.begin(), a.values.end(), std::back_inserter(want), pred);
      const auto got = as_array(run_spec(a, {{{"op", "filter"}, {"cmp", name}, {"value", threshold}}}));
      rec.check(got.values == want, tag + " filter " + name);
    }
  }
  {  // agg over all and over a random axis, every fn
    const auto axis = uniform_int(rng, 0, rank - 1);
    for (std::size_t fi = 0; fi < std::size(kFns); ++fi) {
      const auto fn = *tf::parse_agg_fn(kFns[fi]);
      const auto all = as_array(run_spec(a, {{{"op", "agg"}, {"fn", kFns[fi]}, {"axis", "all"}}}));
      rec.check(all.is_scalar(), tag + " agg all scalar");
      rec.close(all.values.front(), ref_reduce(fn, a.values), tag + " agg all " + kFns[fi]);
      const auto got = as_array(run_spec(a, {{{"op", "agg"}, {"fn", kFns[fi]}, {"axis", axis}}}));
      const auto want = ref_agg_axis(a, fn, axis);
      rec.check(got.shape == want.shape, tag + " agg axis shape");
      rec.close(got.values, want.values, tag + " agg axis " + std::to_string(axis) + " " + kFns[fi]);
    }
  }
  {  // histogram with default and explicit range
    const auto bins = uniform_int(rng, 1, 64);
    const auto [mn, mx] = std::minmax_element(a.values.begin(), a.values.end());
    const double lo = *mn, hi = *mx;
    const auto got = run_spec(a, {{{"op", "histogram"}, {"bins", bins}}});
    const auto want = ref_histogram(a.values, bins, lo, hi);
    rec.close(col(got, "bin_edges"), want.edges, tag + " histogram edges");
    rec.check(col(got, "counts") == ref_counts(a.values, col(got, "bin_edges")), tag + " histogram counts");
    const double total = std::accumulate(col(got, "counts").begin(), col(got, "counts").end(), 0.0);
    rec.check(total == want.in_range && total == static_cast<double>(n), tag + " histogram mass");

    const double rlo = rng.uniform(lo, (lo + hi) / 2), rhi = rng.uniform((lo + hi) / 2, hi);
    const auto got2 = run_spec(a, {{{"op", "histogram"}, {"bins", bins}, {"range", {rlo, rhi}}}});
    const auto want2 = ref_histogram(a.values, bins, rlo, rhi);
    rec.close(col(got2, "bin_edges"), want2.edges, tag + " histogram range edges");
    rec.check(col(got2, "counts") == ref_counts(a.values, col(got2, "bin_edges")), tag + " histogram range counts");
    rec.check(std::accumulate(col(got2, "counts").begin(), col(got2, "counts").end(), 0.0) == want2.in_range,
              tag + " histogram in-range mass");

    // density integrates to one
    const auto dens = run_spec(a, {{{"op", "density"}, {"bins", bins}}});
    const auto& edges = col(dens, "bin_edges");
    const auto& d = col(dens, "density");
    double integral = 0;
    std::vector<double> want_d;
    for (std::size_t i = 0; i < d.size(); ++i) {
      integral += d[i] * (edges[i + 1] - edges[i]);
      want_d.push_back(col(got, "counts")[i] /
                       (want.in_range * ((want.edges.back() - want.edges.front()) / static_cast<double>(bins))));
    }
    rec.close(integral, 1.0, tag + " density integral");
    rec.close(d, want_d, tag + " density values");
  }
  {  // normalize
    const auto m = ref_moments(a.values);
    const auto mm = as_array(run_spec(a, {{{"op", "normalize"}, {"mode", "minmax"}}}));
    const auto zs = as_array(run_spec(a, {{{"op", "normalize"}, {"mode", "zscore"}}}));
    std::vector<double> want_mm, want_zs;
    const double sd = std::sqrt(m.var);
    bool in_unit = true;
    for (double x : a.values) {
      want_mm.push_back(m.max == m.min ? 0.0 : (x - m.min) / (m.max - m.min));
      want_zs.push_back(sd == 0 ? 0.0 : (x - m.mean) / sd);
    }
    for (double x : mm.values) in_unit = in_unit && x >= 0 && x <= 1;
    rec.close(mm.values, want_mm, tag + " normalize minmax");
    rec.check(in_unit, tag + " normalize minmax in [0,1]");
    rec.close(zs.values, want_zs, tag + " normalize zscore");
    const auto constant = as_array(run_spec(tf::Array{a.shape, std::vector<double>(a.values.size(), 3.25)},
                                         {{{"op", "normalize"}, {"mode", "minmax"}}}));
    rec.check(std::all_of(constant.values.begin(), constant.values.end(), [](double x) { return x == 0; }),
              tag + " normalize constant");
  }
  {  // groupby_class
    const auto rows = a.shape.front();
    const auto classes = uniform_int(rng, 1, 5);
    std::vector<std::int64_t> labels;
    for (std::int64_t r = 0; r < rows; ++r) labels.push_back(uniform_int(rng, 0, classes - 1));
    const auto fi = static_cast<std::size_t>(uniform_int(rng, 0, std::size(kFns) - 1));
    const auto got = run_spec(a, {{{"op", "groupby_class"}, {"fn", kFns[fi]}}}, std::span<const std::int64_t>(labels));
    const auto inner = n / rows;
    std::size_t present = 0;
    for (std::int64_t c = 0; c < classes; ++c) {
      std::vector<std::int64_t> members;
      for (std::int64_t r = 0; r < rows; ++r)
        if (labels[static_cast<std::size_t>(r)] == c) members.push_back(r);
      if (members.empty()) continue;
      ++present;
      std::vector<double> want;
      for (std::int64_t i = 0; i < inner; ++i) {
        std::vector<double> lane;
        for (auto r : members) lane.push_back(a.values[static_cast<std::size_t>(r * inner + i)]);
        want.push_back(ref_reduce(*tf::parse_agg_fn(kFns[fi]), lane));
      }
      rec.close(col(got, "class" + std::to_string(c)), want, tag + " groupby class " + std::to_string(c));
    }
    rec.check(as_table(got).columns.size() == present, tag + " groupby column count");
    bool threw = false;
    try {
      run_spec(a, {{{"op", "groupby_class"}}});
    } catch (const tf::TransformError& e) {
      threw = e.op_index() == 0u;
    }
    rec.check(threw, tag + " groupby without labels");
  }
  {  // sort and top_k
    auto asc = a.values, desc = a.values;
    std::sort(asc.begin(), asc.end());
    std::sort(desc.rbegin(), desc.rend());
    rec.check(as_array(run_spec(a, {{{"op", "sort"}}})).values == asc, tag + " sort ascending");
    rec.check(as_array(run_spec(a, {{{"op", "sort"}, {"descending", true}}})).values == desc, tag + " sort descending");

    const auto k = uniform_int(rng, 1, std::min<std::int64_t>(n + 3, 500));
    for (const char* by : {"abs", "value"}) {
      std::vector<std::size_t> order(a.values.size());
      std::iota(order.begin(), order.end(), 0);
      const bool use_abs = std::string(by) == "abs";
      std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const double kx = use_abs ? std::abs(a.values[x]) : a.values[x];
        const double ky = use_abs ? std::abs(a.values[y]) : a.values[y];
        return kx > ky;
      });
      order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(k)));
      std::vector<double> want_idx, want_val;
      for (auto i : order) {
        want_idx.push_back(static_cast<double>(i));
        want_val.push_back(a.values[i]);
      }
      const auto got = run_spec(a, {{{"op", "top_k"}, {"k", k}, {"by", by}}});
      rec.check(col(got, "index") == want_idx, tag + " top_k index by " + by);
      rec.check(col(got, "value") == want_val, tag + " top_k value by " + by);
    }
  }
  {  // branch/merge equals the separate pipelines; composition is exact
    const nlohmann::json lo = {{{"op", "agg"}, {"fn", "min"}}};
    const nlohmann::json hist = {{{"op", "histogram"}, {"bins", 5}}};
    const auto merged = run_spec(a, {{{"op", "branch"}, {"specs", {{"lo", lo}, {"h", hist}}}},
                                  {{"op", "merge"}, {"names", {"h", "lo"}}}});
    rec.check(col(merged, "lo") == as_array(run_spec(a, lo)).values, tag + " merge scalar column");
    rec.check(col(merged, "h.counts") == col(run_spec(a, hist), "counts"), tag + " merge table column");
    rec.check(as_table(merged).columns.front().first == "h.bin_edges", tag + " merge order");

    const nlohmann::json first = {{{"op", "slice"}, {"axis", 0}, {"step", 2}}, {{"op", "flatten"}}};
    const nlohmann::json second = {{{"op", "normalize"}, {"mode", "zscore"}}, {{"op", "top_k"}, {"k", 7}}};
    nlohmann::json both = first;
    for (const auto& op : second) both.push_back(op);
    const auto once = tf::to_json(run_spec(a, both));
    const auto staged = tf::to_json(tf::apply_transform(run_spec(a, first), tf::parse_transform(second)));
    rec.check(once == staged, tag + " composition");
  }
}

void descriptor_case(std::uint64_t seed, Recorder& rec, const std::string& tag) {
  Rng rng(seed * 104729 + 3);
  const auto n = static_cast<std::size_t>(std::exp(rng.uniform(0.0, std::log(20000.0))));
  std::vector<double> v(n);
  switch (seed % 5) {
    case 0:
      for (auto& x : v) x = rng.normal(rng.uniform(-3, 3), 2.0);
      break;
    case 1:
      for (auto& x : v) x = -std::log(1.0 - rng.uniform());
      break;
    case 2:
      for (auto& x : v) x = rng.uniform(-10, 10);
      break;
    case 3:
      for (auto& x : v) x = std::round(rng.normal() * 2);
      break;
    default:
      for (auto& x : v) x = std::max(0.0, rng.normal());
      break;
  }
  if (seed % 17 == 0) std::fill(v.begin(), v.end(), 1.5);
  const auto got = nnprobe::interest::compute_descriptors(v);
  const auto want = ref_moments(v);
  rec.close(got.variance, want.var, tag + " variance");
  rec.close(got.skew, want.skew, tag + " skew");
  rec.close(got.min, want.min, tag + " min");
  rec.close(got.max, want.max, tag + " max");
  for (const auto kind : {nnprobe::interest::MeasureKind::skew, nnprobe::interest::MeasureKind::variance,
                          nnprobe::interest::MeasureKind::min, nnprobe::interest::MeasureKind::max}) {
    const double s = nnprobe::interest::score(v, {kind, std::nullopt});
    const double w = kind == nnprobe::interest::MeasureKind::skew       ? want.skew
                     : kind == nnprobe::interest::MeasureKind::variance ? want.var
                     : kind == nnprobe::interest::MeasureKind::min      ? want.min
                                                                        : want.max;
    rec.close(s, w, tag + " score " + std::string(nnprobe::interest::to_string(kind)));
  }
}

void top_k_case(std::uint64_t seed, Recorder& rec, const std::string& tag) {
  Rng rng(seed * 31337 + 5);
  const auto rows = uniform_int(rng, 1, 64), cols = uniform_int(rng, 1, 64);
  const bool ties = seed % 2 == 1;
  std::vector<double> m(static_cast<std::size_t>(rows * cols));
  for (auto& x : m) x = ties ? std::round(rng.normal() * 3) / 4 : rng.normal();
  const auto n = static_cast<std::size_t>(rows * cols);
  for (std::size_t k : {std::size_t{1}, static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(n))),
                        n, n + 3}) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      if (std::abs(m[x]) != std::abs(m[y])) return std::abs(m[x]) > std::abs(m[y]);
      return x < y;  // row-major flat order is (row, col) order
    });
    const auto got = nnprobe::backbone::top_k_weights(m, rows, cols, k);
    const auto expect = std::min(k, n);
    rec.check(got.size() == expect, tag + " top_k size k=" + std::to_string(k));
    for (std::size_t i = 0; i < std::min(expect, got.size()); ++i) {
      const auto flat = order[i];
      const bool same = got[i].source == static_cast<std::int64_t>(flat) / cols &&
                        got[i].target == static_cast<std::int64_t>(flat) % cols && got[i].value == m[flat];
      rec.check(same, tag + " top_k entry " + std::to_string(i) + " k=" + std::to_string(k));
    }
  }
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

std::string stamp(std::int64_t seconds) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "2024-03-%02lldT%02lld:%02lld:%02lldZ", static_cast<long long>(1 + seconds / 86400),
                static_cast<long long>(seconds / 3600 % 24), static_cast<long long>(seconds / 60 % 60),
                static_cast<long long>(seconds % 60));
  return buf;
}

struct RandomLineage {
  std::vector<std::string> ids;
  std::vector<std::vector<std::size_t>> parents;
  std::vector<std::uint64_t> params;
  std::vector<std::string> created;
};

RandomLineage random_lineage(Rng& rng, std::size_t n) {
  RandomLineage l;
  for (std::size_t i = 0; i < n; ++i) {
    l.ids.push_back("m" + std::to_string(i));
    std::set<std::size_t> ps;
    if (i > 0 && rng.uniform() < 0.6) {
      const auto k = uniform_int(rng, 1, 3);
      for (std::int64_t j = 0; j < k; ++j) ps.insert(static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1)));
    }
    l.parents.emplace_back(ps.begin(), ps.end());
    l.params.push_back(rng.uniform() < 0.1 ? 0 : static_cast<std::uint64_t>(uniform_int(rng, 1, 100000)));
    l.created.push_back(stamp(uniform_int(rng, 0, 86400 * 20)));
  }
  return l;
}

store::LoadedModel make_model(const RandomLineage& l, std::size_t i, store::ArchitectureGraph graph = {}) {
  store::LoadedModel m;
  m.record.header.id = l.ids[i];
  m.record.header.name = l.ids[i];
  for (auto p : l.parents[i]) m.record.header.parents.push_back(l.ids[p]);
  m.record.header.created_at = l.created[i];
  m.record.num_trainable_params = l.params[i];
  m.graph = std::move(graph);
  return m;
}

store::CatalogPtr catalog_of(std::vector<store::LoadedModel> models) {
  auto c = std::make_shared<store::ExperimentCatalog>();
  c->version = 1;
  for (auto& m : models) {
    c->index.emplace(m.id(), c->models.size());
    c->models.push_back(std::move(m));
  }
  return c;
}

void partition_case(std::uint64_t seed, Recorder& rec, const std::string& tag) {
  Rng rng(seed * 6151 + 11);
  const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 40));
  const auto l = random_lineage(rng, n);
  std::vector<store::LoadedModel> models;
  // Database order is shuffled so ordering cannot come from insertion.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(seed));
  for (auto i : perm) models.push_back(make_model(l, i));
  const auto catalog = catalog_of(std::move(models));
  const auto tree = nnprobe::backbone::build_model_tree(*catalog);

  UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i)
    for (auto p : l.parents[i]) uf.unite(i, p);
  std::set<std::set<std::string>> want;
  {
    std::map<std::size_t, std::set<std::string>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[uf.find(i)].insert(l.ids[i]);
    for (auto& [root, g] : groups) want.insert(g);
  }
  std::set<std::set<std::string>> got;
  std::size_t listed = 0;
  for (const auto& e : tree.experiments) {
    got.insert(std::set<std::string>(e.models.begin(), e.models.end()));
    listed += e.models.size();
    rec.check(!e.models.empty() && e.id == e.models.front(), tag + " experiment id");
  }
  rec.check(got == want, tag + " partition");
  rec.check(listed == n, tag + " each model in one experiment");

  // experiments ordered by earliest created_at
  std::vector<std::string> earliest;
  for (const auto& e : tree.experiments) {
    std::string mn = "~";
    for (const auto& id : e.models) mn = std::min(mn, l.created[static_cast<std::size_t>(std::stoi(id.substr(1)))]);
    earliest.push_back(mn);
  }
  rec.check(std::is_sorted(earliest.begin(), earliest.end()), tag + " experiment order");

  // depth = longest parent chain
  std::vector<int> depth(n, -1);
  std::function<int(std::size_t)> d = [&](std::size_t i) {
    if (depth[i] >= 0) return depth[i];
    int best = 0;
    for (auto p : l.parents[i]) best = std::max(best, d(p) + 1);
    return depth[i] = best;
  };
  std::size_t edges = 0;
  for (std::size_t i = 0; i < n; ++i) edges += l.parents[i].size();
  rec.check(tree.edges.size() == edges, tag + " every parent edge retained");
  for (const auto& node : tree.nodes) {
    const auto i = static_cast<std::size_t>(std::stoi(node.model_id.substr(1)));
    rec.check(node.depth == static_cast<std::size_t>(d(i)), tag + " depth of " + node.model_id);
    rec.check(tree.experiments[node.experiment].models[node.color_index] == node.model_id, tag + " color index");
  }
  for (const auto& e : tree.edges) {
    const auto pi = static_cast<std::size_t>(std::stoi(e.parent.substr(1)));
    const auto ci = static_cast<std::size_t>(std::stoi(e.child.substr(1)));
    if (l.params[pi] == 0) {
      rec.check(!e.rel_param_change.has_value(), tag + " undefined rel change");
    } else {
      rec.check(e.rel_param_change.has_value(), tag + " rel change present");
      if (e.rel_param_change)
        rec.close(*e.rel_param_change,
                  (static_cast<double>(l.params[ci]) - static_cast<double>(l.params[pi])) /
                      static_cast<double>(l.params[pi]),
                  tag + " rel change");
    }
  }
}

// All simple u->v paths in a small DAG (node lists including endpoints).
void all_paths(const std::vector<std::vector<std::size_t>>& adj, std::size_t u, std::size_t v,
               std::vector<std::size_t>& cur, std::vector<std::vector<std::size_t>>& out) {
  cur.push_back(u);
  if (u == v) {
    out.push_back(cur);
  } else {
    for (auto w : adj[u]) all_paths(adj, w, v, cur, out);
  }
  cur.pop_back();
}

std::pair<std::map<std::string, std::size_t>, std::map<std::string, std::size_t>> brute_structures(
    const store::ArchitectureGraph& g) {
  std::map<std::string, std::size_t> skip, multi;  // count per source layer name
  const auto n = g.layers.size();
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < n; ++i) pos[g.layers[i].id] = i;
  std::vector<std::vector<std::size_t>> adj(n);
  std::set<std::pair<std::size_t, std::size_t>> direct;
  for (const auto& [a, b] : g.edges) {
    adj[pos[a]].push_back(pos[b]);
    direct.insert({pos[a], pos[b]});
  }
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      if (u == v) continue;
      std::vector<std::vector<std::size_t>> paths;
      std::vector<std::size_t> cur;
      all_paths(adj, u, v, cur, paths);
      std::vector<std::vector<std::size_t>> longer;
      for (auto& p : paths)
        if (p.size() >= 3) longer.push_back(p);
      if (direct.count({u, v}) && !longer.empty()) ++skip[g.layers[u].name];
      bool disjoint = false;
      for (std::size_t i = 0; i < longer.size() && !disjoint; ++i)
        for (std::size_t j = i + 1; j < longer.size() && !disjoint; ++j) {
          std::set<std::size_t> inner(longer[i].begin() + 1, longer[i].end() - 1);
          bool shared = false;
          for (std::size_t k = 1; k + 1 < longer[j].size(); ++k) shared = shared || inner.count(longer[j][k]);
          disjoint = !shared;
        }
      if (disjoint) ++multi[g.layers[u].name];
    }
  return {skip, multi};
}

store::ArchitectureGraph random_graph(Rng& rng) {
  static const char* kTypes[] = {"Dense", "Conv2D", "Add", "Activation"};
  const auto& kinds = store::all_op_kinds();
  store::ArchitectureGraph g;
  const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 7));
  for (std::size_t i = 0; i < n; ++i) {
    store::LayerDesc l;
    l.id = l.name = "l" + std::to_string(i);
    l.type = kTypes[uniform_int(rng, 0, 3)];
    l.output_shape = {4};
    const auto ops = uniform_int(rng, 0, 4);
    for (std::int64_t k = 0; k < ops; ++k)
      l.inner_ops.push_back({"op" + std::to_string(k),
                             kinds[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(kinds.size()) - 1))],
                             nlohmann::json::object()});
    g.layers.push_back(std::move(l));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.uniform() < 0.45) g.edges.emplace_back(g.layers[i].id, g.layers[j].id);
  return g;
}

void badge_case(std::uint64_t seed, Recorder& rec, const std::string& tag) {
  Rng rng(seed * 2749 + 23);
  const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 6));
  const auto l = random_lineage(rng, n);
  std::vector<store::ArchitectureGraph> graphs;
  std::vector<store::LoadedModel> models;
  for (std::size_t i = 0; i < n; ++i) {
    graphs.push_back(random_graph(rng));
    models.push_back(make_model(l, i, graphs.back()));
  }
  const auto catalog = catalog_of(std::move(models));

  UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i)
    for (auto p : l.parents[i]) uf.unite(i, p);

  std::vector<std::string> queries;
  for (auto k : store::all_op_kinds()) queries.emplace_back(store::to_string(k));
  std::set<std::string> types;
  for (const auto& g : graphs)
    for (const auto& layer : g.layers) types.insert(layer.type);
  queries.insert(queries.end(), types.begin(), types.end());
  queries.emplace_back(nnprobe::backbone::kSkipConnection);
  queries.emplace_back(nnprobe::backbone::kMultiBranch);

  std::vector<std::pair<std::map<std::string, std::size_t>, std::map<std::string, std::size_t>>> structures;
  for (const auto& g : graphs) structures.push_back(brute_structures(g));

  for (const auto& q : queries) {
    // Exhaustive traversal: count at every layer and op, sum upward.
    std::map<std::string, std::size_t> want;
    std::map<std::size_t, std::size_t> per_component;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t model_total = 0;
      for (const auto& layer : graphs[i].layers) {
        std::size_t c = 0;
        const std::string lpath = "model:" + l.ids[i] + "/layer:" + layer.name;
        if (q == nnprobe::backbone::kSkipConnection || q == nnprobe::backbone::kMultiBranch) {
          const auto& table = q == nnprobe::backbone::kSkipConnection ? structures[i].first : structures[i].second;
          if (auto it = table.find(layer.name); it != table.end()) c = it->second;
        } else if (types.count(q) && !store::parse_op_kind(q)) {
          c = layer.type == q ? 1 : 0;
        } else {
          for (const auto& op : layer.inner_ops)
            if (store::to_string(op.kind) == q) {
              ++c;
              want[lpath + "/op:" + op.id] = 1;
            }
        }
        if (c) want[lpath] = c;
        model_total += c;
      }
      if (model_total) want["model:" + l.ids[i]] = model_total;
      per_component[uf.find(i)] += model_total;
    }

    const auto badges = nnprobe::backbone::propagate_badges(*catalog, q);
    std::map<std::string, std::size_t> got;
    std::size_t experiments = 0;
    bool unique = true;
    for (const auto& b : badges) {
      rec.check(b.match_kind == q && b.count > 0, tag + " badge fields for " + q);
      if (b.uoa.kind() == nnprobe::UoaKind::experiment) {
        ++experiments;
        const auto idx = static_cast<std::size_t>(std::stoi(b.uoa.leaf_id().substr(1)));
        rec.check(b.count == per_component[uf.find(idx)], tag + " experiment badge " + q);
        continue;
      }
      unique = got.emplace(b.uoa.str(), b.count).second && unique;
      rec.no_throw([&] { nnprobe::resolve(b.uoa, *catalog); }, tag + " badge resolves " + b.uoa.str());
    }
    std::size_t nonzero = 0;
    for (const auto& [root, c] : per_component) nonzero += c > 0;
    rec.check(unique, tag + " badge uniqueness " + q);
    rec.check(got == want, tag + " badge counts " + q);
    rec.check(experiments == nonzero, tag + " experiment badges " + q);
  }
}

}  // namespace

SuiteResult transform_suite(std::size_t seeds) { return run_suite("transform ops", seeds, transform_case); }
SuiteResult descriptor_suite(std::size_t seeds) { return run_suite("descriptors", seeds, descriptor_case); }
SuiteResult top_k_suite(std::size_t seeds) { return run_suite("top-k weights", seeds, top_k_case); }
SuiteResult partition_suite(std::size_t seeds) { return run_suite("experiment partition", seeds, partition_case); }
SuiteResult badge_suite(std::size_t seeds) { return run_suite("badge counts", seeds, badge_case); }

}  // namespace oracles
