#include <cmath>
#include <map>
#include <set>

#include "nnprobe/transform.hpp"

namespace nnprobe::transform {

using nlohmann::json;

namespace {

constexpr std::pair<AggFn, std::string_view> kAggNames[] = {
    {AggFn::mean, "mean"}, {AggFn::var, "var"}, {AggFn::min, "min"},   {AggFn::max, "max"},
    {AggFn::sum, "sum"},   {AggFn::count, "count"}, {AggFn::skew, "skew"},
};
constexpr std::pair<Cmp, std::string_view> kCmpNames[] = {
    {Cmp::gt, "gt"}, {Cmp::ge, "ge"}, {Cmp::lt, "lt"}, {Cmp::le, "le"}, {Cmp::eq, "eq"},
};

std::string_view cmp_name(Cmp c) {
  for (const auto& [k, n] : kCmpNames)
    if (k == c) return n;
  return "?";
}

[[noreturn]] void invalid(std::size_t index, const std::string& what) {
  throw TransformError(index, "invalid parameter: " + what);
}

// Fields each op accepts, besides "op".
const std::set<std::string>& allowed_fields(std::string_view op) {
  static const std::map<std::string, std::set<std::string>, std::less<>> table = {
      {"reshape", {"shape"}},
      {"flatten", {}},
      {"slice", {"axis", "start", "stop", "step"}},
      {"filter", {"cmp", "value"}},
      {"agg", {"fn", "axis"}},
      {"histogram", {"bins", "range"}},
      {"density", {"bins"}},
      {"normalize", {"mode"}},
      {"groupby_class", {"fn"}},
      {"sort", {"descending"}},
      {"top_k", {"k", "by"}},
      {"branch", {"specs"}},
      {"merge", {"names"}},
  };
  static const std::set<std::string> none;
  auto it = table.find(op);
  return it == table.end() ? none : it->second;
}

std::int64_t get_int(const json& j, const char* key, std::size_t index) {
  const auto& v = j.at(key);
  if (!v.is_number_integer()) invalid(index, std::string(key) + " must be an integer");
  return v.get<std::int64_t>();
}

std::optional<std::int64_t> get_opt_int(const json& j, const char* key, std::size_t index) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return get_int(j, key, index);
}

AggFn get_fn(const json& j, std::size_t index, AggFn fallback) {
  auto it = j.find("fn");
  if (it == j.end()) return fallback;
  if (!it->is_string()) invalid(index, "fn must be a string");
  auto fn = parse_agg_fn(it->get<std::string>());
  if (!fn) invalid(index, "unknown fn '" + it->get<std::string>() + "'");
  return *fn;
}

std::int64_t get_bins(const json& j, std::size_t index) {
  if (!j.contains("bins")) return 32;
  auto bins = get_int(j, "bins", index);
  if (bins < 1) invalid(index, "bins must be >= 1");
  return bins;
}

TransformSpec parse_list(const json& doc);

TransformOp parse_op(const json& j, std::size_t index) {
  if (!j.is_object()) throw TransformError(index, "op must be an object");
  auto op_it = j.find("op");
  if (op_it == j.end() || !op_it->is_string()) throw TransformError(index, "missing op name");
  const auto name = op_it->get<std::string>();
  static const std::set<std::string> known = {"reshape", "flatten", "slice",  "filter",  "agg",
                                              "histogram", "density", "normalize", "groupby_class",
                                              "sort",    "top_k",   "branch", "merge"};
  if (!known.count(name)) throw TransformError(index, "unknown op: " + name);
  const auto& allowed = allowed_fields(name);
  for (const auto& [key, value] : j.items())
    if (key != "op" && !allowed.count(key)) invalid(index, "unknown field '" + key + "' for op " + name);

  if (name == "reshape") {
    ops::Reshape r;
    if (!j.contains("shape") || !j["shape"].is_array()) invalid(index, "shape must be an array");
    int inferred = 0;
    for (const auto& d : j["shape"]) {
      if (!d.is_number_integer()) invalid(index, "shape entries must be integers");
      auto v = d.get<std::int64_t>();
      if (v == -1) ++inferred;
      else if (v < 1) invalid(index, "shape entries must be >= 1 or -1");
      r.shape.push_back(v);
    }
    if (inferred > 1) invalid(index, "at most one inferred (-1) dimension");
    return {r};
  }
  if (name == "flatten") return {ops::Flatten{}};
  if (name == "slice") {
    ops::Slice s;
    s.axis = j.contains("axis") ? get_int(j, "axis", index) : 0;
    s.start = get_opt_int(j, "start", index);
    s.stop = get_opt_int(j, "stop", index);
    s.step = j.contains("step") ? get_int(j, "step", index) : 1;
    if (s.step < 1) invalid(index, "step must be >= 1");
    return {s};
  }
  if (name == "filter") {
    ops::Filter f;
    if (!j.contains("cmp") || !j["cmp"].is_string()) invalid(index, "cmp must be one of gt, ge, lt, le, eq");
    const auto c = j["cmp"].get<std::string>();
    bool found = false;
    for (const auto& [k, n] : kCmpNames)
      if (n == c) f.cmp = k, found = true;
    if (!found) invalid(index, "unknown cmp '" + c + "'");
    if (!j.contains("value") || !j["value"].is_number()) invalid(index, "value must be a number");
    f.value = j["value"].get<double>();
    return {f};
  }
  if (name == "agg") {
    ops::Agg a;
    if (!j.contains("fn")) invalid(index, "agg requires fn");
    a.fn = get_fn(j, index, AggFn::mean);
    if (auto it = j.find("axis"); it != j.end() && !(it->is_string() && it->get<std::string>() == "all")) {
      if (!it->is_number_integer()) invalid(index, "axis must be \"all\" or an integer");
      a.axis = it->get<std::int64_t>();
    }
    return {a};
  }
  if (name == "histogram") {
    ops::Histogram h;
    h.bins = get_bins(j, index);
    if (auto it = j.find("range"); it != j.end() && !it->is_null()) {
      if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number())
        invalid(index, "range must be [lo, hi]");
      double lo = (*it)[0].get<double>(), hi = (*it)[1].get<double>();
      if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) invalid(index, "range must satisfy lo <= hi");
      h.range = std::make_pair(lo, hi);
    }
    return {h};
  }
  if (name == "density") return {ops::Density{get_bins(j, index)}};
  if (name == "normalize") {
    ops::Normalize n;
    const auto mode = j.value("mode", std::string("minmax"));
    if (mode == "minmax") n.mode = NormMode::minmax;
    else if (mode == "zscore") n.mode = NormMode::zscore;
    else invalid(index, "unknown mode '" + mode + "'");
    return {n};
  }
  if (name == "groupby_class") return {ops::GroupByClass{get_fn(j, index, AggFn::mean)}};
  if (name == "sort") {
    auto it = j.find("descending");
    if (it != j.end() && !it->is_boolean()) invalid(index, "descending must be a boolean");
    return {ops::Sort{it != j.end() && it->get<bool>()}};
  }
  if (name == "top_k") {
    ops::TopK t;
    if (!j.contains("k")) invalid(index, "top_k requires k");
    t.k = get_int(j, "k", index);
    if (t.k < 1) invalid(index, "k must be >= 1");
    const auto by = j.value("by", std::string("abs"));
    if (by == "abs") t.by = TopBy::abs;
    else if (by == "value") t.by = TopBy::value;
    else invalid(index, "unknown by '" + by + "'");
    return {t};
  }
  if (name == "branch") {
    ops::Branch b;
    auto it = j.find("specs");
    if (it == j.end()) invalid(index, "branch requires specs");
    std::set<std::string> seen;
    auto add = [&](const std::string& branch_name, const json& sub) {
      if (branch_name.empty()) invalid(index, "branch names must be non-empty");
      if (!seen.insert(branch_name).second) invalid(index, "duplicate branch name '" + branch_name + "'");
      try {
        b.specs.emplace_back(branch_name, parse_list(sub));
      } catch (const TransformError& e) {
        throw TransformError(index, "in branch '" + branch_name + "': " + e.what());
      }
    };
    if (it->is_object()) {
      for (const auto& [k, v] : it->items()) add(k, v);
    } else if (it->is_array()) {
      for (const auto& entry : *it) {
        if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string() || !entry.contains("spec"))
          invalid(index, "branch specs entries must be {name, spec}");
        add(entry["name"].get<std::string>(), entry["spec"]);
      }
    } else {
      invalid(index, "specs must be an object or array");
    }
    if (b.specs.empty()) invalid(index, "branch requires at least one sub-pipeline");
    return {b};
  }
  // merge
  ops::Merge m;
  auto it = j.find("names");
  if (it == j.end() || !it->is_array() || it->empty()) invalid(index, "merge requires a non-empty names list");
  std::set<std::string> seen;
  for (const auto& n : *it) {
    if (!n.is_string()) invalid(index, "merge names must be strings");
    if (!seen.insert(n.get<std::string>()).second) invalid(index, "duplicate merge name");
    m.names.push_back(n.get<std::string>());
  }
  return {m};
}

TransformSpec parse_list(const json& doc) {
  if (doc.is_null()) return {};
  if (!doc.is_array()) throw TransformError("transform spec must be an array of ops");
  TransformSpec spec;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    try {
      spec.ops.push_back(parse_op(doc[i], i));
    } catch (const json::exception& e) {
      invalid(i, e.what());
    }
  }
  return spec;
}

json op_to_json(const TransformOp& op) {
  return std::visit(
      [&](const auto& o) -> json {
        using T = std::decay_t<decltype(o)>;
        json j{{"op", op.name()}};
        if constexpr (std::is_same_v<T, ops::Reshape>) {
          j["shape"] = o.shape;
        } else if constexpr (std::is_same_v<T, ops::Slice>) {
          j["axis"] = o.axis;
          j["start"] = o.start ? json(*o.start) : json(nullptr);
          j["stop"] = o.stop ? json(*o.stop) : json(nullptr);
          j["step"] = o.step;
        } else if constexpr (std::is_same_v<T, ops::Filter>) {
          j["cmp"] = cmp_name(o.cmp);
          j["value"] = o.value;
        } else if constexpr (std::is_same_v<T, ops::Agg>) {
          j["fn"] = to_string(o.fn);
          j["axis"] = o.axis ? json(*o.axis) : json("all");
        } else if constexpr (std::is_same_v<T, ops::Histogram>) {
          j["bins"] = o.bins;
          j["range"] = o.range ? json::array({o.range->first, o.range->second}) : json(nullptr);
        } else if constexpr (std::is_same_v<T, ops::Density>) {
          j["bins"] = o.bins;
        } else if constexpr (std::is_same_v<T, ops::Normalize>) {
          j["mode"] = o.mode == NormMode::minmax ? "minmax" : "zscore";
        } else if constexpr (std::is_same_v<T, ops::GroupByClass>) {
          j["fn"] = to_string(o.fn);
        } else if constexpr (std::is_same_v<T, ops::Sort>) {
          j["descending"] = o.descending;
        } else if constexpr (std::is_same_v<T, ops::TopK>) {
          j["k"] = o.k;
          j["by"] = o.by == TopBy::abs ? "abs" : "value";
        } else if constexpr (std::is_same_v<T, ops::Branch>) {
          json specs = json::array();
          for (const auto& [name, sub] : o.specs) specs.push_back({{"name", name}, {"spec", to_json(sub)}});
          j["specs"] = specs;
        } else if constexpr (std::is_same_v<T, ops::Merge>) {
          j["names"] = o.names;
        }
        return j;
      },
      op.op);
}

}  // namespace

std::string_view to_string(AggFn fn) {
  for (const auto& [k, n] : kAggNames)
    if (k == fn) return n;
  return "?";
}

std::optional<AggFn> parse_agg_fn(std::string_view name) {
  for (const auto& [k, n] : kAggNames)
    if (n == name) return k;
  return std::nullopt;
}

std::string_view TransformOp::name() const {
  static constexpr std::string_view names[] = {"reshape",   "flatten", "slice", "filter", "agg",
                                               "histogram", "density", "normalize", "groupby_class",
                                               "sort",      "top_k",   "branch", "merge"};
  return names[op.index()];
}

TransformSpec parse_transform(const json& doc) { return parse_list(doc); }

TransformSpec parse_transform(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw TransformError(std::string("transform spec is not valid JSON: ") + e.what());
  }
  return parse_list(doc);
}

json to_json(const TransformSpec& spec) {
  json out = json::array();
  for (const auto& op : spec.ops) out.push_back(op_to_json(op));
  return out;
}

}  // namespace nnprobe::transform
