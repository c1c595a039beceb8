#include "nnprobe/interest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "nnprobe/backbone.hpp"
#include "nnprobe/error.hpp"
#include "nnprobe/rng.hpp"
#include "nnprobe/stats.hpp"
#include "nnprobe/transform.hpp"

namespace nnprobe::interest {

namespace {

template <typename E>
using NameTable = std::vector<std::pair<E, std::string_view>>;

const NameTable<MeasureKind> kMeasureNames{{MeasureKind::skew, "skew"},
                                           {MeasureKind::variance, "variance"},
                                           {MeasureKind::min, "min"},
                                           {MeasureKind::max, "max"},
                                           {MeasureKind::baseline_divergence, "baseline_divergence"}};
const NameTable<BaselineKind> kBaselineNames{{BaselineKind::standard_normal, "standard_normal"},
                                             {BaselineKind::fitted_normal, "fitted_normal"},
                                             {BaselineKind::uniform, "uniform"},
                                             {BaselineKind::custom_samples, "custom_samples"}};
const NameTable<VariableType> kVariableNames{{VariableType::activations, "activations"},
                                             {VariableType::dense_kernel, "dense-kernel"},
                                             {VariableType::dense_bias, "dense-bias"},
                                             {VariableType::conv_kernel, "conv-kernel"},
                                             {VariableType::conv_bias, "conv-bias"}};

template <typename E>
std::string_view name_of(const NameTable<E>& table, E value) {
  for (const auto& [e, n] : table)
    if (e == value) return n;
  return "?";
}

template <typename E>
std::optional<E> value_of(const NameTable<E>& table, std::string_view name) {
  for (const auto& [e, n] : table)
    if (n == name) return e;
  return std::nullopt;
}

struct Leaf {
  UoaPath path;
  std::string experiment;
  VariableType type;
  std::string tensor_path;
  const store::CheckpointBundle* bundle;
};

bool in_scope(const UoaPath& leaf, const std::string& experiment, const UoaPath& root) {
  auto segs = root.segments();
  if (!segs.empty() && segs.front().kind == UoaKind::experiment) {
    if (segs.front().id != experiment) return false;
    segs.erase(segs.begin());
  }
  if (segs.empty()) return true;
  if (std::any_of(segs.begin(), segs.end(), [](const auto& s) { return s.kind == UoaKind::op; })) return false;
  return leaf.within(UoaPath(std::move(segs)));
}

}  // namespace

Descriptors compute_descriptors(std::span<const double> values) {
  const auto m = stats::moments(values);
  return {m.skew, m.variance, m.min, m.max};
}

std::vector<double> baseline_draws(const BaselineSpec& baseline, std::span<const double> t) {
  if (baseline.kind == BaselineKind::custom_samples) {
    if (baseline.samples.empty()) throw InvalidArgument("custom baseline needs a non-empty sample array");
    return baseline.samples;
  }
  Rng rng(kBaselineSeed);
  std::vector<double> out(kBaselineDraws);
  switch (baseline.kind) {
    case BaselineKind::standard_normal:
      for (auto& v : out) v = rng.normal();
      break;
    case BaselineKind::fitted_normal: {
      const auto m = stats::moments(t);
      const double sd = std::sqrt(m.variance);
      for (auto& v : out) v = rng.normal(m.mean, sd);
      break;
    }
    case BaselineKind::uniform: {
      const auto [lo, hi] = std::minmax_element(t.begin(), t.end());
      for (auto& v : out) v = rng.uniform(*lo, *hi);
      break;
    }
    case BaselineKind::custom_samples:
      break;
  }
  return out;
}

double js_divergence(std::span<const double> p_counts, std::span<const double> q_counts) {
  if (p_counts.size() != q_counts.size()) throw InvalidArgument("histograms differ in bin count");
  double np = 0, nq = 0;
  for (double c : p_counts) np += c;
  for (double c : q_counts) nq += c;
  if (np <= 0 || nq <= 0) throw InvalidArgument("empty histogram");
  double js = 0;
  for (std::size_t i = 0; i < p_counts.size(); ++i) {
    const double p = p_counts[i] / np, q = q_counts[i] / nq, m = 0.5 * (p + q);
    if (p > 0) js += 0.5 * p * std::log(p / m);
    if (q > 0) js += 0.5 * q * std::log(q / m);
  }
  return std::clamp(js, 0.0, std::log(2.0));
}

double divergence_from_baseline(std::span<const double> t, const BaselineSpec& baseline, std::int64_t bins) {
  if (t.empty()) throw InvalidArgument("empty input");
  if (bins < 1) throw InvalidArgument("bins must be >= 1");
  const auto b = baseline_draws(baseline, t);
  const auto [tlo, thi] = std::minmax_element(t.begin(), t.end());
  const auto [blo, bhi] = std::minmax_element(b.begin(), b.end());
  const double lo = std::min(*tlo, *blo), hi = std::max(*thi, *bhi);
  const auto ht = transform::bin_values(t, bins, lo, hi);
  const auto hb = transform::bin_values(b, bins, lo, hi);
  return js_divergence(ht.counts, hb.counts);
}

double score(std::span<const double> values, const Measure& measure) {
  switch (measure.kind) {
    case MeasureKind::baseline_divergence:
      if (!measure.baseline) throw InvalidArgument("baseline_divergence needs a baseline");
      return divergence_from_baseline(values, *measure.baseline);
    case MeasureKind::skew:
      return compute_descriptors(values).skew;
    case MeasureKind::variance:
      return compute_descriptors(values).variance;
    case MeasureKind::min:
      return compute_descriptors(values).min;
    case MeasureKind::max:
      return compute_descriptors(values).max;
  }
  return 0;
}

std::string_view to_string(MeasureKind kind) { return name_of(kMeasureNames, kind); }
std::optional<MeasureKind> parse_measure_kind(std::string_view name) { return value_of(kMeasureNames, name); }
std::string_view to_string(BaselineKind kind) { return name_of(kBaselineNames, kind); }
std::optional<BaselineKind> parse_baseline_kind(std::string_view name) { return value_of(kBaselineNames, name); }
std::string_view to_string(VariableType type) { return name_of(kVariableNames, type); }
std::optional<VariableType> parse_variable_type(std::string_view name) { return value_of(kVariableNames, name); }

std::optional<double> InterestingnessReport::score_of(const std::string& uoa) const {
  for (const auto& g : groups)
    if (auto it = g.normalized.find(uoa); it != g.normalized.end()) return it->second;
  if (auto it = propagated.find(uoa); it != propagated.end()) return it->second;
  return std::nullopt;
}

InterestingnessReport score_and_propagate(const store::ExperimentCatalog& catalog, const ScoreOptions& options) {
  for (const auto& root : options.scope) resolve(root, catalog);
  const auto tree = backbone::build_model_tree(catalog);

  std::vector<Leaf> leaves;
  for (const auto& model : catalog.models) {
    const auto* exp = tree.experiment_of(model.id());
    const std::string experiment = exp ? exp->id : model.id();
    const bool requested = options.scope.empty() || std::any_of(options.scope.begin(), options.scope.end(),
                                                               [&](const UoaPath& r) {
                                                                 auto e = r.find(UoaKind::experiment);
                                                                 auto m = r.find(UoaKind::model);
                                                                 return (!e || *e == experiment) &&
                                                                        (!m || *m == model.id());
                                                               });
    if (!requested) continue;
    const store::CheckpointBundle* bundle = options.epoch ? model.checkpoint(*options.epoch) : model.latest();
    if (!bundle && options.epoch)
      throw NotFoundError("model " + model.id() + " has no checkpoint for epoch", std::to_string(*options.epoch));
    if (!bundle) continue;
    for (const auto& layer : model.graph.layers) {
      const auto* kref = bundle->find(store::paths::kernel(layer.name));
      const bool conv = (kref && kref->shape.size() == 4) || layer.type.find("Conv") != std::string::npos;
      const std::pair<const char*, VariableType> vars[] = {
          {"activations", VariableType::activations},
          {"kernel", conv ? VariableType::conv_kernel : VariableType::dense_kernel},
          {"bias", conv ? VariableType::conv_bias : VariableType::dense_bias}};
      for (const auto& [var, type] : vars) {
        if (options.variable_type && *options.variable_type != type) continue;
        const std::string tpath = std::string_view(var) == "activations" ? store::paths::activations(layer.name)
                                  : std::string_view(var) == "kernel"    ? store::paths::kernel(layer.name)
                                                                         : store::paths::bias(layer.name);
        if (!bundle->find(tpath)) continue;
        UoaPath path({{UoaKind::model, model.id()}, {UoaKind::layer, layer.name}, {UoaKind::variable, var}});
        if (!options.scope.empty() && std::none_of(options.scope.begin(), options.scope.end(), [&](const UoaPath& r) {
              return in_scope(path, experiment, r);
            }))
          continue;
        leaves.push_back({std::move(path), experiment, type, tpath, bundle});
      }
    }
  }
  if (leaves.empty()) throw InvalidArgument("no data-bearing UoAs in scope");

  InterestingnessReport report;
  report.measure = options.measure;
  for (const auto& [type, _] : kVariableNames) {
    GroupReport group;
    group.variable_type = type;
    for (const auto& leaf : leaves)
      if (leaf.type == type) {
        const auto t = leaf.bundle->read(leaf.tensor_path);
        group.raw[leaf.path.str()] = score(t.values, options.measure);
      }
    if (group.raw.empty()) continue;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& [k, v] : group.raw) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (const auto& [k, v] : group.raw) group.normalized[k] = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    report.groups.push_back(std::move(group));
  }

  const auto bump = [&](const std::string& key, double v) {
    auto [it, inserted] = report.propagated.emplace(key, v);
    if (!inserted) it->second = std::max(it->second, v);
  };
  for (const auto& leaf : leaves) {
    const auto v = *report.score_of(leaf.path.str());
    bump(leaf.path.parent().str(), v);
    bump(leaf.path.parent().parent().str(), v);
    bump(UoaPath({{UoaKind::experiment, leaf.experiment}}).str(), v);
  }
  return report;
}

std::string colorize(double score) {
  if (!(score >= 0)) score = 0;
  score = std::min(score, 1.0);
  constexpr int lo[3] = {0x3B, 0x4C, 0xC0};
  constexpr int hi[3] = {0xB4, 0x04, 0x26};
  char buf[8];
  int c[3];
  for (int i = 0; i < 3; ++i) c[i] = static_cast<int>(std::lround(lo[i] + (hi[i] - lo[i]) * score));
  std::snprintf(buf, sizeof buf, "#%02X%02X%02X", c[0], c[1], c[2]);
  return buf;
}

Measure parse_measure(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InvalidArgument("invalid parameter: measure must be an object");
  Measure m;
  const auto kind = parse_measure_kind(doc.value("kind", std::string()));
  if (!kind) throw InvalidArgument("invalid parameter: unknown measure kind");
  m.kind = *kind;
  if (m.kind == MeasureKind::baseline_divergence) {
    if (!doc.contains("baseline") || !doc["baseline"].is_object())
      throw InvalidArgument("invalid parameter: baseline_divergence needs a baseline");
    const auto& b = doc["baseline"];
    const auto bk = parse_baseline_kind(b.value("kind", std::string()));
    if (!bk) throw InvalidArgument("invalid parameter: unknown baseline kind");
    BaselineSpec spec{*bk, {}};
    if (*bk == BaselineKind::custom_samples) {
      if (!b.contains("samples") || !b["samples"].is_array() || b["samples"].empty())
        throw InvalidArgument("invalid parameter: custom baseline needs a non-empty sample array");
      for (const auto& v : b["samples"]) {
        if (!v.is_number()) throw InvalidArgument("invalid parameter: baseline samples must be numbers");
        spec.samples.push_back(v.get<double>());
      }
    }
    m.baseline = std::move(spec);
  }
  return m;
}

nlohmann::json to_json(const Measure& measure) {
  nlohmann::json j{{"kind", to_string(measure.kind)}};
  if (measure.baseline) {
    j["baseline"] = {{"kind", to_string(measure.baseline->kind)}};
    if (measure.baseline->kind == BaselineKind::custom_samples) j["baseline"]["samples"] = measure.baseline->samples;
  }
  return j;
}

nlohmann::json to_json(const InterestingnessReport& report) {
  nlohmann::json j{{"measure", to_json(report.measure)}};
  j["groups"] = nlohmann::json::array();
  nlohmann::json scores = nlohmann::json::object();
  for (const auto& g : report.groups) {
    j["groups"].push_back({{"variable_type", to_string(g.variable_type)}, {"raw", g.raw}, {"normalized", g.normalized}});
    for (const auto& [k, v] : g.normalized) scores[k] = v;
  }
  j["propagated"] = report.propagated;
  for (const auto& [k, v] : report.propagated) scores[k] = v;
  j["scores"] = scores;
  nlohmann::json colors = nlohmann::json::object();
  for (const auto& [k, v] : scores.items()) colors[k] = colorize(v.get<double>());
  j["colors"] = colors;
  return j;
}

}  // namespace nnprobe::interest
