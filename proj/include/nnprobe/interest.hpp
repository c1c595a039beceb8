#pragma once

// Interestingness: per-UoA abnormality scores, normalized within a variable
// type and propagated upward with max so an anomaly stays visible at L3.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nnprobe/store.hpp"
#include "nnprobe/uoa.hpp"

namespace nnprobe::interest {

struct Descriptors {
  double skew = 0;
  double variance = 0;
  double min = 0;
  double max = 0;
};

/// Population statistics; throws InvalidArgument on empty input.
Descriptors compute_descriptors(std::span<const double> values);

enum class BaselineKind { standard_normal, fitted_normal, uniform, custom_samples };

struct BaselineSpec {
  BaselineKind kind = BaselineKind::standard_normal;
  std::vector<double> samples;  // custom_samples only
};

inline constexpr std::int64_t kDivergenceBins = 64;
inline constexpr std::size_t kBaselineDraws = 10000;
inline constexpr std::uint64_t kBaselineSeed = 20240301;

/// The baseline sample compared against `t`. Seeded draws for the
/// parametric kinds (fitted/uniform use the moments and range of `t`);
/// custom samples are returned unchanged.
std::vector<double> baseline_draws(const BaselineSpec& baseline, std::span<const double> t);

/// Jensen-Shannon divergence (natural log) between equal-width histograms of
/// `t` and the baseline sample over their combined range. In [0, ln 2].
double divergence_from_baseline(std::span<const double> t, const BaselineSpec& baseline,
                                std::int64_t bins = kDivergenceBins);

/// JS divergence of two histograms given as raw counts.
double js_divergence(std::span<const double> p_counts, std::span<const double> q_counts);

enum class MeasureKind { skew, variance, min, max, baseline_divergence };

struct Measure {
  MeasureKind kind = MeasureKind::variance;
  std::optional<BaselineSpec> baseline;  // baseline_divergence only
};

double score(std::span<const double> values, const Measure& measure);

enum class VariableType { activations, dense_kernel, dense_bias, conv_kernel, conv_bias };

std::string_view to_string(MeasureKind kind);
std::optional<MeasureKind> parse_measure_kind(std::string_view name);
std::string_view to_string(BaselineKind kind);
std::optional<BaselineKind> parse_baseline_kind(std::string_view name);
std::string_view to_string(VariableType type);
std::optional<VariableType> parse_variable_type(std::string_view name);

struct ScoreOptions {
  std::optional<std::int64_t> epoch;  // nullopt: latest checkpoint of each model
  Measure measure;
  std::vector<UoaPath> scope;  // empty: whole catalog
  std::optional<VariableType> variable_type;
};

struct GroupReport {
  VariableType variable_type = VariableType::activations;
  std::map<std::string, double> raw;
  std::map<std::string, double> normalized;
};

struct InterestingnessReport {
  Measure measure;
  std::vector<GroupReport> groups;         // only non-empty groups, enum order
  std::map<std::string, double> propagated;  // layer, model and experiment paths

  /// Normalized leaf score or propagated ancestor score.
  std::optional<double> score_of(const std::string& uoa) const;
};

/// Scores every `model:M/layer:L/variable:V` leaf in scope. Throws
/// NotFoundError for a requested epoch a model lacks and InvalidArgument when
/// nothing in scope carries data.
InterestingnessReport score_and_propagate(const store::ExperimentCatalog& catalog, const ScoreOptions& options);

/// "#RRGGBB", linear per channel from #3B4CC0 (0) to #B40426 (1); clamped.
std::string colorize(double score);

Measure parse_measure(const nlohmann::json& doc);
nlohmann::json to_json(const Measure& measure);
nlohmann::json to_json(const InterestingnessReport& report);

}  // namespace nnprobe::interest
