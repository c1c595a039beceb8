#pragma once

// Transform pipelines applied server-side to queried tensors: an ordered list
// of operations, with branch/merge rules to fork the data into named
// sub-pipelines and join their results as table columns.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "nnprobe/error.hpp"
#include "nnprobe/tensor.hpp"

namespace nnprobe::transform {

/// Dense row-major array; rank 0 is a scalar.
struct Array {
  Shape shape;
  std::vector<double> values;

  static Array scalar(double v) { return Array{{}, {v}}; }
  static Array vector(std::vector<double> v) {
    Shape s{static_cast<std::int64_t>(v.size())};
    return Array{std::move(s), std::move(v)};
  }
  static Array from(const Tensor& t) { return Array{t.shape, t.values}; }
  bool is_scalar() const noexcept { return shape.empty(); }
};

/// Named columns in insertion order. Histogram-style outputs carry columns
/// of different lengths (edges vs. counts), so lengths are not forced equal.
struct Table {
  std::vector<std::pair<std::string, std::vector<double>>> columns;

  const std::vector<double>* column(std::string_view name) const;
  void add(std::string name, std::vector<double> values) { columns.emplace_back(std::move(name), std::move(values)); }
};

using Value = std::variant<Array, Table>;

enum class Cmp { gt, ge, lt, le, eq };
enum class AggFn { mean, var, min, max, sum, count, skew };
enum class NormMode { minmax, zscore };
enum class TopBy { abs, value };

struct TransformOp;

struct TransformSpec {
  std::vector<TransformOp> ops;
  bool empty() const noexcept { return ops.empty(); }
};

namespace ops {
struct Reshape { Shape shape; };
struct Flatten {};
struct Slice {
  std::int64_t axis = 0;
  std::optional<std::int64_t> start;
  std::optional<std::int64_t> stop;
  std::int64_t step = 1;
};
struct Filter { Cmp cmp = Cmp::gt; double value = 0; };
struct Agg {
  AggFn fn = AggFn::mean;
  std::optional<std::int64_t> axis;  // nullopt: reduce everything
};
struct Histogram {
  std::int64_t bins = 32;
  std::optional<std::pair<double, double>> range;
};
struct Density { std::int64_t bins = 32; };
struct Normalize { NormMode mode = NormMode::minmax; };
struct GroupByClass { AggFn fn = AggFn::mean; };
struct Sort { bool descending = false; };
struct TopK { std::int64_t k = 1; TopBy by = TopBy::abs; };
struct Branch { std::vector<std::pair<std::string, TransformSpec>> specs; };
struct Merge { std::vector<std::string> names; };
}  // namespace ops

struct TransformOp {
  std::variant<ops::Reshape, ops::Flatten, ops::Slice, ops::Filter, ops::Agg, ops::Histogram, ops::Density,
               ops::Normalize, ops::GroupByClass, ops::Sort, ops::TopK, ops::Branch, ops::Merge>
      op;

  std::string_view name() const;
};

/// Parse failure or execution failure. `op_index` is the position of the
/// offending top-level op.
class TransformError : public Error {
 public:
  TransformError(std::size_t op_index, const std::string& message)
      : Error("op " + std::to_string(op_index) + ": " + message), op_index_(op_index) {}
  explicit TransformError(const std::string& message) : Error(message) {}
  std::optional<std::size_t> op_index() const noexcept { return op_index_; }

 private:
  std::optional<std::size_t> op_index_;
};

/// Parses the wire form (array of op objects). Throws TransformError with
/// "unknown op: <name>" or "invalid parameter: ..." messages.
TransformSpec parse_transform(const nlohmann::json& doc);
TransformSpec parse_transform(std::string_view text);

/// Canonical wire form with every parameter spelled out.
nlohmann::json to_json(const TransformSpec& spec);

/// Applies the ops left to right in double precision. `labels` are per-sample
/// class ids aligned with the first dimension (needed by groupby_class).
Value apply_transform(Value data, const TransformSpec& spec, std::optional<std::span<const std::int64_t>> labels = {});

nlohmann::json to_json(const Value& value);

std::string_view to_string(AggFn fn);
std::optional<AggFn> parse_agg_fn(std::string_view name);

/// Reduces `values` with `fn` (population conventions of stats::moments).
double reduce(AggFn fn, std::span<const double> values);

/// Equal-width binning; left-inclusive bins, the last bin also includes the
/// upper edge. Elements outside [lo, hi] are dropped. A zero-width range is
/// widened to [lo - 0.5, hi + 0.5].
struct Binned {
  std::vector<double> edges;
  std::vector<double> counts;
};
Binned bin_values(std::span<const double> values, std::int64_t bins, double lo, double hi);

}  // namespace nnprobe::transform
