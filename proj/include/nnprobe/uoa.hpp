#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nnprobe/store.hpp"

namespace nnprobe {

/// Hierarchy of units of analysis, coarsest first.
enum class UoaKind { experiment, model, layer, op, variable, neuron, weight };

std::string_view to_string(UoaKind kind);
std::optional<UoaKind> parse_uoa_kind(std::string_view name);

struct UoaSegment {
  UoaKind kind;
  std::string id;
  bool operator==(const UoaSegment&) const = default;
};

/// Address of a unit of analysis, e.g. `model:vae1/layer:z_mean/variable:kernel`.
/// Segment kinds are strictly descending in the hierarchy; the path may start
/// at any level.
class UoaPath {
 public:
  UoaPath() = default;
  /// Throws InvalidArgument on malformed input or ordering violations.
  explicit UoaPath(std::vector<UoaSegment> segments);
  static UoaPath parse(std::string_view text);

  std::string str() const;
  const std::vector<UoaSegment>& segments() const noexcept { return segments_; }
  bool empty() const noexcept { return segments_.empty(); }
  UoaKind kind() const { return segments_.back().kind; }
  const std::string& leaf_id() const { return segments_.back().id; }

  /// Id of the first segment of `kind`, if present.
  std::optional<std::string> find(UoaKind kind) const;
  UoaPath child(UoaKind kind, std::string id) const;
  UoaPath parent() const;
  /// True when this path equals `other` or lies beneath it.
  bool within(const UoaPath& other) const;

  bool operator==(const UoaPath&) const = default;
  bool operator<(const UoaPath& other) const { return str() < other.str(); }

 private:
  std::vector<UoaSegment> segments_;
};

/// Throws NotFoundError when any segment does not exist in `catalog`.
void resolve(const UoaPath& path, const store::ExperimentCatalog& catalog);
bool resolves(const UoaPath& path, const store::ExperimentCatalog& catalog);

}  // namespace nnprobe
