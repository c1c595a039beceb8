#pragma once

// Debugging components: the design-dimension constraint system, the tool
// registry, widget instantiation and grouping, class selection, sessions.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nnprobe/error.hpp"
#include "nnprobe/store.hpp"
#include "nnprobe/transform.hpp"
#include "nnprobe/uoa.hpp"

namespace nnprobe::components {

enum class DataKind { structural, scalar, n_dimensional, function };
enum class Task { assessment, verification, comparison };
enum class Level { multi_model, single_model, layer_unit, weight_neuron };
enum class Processing { raw, transformation, aggregation, statistical_descriptors };
enum class Representation { visualization, verbalization };
enum class Dependency { none, dataset, model, layer };
/// Where a component's data comes from; drives the inferred dependency.
enum class DataSource { architecture, metrics, weights, activations, samples, predictions, notes };

template <typename E>
struct Slot {
  std::optional<E> value;  // fixed
  std::vector<E> excluded;

  bool fixed() const noexcept { return value.has_value(); }
  bool is_excluded(E e) const {
    for (auto x : excluded)
      if (x == e) return true;
    return false;
  }
  bool operator==(const Slot&) const = default;
};

struct DimensionState {
  Slot<DataKind> data;
  Slot<Task> task;
  Slot<Level> level;
  Slot<Processing> processing;
  Slot<Representation> representation;
  Slot<Dependency> dependencies;  // inferred only

  bool spans_models = false;
  std::optional<DataSource> source;
  std::optional<Dependency> dependency_hint;  // tool-declared model/layer dependency

  bool fully_fixed() const;
  bool operator==(const DimensionState&) const = default;
};

/// Two rules (or a rule and a user choice) demand incompatible values.
class DimensionConflict : public InvalidArgument {
 public:
  DimensionConflict(std::string first, std::string second)
      : InvalidArgument("contradiction: " + first + " vs " + second), first_(std::move(first)),
        second_(std::move(second)) {}
  const std::string& first() const noexcept { return first_; }
  const std::string& second() const noexcept { return second_; }

 private:
  std::string first_, second_;
};

/// Propagates the constraint rules to a fixpoint. The dependencies slot is
/// recomputed from scratch on every call; unreached slots stay free.
DimensionState resolve_dimensions(DimensionState partial);

std::string_view to_string(DataKind v);
std::string_view to_string(Task v);
std::string_view to_string(Level v);
std::string_view to_string(Processing v);
std::string_view to_string(Representation v);
std::string_view to_string(Dependency v);
std::string_view to_string(DataSource v);

Level level_of(UoaKind kind);

nlohmann::json to_json(const DimensionState& state);
/// Accepts {"data": "structural"} or {"data": {"fixed": ..., "excluded": [...]}}.
DimensionState parse_dimensions(const nlohmann::json& doc);

// Queries bound to widgets.

enum class QueryKind { tensor, metrics, model_info, neurons_by_class, note, branch };
std::string_view to_string(QueryKind kind);

struct BoundQuery {
  QueryKind kind = QueryKind::tensor;
  std::string model;
  std::string checkpoint = "latest";  // "latest", "*" or an epoch number
  std::string path;                   // tensor path, or the info field for model_info
  transform::TransformSpec spec;
  std::optional<std::vector<std::int64_t>> classes;
  std::string uoa;  // notes and branch
};

nlohmann::json to_json(const BoundQuery& query);
BoundQuery parse_bound_query(const nlohmann::json& doc);

class NoteStore;

/// Runs a tensor query: optional class filtering on per-sample tensors (rows
/// whose label is selected) and mean_class_activations (selected rows), then
/// the transform. Checkpoint "*" yields an epoch-indexed series.
nlohmann::json run_tensor_query(const store::ExperimentCatalog& catalog, const std::string& model,
                                const std::string& checkpoint, const std::string& path,
                                const transform::TransformSpec& spec,
                                const std::optional<std::vector<std::int64_t>>& classes);

nlohmann::json execute_query(const store::ExperimentCatalog& catalog, const BoundQuery& query,
                             const NoteStore* notes = nullptr);

// Tools.

struct QueryTemplate {
  QueryKind kind = QueryKind::tensor;
  std::string checkpoint;  // empty: caller's selector
  std::string path;        // may use {model}, {layer}, {variable_path}, {neuron}
  nlohmann::json spec = nlohmann::json::array();  // "per_dimension_density" expands per layer width
};

struct ToolDescriptor {
  std::string id;
  std::string name;
  std::string description;
  std::string category;
  std::vector<UoaKind> applicable_uoa_kinds;
  std::vector<Level> applicable_levels;
  std::string produces;  // widget kind
  std::vector<QueryTemplate> queries;
  bool functional = false;
  bool class_dependent = true;
  bool class_recomputable = true;
  DimensionState dimensions;  // partial; level and task come from the UoA
};

class ToolRegistry {
 public:
  static const ToolRegistry& builtin();
  explicit ToolRegistry(std::vector<ToolDescriptor> tools);

  const std::vector<ToolDescriptor>& tools() const noexcept { return tools_; }
  const ToolDescriptor* find(std::string_view id) const;

 private:
  std::vector<ToolDescriptor> tools_;
};

/// Tools whose applicability covers the UoA's kind and level and whose
/// tensors are logged in at least one checkpoint of the model, ordered by
/// (category, name). Throws NotFoundError for an unresolvable UoA.
std::vector<const ToolDescriptor*> applicable_tools(const UoaPath& uoa, const ToolRegistry& registry,
                                                    const store::ExperimentCatalog& catalog);

struct WidgetInstance {
  std::string id;
  std::string tool;
  UoaPath uoa;
  Level level = Level::single_model;
  DimensionState dimensions;
  std::vector<BoundQuery> queries;
  std::string representation;
  bool class_warning = false;
};

/// Binds the tool's templates to `uoa`. Throws InvalidArgument for an
/// inapplicable tool, unlogged data, or a template variable the UoA cannot fill.
WidgetInstance instantiate_widget(const ToolDescriptor& tool, const UoaPath& uoa,
                                  const store::ExperimentCatalog& catalog,
                                  const std::optional<std::vector<std::int64_t>>& class_selection,
                                  const std::string& checkpoint, std::string widget_id);

nlohmann::json to_json(const WidgetInstance& widget);
WidgetInstance parse_widget(const nlohmann::json& doc);

// Grouping.

enum class GroupMode { side_by_side, common_scale, merged };
std::string_view to_string(GroupMode mode);
std::optional<GroupMode> parse_group_mode(std::string_view name);

struct WidgetGroup {
  std::string id;
  std::vector<std::string> members;
  GroupMode mode = GroupMode::side_by_side;
};

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Rendered data of one widget as far as grouping is concerned.
struct WidgetData {
  std::string widget_id;
  std::string label;
  std::string representation;
  std::string x_semantics;
  std::string y_semantics;
  std::pair<double, double> x_domain{0, 0};
  std::pair<double, double> y_domain{0, 0};
  std::vector<Series> series;
};

struct RegroupResult {
  WidgetGroup group;
  std::optional<std::pair<double, double>> x_domain;  // common_scale
  std::optional<std::pair<double, double>> y_domain;
  std::optional<WidgetData> merged;
};

/// Throws InvalidArgument naming the first incompatible pair.
RegroupResult regroup(const WidgetGroup& group, GroupMode mode, const std::vector<WidgetData>& members);

nlohmann::json to_json(const RegroupResult& result);
WidgetData parse_widget_data(const nlohmann::json& doc);

// Class selection.

struct ClassSelectionResult {
  std::vector<WidgetInstance> requery;  // queries carry the class filter
  std::vector<std::string> warned;      // class-dependent, not recomputable
  std::vector<std::string> unaffected;  // class-independent data
};

ClassSelectionResult apply_class_selection(const std::vector<std::int64_t>& selection, std::size_t num_classes,
                                           const std::vector<WidgetInstance>& widgets,
                                           const ToolRegistry& registry);

/// 2^n - 1; throws InvalidArgument for n >= 64.
std::uint64_t class_selection_count(std::size_t num_classes);

// Sessions and notes.

struct Session {
  std::string id;
  std::vector<WidgetInstance> widgets;
  std::vector<WidgetGroup> groups;
};

/// Widgets appear under the key of their level, in creation order.
nlohmann::json to_json(const Session& session);
Session parse_session(const nlohmann::json& doc);

class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path root);
  std::optional<Session> load(const std::string& id) const;
  void save(const Session& session);

 private:
  std::filesystem::path dir_;
  mutable std::mutex mu_;
};

struct Note {
  std::string id;
  std::string uoa;
  std::string text;  // markdown
  std::string created_at;
};

class NoteStore {
 public:
  static constexpr const char* kFile = "notes.db";

  explicit NoteStore(std::filesystem::path root);
  std::vector<Note> list(const std::optional<std::string>& uoa = std::nullopt) const;
  Note add(const std::string& uoa, const std::string& text);

 private:
  std::vector<Note> read_locked() const;
  std::filesystem::path file_;
  mutable std::mutex mu_;
};

nlohmann::json to_json(const Note& note);

/// Child header for the branch-model tool; nothing is written to disk.
store::ModelHeader make_branch_header(const store::ExperimentCatalog& catalog, const std::string& parent,
                                      const std::string& name);

std::string now_iso8601();

}  // namespace nnprobe::components
