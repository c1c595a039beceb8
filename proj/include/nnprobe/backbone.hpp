#pragma once

// Structural backbone: the model tree (L3), architecture structures (L2) and
// the neuron-weight network (L1), plus search badges propagated upward.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nnprobe/store.hpp"
#include "nnprobe/uoa.hpp"

namespace nnprobe::backbone {

struct TreeNode {
  std::string model_id;
  std::size_t experiment = 0;
  std::size_t color_index = 0;  // position within the experiment
  std::size_t depth = 0;        // longest parent chain to a root
  std::uint64_t num_trainable_params = 0;
};

struct TreeEdge {
  std::string parent;
  std::string child;
  /// (child - parent) / parent; nullopt when the parent has zero params.
  std::optional<double> rel_param_change;
  std::uint64_t parent_params = 0;
  std::uint64_t child_params = 0;
};

struct Experiment {
  std::string id;  // id of the experiment's first model
  std::vector<std::string> models;
};

struct ModelTreeGraph {
  std::vector<Experiment> experiments;
  std::vector<TreeNode> nodes;
  std::vector<TreeEdge> edges;

  const Experiment* experiment_of(std::string_view model_id) const;
};

/// Experiments are the connected components of the undirected parent
/// relation, ordered by earliest created_at. Nodes are ordered by depth then
/// created_at within their experiment.
ModelTreeGraph build_model_tree(const store::ExperimentCatalog& catalog);

struct NeuronInfo {
  std::int64_t neuron = 0;
  double mean_activation = 0;  // avg(c) over the selected classes
  double share_relative = 0;   // |mean| / sum of |mean| over the whole layer
  double share_absolute = 0;   // |mean|
  std::vector<double> per_class_means;
};

struct WeightEdge {
  std::int64_t source = 0;
  std::int64_t target = 0;
  double value = 0;
};

struct NeuronWeightView {
  std::string model;
  std::string layer;
  std::string source_layer;
  std::int64_t epoch = 0;
  std::vector<std::int64_t> classes;
  std::size_t k = 0;
  std::vector<NeuronInfo> sources;  // sorted by mean_activation descending
  std::vector<NeuronInfo> targets;
  std::vector<WeightEdge> edges;    // |value| descending, ties by (source, target)
};

/// The k largest-|w| entries of an [in, out] weight matrix, ties broken by
/// (row, col) ascending.
std::vector<WeightEdge> top_k_weights(const std::vector<double>& matrix, std::int64_t rows, std::int64_t cols,
                                      std::size_t k);

/// Collapses a kernel to an [in, out] matrix: dense kernels as-is, conv
/// kernels [kh, kw, in, out] summed over the spatial window.
std::vector<double> channel_matrix(const Tensor& kernel, std::int64_t& rows, std::int64_t& cols);

/// Per-class mean activation per neuron, shape [classes][neurons]. Conv
/// neurons are output channels (spatial dims averaged).
std::vector<std::vector<double>> class_means_by_neuron(const Tensor& mean_class_activations);

NeuronWeightView build_neuron_weight_view(const store::ExperimentCatalog& catalog, const std::string& model,
                                          const std::string& layer, std::int64_t epoch,
                                          const std::vector<std::int64_t>& class_selection, std::size_t k);

struct NeuronClassRow {
  std::int64_t neuron = 0;
  std::vector<double> class_means;
};

/// Rows sorted by the chosen class column descending (ties by neuron index),
/// or by neuron index when no class is given.
std::vector<NeuronClassRow> neurons_by_class_matrix(const store::ExperimentCatalog& catalog, const std::string& model,
                                                    const std::string& layer, std::int64_t epoch,
                                                    std::optional<std::int64_t> sort_by_class);

struct Badge {
  UoaPath uoa;
  std::string match_kind;
  std::size_t count = 0;
};

inline constexpr const char* kSkipConnection = "skip_connection";
inline constexpr const char* kMultiBranch = "multi_branch";

/// Valid queries: op kinds, layer types present in the catalog, and the
/// structure names. Matches get a badge; every ancestor up to the experiment
/// gets the sum of its descendants' counts.
std::vector<Badge> propagate_badges(const store::ExperimentCatalog& catalog, const std::string& query);

struct StructureReport {
  std::vector<std::pair<std::string, std::string>> skip_connection;
  std::vector<std::pair<std::string, std::string>> multi_branch;
};

/// skip_connection: a direct edge u->v plus another u->v path of length >= 2.
/// multi_branch: at least two internally node-disjoint u->v paths of length >= 2.
/// Throws InvalidArgument on a cyclic graph.
StructureReport detect_structures(const store::ArchitectureGraph& graph);

nlohmann::json to_json(const ModelTreeGraph& tree);
nlohmann::json to_json(const NeuronWeightView& view);
nlohmann::json to_json(const std::vector<NeuronClassRow>& rows);
nlohmann::json to_json(const std::vector<Badge>& badges);
nlohmann::json to_json(const StructureReport& report);

}  // namespace nnprobe::backbone
