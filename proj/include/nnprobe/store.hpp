#pragma once

// On-disk experiment log format and the immutable in-memory catalog.
//
//   <root>/models.db                                  model database
//   <root>/<model_id>/graph.doc                       architecture graph
//   <root>/<model_id>/checkpoints/<epoch>/manifest.doc
//   <root>/<model_id>/checkpoints/<epoch>/tensors/<name>.bin
//
// All documents are JSON. Blobs are raw little-endian, row-major.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nnprobe/tensor.hpp"

namespace nnprobe::store {

inline constexpr const char* kDatabaseFile = "models.db";
inline constexpr const char* kGraphFile = "graph.doc";
inline constexpr const char* kManifestFile = "manifest.doc";

struct ModelHeader {
  std::string id;
  std::string name;
  std::vector<std::string> parents;
  std::string created_at;  // ISO-8601 UTC, "YYYY-MM-DDTHH:MM:SSZ"
};

struct CheckpointEntry {
  std::int64_t epoch = 0;
  std::string bundle;  // directory relative to the model directory
};

struct ModelRecord {
  ModelHeader header;
  std::uint64_t num_trainable_params = 0;
  std::uint64_t save_size_bytes = 0;
  std::optional<double> runtime_ms_per_sample;
  // Series index i holds the value after training epoch i + 1.
  std::map<std::string, std::vector<double>> metrics;
  std::vector<CheckpointEntry> checkpoints;
  std::string graph = kGraphFile;
};

enum class OpKind { matmul, add, conv, activation, reshape, concat, variable_kernel, variable_bias, custom };

std::string_view to_string(OpKind kind);
std::optional<OpKind> parse_op_kind(std::string_view name);
const std::vector<OpKind>& all_op_kinds();

struct InnerOp {
  std::string id;
  OpKind kind = OpKind::custom;
  nlohmann::json attrs = nlohmann::json::object();
};

struct LayerDesc {
  std::string id;
  std::string name;
  std::string type;
  Shape output_shape;  // without the batch dimension
  std::vector<InnerOp> inner_ops;
  std::vector<std::pair<std::string, std::string>> inner_edges;

  const InnerOp* find_op(std::string_view op_id) const;
  bool has_op(OpKind kind) const;
};

struct ArchitectureGraph {
  std::vector<LayerDesc> layers;
  std::vector<std::pair<std::string, std::string>> edges;  // layer ids

  const LayerDesc* find_layer(std::string_view name_or_id) const;
  std::vector<std::string> predecessors(std::string_view layer_id) const;
};

/// Logical tensor paths inside a checkpoint bundle.
namespace paths {
inline constexpr const char* kSamplesX = "data_samples/x";
inline constexpr const char* kSamplesLabel = "data_samples/y_label";
inline constexpr const char* kSamplesPrediction = "data_samples/y_prediction";
std::string activations(std::string_view layer);
std::string mean_class_activations(std::string_view layer);
std::string kernel(std::string_view layer);
std::string bias(std::string_view layer);

struct Parsed {
  enum class Kind { samples_x, samples_label, samples_prediction, activations, mean_class_activations, kernel, bias };
  Kind kind;
  std::string layer;  // empty for data_samples/*
};
/// Throws FormatError for paths outside the bundle grammar.
Parsed parse(std::string_view logical_path);
}  // namespace paths

struct CheckpointBundle {
  std::int64_t epoch = 0;
  std::map<std::string, TensorRef> tensors;

  const TensorRef* find(std::string_view logical_path) const;
  /// Throws NotFoundError when the path is not logged in this bundle.
  Tensor read(std::string_view logical_path) const;
};

struct LoadedModel {
  ModelRecord record;
  ArchitectureGraph graph;
  std::vector<CheckpointBundle> checkpoints;  // ascending epoch
  std::filesystem::path dir;

  const std::string& id() const noexcept { return record.header.id; }
  const CheckpointBundle* checkpoint(std::int64_t epoch) const;
  const CheckpointBundle* latest() const;
};

/// Immutable once published; every reload produces a new instance.
struct ExperimentCatalog {
  std::uint64_t version = 0;
  std::vector<std::string> class_labels;
  std::vector<LoadedModel> models;  // database order
  std::filesystem::path root;

  const LoadedModel* find(std::string_view id) const;

  std::unordered_map<std::string, std::size_t> index;
};

using CatalogPtr = std::shared_ptr<const ExperimentCatalog>;

/// Reads and validates a whole log directory. Throws FormatError for a
/// missing database, malformed records, unresolved parents ("unresolved
/// parent: Z"), cyclic lineage, bad blobs or broken bundle invariants.
CatalogPtr load_catalog(const std::filesystem::path& root, std::uint64_t version = 1);

/// All violations of `header` against `catalog`: "empty id", "duplicate id",
/// "missing parent: <id>", "cycle". Empty result means ok.
std::vector<std::string> validate_header(const ModelHeader& header, const ExperimentCatalog& catalog);

/// Byte size of the weight blobs (kernels and biases) of the latest checkpoint.
/// Throws InvalidArgument when the model has no checkpoints.
std::uint64_t compute_save_size(const LoadedModel& model);

// Document (de)serialization.
void to_json(nlohmann::json& j, const ModelHeader& h);
void from_json(const nlohmann::json& j, ModelHeader& h);
void to_json(nlohmann::json& j, const ModelRecord& r);
void from_json(const nlohmann::json& j, ModelRecord& r);
void to_json(nlohmann::json& j, const ArchitectureGraph& g);
void from_json(const nlohmann::json& j, ArchitectureGraph& g);

nlohmann::json manifest_document(const CheckpointBundle& bundle, const std::filesystem::path& bundle_dir);
nlohmann::json database_document(const std::vector<std::string>& class_labels,
                                 const std::vector<ModelRecord>& records);

/// Logical content of a catalog (records, graphs, every decoded tensor)
/// independent of file locations; used for round-trip checks.
nlohmann::json logical_content(const ExperimentCatalog& catalog);

/// Writes a document with a trailing newline via temp-file + rename.
void write_document(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace nnprobe::store
