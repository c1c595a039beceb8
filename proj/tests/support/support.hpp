#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "nnprobe/fixture.hpp"
#include "nnprobe/rng.hpp"
#include "nnprobe/store.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() /
            ("nnprobe-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline nnprobe::Tensor f32(nnprobe::Shape shape, std::vector<double> values) {
  return nnprobe::Tensor{nnprobe::DType::f32, std::move(shape), std::move(values)};
}
inline nnprobe::Tensor i64(nnprobe::Shape shape, std::vector<double> values) {
  return nnprobe::Tensor{nnprobe::DType::i64, std::move(shape), std::move(values)};
}

inline nnprobe::store::LayerDesc layer(std::string name, std::string type, nnprobe::Shape out,
                                       std::vector<nnprobe::store::OpKind> ops = {}) {
  nnprobe::store::LayerDesc l{name, name, std::move(type), std::move(out), {}, {}};
  for (std::size_t i = 0; i < ops.size(); ++i)
    l.inner_ops.push_back({"op" + std::to_string(i), ops[i], nlohmann::json::object()});
  for (std::size_t i = 1; i < ops.size(); ++i)
    l.inner_edges.emplace_back("op" + std::to_string(i - 1), "op" + std::to_string(i));
  return l;
}

inline std::string iso_time(int hour) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "2024-01-01T%02d:00:00Z", hour % 24);
  return buf;
}

/// Describes a log directory in memory and writes it in the on-disk format.
struct LogWriter {
  struct Model {
    nnprobe::store::ModelRecord record;
    nnprobe::store::ArchitectureGraph graph;
    std::map<std::int64_t, std::map<std::string, nnprobe::Tensor>> checkpoints;
  };

  std::vector<std::string> class_labels{"a", "b"};
  std::vector<Model> models;

  Model& add(std::string id, std::vector<std::string> parents = {}, std::uint64_t params = 0) {
    Model m;
    m.record.header.id = id;
    m.record.header.name = id;
    m.record.header.parents = std::move(parents);
    m.record.header.created_at = iso_time(static_cast<int>(models.size()));
    m.record.num_trainable_params = params;
    models.push_back(std::move(m));
    return models.back();
  }

  void write(const fs::path& root) const {
    using namespace nnprobe::store;
    fs::create_directories(root);
    std::vector<ModelRecord> records;
    for (const auto& m : models) {
      ModelRecord rec = m.record;
      rec.checkpoints.clear();
      const auto dir = root / rec.header.id;
      write_document(dir / kGraphFile, nlohmann::json(m.graph));
      for (const auto& [epoch, tensors] : m.checkpoints) {
        const std::string rel = "checkpoints/" + std::to_string(epoch);
        CheckpointBundle bundle;
        bundle.epoch = epoch;
        for (const auto& [name, t] : tensors) {
          std::string file = name;
          for (auto& ch : file)
            if (ch == '/') ch = '.';
          const auto blob = dir / rel / "tensors" / (file + ".bin");
          nnprobe::write_tensor(t, blob);
          bundle.tensors.emplace(name, nnprobe::TensorRef{t.dtype, t.shape, blob});
        }
        write_document(dir / rel / kManifestFile, manifest_document(bundle, dir / rel));
        rec.checkpoints.push_back({epoch, rel});
      }
      records.push_back(std::move(rec));
    }
    write_document(root / kDatabaseFile, database_document(class_labels, records));
  }

  nnprobe::store::CatalogPtr load(const fs::path& root) const {
    write(root);
    return nnprobe::store::load_catalog(root);
  }
};

/// Re-emits a loaded catalog into a fresh directory through the public
/// document writers (independent of the fixture generator).
inline void rewrite_catalog(const nnprobe::store::ExperimentCatalog& catalog, const fs::path& out) {
  LogWriter w;
  w.class_labels = catalog.class_labels;
  for (const auto& m : catalog.models) {
    LogWriter::Model copy;
    copy.record = m.record;
    copy.graph = m.graph;
    for (const auto& c : m.checkpoints)
      for (const auto& [name, ref] : c.tensors) copy.checkpoints[c.epoch].emplace(name, nnprobe::read_tensor(ref));
    w.models.push_back(std::move(copy));
  }
  w.write(out);
}

/// Catalog assembled in memory (no tensors) for pure graph computations.
inline nnprobe::store::CatalogPtr memory_catalog(std::vector<nnprobe::store::LoadedModel> models) {
  auto c = std::make_shared<nnprobe::store::ExperimentCatalog>();
  c->version = 1;
  c->class_labels = {"a", "b"};
  for (auto& m : models) {
    c->index.emplace(m.id(), c->models.size());
    c->models.push_back(std::move(m));
  }
  return c;
}

inline nnprobe::store::LoadedModel memory_model(std::string id, std::vector<std::string> parents,
                                                std::uint64_t params, int hour,
                                                nnprobe::store::ArchitectureGraph graph = {}) {
  nnprobe::store::LoadedModel m;
  m.record.header = {id, id, std::move(parents), iso_time(hour)};
  m.record.num_trainable_params = params;
  m.graph = std::move(graph);
  return m;
}

inline std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).generic_string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return files;
}

}  // namespace testing
