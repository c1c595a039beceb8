#include <algorithm>
#include <fstream>
#include <functional>
#include <regex>
#include <set>
#include <sstream>

#include "nnprobe/error.hpp"
#include "nnprobe/store.hpp"

namespace nnprobe::store {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Op kinds and logical paths

namespace {
constexpr std::pair<OpKind, std::string_view> kOpKindNames[] = {
    {OpKind::matmul, "matmul"},
    {OpKind::add, "add"},
    {OpKind::conv, "conv"},
    {OpKind::activation, "activation"},
    {OpKind::reshape, "reshape"},
    {OpKind::concat, "concat"},
    {OpKind::variable_kernel, "variable-kernel"},
    {OpKind::variable_bias, "variable-bias"},
    {OpKind::custom, "custom"},
};
}  // namespace

std::string_view to_string(OpKind kind) {
  for (const auto& [k, name] : kOpKindNames)
    if (k == kind) return name;
  return "custom";
}

std::optional<OpKind> parse_op_kind(std::string_view name) {
  for (const auto& [k, n] : kOpKindNames)
    if (n == name) return k;
  return std::nullopt;
}

const std::vector<OpKind>& all_op_kinds() {
  static const std::vector<OpKind> kinds = [] {
    std::vector<OpKind> out;
    for (const auto& [k, n] : kOpKindNames) out.push_back(k);
    return out;
  }();
  return kinds;
}

const InnerOp* LayerDesc::find_op(std::string_view op_id) const {
  for (const auto& op : inner_ops)
    if (op.id == op_id) return &op;
  return nullptr;
}

bool LayerDesc::has_op(OpKind kind) const {
  return std::any_of(inner_ops.begin(), inner_ops.end(), [&](const InnerOp& op) { return op.kind == kind; });
}

const LayerDesc* ArchitectureGraph::find_layer(std::string_view name_or_id) const {
  for (const auto& l : layers)
    if (l.name == name_or_id) return &l;
  for (const auto& l : layers)
    if (l.id == name_or_id) return &l;
  return nullptr;
}

std::vector<std::string> ArchitectureGraph::predecessors(std::string_view layer_id) const {
  std::vector<std::string> out;
  for (const auto& [from, to] : edges)
    if (to == layer_id) out.push_back(from);
  return out;
}

namespace paths {

std::string activations(std::string_view layer) { return "layers/" + std::string(layer) + "/activations"; }
std::string mean_class_activations(std::string_view layer) {
  return "layers/" + std::string(layer) + "/mean_class_activations";
}
std::string kernel(std::string_view layer) { return "layers/" + std::string(layer) + "/weights/kernel"; }
std::string bias(std::string_view layer) { return "layers/" + std::string(layer) + "/weights/bias"; }

Parsed parse(std::string_view p) {
  using K = Parsed::Kind;
  if (p == kSamplesX) return {K::samples_x, {}};
  if (p == kSamplesLabel) return {K::samples_label, {}};
  if (p == kSamplesPrediction) return {K::samples_prediction, {}};
  constexpr std::string_view prefix = "layers/";
  if (p.substr(0, prefix.size()) == prefix) {
    auto rest = p.substr(prefix.size());
    auto slash = rest.find('/');
    if (slash != std::string_view::npos && slash > 0) {
      std::string layer(rest.substr(0, slash));
      auto leaf = rest.substr(slash + 1);
      if (leaf == "activations") return {K::activations, layer};
      if (leaf == "mean_class_activations") return {K::mean_class_activations, layer};
      if (leaf == "weights/kernel") return {K::kernel, layer};
      if (leaf == "weights/bias") return {K::bias, layer};
    }
  }
  throw FormatError("bad tensor path: " + std::string(p));
}

}  // namespace paths

const TensorRef* CheckpointBundle::find(std::string_view logical_path) const {
  auto it = tensors.find(std::string(logical_path));
  return it == tensors.end() ? nullptr : &it->second;
}

Tensor CheckpointBundle::read(std::string_view logical_path) const {
  const auto* ref = find(logical_path);
  if (!ref) throw NotFoundError("tensor not logged at epoch " + std::to_string(epoch), std::string(logical_path));
  return read_tensor(*ref);
}

const CheckpointBundle* LoadedModel::checkpoint(std::int64_t epoch) const {
  for (const auto& c : checkpoints)
    if (c.epoch == epoch) return &c;
  return nullptr;
}

const CheckpointBundle* LoadedModel::latest() const {
  return checkpoints.empty() ? nullptr : &checkpoints.back();
}

const LoadedModel* ExperimentCatalog::find(std::string_view id) const {
  auto it = index.find(std::string(id));
  return it == index.end() ? nullptr : &models[it->second];
}

// ---------------------------------------------------------------------------
// JSON documents

void to_json(json& j, const ModelHeader& h) {
  j = json{{"id", h.id}, {"name", h.name}, {"parents", h.parents}, {"created_at", h.created_at}};
}

void from_json(const json& j, ModelHeader& h) {
  j.at("id").get_to(h.id);
  h.name = j.value("name", h.id);
  h.parents = j.value("parents", std::vector<std::string>{});
  j.at("created_at").get_to(h.created_at);
}

void to_json(json& j, const ModelRecord& r) {
  json checkpoints = json::array();
  for (const auto& c : r.checkpoints) checkpoints.push_back({{"epoch", c.epoch}, {"bundle", c.bundle}});
  j = json{{"header", r.header},
           {"num_trainable_params", r.num_trainable_params},
           {"save_size_bytes", r.save_size_bytes},
           {"runtime_ms_per_sample", r.runtime_ms_per_sample ? json(*r.runtime_ms_per_sample) : json(nullptr)},
           {"metrics", r.metrics},
           {"checkpoints", checkpoints},
           {"graph", r.graph}};
}

void from_json(const json& j, ModelRecord& r) {
  j.at("header").get_to(r.header);
  r.num_trainable_params = j.value("num_trainable_params", std::uint64_t{0});
  r.save_size_bytes = j.value("save_size_bytes", std::uint64_t{0});
  if (auto it = j.find("runtime_ms_per_sample"); it != j.end() && !it->is_null()) {
    r.runtime_ms_per_sample = it->get<double>();
    if (*r.runtime_ms_per_sample < 0) throw FormatError("runtime_ms_per_sample must be non-negative");
  }
  r.metrics = j.value("metrics", std::map<std::string, std::vector<double>>{});
  r.checkpoints.clear();
  for (const auto& c : j.value("checkpoints", json::array())) {
    r.checkpoints.push_back({c.at("epoch").get<std::int64_t>(), c.at("bundle").get<std::string>()});
  }
  r.graph = j.value("graph", std::string(kGraphFile));
}

void to_json(json& j, const ArchitectureGraph& g) {
  json layers = json::array();
  for (const auto& l : g.layers) {
    json ops = json::array();
    for (const auto& op : l.inner_ops)
      ops.push_back({{"id", op.id}, {"kind", to_string(op.kind)}, {"attrs", op.attrs}});
    json inner_edges = json::array();
    for (const auto& [a, b] : l.inner_edges) inner_edges.push_back({a, b});
    layers.push_back({{"id", l.id},
                      {"name", l.name},
                      {"type", l.type},
                      {"output_shape", l.output_shape},
                      {"inner_ops", ops},
                      {"inner_edges", inner_edges}});
  }
  json edges = json::array();
  for (const auto& [a, b] : g.edges) edges.push_back({a, b});
  j = json{{"layers", layers}, {"edges", edges}};
}

void from_json(const json& j, ArchitectureGraph& g) {
  g.layers.clear();
  g.edges.clear();
  for (const auto& lj : j.at("layers")) {
    LayerDesc l;
    lj.at("id").get_to(l.id);
    l.name = lj.value("name", l.id);
    l.type = lj.value("type", std::string("Layer"));
    l.output_shape = lj.value("output_shape", Shape{});
    for (const auto& oj : lj.value("inner_ops", json::array())) {
      InnerOp op;
      oj.at("id").get_to(op.id);
      auto kind_name = oj.at("kind").get<std::string>();
      auto kind = parse_op_kind(kind_name);
      if (!kind) throw FormatError("unknown op kind: " + kind_name);
      op.kind = *kind;
      op.attrs = oj.value("attrs", json::object());
      l.inner_ops.push_back(std::move(op));
    }
    for (const auto& e : lj.value("inner_edges", json::array()))
      l.inner_edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
    g.layers.push_back(std::move(l));
  }
  for (const auto& e : j.value("edges", json::array()))
    g.edges.emplace_back(e.at(0).get<std::string>(), e.at(1).get<std::string>());
}

json manifest_document(const CheckpointBundle& bundle, const fs::path& bundle_dir) {
  json tensors = json::object();
  for (const auto& [name, ref] : bundle.tensors) {
    tensors[name] = {{"dtype", to_string(ref.dtype)},
                     {"shape", ref.shape},
                     {"blob", fs::relative(ref.blob, bundle_dir).generic_string()}};
  }
  return json{{"epoch", bundle.epoch}, {"tensors", tensors}};
}

json database_document(const std::vector<std::string>& class_labels, const std::vector<ModelRecord>& records) {
  return json{{"format_version", 1}, {"class_labels", class_labels}, {"models", records}};
}

void write_document(const fs::path& path, const json& doc) {
  fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << doc.dump(2) << '\n';
    if (!out) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Loading and validation

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json parse_document(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw FormatError("malformed document " + p.string() + ": " + e.what());
  }
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

bool safe_segment(const std::string& s) {
  return !s.empty() && s != "." && s != ".." && s.find('/') == std::string::npos &&
         s.find('\\') == std::string::npos;
}

// Returns one node on a parent cycle, or nullopt when acyclic.
std::optional<std::string> find_cycle(const std::map<std::string, std::vector<std::string>>& parents) {
  enum class Mark { none, active, done };
  std::map<std::string, Mark> mark;
  std::optional<std::string> hit;
  std::function<void(const std::string&)> visit = [&](const std::string& id) {
    if (hit) return;
    mark[id] = Mark::active;
    if (auto it = parents.find(id); it != parents.end()) {
      for (const auto& p : it->second) {
        auto m = mark[p];
        if (m == Mark::active) {
          hit = p;
          return;
        }
        if (m == Mark::none && parents.count(p)) visit(p);
        if (hit) return;
      }
    }
    mark[id] = Mark::done;
  };
  for (const auto& [id, ps] : parents)
    if (mark[id] == Mark::none) visit(id);
  return hit;
}

void check_dag(const std::vector<std::pair<std::string, std::string>>& edges, const std::string& what) {
  std::map<std::string, std::vector<std::string>> preds;
  for (const auto& [a, b] : edges) {
    preds[b].push_back(a);
    preds.try_emplace(a);
  }
  if (auto node = find_cycle(preds)) throw FormatError(what + " is not a DAG (cycle through " + *node + ")");
}

void validate_graph(const ArchitectureGraph& g, const std::string& model_id) {
  std::set<std::string> ids;
  for (const auto& l : g.layers) {
    if (!ids.insert(l.id).second) throw FormatError("duplicate layer id " + l.id + " in model " + model_id);
    std::set<std::string> op_ids;
    for (const auto& op : l.inner_ops)
      if (!op_ids.insert(op.id).second) throw FormatError("duplicate op id " + op.id + " in layer " + l.id);
    for (const auto& [a, b] : l.inner_edges) {
      if (!op_ids.count(a) || !op_ids.count(b))
        throw FormatError("inner edge references unknown op in layer " + l.id);
    }
    check_dag(l.inner_edges, "inner graph of layer " + l.id);
  }
  for (const auto& [a, b] : g.edges) {
    if (!ids.count(a) || !ids.count(b)) throw FormatError("edge references unknown layer in model " + model_id);
  }
  check_dag(g.edges, "layer graph of model " + model_id);
}

CheckpointBundle load_bundle(const fs::path& dir, std::int64_t expected_epoch, const ArchitectureGraph& graph,
                             std::size_t num_classes, const std::string& model_id) {
  const auto manifest = parse_document(dir / kManifestFile);
  CheckpointBundle bundle;
  const std::string where = "model " + model_id + " epoch " + std::to_string(expected_epoch);
  try {
    bundle.epoch = manifest.at("epoch").get<std::int64_t>();
    for (const auto& [name, tj] : manifest.at("tensors").items()) {
      TensorRef ref;
      ref.dtype = parse_dtype(tj.at("dtype").get<std::string>());
      ref.shape = tj.at("shape").get<Shape>();
      ref.blob = dir / tj.at("blob").get<std::string>();
      bundle.tensors.emplace(name, std::move(ref));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest for " + where + ": " + e.what());
  }
  if (bundle.epoch != expected_epoch)
    throw FormatError("manifest epoch " + std::to_string(bundle.epoch) + " does not match catalog entry for " + where);

  std::optional<std::int64_t> sample_count;
  std::string sample_source;
  for (const auto& [name, ref] : bundle.tensors) {
    auto parsed = paths::parse(name);
    if (!parsed.layer.empty() && !graph.find_layer(parsed.layer))
      throw FormatError("tensor " + name + " names unknown layer in " + where);
    if (ref.shape.empty() && parsed.kind != paths::Parsed::Kind::bias)
      throw FormatError("tensor " + name + " has rank 0 in " + where);
    for (auto d : ref.shape)
      if (d <= 0) throw FormatError("tensor " + name + " has non-positive dimension in " + where);

    std::error_code ec;
    auto size = fs::file_size(ref.blob, ec);
    if (ec) throw FormatError("missing blob " + ref.blob.string() + " for " + name);
    if (size != ref.byte_length())
      throw FormatError("length mismatch: " + name + " in " + where + " declares " + std::to_string(ref.byte_length()) +
                        " bytes, blob has " + std::to_string(size));

    using K = paths::Parsed::Kind;
    if (parsed.kind == K::samples_x || parsed.kind == K::samples_label || parsed.kind == K::samples_prediction ||
        parsed.kind == K::activations) {
      if (!sample_count) {
        sample_count = ref.shape.front();
        sample_source = name;
      } else if (*sample_count != ref.shape.front()) {
        throw FormatError("first dimension of " + name + " (" + std::to_string(ref.shape.front()) +
                          ") differs from " + sample_source + " (" + std::to_string(*sample_count) + ") in " + where);
      }
    }
    if (parsed.kind == K::mean_class_activations && static_cast<std::size_t>(ref.shape.front()) != num_classes) {
      throw FormatError("mean_class_activations of " + parsed.layer + " has " + std::to_string(ref.shape.front()) +
                        " rows for " + std::to_string(num_classes) + " classes in " + where);
    }
  }
  return bundle;
}

LoadedModel load_model(const fs::path& root, ModelRecord record, std::size_t num_classes) {
  LoadedModel m;
  const auto& id = record.header.id;
  m.dir = root / id;
  const auto graph_path = m.dir / record.graph;
  if (!fs::exists(graph_path)) throw FormatError("missing graph document for model " + id + ": " + graph_path.string());
  try {
    parse_document(graph_path).get_to(m.graph);
  } catch (const json::exception& e) {
    throw FormatError("malformed graph document for model " + id + ": " + e.what());
  }
  validate_graph(m.graph, id);

  std::optional<std::int64_t> prev;
  for (const auto& c : record.checkpoints) {
    if (prev && c.epoch <= *prev)
      throw FormatError("checkpoint epochs of model " + id + " are not strictly increasing");
    prev = c.epoch;
    m.checkpoints.push_back(load_bundle(m.dir / c.bundle, c.epoch, m.graph, num_classes, id));
  }

  std::optional<std::size_t> series_len;
  for (const auto& [name, series] : record.metrics) {
    if (series_len && *series_len != series.size())
      throw FormatError("metric series of model " + id + " differ in length (" + name + ")");
    series_len = series.size();
  }
  m.record = std::move(record);
  return m;
}

const std::regex& timestamp_pattern() {
  static const std::regex re(R"(^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?Z$)");
  return re;
}

}  // namespace

CatalogPtr load_catalog(const fs::path& root, std::uint64_t version) {
  if (!fs::is_directory(root)) throw FormatError("log directory does not exist: " + root.string());
  const auto db_path = root / kDatabaseFile;
  if (!fs::exists(db_path)) throw FormatError("missing database file: " + db_path.string());

  auto catalog = std::make_shared<ExperimentCatalog>();
  catalog->version = version;
  catalog->root = root;

  const auto text = read_file(db_path);
  if (is_blank(text)) return catalog;

  json db;
  try {
    db = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed database: ") + e.what());
  }
  if (!db.is_object()) throw FormatError("malformed database: top level is not an object");

  std::vector<ModelRecord> records;
  try {
    catalog->class_labels = db.value("class_labels", std::vector<std::string>{});
    const auto models = db.value("models", json::array());
    for (std::size_t i = 0; i < models.size(); ++i) {
      try {
        records.push_back(models[i].get<ModelRecord>());
      } catch (const json::exception& e) {
        throw FormatError("malformed record #" + std::to_string(i) + ": " + e.what());
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed database: ") + e.what());
  }

  std::map<std::string, std::vector<std::string>> parents;
  for (const auto& r : records) {
    const auto& id = r.header.id;
    if (!safe_segment(id)) throw FormatError("malformed record: invalid model id '" + id + "'");
    if (!std::regex_match(r.header.created_at, timestamp_pattern()))
      throw FormatError("malformed record " + id + ": created_at must be ISO-8601 UTC");
    if (!parents.emplace(id, r.header.parents).second) throw FormatError("duplicate model id: " + id);
  }
  for (const auto& r : records)
    for (const auto& p : r.header.parents)
      if (!parents.count(p)) throw FormatError("unresolved parent: " + p);
  if (auto node = find_cycle(parents)) throw FormatError("cyclic parent relation through model " + *node);

  for (auto& r : records) {
    for (const auto& c : r.checkpoints)
      if (!safe_segment(fs::path(c.bundle).filename().string()))
        throw FormatError("malformed record " + r.header.id + ": bad checkpoint locator");
    auto id = r.header.id;
    catalog->index.emplace(id, catalog->models.size());
    catalog->models.push_back(load_model(root, std::move(r), catalog->class_labels.size()));
  }
  return catalog;
}

std::vector<std::string> validate_header(const ModelHeader& header, const ExperimentCatalog& catalog) {
  std::vector<std::string> violations;
  if (header.id.empty()) violations.push_back("empty id");
  if (!header.id.empty() && catalog.find(header.id)) violations.push_back("duplicate id");

  std::map<std::string, std::vector<std::string>> parents;
  for (const auto& m : catalog.models) parents[m.id()] = m.record.header.parents;
  for (const auto& p : header.parents)
    if (!parents.count(p) && p != header.id) violations.push_back("missing parent: " + p);

  // Cycle check on the lineage with this header inserted (replacing any same-id entry).
  parents[header.id] = header.parents;
  std::set<std::string> seen;
  std::vector<std::string> stack(header.parents.begin(), header.parents.end());
  bool cycle = false;
  while (!stack.empty() && !cycle) {
    auto id = stack.back();
    stack.pop_back();
    if (id == header.id) {
      cycle = true;
      break;
    }
    if (!seen.insert(id).second) continue;
    if (auto it = parents.find(id); it != parents.end())
      stack.insert(stack.end(), it->second.begin(), it->second.end());
  }
  if (cycle) violations.push_back("cycle");
  return violations;
}

std::uint64_t compute_save_size(const LoadedModel& model) {
  const auto* latest = model.latest();
  if (!latest) throw InvalidArgument("model " + model.id() + " has no checkpoints");
  std::uint64_t total = 0;
  for (const auto& [name, ref] : latest->tensors) {
    auto kind = paths::parse(name).kind;
    if (kind == paths::Parsed::Kind::kernel || kind == paths::Parsed::Kind::bias) total += ref.byte_length();
  }
  return total;
}

json logical_content(const ExperimentCatalog& catalog) {
  json models = json::array();
  for (const auto& m : catalog.models) {
    json checkpoints = json::array();
    for (const auto& c : m.checkpoints) {
      json tensors = json::object();
      for (const auto& [name, ref] : c.tensors) {
        auto t = read_tensor(ref);
        tensors[name] = {{"dtype", to_string(t.dtype)}, {"shape", t.shape}, {"values", t.values}};
      }
      checkpoints.push_back({{"epoch", c.epoch}, {"tensors", tensors}});
    }
    json record = m.record;
    record.erase("checkpoints");
    record.erase("graph");
    models.push_back({{"record", record}, {"graph", m.graph}, {"checkpoints", checkpoints}});
  }
  return json{{"class_labels", catalog.class_labels}, {"models", models}};
}

}  // namespace nnprobe::store
