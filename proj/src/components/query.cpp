#include <algorithm>
#include <set>

#include "nnprobe/backbone.hpp"
#include "nnprobe/components.hpp"

namespace nnprobe::components {

namespace {

const std::vector<std::pair<QueryKind, std::string_view>> kQueryKinds{
    {QueryKind::tensor, "tensor"},         {QueryKind::metrics, "metrics"},
    {QueryKind::model_info, "model_info"}, {QueryKind::neurons_by_class, "neurons_by_class"},
    {QueryKind::note, "note"},             {QueryKind::branch, "branch"}};

const store::LoadedModel& require_model(const store::ExperimentCatalog& catalog, const std::string& id) {
  const auto* m = catalog.find(id);
  if (!m) throw NotFoundError("unknown model", id);
  return *m;
}

std::vector<const store::CheckpointBundle*> select_checkpoints(const store::LoadedModel& model,
                                                              const std::string& selector) {
  if (selector == "*") {
    std::vector<const store::CheckpointBundle*> all;
    for (const auto& c : model.checkpoints) all.push_back(&c);
    if (all.empty()) throw NotFoundError("model has no checkpoints", model.id());
    return all;
  }
  if (selector == "latest") {
    const auto* c = model.latest();
    if (!c) throw NotFoundError("model has no checkpoints", model.id());
    return {c};
  }
  std::int64_t epoch = 0;
  try {
    std::size_t used = 0;
    epoch = std::stoll(selector, &used);
    if (used != selector.size()) throw std::invalid_argument(selector);
  } catch (const std::logic_error&) {
    throw InvalidArgument("bad checkpoint selector: " + selector);
  }
  const auto* c = model.checkpoint(epoch);
  if (!c) throw NotFoundError("unknown checkpoint of model " + model.id(), selector);
  return {c};
}

std::set<std::int64_t> check_classes(const std::vector<std::int64_t>& classes, std::size_t num_classes) {
  if (classes.empty()) throw InvalidArgument("empty class selection");
  std::set<std::int64_t> out;
  for (auto c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
      throw InvalidArgument("unknown class id: " + std::to_string(c));
    out.insert(c);
  }
  return out;
}

Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  Tensor out;
  out.dtype = t.dtype;
  out.shape = t.shape;
  out.shape[0] = static_cast<std::int64_t>(rows.size());
  const std::size_t row = t.shape[0] ? t.values.size() / static_cast<std::size_t>(t.shape[0]) : 0;
  out.values.reserve(rows.size() * row);
  for (auto r : rows) out.values.insert(out.values.end(), t.values.begin() + r * row, t.values.begin() + (r + 1) * row);
  return out;
}

nlohmann::json run_one(const store::ExperimentCatalog& catalog, const store::CheckpointBundle& bundle,
                       const store::paths::Parsed& parsed, const std::string& path,
                       const transform::TransformSpec& spec, const std::optional<std::set<std::int64_t>>& classes) {
  using Kind = store::paths::Parsed::Kind;
  auto tensor = bundle.read(path);
  const bool per_sample = parsed.kind == Kind::samples_x || parsed.kind == Kind::samples_label ||
                          parsed.kind == Kind::samples_prediction || parsed.kind == Kind::activations;
  std::optional<std::vector<std::int64_t>> labels;
  if (per_sample) {
    const auto lt = bundle.read(store::paths::kSamplesLabel);
    labels.emplace();
    for (double v : lt.values) labels->push_back(static_cast<std::int64_t>(v));
    if (classes) {
      std::vector<std::size_t> rows;
      std::vector<std::int64_t> kept;
      for (std::size_t i = 0; i < labels->size(); ++i)
        if (classes->count((*labels)[i])) {
          rows.push_back(i);
          kept.push_back((*labels)[i]);
        }
      tensor = take_rows(tensor, rows);
      labels = std::move(kept);
    }
  } else if (parsed.kind == Kind::mean_class_activations && classes) {
    std::vector<std::size_t> rows(classes->begin(), classes->end());
    tensor = take_rows(tensor, rows);
  }
  transform::Value value = transform::Array::from(tensor);
  std::optional<std::span<const std::int64_t>> label_span;
  if (labels) label_span = std::span<const std::int64_t>(*labels);
  return transform::to_json(transform::apply_transform(std::move(value), spec, label_span));
}

}  // namespace

std::string_view to_string(QueryKind kind) {
  for (const auto& [k, n] : kQueryKinds)
    if (k == kind) return n;
  return "?";
}

nlohmann::json run_tensor_query(const store::ExperimentCatalog& catalog, const std::string& model_id,
                                const std::string& checkpoint, const std::string& path,
                                const transform::TransformSpec& spec,
                                const std::optional<std::vector<std::int64_t>>& classes) {
  const auto& model = require_model(catalog, model_id);
  store::paths::Parsed parsed;
  try {
    parsed = store::paths::parse(path);
  } catch (const FormatError& e) {
    throw InvalidArgument(e.what());
  }
  if (!parsed.layer.empty() && !model.graph.find_layer(parsed.layer))
    throw NotFoundError("unknown layer in model " + model.id(), parsed.layer);
  std::optional<std::set<std::int64_t>> selected;
  if (classes) selected = check_classes(*classes, catalog.class_labels.size());
  const auto bundles = select_checkpoints(model, checkpoint);
  if (checkpoint != "*") return run_one(catalog, *bundles.front(), parsed, path, spec, selected);

  nlohmann::json out{{"kind", "series"}, {"epochs", nlohmann::json::array()}, {"values", nlohmann::json::array()}};
  for (const auto* b : bundles) {
    if (!b->find(path)) continue;
    out["epochs"].push_back(b->epoch);
    out["values"].push_back(run_one(catalog, *b, parsed, path, spec, selected));
  }
  if (out["epochs"].empty()) throw NotFoundError("tensor not logged in any checkpoint", path);
  return out;
}

nlohmann::json execute_query(const store::ExperimentCatalog& catalog, const BoundQuery& q, const NoteStore* notes) {
  switch (q.kind) {
    case QueryKind::tensor:
      return run_tensor_query(catalog, q.model, q.checkpoint, q.path, q.spec, q.classes);
    case QueryKind::metrics: {
      const auto& m = require_model(catalog, q.model);
      std::size_t n = 0;
      for (const auto& [_, s] : m.record.metrics) n = std::max(n, s.size());
      nlohmann::json epochs = nlohmann::json::array();
      for (std::size_t i = 0; i < n; ++i) epochs.push_back(i + 1);
      return {{"kind", "metrics"}, {"model", m.id()}, {"epochs", epochs}, {"series", m.record.metrics}};
    }
    case QueryKind::model_info: {
      const auto& m = require_model(catalog, q.model);
      nlohmann::json v;
      if (q.path == "num_trainable_params")
        v = m.record.num_trainable_params;
      else if (q.path == "save_size_bytes")
        v = m.record.save_size_bytes;
      else if (q.path == "runtime_ms_per_sample")
        v = m.record.runtime_ms_per_sample ? nlohmann::json(*m.record.runtime_ms_per_sample) : nlohmann::json();
      else
        throw InvalidArgument("unknown model info field: " + q.path);
      return {{"kind", "scalar"}, {"model", m.id()}, {"field", q.path}, {"value", v}};
    }
    case QueryKind::neurons_by_class: {
      const auto& m = require_model(catalog, q.model);
      if (q.checkpoint == "*") throw InvalidArgument("neurons_by_class needs a single checkpoint");
      const auto* bundle = select_checkpoints(m, q.checkpoint).front();
      auto rows = backbone::neurons_by_class_matrix(catalog, m.id(), q.path, bundle->epoch, std::nullopt);
      std::vector<std::int64_t> cls;
      if (q.classes) {
        const auto sel = check_classes(*q.classes, catalog.class_labels.size());
        cls.assign(sel.begin(), sel.end());
        for (auto& r : rows) {
          std::vector<double> kept;
          for (auto c : cls) kept.push_back(r.class_means.at(static_cast<std::size_t>(c)));
          r.class_means = std::move(kept);
        }
      } else {
        for (std::size_t c = 0; c < catalog.class_labels.size(); ++c) cls.push_back(static_cast<std::int64_t>(c));
      }
      return {{"kind", "neurons_by_class"}, {"epoch", bundle->epoch}, {"classes", cls}, {"rows", backbone::to_json(rows)}};
    }
    case QueryKind::note: {
      auto list = nlohmann::json::array();
      if (notes)
        for (const auto& n : notes->list(q.uoa)) list.push_back(to_json(n));
      return {{"kind", "notes"}, {"uoa", q.uoa}, {"notes", list}};
    }
    case QueryKind::branch: {
      const auto& m = require_model(catalog, q.model);
      nlohmann::json header = make_branch_header(catalog, m.id(), m.record.header.name + "_branch");
      return {{"kind", "header"}, {"header", header}};
    }
  }
  return nullptr;
}

nlohmann::json to_json(const BoundQuery& q) {
  nlohmann::json j{{"kind", to_string(q.kind)},
                   {"model", q.model},
                   {"checkpoint", q.checkpoint},
                   {"path", q.path},
                   {"transform", transform::to_json(q.spec)}};
  j["classes"] = q.classes ? nlohmann::json(*q.classes) : nlohmann::json();
  if (!q.uoa.empty()) j["uoa"] = q.uoa;
  return j;
}

BoundQuery parse_bound_query(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InvalidArgument("invalid parameter: query must be an object");
  BoundQuery q;
  try {
    const auto kind = doc.value("kind", std::string("tensor"));
    auto it = std::find_if(kQueryKinds.begin(), kQueryKinds.end(), [&](const auto& p) { return p.second == kind; });
    if (it == kQueryKinds.end()) throw InvalidArgument("invalid parameter: unknown query kind " + kind);
    q.kind = it->first;
    q.model = doc.value("model", std::string());
    q.checkpoint = doc.value("checkpoint", std::string("latest"));
    q.path = doc.value("path", std::string());
    q.uoa = doc.value("uoa", std::string());
    if (doc.contains("transform") && !doc["transform"].is_null()) q.spec = transform::parse_transform(doc["transform"]);
    if (doc.contains("classes") && !doc["classes"].is_null()) q.classes = doc["classes"].get<std::vector<std::int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid parameter: ") + e.what());
  }
  return q;
}

}  // namespace nnprobe::components
