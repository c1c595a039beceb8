#include <algorithm>

#include "nnprobe/backbone.hpp"
#include "nnprobe/components.hpp"

namespace nnprobe::components {

namespace {

constexpr const char* kPerDimensionDensity = "per_dimension_density";
constexpr std::int64_t kDefaultBins = 32;
constexpr std::int64_t kSampleGrid = 16;

DimensionState dims(DataKind data, Processing processing, Representation representation, DataSource source,
                    std::optional<Dependency> hint = std::nullopt) {
  DimensionState s;
  s.data.value = data;
  s.processing.value = processing;
  s.representation.value = representation;
  s.source = source;
  s.dependency_hint = hint;
  return s;
}

QueryTemplate tensor_template(std::string path, nlohmann::json spec) {
  return {QueryKind::tensor, "", std::move(path), std::move(spec)};
}

std::vector<ToolDescriptor> builtin_tools() {
  using UK = UoaKind;
  const std::vector<UK> all_kinds{UK::experiment, UK::model, UK::layer, UK::op, UK::variable, UK::neuron, UK::weight};
  const std::vector<Level> all_levels{Level::multi_model, Level::single_model, Level::layer_unit, Level::weight_neuron};
  const std::vector<UK> models{UK::experiment, UK::model};
  const std::vector<Level> model_levels{Level::multi_model, Level::single_model};
  const nlohmann::json histogram = nlohmann::json::array({{{"op", "histogram"}, {"bins", kDefaultBins}}});
  const nlohmann::json sample_grid =
      nlohmann::json::array({{{"op", "slice"}, {"axis", 0}, {"stop", kSampleGrid}}});

  std::vector<ToolDescriptor> t;
  t.push_back({"performance-metrics", "Performance metrics", "Training metric series of each model over the epochs",
               "metrics", models, model_levels, "line_chart",
               {{QueryKind::metrics, "*", "", nlohmann::json::array()}}, false, true, false,
               dims(DataKind::scalar, Processing::raw, Representation::visualization, DataSource::metrics)});
  t.push_back({"runtime-statistics", "Runtime statistics", "Inference time per sample",
               "metrics", models, model_levels, "table",
               {{QueryKind::model_info, "", "runtime_ms_per_sample", nlohmann::json::array()}}, false, false, true,
               dims(DataKind::scalar, Processing::raw, Representation::verbalization, DataSource::metrics)});
  t.push_back({"model-save-size", "Model save size", "Byte size of the saved weights",
               "metrics", models, model_levels, "table",
               {{QueryKind::model_info, "", "save_size_bytes", nlohmann::json::array()}}, false, false, true,
               dims(DataKind::scalar, Processing::raw, Representation::verbalization, DataSource::weights)});
  t.push_back({"histogram", "Histogram", "Binned value distribution of a variable",
               "distributions", {UK::variable}, {Level::layer_unit}, "histogram",
               {tensor_template("layers/{layer}/{variable_path}", histogram)}, false, true, true,
               dims(DataKind::n_dimensional, Processing::aggregation, Representation::visualization,
                    DataSource::weights)});
  t.push_back({"feature-distribution", "Feature distribution",
               "Probability density of each output dimension of a layer",
               "distributions", {UK::layer, UK::neuron}, {Level::layer_unit, Level::weight_neuron}, "density_chart",
               {tensor_template("layers/{layer}/activations", kPerDimensionDensity)}, false, true, true,
               dims(DataKind::n_dimensional, Processing::statistical_descriptors, Representation::visualization,
                    DataSource::activations)});
  t.push_back({"input-reconstruction", "Input/Reconstruction", "Stored input samples next to the model output",
               "samples", {UK::model}, {Level::single_model}, "image_grid",
               {tensor_template(store::paths::kSamplesX, sample_grid),
                tensor_template(store::paths::kSamplesPrediction, sample_grid)},
               false, true, true,
               dims(DataKind::n_dimensional, Processing::raw, Representation::visualization, DataSource::samples)});
  t.push_back({"class-probability", "Class probability", "Mean predicted probability per class",
               "predictions", {UK::model}, {Level::single_model}, "bar_chart",
               {tensor_template(store::paths::kSamplesPrediction,
                                nlohmann::json::array({{{"op", "agg"}, {"fn", "mean"}, {"axis", 0}}}))},
               false, true, true,
               dims(DataKind::n_dimensional, Processing::aggregation, Representation::visualization,
                    DataSource::predictions)});
  t.push_back({"confusion-matrix", "Confusion matrix", "Mean predicted probabilities grouped by true class",
               "predictions", {UK::model}, {Level::single_model}, "heatmap",
               {tensor_template(store::paths::kSamplesPrediction,
                                nlohmann::json::array({{{"op", "groupby_class"}, {"fn", "mean"}}}))},
               false, true, true,
               dims(DataKind::n_dimensional, Processing::aggregation, Representation::visualization,
                    DataSource::predictions)});
  t.push_back({"neurons-by-class", "Neurons by class", "Mean activation of each neuron per class",
               "activations", {UK::layer}, {Level::layer_unit}, "heatmap",
               {{QueryKind::neurons_by_class, "", "{layer}", nlohmann::json::array()}}, false, true, true,
               dims(DataKind::n_dimensional, Processing::aggregation, Representation::visualization,
                    DataSource::activations, Dependency::layer)});
  t.push_back({"note", "Note", "Markdown note attached to a unit of analysis",
               "annotation", all_kinds, all_levels, "text",
               {{QueryKind::note, "", "", nlohmann::json::array()}}, true, false, true,
               dims(DataKind::function, Processing::raw, Representation::verbalization, DataSource::notes)});
  t.push_back({"branch-model", "Branch model", "Header for a new model with this model as parent",
               "lineage", {UK::model}, {Level::single_model}, "header",
               {{QueryKind::branch, "", "", nlohmann::json::array()}}, true, false, true,
               dims(DataKind::function, Processing::raw, Representation::verbalization, DataSource::architecture)});
  return t;
}

bool applicable(const ToolDescriptor& tool, const UoaPath& uoa) {
  const auto kind = uoa.kind();
  return std::find(tool.applicable_uoa_kinds.begin(), tool.applicable_uoa_kinds.end(), kind) !=
             tool.applicable_uoa_kinds.end() &&
         std::find(tool.applicable_levels.begin(), tool.applicable_levels.end(), level_of(kind)) !=
             tool.applicable_levels.end();
}

std::string variable_path(const std::string& variable) {
  if (variable == "kernel") return "weights/kernel";
  if (variable == "bias") return "weights/bias";
  return "activations";
}

std::string fill(std::string text, const std::string& key, const std::optional<std::string>& value) {
  const std::string token = "{" + key + "}";
  for (auto pos = text.find(token); pos != std::string::npos; pos = text.find(token)) {
    if (!value) throw InvalidArgument("unresolved template variable: " + token);
    text.replace(pos, token.size(), *value);
  }
  return text;
}

bool logged_anywhere(const store::LoadedModel& model, const std::string& path) {
  return std::any_of(model.checkpoints.begin(), model.checkpoints.end(),
                     [&](const store::CheckpointBundle& b) { return b.find(path) != nullptr; });
}

/// Tensor-backed templates need their tensor in at least one checkpoint.
bool data_logged(const ToolDescriptor& tool, const UoaPath& uoa, const store::ExperimentCatalog& catalog) {
  const auto model_id = uoa.find(UoaKind::model);
  const auto layer = uoa.find(UoaKind::layer);
  const auto variable = uoa.find(UoaKind::variable);
  for (const auto& tmpl : tool.queries) {
    if (tmpl.kind != QueryKind::tensor && tmpl.kind != QueryKind::neurons_by_class) continue;
    if (!model_id) return false;
    const auto* model = catalog.find(*model_id);
    if (!model) return false;
    std::string path;
    if (tmpl.kind == QueryKind::neurons_by_class) {
      if (!layer) return false;
      path = store::paths::mean_class_activations(*layer);
    } else {
      path = tmpl.path;
      for (const auto& [key, value] :
           {std::pair{"{model}", std::optional(*model_id)}, std::pair{"{layer}", layer},
            std::pair{"{variable_path}", variable ? std::optional(variable_path(*variable)) : std::nullopt},
            std::pair{"{neuron}", uoa.find(UoaKind::neuron)}})
        for (auto pos = path.find(key); pos != std::string::npos; pos = path.find(key)) {
          if (!value) return false;
          path.replace(pos, std::string_view(key).size(), *value);
        }
    }
    if (!logged_anywhere(*model, path)) return false;
  }
  return true;
}

transform::TransformSpec per_dimension_density(const store::LayerDesc& layer, std::optional<std::int64_t> only) {
  if (layer.output_shape.empty()) throw InvalidArgument("layer has no output dimensions: " + layer.name);
  const auto axis = static_cast<std::int64_t>(layer.output_shape.size());  // batch dim comes first
  const auto width = layer.output_shape.back();
  nlohmann::json specs = nlohmann::json::array();
  nlohmann::json names = nlohmann::json::array();
  for (std::int64_t d = 0; d < width; ++d) {
    if (only && *only != d) continue;
    const auto name = "dim" + std::to_string(d);
    specs.push_back({{"name", name},
                     {"spec", nlohmann::json::array({{{"op", "slice"}, {"axis", axis}, {"start", d}, {"stop", d + 1}},
                                                     {{"op", "density"}, {"bins", kDefaultBins}}})}});
    names.push_back(name);
  }
  return transform::parse_transform(
      nlohmann::json::array({{{"op", "branch"}, {"specs", specs}}, {{"op", "merge"}, {"names", names}}}));
}

}  // namespace

ToolRegistry::ToolRegistry(std::vector<ToolDescriptor> tools) : tools_(std::move(tools)) {
  for (const auto& t : tools_)
    if (t.applicable_uoa_kinds.empty() || t.applicable_levels.empty())
      throw InvalidArgument("tool without applicability: " + t.id);
}

const ToolRegistry& ToolRegistry::builtin() {
  static const ToolRegistry registry(builtin_tools());
  return registry;
}

const ToolDescriptor* ToolRegistry::find(std::string_view id) const {
  for (const auto& t : tools_)
    if (t.id == id) return &t;
  return nullptr;
}

std::vector<const ToolDescriptor*> applicable_tools(const UoaPath& uoa, const ToolRegistry& registry,
                                                    const store::ExperimentCatalog& catalog) {
  resolve(uoa, catalog);
  std::vector<const ToolDescriptor*> out;
  for (const auto& t : registry.tools())
    if (applicable(t, uoa) && data_logged(t, uoa, catalog)) out.push_back(&t);
  std::sort(out.begin(), out.end(),
            [](const auto* a, const auto* b) { return std::tie(a->category, a->name) < std::tie(b->category, b->name); });
  return out;
}

WidgetInstance instantiate_widget(const ToolDescriptor& tool, const UoaPath& uoa,
                                  const store::ExperimentCatalog& catalog,
                                  const std::optional<std::vector<std::int64_t>>& class_selection,
                                  const std::string& checkpoint, std::string widget_id) {
  if (uoa.empty()) throw InvalidArgument("empty UoA");
  if (!applicable(tool, uoa))
    throw InvalidArgument("tool " + tool.id + " is not applicable to " + std::string(to_string(uoa.kind())));
  resolve(uoa, catalog);
  if (!data_logged(tool, uoa, catalog))
    throw InvalidArgument("tool " + tool.id + " has no logged data for " + uoa.str());

  WidgetInstance w;
  w.id = std::move(widget_id);
  w.tool = tool.id;
  w.uoa = uoa;
  w.level = level_of(uoa.kind());
  w.representation = tool.produces;
  w.class_warning = !tool.class_recomputable;

  auto partial = tool.dimensions;
  partial.level.value = w.level;
  partial.task.value = w.level == Level::multi_model ? Task::comparison : Task::assessment;
  const auto variable = uoa.find(UoaKind::variable);
  if (variable && tool.id == "histogram" && *variable == "activations") partial.source = DataSource::activations;
  w.dimensions = resolve_dimensions(partial);
  if (!w.dimensions.fully_fixed()) throw InvalidArgument("tool " + tool.id + " leaves dimensions unresolved");

  std::vector<std::string> models;
  if (auto m = uoa.find(UoaKind::model)) {
    models.push_back(*m);
  } else if (auto e = uoa.find(UoaKind::experiment)) {
    const auto tree = backbone::build_model_tree(catalog);
    for (const auto& exp : tree.experiments)
      if (exp.id == *e) models = exp.models;
  }
  if (models.empty()) models.push_back("");

  const auto layer = uoa.find(UoaKind::layer);
  const auto neuron = uoa.find(UoaKind::neuron);
  for (const auto& model : models) {
    for (const auto& tmpl : tool.queries) {
      if (tmpl.kind == QueryKind::note && !w.queries.empty()) continue;
      BoundQuery q;
      q.kind = tmpl.kind;
      q.checkpoint = tmpl.checkpoint.empty() ? checkpoint : tmpl.checkpoint;
      q.uoa = uoa.str();
      const bool needs_model = q.kind != QueryKind::note;
      if (needs_model && model.empty()) throw InvalidArgument("unresolved template variable: {model}");
      q.model = model;
      auto path = fill(tmpl.path, "model", model.empty() ? std::nullopt : std::optional(model));
      path = fill(path, "layer", layer);
      path = fill(path, "variable_path", variable ? std::optional(variable_path(*variable)) : std::nullopt);
      q.path = fill(path, "neuron", neuron);
      if (tmpl.spec.is_string() && tmpl.spec.get<std::string>() == kPerDimensionDensity) {
        if (!layer) throw InvalidArgument("unresolved template variable: {layer}");
        const auto* l = catalog.find(model)->graph.find_layer(*layer);
        q.spec = per_dimension_density(*l, neuron ? std::optional(std::stoll(*neuron)) : std::nullopt);
      } else {
        q.spec = transform::parse_transform(tmpl.spec);
      }
      w.queries.push_back(std::move(q));
    }
  }
  if (class_selection && tool.class_dependent && tool.class_recomputable) {
    ClassSelectionResult r = apply_class_selection(*class_selection, catalog.class_labels.size(), {w},
                                                   ToolRegistry({tool}));
    if (!r.requery.empty()) w = r.requery.front();
  }
  return w;
}

nlohmann::json to_json(const WidgetInstance& w) {
  nlohmann::json queries = nlohmann::json::array();
  for (const auto& q : w.queries) queries.push_back(to_json(q));
  return {{"id", w.id},
          {"tool", w.tool},
          {"uoa", w.uoa.str()},
          {"level", to_string(w.level)},
          {"dimensions", to_json(w.dimensions)},
          {"queries", queries},
          {"representation", w.representation},
          {"class_warning", w.class_warning}};
}

WidgetInstance parse_widget(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InvalidArgument("invalid parameter: widget must be an object");
  WidgetInstance w;
  try {
    w.id = doc.at("id").get<std::string>();
    w.tool = doc.at("tool").get<std::string>();
    w.uoa = UoaPath::parse(doc.at("uoa").get<std::string>());
    w.level = level_of(w.uoa.kind());
    if (doc.contains("dimensions")) w.dimensions = parse_dimensions(doc["dimensions"]);
    for (const auto& q : doc.value("queries", nlohmann::json::array())) w.queries.push_back(parse_bound_query(q));
    w.representation = doc.value("representation", std::string());
    w.class_warning = doc.value("class_warning", false);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("invalid parameter: ") + e.what());
  }
  return w;
}

}  // namespace nnprobe::components
