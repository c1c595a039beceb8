#include <algorithm>
#include <cmath>
#include <set>

#include "nnprobe/backbone.hpp"
#include "nnprobe/error.hpp"

namespace nnprobe::backbone {

namespace {

constexpr std::size_t kExtremeNeurons = 10;

const store::LoadedModel& require_model(const store::ExperimentCatalog& catalog, const std::string& model) {
  const auto* m = catalog.find(model);
  if (!m) throw NotFoundError("unknown model", model);
  return *m;
}

const store::LayerDesc& require_layer(const store::LoadedModel& model, const std::string& layer) {
  const auto* l = model.graph.find_layer(layer);
  if (!l) throw NotFoundError("unknown layer in model " + model.id(), layer);
  return *l;
}

const store::CheckpointBundle& require_checkpoint(const store::LoadedModel& model, std::int64_t epoch) {
  const auto* c = model.checkpoint(epoch);
  if (!c) throw NotFoundError("unknown checkpoint of model " + model.id(), std::to_string(epoch));
  return *c;
}

// Per-class means of the input samples, laid out like mean_class_activations.
Tensor input_class_means(const store::CheckpointBundle& bundle, std::size_t num_classes) {
  const auto x = bundle.read(store::paths::kSamplesX);
  const auto labels = bundle.read(store::paths::kSamplesLabel);
  if (x.rank() < 2) throw FormatError("data_samples/x must have a batch dimension");
  const auto n = x.dim(0);
  const auto row = static_cast<std::size_t>(element_count(Shape(x.shape.begin() + 1, x.shape.end())));
  Tensor out;
  out.shape = x.shape;
  out.shape[0] = static_cast<std::int64_t>(num_classes);
  out.values.assign(num_classes * row, 0.0);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::int64_t>(labels.values.at(static_cast<std::size_t>(i)));
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) continue;
    ++counts[static_cast<std::size_t>(c)];
    for (std::size_t j = 0; j < row; ++j)
      out.values[static_cast<std::size_t>(c) * row + j] += x.values[static_cast<std::size_t>(i) * row + j];
  }
  for (std::size_t c = 0; c < num_classes; ++c)
    if (counts[c])
      for (std::size_t j = 0; j < row; ++j) out.values[c * row + j] /= static_cast<double>(counts[c]);
  return out;
}

std::vector<NeuronInfo> summarize(const std::vector<std::vector<double>>& class_means,
                                  const std::vector<std::int64_t>& classes) {
  const std::size_t neurons = class_means.empty() ? 0 : class_means.front().size();
  std::vector<NeuronInfo> out(neurons);
  double total = 0;
  for (std::size_t j = 0; j < neurons; ++j) {
    auto& info = out[j];
    info.neuron = static_cast<std::int64_t>(j);
    for (auto c : classes) info.per_class_means.push_back(class_means[static_cast<std::size_t>(c)][j]);
    double sum = 0;
    for (double v : info.per_class_means) sum += v;
    info.mean_activation = sum / static_cast<double>(classes.size());
    info.share_absolute = std::abs(info.mean_activation);
    total += info.share_absolute;
  }
  for (auto& info : out) info.share_relative = total > 0 ? info.share_absolute / total : 0.0;
  return out;
}

bool by_mean_desc(const NeuronInfo& a, const NeuronInfo& b) {
  if (a.mean_activation != b.mean_activation) return a.mean_activation > b.mean_activation;
  return a.neuron < b.neuron;
}

std::vector<NeuronInfo> select_neurons(std::vector<NeuronInfo> all, const std::set<std::int64_t>& endpoints) {
  std::sort(all.begin(), all.end(), by_mean_desc);
  std::vector<NeuronInfo> out;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (i < kExtremeNeurons || i + kExtremeNeurons >= all.size() || endpoints.count(all[i].neuron))
      out.push_back(all[i]);
  return out;
}

}  // namespace

std::vector<WeightEdge> top_k_weights(const std::vector<double>& matrix, std::int64_t rows, std::int64_t cols,
                                      std::size_t k) {
  if (rows < 0 || cols < 0 || matrix.size() != static_cast<std::size_t>(rows * cols))
    throw InvalidArgument("weight matrix size does not match its shape");
  std::vector<std::size_t> order(matrix.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto n = std::min(k, order.size());
  // Row-major flat index order coincides with (row, col) order.
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double fa = std::abs(matrix[a]), fb = std::abs(matrix[b]);
                      if (fa != fb) return fa > fb;
                      return a < b;
                    });
  std::vector<WeightEdge> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::int64_t>(order[i]);
    out.push_back({idx / cols, idx % cols, matrix[order[i]]});
  }
  return out;
}

std::vector<double> channel_matrix(const Tensor& kernel, std::int64_t& rows, std::int64_t& cols) {
  if (kernel.rank() < 2) throw InvalidArgument("kernel must have rank >= 2, got " + shape_string(kernel.shape));
  rows = kernel.shape[kernel.rank() - 2];
  cols = kernel.shape.back();
  const auto block = static_cast<std::size_t>(rows * cols);
  std::vector<double> out(block, 0.0);
  for (std::size_t i = 0; i < kernel.values.size(); ++i) out[i % block] += kernel.values[i];
  return out;
}

std::vector<std::vector<double>> class_means_by_neuron(const Tensor& mca) {
  if (mca.rank() < 2) throw FormatError("mean_class_activations must be [classes, ...units]");
  const auto classes = static_cast<std::size_t>(mca.dim(0));
  const auto channels = static_cast<std::size_t>(mca.shape.back());
  const auto per_class = mca.values.size() / std::max<std::size_t>(classes, 1);
  const auto spatial = channels ? per_class / channels : 0;
  std::vector<std::vector<double>> out(classes, std::vector<double>(channels, 0.0));
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) out[c][i % channels] += mca.values[c * per_class + i];
    for (auto& v : out[c]) v /= static_cast<double>(spatial);
  }
  return out;
}

NeuronWeightView build_neuron_weight_view(const store::ExperimentCatalog& catalog, const std::string& model,
                                          const std::string& layer, std::int64_t epoch,
                                          const std::vector<std::int64_t>& class_selection, std::size_t k) {
  const auto& m = require_model(catalog, model);
  const auto& target = require_layer(m, layer);
  const auto& bundle = require_checkpoint(m, epoch);
  if (k == 0) throw InvalidArgument("k must be >= 1");
  if (class_selection.empty()) throw InvalidArgument("empty class selection");
  const auto num_classes = catalog.class_labels.size();
  std::set<std::int64_t> classes;
  for (auto c : class_selection) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes)
      throw InvalidArgument("unknown class id: " + std::to_string(c));
    classes.insert(c);
  }
  const auto* kref = bundle.find(store::paths::kernel(target.name));
  if (!kref) throw InvalidArgument("layer without kernel: " + target.name);
  const auto preds = m.graph.predecessors(target.id);
  if (preds.empty()) throw InvalidArgument("layer has no predecessor: " + target.name);
  const auto* source = m.graph.find_layer(preds.front());

  std::int64_t rows = 0, cols = 0;
  const auto matrix = channel_matrix(read_tensor(*kref), rows, cols);

  NeuronWeightView view;
  view.model = m.id();
  view.layer = target.name;
  view.source_layer = source->name;
  view.epoch = bundle.epoch;
  view.classes.assign(classes.begin(), classes.end());
  view.k = k;

  const auto target_means = class_means_by_neuron(bundle.read(store::paths::mean_class_activations(target.name)));
  const auto source_tensor = source->type == "InputLayer"
                                 ? input_class_means(bundle, num_classes)
                                 : bundle.read(store::paths::mean_class_activations(source->name));
  const auto source_means = class_means_by_neuron(source_tensor);
  if (source_means.front().size() != static_cast<std::size_t>(rows) ||
      target_means.front().size() != static_cast<std::size_t>(cols))
    throw FormatError("kernel of " + target.name + " does not connect " + source->name + " to " + target.name);

  view.edges = top_k_weights(matrix, rows, cols, k);
  std::set<std::int64_t> src_end, tgt_end;
  for (const auto& e : view.edges) {
    src_end.insert(e.source);
    tgt_end.insert(e.target);
  }
  view.sources = select_neurons(summarize(source_means, view.classes), src_end);
  view.targets = select_neurons(summarize(target_means, view.classes), tgt_end);
  return view;
}

std::vector<NeuronClassRow> neurons_by_class_matrix(const store::ExperimentCatalog& catalog, const std::string& model,
                                                    const std::string& layer, std::int64_t epoch,
                                                    std::optional<std::int64_t> sort_by_class) {
  const auto& m = require_model(catalog, model);
  const auto& l = require_layer(m, layer);
  const auto& bundle = require_checkpoint(m, epoch);
  const auto means = class_means_by_neuron(bundle.read(store::paths::mean_class_activations(l.name)));
  if (sort_by_class && (*sort_by_class < 0 || static_cast<std::size_t>(*sort_by_class) >= means.size()))
    throw InvalidArgument("unknown class id: " + std::to_string(*sort_by_class));
  const std::size_t neurons = means.empty() ? 0 : means.front().size();
  std::vector<NeuronClassRow> rows(neurons);
  for (std::size_t j = 0; j < neurons; ++j) {
    rows[j].neuron = static_cast<std::int64_t>(j);
    for (const auto& c : means) rows[j].class_means.push_back(c[j]);
  }
  if (sort_by_class) {
    const auto c = static_cast<std::size_t>(*sort_by_class);
    std::stable_sort(rows.begin(), rows.end(),
                     [c](const auto& a, const auto& b) { return a.class_means[c] > b.class_means[c]; });
  }
  return rows;
}

namespace {
nlohmann::json neuron_json(const NeuronInfo& n) {
  return {{"neuron", n.neuron},
          {"mean_activation", n.mean_activation},
          {"share_relative", n.share_relative},
          {"share_absolute", n.share_absolute},
          {"per_class_means", n.per_class_means}};
}
}  // namespace

nlohmann::json to_json(const NeuronWeightView& view) {
  nlohmann::json j{{"model", view.model},     {"layer", view.layer}, {"source_layer", view.source_layer},
                   {"epoch", view.epoch},     {"classes", view.classes}, {"k", view.k}};
  j["sources"] = nlohmann::json::array();
  for (const auto& n : view.sources) j["sources"].push_back(neuron_json(n));
  j["targets"] = nlohmann::json::array();
  for (const auto& n : view.targets) j["targets"].push_back(neuron_json(n));
  j["edges"] = nlohmann::json::array();
  for (const auto& e : view.edges) j["edges"].push_back({{"source", e.source}, {"target", e.target}, {"value", e.value}});
  return j;
}

nlohmann::json to_json(const std::vector<NeuronClassRow>& rows) {
  auto j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back({{"neuron", r.neuron}, {"class_means", r.class_means}});
  return j;
}

}  // namespace nnprobe::backbone
