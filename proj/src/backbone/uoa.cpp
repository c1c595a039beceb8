#include "nnprobe/uoa.hpp"

#include <algorithm>
#include <charconv>

#include "nnprobe/backbone.hpp"
#include "nnprobe/error.hpp"

namespace nnprobe {

namespace {

constexpr std::pair<UoaKind, std::string_view> kKindNames[] = {
    {UoaKind::experiment, "experiment"}, {UoaKind::model, "model"},   {UoaKind::layer, "layer"},
    {UoaKind::op, "op"},                 {UoaKind::variable, "variable"}, {UoaKind::neuron, "neuron"},
    {UoaKind::weight, "weight"},
};

std::optional<std::int64_t> parse_index(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v < 0) return std::nullopt;
  return v;
}

std::optional<std::pair<std::int64_t, std::int64_t>> parse_weight_id(std::string_view s) {
  auto dash = s.find('-');
  if (dash == std::string_view::npos) return std::nullopt;
  auto r = parse_index(s.substr(0, dash));
  auto c = parse_index(s.substr(dash + 1));
  if (!r || !c) return std::nullopt;
  return std::make_pair(*r, *c);
}

}  // namespace

std::string_view to_string(UoaKind kind) {
  for (const auto& [k, n] : kKindNames)
    if (k == kind) return n;
  return "?";
}

std::optional<UoaKind> parse_uoa_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  return std::nullopt;
}

UoaPath::UoaPath(std::vector<UoaSegment> segments) : segments_(std::move(segments)) {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& s = segments_[i];
    if (s.id.empty()) throw InvalidArgument("empty id in UoA segment " + std::string(to_string(s.kind)));
    if (s.id.find('/') != std::string::npos) throw InvalidArgument("UoA id contains '/': " + s.id);
    if (i > 0 && static_cast<int>(s.kind) <= static_cast<int>(segments_[i - 1].kind))
      throw InvalidArgument("UoA segments out of hierarchy order at " + std::string(to_string(s.kind)));
    if (s.kind == UoaKind::variable && s.id != "kernel" && s.id != "bias" && s.id != "activations")
      throw InvalidArgument("variable id must be kernel, bias or activations: " + s.id);
    if (s.kind == UoaKind::neuron && !parse_index(s.id)) throw InvalidArgument("neuron id must be an index: " + s.id);
    if (s.kind == UoaKind::weight && !parse_weight_id(s.id))
      throw InvalidArgument("weight id must be <row>-<col>: " + s.id);
  }
}

UoaPath UoaPath::parse(std::string_view text) {
  std::vector<UoaSegment> segments;
  std::size_t pos = 0;
  if (text.empty()) throw InvalidArgument("empty UoA path");
  while (pos <= text.size()) {
    auto slash = text.find('/', pos);
    auto part = text.substr(pos, slash == std::string_view::npos ? std::string_view::npos : slash - pos);
    auto colon = part.find(':');
    if (colon == std::string_view::npos) throw InvalidArgument("UoA segment without kind: " + std::string(part));
    auto kind = parse_uoa_kind(part.substr(0, colon));
    if (!kind) throw InvalidArgument("unknown UoA kind: " + std::string(part.substr(0, colon)));
    segments.push_back({*kind, std::string(part.substr(colon + 1))});
    if (slash == std::string_view::npos) break;
    pos = slash + 1;
  }
  return UoaPath(std::move(segments));
}

std::string UoaPath::str() const {
  std::string out;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (i) out += '/';
    out += to_string(segments_[i].kind);
    out += ':';
    out += segments_[i].id;
  }
  return out;
}

std::optional<std::string> UoaPath::find(UoaKind kind) const {
  for (const auto& s : segments_)
    if (s.kind == kind) return s.id;
  return std::nullopt;
}

UoaPath UoaPath::child(UoaKind kind, std::string id) const {
  auto segs = segments_;
  segs.push_back({kind, std::move(id)});
  return UoaPath(std::move(segs));
}

UoaPath UoaPath::parent() const {
  if (segments_.empty()) return {};
  return UoaPath(std::vector<UoaSegment>(segments_.begin(), segments_.end() - 1));
}

bool UoaPath::within(const UoaPath& other) const {
  if (other.segments_.size() > segments_.size()) return false;
  return std::equal(other.segments_.begin(), other.segments_.end(), segments_.begin());
}

void resolve(const UoaPath& path, const store::ExperimentCatalog& catalog) {
  if (path.empty()) throw NotFoundError("empty UoA path", "");
  const store::LoadedModel* model = nullptr;
  const store::LayerDesc* layer = nullptr;
  for (const auto& seg : path.segments()) {
    switch (seg.kind) {
      case UoaKind::experiment: {
        const auto tree = backbone::build_model_tree(catalog);
        auto it = std::find_if(tree.experiments.begin(), tree.experiments.end(),
                               [&](const auto& e) { return e.id == seg.id; });
        if (it == tree.experiments.end()) throw NotFoundError("unknown experiment", seg.id);
        if (auto m = path.find(UoaKind::model);
            m && std::find(it->models.begin(), it->models.end(), *m) == it->models.end())
          throw NotFoundError("model not in experiment " + seg.id, *m);
        break;
      }
      case UoaKind::model:
        model = catalog.find(seg.id);
        if (!model) throw NotFoundError("unknown model", seg.id);
        break;
      case UoaKind::layer:
        if (!model) throw NotFoundError("layer without model", seg.id);
        layer = model->graph.find_layer(seg.id);
        if (!layer) throw NotFoundError("unknown layer in model " + model->id(), seg.id);
        break;
      case UoaKind::op:
        if (!layer || !layer->find_op(seg.id)) throw NotFoundError("unknown op", seg.id);
        break;
      case UoaKind::variable: {
        if (!layer) throw NotFoundError("variable without layer", seg.id);
        const auto logical = seg.id == "kernel"   ? store::paths::kernel(layer->name)
                             : seg.id == "bias"   ? store::paths::bias(layer->name)
                                                  : store::paths::activations(layer->name);
        const bool logged = std::any_of(model->checkpoints.begin(), model->checkpoints.end(),
                                        [&](const auto& c) { return c.find(logical) != nullptr; });
        if (!logged) throw NotFoundError("variable not logged for layer " + layer->name, seg.id);
        break;
      }
      case UoaKind::neuron: {
        if (!layer) throw NotFoundError("neuron without layer", seg.id);
        const auto idx = parse_index(seg.id);
        const auto units = layer->output_shape.empty() ? 0 : layer->output_shape.back();
        if (!idx || *idx >= units) throw NotFoundError("neuron out of range in layer " + layer->name, seg.id);
        break;
      }
      case UoaKind::weight: {
        if (!layer || !model->latest()) throw NotFoundError("weight without layer", seg.id);
        const auto* ref = model->latest()->find(store::paths::kernel(layer->name));
        if (!ref || ref->shape.size() < 2) throw NotFoundError("layer has no kernel", seg.id);
        const auto rows = ref->shape[ref->shape.size() - 2], cols = ref->shape.back();
        const auto rc = parse_weight_id(seg.id);
        if (!rc || rc->first >= rows || rc->second >= cols) throw NotFoundError("weight out of range", seg.id);
        break;
      }
    }
  }
}

bool resolves(const UoaPath& path, const store::ExperimentCatalog& catalog) {
  try {
    resolve(path, catalog);
    return true;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace nnprobe
