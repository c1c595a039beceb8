#include <algorithm>
#include <map>
#include <set>

#include "nnprobe/backbone.hpp"
#include "nnprobe/error.hpp"

namespace nnprobe::backbone {

namespace {

enum class QueryKind { op, layer_type, structure };

struct LayerHits {
  std::size_t count = 0;
  std::vector<std::pair<std::string, std::size_t>> ops;  // op id, 1
};

}  // namespace

std::vector<Badge> propagate_badges(const store::ExperimentCatalog& catalog, const std::string& query) {
  QueryKind qk;
  std::optional<store::OpKind> op_kind = store::parse_op_kind(query);
  if (op_kind) {
    qk = QueryKind::op;
  } else if (query == kSkipConnection || query == kMultiBranch) {
    qk = QueryKind::structure;
  } else {
    const bool known_type = std::any_of(catalog.models.begin(), catalog.models.end(), [&](const auto& m) {
      return std::any_of(m.graph.layers.begin(), m.graph.layers.end(),
                         [&](const auto& l) { return l.type == query; });
    });
    if (!known_type) throw InvalidArgument("unknown query: " + query);
    qk = QueryKind::layer_type;
  }

  const auto tree = build_model_tree(catalog);
  std::vector<Badge> out;
  for (const auto& exp : tree.experiments) {
    std::vector<Badge> below;
    std::size_t exp_count = 0;
    for (const auto& model_id : exp.models) {
      const auto& model = *catalog.find(model_id);
      const UoaPath mpath({{UoaKind::model, model_id}});
      // Layer order follows the graph document.
      std::vector<std::pair<const store::LayerDesc*, LayerHits>> hits;
      for (const auto& layer : model.graph.layers) hits.push_back({&layer, {}});
      switch (qk) {
        case QueryKind::op:
          for (auto& [layer, h] : hits)
            for (const auto& op : layer->inner_ops)
              if (op.kind == *op_kind) {
                h.ops.emplace_back(op.id, 1);
                ++h.count;
              }
          break;
        case QueryKind::layer_type:
          for (auto& [layer, h] : hits)
            if (layer->type == query) h.count = 1;
          break;
        case QueryKind::structure: {
          const auto report = detect_structures(model.graph);
          const auto& pairs = query == kSkipConnection ? report.skip_connection : report.multi_branch;
          for (const auto& [u, v] : pairs)
            for (auto& [layer, h] : hits)
              if (layer->name == u) ++h.count;
          break;
        }
      }
      std::size_t model_count = 0;
      std::vector<Badge> layer_badges;
      for (const auto& [layer, h] : hits) {
        if (!h.count) continue;
        model_count += h.count;
        const auto lpath = mpath.child(UoaKind::layer, layer->name);
        layer_badges.push_back({lpath, query, h.count});
        for (const auto& [op_id, c] : h.ops) layer_badges.push_back({lpath.child(UoaKind::op, op_id), query, c});
      }
      if (!model_count) continue;
      exp_count += model_count;
      below.push_back({mpath, query, model_count});
      below.insert(below.end(), layer_badges.begin(), layer_badges.end());
    }
    if (!exp_count) continue;
    out.push_back({UoaPath({{UoaKind::experiment, exp.id}}), query, exp_count});
    out.insert(out.end(), below.begin(), below.end());
  }
  return out;
}

nlohmann::json to_json(const std::vector<Badge>& badges) {
  auto j = nlohmann::json::array();
  for (const auto& b : badges) j.push_back({{"uoa", b.uoa.str()}, {"match_kind", b.match_kind}, {"count", b.count}});
  return j;
}

}  // namespace nnprobe::backbone
