#include <algorithm>
#include <functional>
#include <map>
#include <numeric>

#include "nnprobe/backbone.hpp"

namespace nnprobe::backbone {

const Experiment* ModelTreeGraph::experiment_of(std::string_view model_id) const {
  for (const auto& e : experiments)
    if (std::find(e.models.begin(), e.models.end(), model_id) != e.models.end()) return &e;
  return nullptr;
}

ModelTreeGraph build_model_tree(const store::ExperimentCatalog& catalog) {
  const auto& models = catalog.models;
  const std::size_t n = models.size();
  ModelTreeGraph tree;
  if (n == 0) return tree;

  std::vector<std::vector<std::size_t>> adj(n);
  std::vector<std::vector<std::size_t>> parents(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& p : models[i].record.header.parents) {
      auto it = catalog.index.find(p);
      if (it == catalog.index.end()) continue;
      parents[i].push_back(it->second);
      adj[i].push_back(it->second);
      adj[it->second].push_back(i);
    }

  // Depth = longest parent chain; lineage is acyclic after loading.
  std::vector<int> depth(n, -1);
  std::function<int(std::size_t)> depth_of = [&](std::size_t i) {
    if (depth[i] >= 0) return depth[i];
    int d = 0;
    for (auto p : parents[i]) d = std::max(d, depth_of(p) + 1);
    return depth[i] = d;
  };
  for (std::size_t i = 0; i < n; ++i) depth_of(i);

  std::vector<std::size_t> component(n, n);
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t s = 0; s < n; ++s) {
    if (component[s] != n) continue;
    const auto c = members.size();
    members.emplace_back();
    std::vector<std::size_t> stack{s};
    component[s] = c;
    while (!stack.empty()) {
      auto u = stack.back();
      stack.pop_back();
      members[c].push_back(u);
      for (auto v : adj[u])
        if (component[v] == n) {
          component[v] = c;
          stack.push_back(v);
        }
    }
  }

  const auto node_less = [&](std::size_t a, std::size_t b) {
    const auto& ha = models[a].record.header;
    const auto& hb = models[b].record.header;
    return std::tie(depth[a], ha.created_at, ha.id) < std::tie(depth[b], hb.created_at, hb.id);
  };
  for (auto& m : members) std::sort(m.begin(), m.end(), node_less);

  const auto earliest = [&](const std::vector<std::size_t>& m) {
    auto it = std::min_element(m.begin(), m.end(), [&](std::size_t a, std::size_t b) {
      const auto& ha = models[a].record.header;
      const auto& hb = models[b].record.header;
      return std::tie(ha.created_at, ha.id) < std::tie(hb.created_at, hb.id);
    });
    return std::make_pair(models[*it].record.header.created_at, models[*it].record.header.id);
  };
  std::sort(members.begin(), members.end(),
            [&](const auto& a, const auto& b) { return earliest(a) < earliest(b); });

  for (std::size_t e = 0; e < members.size(); ++e) {
    Experiment exp;
    for (std::size_t k = 0; k < members[e].size(); ++k) {
      const auto i = members[e][k];
      exp.models.push_back(models[i].id());
      tree.nodes.push_back({models[i].id(), e, k, static_cast<std::size_t>(depth[i]),
                            models[i].record.num_trainable_params});
    }
    exp.id = exp.models.front();
    tree.experiments.push_back(std::move(exp));
  }

  for (const auto& node : tree.nodes) {
    const auto& child = *catalog.find(node.model_id);
    for (const auto& p : child.record.header.parents) {
      const auto* parent = catalog.find(p);
      if (!parent) continue;
      TreeEdge edge{p, child.id(), std::nullopt, parent->record.num_trainable_params,
                    child.record.num_trainable_params};
      if (edge.parent_params > 0)
        edge.rel_param_change = (static_cast<double>(edge.child_params) - static_cast<double>(edge.parent_params)) /
                                static_cast<double>(edge.parent_params);
      tree.edges.push_back(std::move(edge));
    }
  }
  return tree;
}

nlohmann::json to_json(const ModelTreeGraph& tree) {
  nlohmann::json j;
  j["experiments"] = nlohmann::json::array();
  for (const auto& e : tree.experiments) j["experiments"].push_back({{"id", e.id}, {"models", e.models}});
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : tree.nodes)
    j["nodes"].push_back({{"model_id", n.model_id},
                          {"experiment", tree.experiments[n.experiment].id},
                          {"color_index", n.color_index},
                          {"depth", n.depth},
                          {"num_trainable_params", n.num_trainable_params}});
  j["edges"] = nlohmann::json::array();
  for (const auto& e : tree.edges) {
    nlohmann::json je{{"parent", e.parent},
                      {"child", e.child},
                      {"parent_params", e.parent_params},
                      {"child_params", e.child_params}};
    je["rel_param_change"] = e.rel_param_change ? nlohmann::json(*e.rel_param_change) : nlohmann::json();
    j["edges"].push_back(std::move(je));
  }
  return j;
}

}  // namespace nnprobe::backbone
