#include <algorithm>
#include <climits>
#include <queue>

#include "nnprobe/backbone.hpp"
#include "nnprobe/error.hpp"

namespace nnprobe::backbone {

namespace {

struct Dag {
  std::size_t n = 0;
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::vector<bool>> reach;  // reach[u][v]: path of length >= 1
};

Dag build_dag(const store::ArchitectureGraph& graph) {
  Dag g;
  g.n = graph.layers.size();
  g.out.resize(g.n);
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < g.n; ++i) idx[graph.layers[i].id] = i;
  std::vector<std::size_t> indeg(g.n, 0);
  for (const auto& [a, b] : graph.edges) {
    auto ia = idx.find(a), ib = idx.find(b);
    if (ia == idx.end() || ib == idx.end()) throw InvalidArgument("edge references unknown layer: " + a + "->" + b);
    auto& o = g.out[ia->second];
    if (std::find(o.begin(), o.end(), ib->second) != o.end()) continue;
    o.push_back(ib->second);
    ++indeg[ib->second];
  }
  std::vector<std::size_t> order, queue;
  for (std::size_t i = 0; i < g.n; ++i)
    if (!indeg[i]) queue.push_back(i);
  while (!queue.empty()) {
    auto u = queue.back();
    queue.pop_back();
    order.push_back(u);
    for (auto v : g.out[u])
      if (--indeg[v] == 0) queue.push_back(v);
  }
  if (order.size() != g.n) throw InvalidArgument("cyclic graph");
  g.reach.assign(g.n, std::vector<bool>(g.n, false));
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    for (auto v : g.out[*it]) {
      g.reach[*it][v] = true;
      for (std::size_t w = 0; w < g.n; ++w)
        if (g.reach[v][w]) g.reach[*it][w] = true;
    }
  return g;
}

// Internally vertex-disjoint u->v paths, not using the direct edge, capped at `limit`.
int disjoint_paths(const Dag& g, std::size_t s, std::size_t t, int limit) {
  // Split every vertex x into x_in = 2x and x_out = 2x + 1.
  const std::size_t N = 2 * g.n;
  std::vector<std::vector<int>> cap(N, std::vector<int>(N, 0));
  for (std::size_t x = 0; x < g.n; ++x) {
    cap[2 * x][2 * x + 1] = (x == s || x == t) ? INT_MAX / 2 : 1;
    for (auto y : g.out[x])
      if (!(x == s && y == t)) cap[2 * x + 1][2 * y] = 1;
  }
  const std::size_t src = 2 * s + 1, dst = 2 * t;
  int flow = 0;
  while (flow < limit) {
    std::vector<std::size_t> prev(N, N);
    std::queue<std::size_t> q;
    q.push(src);
    prev[src] = src;
    while (!q.empty() && prev[dst] == N) {
      auto a = q.front();
      q.pop();
      for (std::size_t b = 0; b < N; ++b)
        if (cap[a][b] > 0 && prev[b] == N) {
          prev[b] = a;
          q.push(b);
        }
    }
    if (prev[dst] == N) break;
    for (auto b = dst; b != src; b = prev[b]) {
      --cap[prev[b]][b];
      ++cap[b][prev[b]];
    }
    ++flow;
  }
  return flow;
}

}  // namespace

StructureReport detect_structures(const store::ArchitectureGraph& graph) {
  const auto g = build_dag(graph);
  StructureReport report;
  const auto name = [&](std::size_t i) { return graph.layers[i].name; };
  for (std::size_t u = 0; u < g.n; ++u) {
    for (std::size_t v = 0; v < g.n; ++v) {
      if (u == v || !g.reach[u][v]) continue;
      const bool direct = std::find(g.out[u].begin(), g.out[u].end(), v) != g.out[u].end();
      if (direct) {
        const bool detour = std::any_of(g.out[u].begin(), g.out[u].end(),
                                        [&](std::size_t w) { return w != v && g.reach[w][v]; });
        if (detour) report.skip_connection.emplace_back(name(u), name(v));
      }
      const auto fanout = std::count_if(g.out[u].begin(), g.out[u].end(),
                                        [&](std::size_t w) { return w != v && g.reach[w][v]; });
      if (fanout >= 2 && disjoint_paths(g, u, v, 2) >= 2) report.multi_branch.emplace_back(name(u), name(v));
    }
  }
  return report;
}

nlohmann::json to_json(const StructureReport& report) {
  auto pairs = [](const auto& list) {
    auto j = nlohmann::json::array();
    for (const auto& [a, b] : list) j.push_back({a, b});
    return j;
  };
  return {{kSkipConnection, pairs(report.skip_connection)}, {kMultiBranch, pairs(report.multi_branch)}};
}

}  // namespace nnprobe::backbone
