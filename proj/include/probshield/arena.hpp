#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace probshield {

using NodeId = std::uint32_t;
using EdgeId = std::uint32_t;

/// Sentinel returned by distance queries when no path exists.
inline constexpr int kUnreachable = std::numeric_limits<int>::max();

struct GridCoord {
  int x = 0;
  int y = 0;
  friend bool operator==(const GridCoord&, const GridCoord&) = default;
};

struct Edge {
  NodeId from = 0;
  NodeId to = 0;
  int distance = 1;
  std::optional<bool> token;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Directed graph with edge distances on which all agents move.
///
/// The builder is permissive: malformed input (dangling endpoints, zero
/// distances, sinks) is accepted and reported by validate_arena() instead of
/// throwing, so parsers can collect every diagnostic in one pass.
class Arena {
 public:
  NodeId add_node(std::string name, std::optional<GridCoord> coord = std::nullopt) {
    const auto id = static_cast<NodeId>(nodes_.size());
    index_.emplace(name, id);
    nodes_.push_back({std::move(name), coord});
    out_.emplace_back();
    in_.emplace_back();
    return id;
  }

  EdgeId add_edge(NodeId from, NodeId to, int distance = 1, std::optional<bool> token = std::nullopt) {
    const auto id = static_cast<EdgeId>(edges_.size());
    edges_.push_back({from, to, distance, token});
    if (from < nodes_.size() && to < nodes_.size()) {
      out_[from].push_back(id);
      in_[to].push_back(id);
      edge_index_.emplace(key(from, to), id);
    }
    return id;
  }

  void set_token(EdgeId e, std::optional<bool> token) { edges_.at(e).token = token; }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }

  const std::string& name(NodeId v) const { return nodes_.at(v).name; }
  std::optional<GridCoord> coord(NodeId v) const { return nodes_.at(v).coord; }

  bool has_grid_coords() const {
    return !nodes_.empty() &&
           std::all_of(nodes_.begin(), nodes_.end(), [](const auto& n) { return n.coord.has_value(); });
  }

  std::optional<NodeId> find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  const Edge& edge(EdgeId e) const { return edges_.at(e); }
  std::span<const Edge> edges() const noexcept { return edges_; }

  /// Out-edges of v in insertion order; this order is the canonical action order.
  std::span<const EdgeId> out_edges(NodeId v) const { return out_.at(v); }
  std::span<const EdgeId> in_edges(NodeId v) const { return in_.at(v); }

  std::optional<EdgeId> find_edge(NodeId from, NodeId to) const {
    auto it = edge_index_.find(key(from, to));
    if (it == edge_index_.end()) return std::nullopt;
    return it->second;
  }

  int max_distance() const {
    int d = 0;
    for (const auto& e : edges_) d = std::max(d, e.distance);
    return d;
  }

  friend bool operator==(const Arena& a, const Arena& b) {
    if (a.nodes_.size() != b.nodes_.size() || a.edges_ != b.edges_) return false;
    for (std::size_t i = 0; i < a.nodes_.size(); ++i) {
      if (a.nodes_[i].name != b.nodes_[i].name || a.nodes_[i].coord != b.nodes_[i].coord) return false;
    }
    return true;
  }

 private:
  struct NodeInfo {
    std::string name;
    std::optional<GridCoord> coord;
  };

  static std::uint64_t key(NodeId from, NodeId to) { return (std::uint64_t{from} << 32) | to; }

  std::vector<NodeInfo> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::vector<EdgeId>> out_;
  std::vector<std::vector<EdgeId>> in_;
  std::unordered_map<std::string, NodeId> index_;
  std::unordered_map<std::uint64_t, EdgeId> edge_index_;
};

enum class CollisionMode { node_only, node_and_edge_swap };

/// Start configuration of the avatar (agent 0) and the adversaries (agents 1..m).
struct AgentConfig {
  NodeId avatar_start = 0;
  std::vector<NodeId> adversary_starts;
  CollisionMode collision_mode = CollisionMode::node_only;

  std::size_t agent_count() const noexcept { return adversary_starts.size() + 1; }
  friend bool operator==(const AgentConfig&, const AgentConfig&) = default;
};

struct ValidationReport {
  std::vector<std::string> problems;
  bool ok() const noexcept { return problems.empty(); }
};

inline ValidationReport validate_arena(const Arena& arena, const AgentConfig& agents) {
  ValidationReport report;
  const auto n = arena.node_count();
  auto node_label = [&](NodeId v) { return v < n ? arena.name(v) : "#" + std::to_string(v); };

  if (n == 0) report.problems.push_back("arena has no nodes");
  std::unordered_map<std::uint64_t, EdgeId> seen;
  for (EdgeId e = 0; e < arena.edge_count(); ++e) {
    const auto& edge = arena.edge(e);
    if (edge.from >= n || edge.to >= n) {
      report.problems.push_back("edge " + std::to_string(e) + " has an endpoint outside the node set (" +
                                node_label(edge.from) + " -> " + node_label(edge.to) + ")");
      continue;
    }
    if (edge.distance < 1) {
      report.problems.push_back("edge " + arena.name(edge.from) + " -> " + arena.name(edge.to) +
                                " has distance " + std::to_string(edge.distance) + " < 1");
    }
    const auto k = (std::uint64_t{edge.from} << 32) | edge.to;
    if (!seen.emplace(k, e).second) {
      report.problems.push_back("duplicate edge " + arena.name(edge.from) + " -> " + arena.name(edge.to));
    }
  }
  for (NodeId v = 0; v < n; ++v) {
    if (arena.out_edges(v).empty()) report.problems.push_back("node " + arena.name(v) + " has no outgoing edge");
  }
  if (agents.avatar_start >= n) {
    report.problems.push_back("avatar start " + node_label(agents.avatar_start) + " is not a node of the arena");
  }
  for (std::size_t i = 0; i < agents.adversary_starts.size(); ++i) {
    if (agents.adversary_starts[i] >= n) {
      report.problems.push_back("adversary " + std::to_string(i + 1) + " start " +
                                node_label(agents.adversary_starts[i]) + " is not a node of the arena");
    }
  }
  return report;
}

/// Shortest directed path length from v to u in edge-distance units.
inline int graph_distance(const Arena& arena, NodeId v, NodeId u) {
  if (v == u) return 0;
  std::vector<int> dist(arena.node_count(), kUnreachable);
  using Item = std::pair<int, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[v] = 0;
  queue.emplace(0, v);
  while (!queue.empty()) {
    auto [d, x] = queue.top();
    queue.pop();
    if (x == u) return d;
    if (d > dist[x]) continue;
    for (EdgeId e : arena.out_edges(x)) {
      const auto& edge = arena.edge(e);
      const int nd = d + edge.distance;
      if (nd < dist[edge.to]) {
        dist[edge.to] = nd;
        queue.emplace(nd, edge.to);
      }
    }
  }
  return kUnreachable;
}

/// All-pairs shortest path lengths, row-major by source.
class DistanceMatrix {
 public:
  enum class Orientation { directed, undirected };

  DistanceMatrix() = default;

  explicit DistanceMatrix(const Arena& arena, Orientation orientation = Orientation::directed)
      : n_(arena.node_count()), dist_(n_ * n_, kUnreachable) {
    std::vector<std::vector<std::pair<NodeId, int>>> adj(n_);
    for (const auto& e : arena.edges()) {
      if (e.from >= n_ || e.to >= n_) continue;
      adj[e.from].emplace_back(e.to, e.distance);
      if (orientation == Orientation::undirected) adj[e.to].emplace_back(e.from, e.distance);
    }
    using Item = std::pair<int, NodeId>;
    for (NodeId s = 0; s < n_; ++s) {
      int* row = dist_.data() + std::size_t{s} * n_;
      std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
      row[s] = 0;
      queue.emplace(0, s);
      while (!queue.empty()) {
        auto [d, x] = queue.top();
        queue.pop();
        if (d > row[x]) continue;
        for (auto [y, w] : adj[x]) {
          if (d + w < row[y]) {
            row[y] = d + w;
            queue.emplace(d + w, y);
          }
        }
      }
    }
  }

  int operator()(NodeId from, NodeId to) const { return dist_[std::size_t{from} * n_ + to]; }
  std::size_t size() const noexcept { return n_; }

 private:
  std::size_t n_ = 0;
  std::vector<int> dist_;
};

}  // namespace probshield
