#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "probshield/arena.hpp"
#include "probshield/error.hpp"
#include "probshield/zones.hpp"

namespace probshield {

/// One observed move: adversary `adversary` (1-based) took edge from -> to
/// while the avatar was at `avatar`.
struct Observation {
  std::size_t adversary = 1;
  NodeId from = 0;
  NodeId to = 0;
  NodeId avatar = 0;
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct ObservationTrace {
  std::vector<Observation> records;
};

/// Counts h(e, c): how often an edge was taken while the avatar was in a node of color c.
class Histogram {
 public:
  Histogram() = default;
  Histogram(std::size_t edge_count, std::size_t color_count)
      : edges_(edge_count), colors_(color_count), counts_(edge_count * color_count, 0) {}

  std::uint64_t count(EdgeId e, ColorId c) const { return counts_.at(index(e, c)); }
  void add(EdgeId e, ColorId c, std::uint64_t n = 1) { counts_.at(index(e, c)) += n; }

  std::size_t edge_count() const noexcept { return edges_; }
  std::size_t color_count() const noexcept { return colors_; }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto n : counts_) t += n;
    return t;
  }

  friend bool operator==(const Histogram&, const Histogram&) = default;

 private:
  std::size_t index(EdgeId e, ColorId c) const {
    if (e >= edges_ || c >= colors_) throw InvalidParameter("histogram cell out of range");
    return std::size_t{e} * colors_ + c;
  }

  std::size_t edges_ = 0;
  std::size_t colors_ = 0;
  std::vector<std::uint64_t> counts_;
};

/// Adds every record of `trace` (optionally only those of one adversary) to `h`.
/// The color of a record is z_v(u) with v the departure node and u the avatar node.
inline Histogram record_observations(Histogram h, const ObservationTrace& trace, const Arena& arena,
                                     const ZoneColoring& zones, std::size_t only_adversary = 0) {
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& r = trace.records[i];
    if (r.from >= arena.node_count() || r.to >= arena.node_count()) {
      throw MalformedTrace(i, "edge endpoint is not a node of the arena");
    }
    if (r.avatar >= arena.node_count()) throw MalformedTrace(i, "avatar node is not a node of the arena");
    const auto e = arena.find_edge(r.from, r.to);
    if (!e) throw MalformedTrace(i, "edge " + arena.name(r.from) + " -> " + arena.name(r.to) + " is not in the arena");
    if (only_adversary != 0 && r.adversary != only_adversary) continue;
    h.add(*e, zones.assign(r.from, r.avatar));
  }
  return h;
}

enum class FallbackPolicy { uniform_out_edges, error };

/// B(v, c): distribution over the out-edges of v (in arena out-edge order).
class AdversaryBehavior {
 public:
  AdversaryBehavior() = default;

  AdversaryBehavior(const Arena& arena, std::size_t color_count,
                    FallbackPolicy fallback = FallbackPolicy::uniform_out_edges)
      : colors_(color_count), fallback_(fallback), dist_(arena.node_count() * color_count),
        uniform_(arena.node_count()) {
    for (NodeId v = 0; v < arena.node_count(); ++v) {
      const auto deg = arena.out_edges(v).size();
      if (deg > 0) uniform_[v].assign(deg, 1.0 / static_cast<double>(deg));
    }
  }

  /// Uniform over out-edges in every context.
  static AdversaryBehavior uniform(const Arena& arena, std::size_t color_count) {
    return AdversaryBehavior(arena, color_count);
  }

  bool seen(NodeId v, ColorId c) const { return !dist_.at(index(v, c)).empty(); }

  std::span<const double> distribution(NodeId v, ColorId c) const {
    const auto& d = dist_.at(index(v, c));
    if (!d.empty()) return d;
    if (fallback_ == FallbackPolicy::error) {
      throw UnseenContext("no observations for node #" + std::to_string(v) + " color #" + std::to_string(c));
    }
    return uniform_.at(v);
  }

  void set_distribution(NodeId v, ColorId c, std::vector<double> probs) {
    if (probs.size() != uniform_.at(v).size()) {
      throw InvalidParameter("distribution length must equal the out-degree of the node");
    }
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw InvalidParameter("probabilities must be finite and >= 0");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidParameter("probabilities must sum to 1");
    dist_.at(index(v, c)) = std::move(probs);
  }

  std::size_t node_count() const noexcept { return uniform_.size(); }
  std::size_t color_count() const noexcept { return colors_; }
  FallbackPolicy fallback() const noexcept { return fallback_; }
  void set_fallback(FallbackPolicy p) noexcept { fallback_ = p; }

  friend bool operator==(const AdversaryBehavior&, const AdversaryBehavior&) = default;

 private:
  std::size_t index(NodeId v, ColorId c) const {
    if (v >= uniform_.size() || c >= colors_) throw InvalidParameter("behavior context out of range");
    return std::size_t{v} * colors_ + c;
  }

  std::size_t colors_ = 0;
  FallbackPolicy fallback_ = FallbackPolicy::uniform_out_edges;
  std::vector<std::vector<double>> dist_;
  std::vector<std::vector<double>> uniform_;
};

/// Normalizes h over the out-edges of each node per color; contexts with a
/// zero total are left to the fallback policy.
inline AdversaryBehavior behavior_from_histogram(const Histogram& h, const Arena& arena,
                                                 FallbackPolicy fallback = FallbackPolicy::uniform_out_edges) {
  if (h.edge_count() != arena.edge_count()) throw InvalidParameter("histogram does not match the arena");
  AdversaryBehavior b(arena, h.color_count(), fallback);
  for (NodeId v = 0; v < arena.node_count(); ++v) {
    const auto out = arena.out_edges(v);
    if (out.empty()) continue;
    for (ColorId c = 0; c < h.color_count(); ++c) {
      std::uint64_t total = 0;
      for (EdgeId e : out) total += h.count(e, c);
      if (total == 0) continue;
      std::vector<double> probs;
      probs.reserve(out.size());
      for (EdgeId e : out) probs.push_back(static_cast<double>(h.count(e, c)) / static_cast<double>(total));
      b.set_distribution(v, c, std::move(probs));
    }
  }
  return b;
}

/// Learns one behavior per adversary 1..adversary_count from a shared trace.
inline std::vector<AdversaryBehavior> learn_behaviors(const ObservationTrace& trace, const Arena& arena,
                                                      const ZoneColoring& zones, std::size_t adversary_count,
                                                      FallbackPolicy fallback = FallbackPolicy::uniform_out_edges) {
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto id = trace.records[i].adversary;
    if (id < 1 || id > adversary_count) throw MalformedTrace(i, "adversary id " + std::to_string(id) + " out of range");
  }
  std::vector<AdversaryBehavior> out;
  for (std::size_t i = 1; i <= adversary_count; ++i) {
    auto h = record_observations(Histogram(arena.edge_count(), zones.color_count()), trace, arena, zones, i);
    out.push_back(behavior_from_histogram(h, arena, fallback));
  }
  return out;
}

/// Per-cell sample count from the two-sided Hoeffding bound:
/// ceil(ln(2 / (1 - confidence)) / (2 epsilon^2)).
inline std::uint64_t required_samples(double epsilon, double confidence) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidParameter("epsilon must lie in (0, 1)");
  if (!(confidence > 0.0 && confidence < 1.0)) throw InvalidParameter("confidence must lie in (0, 1)");
  return static_cast<std::uint64_t>(std::ceil(std::log(2.0 / (1.0 - confidence)) / (2.0 * epsilon * epsilon)));
}

}  // namespace probshield
