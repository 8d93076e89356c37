#pragma once

#include <string>
#include <vector>

#include "oracle.hpp"
#include "probshield/probshield.hpp"

namespace testing_support {

using namespace probshield;

/// Grid with unit edges to the four neighbours; node (x, y) has id y*w + x.
inline Arena grid(int w, int h, int distance = 1) {
  Arena a;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) a.add_node(grid_node_name(x, y), GridCoord{x, y});
  }
  auto id = [w](int x, int y) { return static_cast<NodeId>(y * w + x); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (y + 1 < h) a.add_edge(id(x, y), id(x, y + 1), distance);
      if (y > 0) a.add_edge(id(x, y), id(x, y - 1), distance);
      if (x + 1 < w) a.add_edge(id(x, y), id(x + 1, y), distance);
      if (x > 0) a.add_edge(id(x, y), id(x - 1, y), distance);
    }
  }
  return a;
}

/// Directed cycle n0 -> n1 -> ... -> n0.
inline Arena cycle(std::size_t n, int distance = 1) {
  Arena a;
  for (std::size_t i = 0; i < n; ++i) a.add_node("n" + std::to_string(i));
  for (std::size_t i = 0; i < n; ++i) a.add_edge(static_cast<NodeId>(i), static_cast<NodeId>((i + 1) % n), distance);
  return a;
}

inline QuotientState to_quotient(const oracle::State& s) {
  QuotientState q;
  for (const auto& p : s.pos) q.positions.push_back({p.from, p.to, p.rem});
  q.turn = static_cast<std::uint32_t>(s.turn);
  return q;
}

inline QuotientMdp model_of(const oracle::Instance& inst) {
  return QuotientMdp(inst.arena, inst.zones, inst.behaviors, inst.mode);
}

}  // namespace testing_support
