#pragma once

#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "probshield/arena.hpp"
#include "probshield/error.hpp"

namespace probshield {

using ColorId = std::uint16_t;

/// Zones relative to a viewpoint: assign(v, u) is the color of observed node u
/// as seen from node v. Stored as a dense |V| x |V| table.
class ZoneColoring {
 public:
  ZoneColoring() = default;

  ZoneColoring(std::vector<std::string> colors, std::size_t node_count, std::vector<ColorId> table,
               int near_radius = 0)
      : colors_(std::move(colors)), n_(node_count), table_(std::move(table)), near_radius_(near_radius) {
    if (colors_.empty()) throw InvalidParameter("zone coloring needs at least one color");
    if (table_.size() != n_ * n_) throw InvalidParameter("zone coloring table must be |V| x |V|");
    for (ColorId c : table_) {
      if (c >= colors_.size()) throw InvalidParameter("zone coloring refers to an unknown color");
    }
  }

  ColorId assign(NodeId viewpoint, NodeId observed) const { return table_[std::size_t{viewpoint} * n_ + observed]; }

  std::size_t color_count() const noexcept { return colors_.size(); }
  std::size_t node_count() const noexcept { return n_; }
  const std::string& color_name(ColorId c) const { return colors_.at(c); }
  const std::vector<std::string>& colors() const noexcept { return colors_; }

  std::optional<ColorId> find_color(std::string_view name) const {
    for (std::size_t i = 0; i < colors_.size(); ++i) {
      if (colors_[i] == name) return static_cast<ColorId>(i);
    }
    return std::nullopt;
  }

  /// Radius used by default_zone_coloring (0 for hand-built colorings).
  int near_radius() const noexcept { return near_radius_; }

  friend bool operator==(const ZoneColoring&, const ZoneColoring&) = default;

 private:
  std::vector<std::string> colors_;
  std::size_t n_ = 0;
  std::vector<ColorId> table_;
  int near_radius_ = 0;
};

/// Near/far bands combined with compass sectors when every node has grid
/// coordinates; distance bands {same, near, far} otherwise. North is +y, east
/// is +x, and |dx| == |dy| resolves to the north/south axis.
inline ZoneColoring default_zone_coloring(const Arena& arena, int near_radius = 3) {
  if (near_radius < 1) throw InvalidParameter("near_radius must be >= 1, got " + std::to_string(near_radius));
  const auto n = arena.node_count();
  const DistanceMatrix dist(arena);
  std::vector<ColorId> table(n * n);

  if (arena.has_grid_coords()) {
    std::vector<std::string> colors{"same"};
    for (const char* band : {"near", "far"}) {
      for (const char* dir : {"north", "south", "east", "west"}) colors.push_back(std::string(band) + "-" + dir);
    }
    for (NodeId v = 0; v < n; ++v) {
      const auto cv = *arena.coord(v);
      for (NodeId u = 0; u < n; ++u) {
        ColorId c = 0;
        if (u != v) {
          const auto cu = *arena.coord(u);
          const int dx = cu.x - cv.x;
          const int dy = cu.y - cv.y;
          int sector;
          if (std::abs(dy) >= std::abs(dx)) sector = dy >= 0 ? 0 : 1;
          else sector = dx > 0 ? 2 : 3;
          const bool near = dist(v, u) <= near_radius;
          c = static_cast<ColorId>(1 + (near ? 0 : 4) + sector);
        }
        table[std::size_t{v} * n + u] = c;
      }
    }
    return ZoneColoring(std::move(colors), n, std::move(table), near_radius);
  }

  for (NodeId v = 0; v < n; ++v) {
    for (NodeId u = 0; u < n; ++u) {
      ColorId c = 0;
      if (u != v) c = dist(v, u) <= near_radius ? 1 : 2;
      table[std::size_t{v} * n + u] = c;
    }
  }
  return ZoneColoring({"same", "near", "far"}, n, std::move(table), near_radius);
}

}  // namespace probshield
