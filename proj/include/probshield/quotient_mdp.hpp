#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probshield/arena.hpp"
#include "probshield/behavior.hpp"
#include "probshield/error.hpp"
#include "probshield/zones.hpp"

namespace probshield {

/// Agent approaching `to` from `from` with `remaining` transitions left; the
/// agent stands on `to` once remaining reaches 0.
struct Position {
  NodeId from = 0;
  NodeId to = 0;
  int remaining = 0;

  NodeId node() const noexcept { return to; }
  bool at_node() const noexcept { return remaining == 0; }
  auto operator<=>(const Position&) const = default;
};

/// Positions of all agents (index 0 is the avatar) plus whose turn it is.
struct QuotientState {
  std::vector<Position> positions;
  std::uint32_t turn = 0;

  auto operator<=>(const QuotientState&) const = default;
  bool operator==(const QuotientState&) const = default;
};

struct QuotientStateHash {
  std::size_t operator()(const QuotientState& s) const noexcept {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL ^ s.turn;
    auto mix = [&h](std::uint64_t v) {
      h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    };
    for (const auto& p : s.positions) {
      mix((std::uint64_t{p.from} << 32) | p.to);
      mix(static_cast<std::uint64_t>(p.remaining));
    }
    return static_cast<std::size_t>(h);
  }
};

/// alpha_0 (the unique non-decision action) or alpha_e for an avatar edge.
struct MdpAction {
  static constexpr EdgeId kNone = static_cast<EdgeId>(-1);
  EdgeId edge = kNone;

  static constexpr MdpAction alpha0() noexcept { return {}; }
  static constexpr MdpAction along(EdgeId e) noexcept { return {e}; }
  bool is_alpha0() const noexcept { return edge == kNone; }
  auto operator<=>(const MdpAction&) const = default;
};

template <class State>
struct Outcome {
  State state;
  double probability = 0.0;
};

using TransitionDistribution = std::vector<Outcome<QuotientState>>;

inline QuotientState initial_state(const AgentConfig& agents) {
  QuotientState s;
  s.positions.push_back({agents.avatar_start, agents.avatar_start, 0});
  for (NodeId start : agents.adversary_starts) s.positions.push_back({start, start, 0});
  s.turn = 0;
  return s;
}

/// Collision predicate. node_only: the avatar and some adversary stand on the
/// same node. node_and_edge_swap additionally flags the avatar and an
/// adversary traversing the same edge in opposite directions.
inline bool is_unsafe(const QuotientState& s, CollisionMode mode) {
  if (s.positions.empty()) return false;
  const auto& avatar = s.positions[0];
  for (std::size_t i = 1; i < s.positions.size(); ++i) {
    const auto& adv = s.positions[i];
    if (avatar.at_node() && adv.at_node() && avatar.to == adv.to) return true;
    if (mode == CollisionMode::node_and_edge_swap && avatar.remaining > 0 && adv.remaining > 0 &&
        avatar.from == adv.to && avatar.to == adv.from) {
      return true;
    }
  }
  return false;
}

/// The node that conditions adversary behavior: the avatar's node, or its
/// departure node while it is mid-edge.
inline NodeId avatar_reference_node(const QuotientState& s) {
  const auto& p = s.positions.at(0);
  return p.at_node() ? p.to : p.from;
}

/// On-the-fly successor generator of the safety-relevant quotient MDP.
///
/// Holds non-owning references; arena, zones and behaviors must outlive it.
class QuotientMdp {
 public:
  using State = QuotientState;
  using Action = MdpAction;
  using StateHash = QuotientStateHash;

  QuotientMdp(const Arena& arena, const ZoneColoring& zones, std::vector<const AdversaryBehavior*> behaviors,
              CollisionMode mode = CollisionMode::node_only)
      : arena_(&arena), zones_(&zones), behaviors_(std::move(behaviors)), mode_(mode) {
    for (const auto* b : behaviors_) {
      if (b == nullptr) throw InvalidParameter("null adversary behavior");
      if (b->node_count() != arena.node_count() || b->color_count() != zones.color_count()) {
        throw InvalidParameter("adversary behavior does not match arena and zones");
      }
    }
  }

  QuotientMdp(const Arena& arena, const ZoneColoring& zones, const std::vector<AdversaryBehavior>& behaviors,
              CollisionMode mode = CollisionMode::node_only)
      : QuotientMdp(arena, zones, pointers(behaviors), mode) {}

  const Arena& arena() const noexcept { return *arena_; }
  const ZoneColoring& zones() const noexcept { return *zones_; }
  CollisionMode collision_mode() const noexcept { return mode_; }
  std::size_t agent_count() const noexcept { return behaviors_.size() + 1; }
  std::size_t adversary_count() const noexcept { return behaviors_.size(); }
  std::size_t turns_per_round() const noexcept { return agent_count(); }
  const AdversaryBehavior& behavior(std::size_t adversary) const { return *behaviors_.at(adversary - 1); }

  /// Model over the avatar and the listed adversaries (1-based agent indices).
  QuotientMdp restricted(std::span<const std::size_t> adversaries) const {
    std::vector<const AdversaryBehavior*> sub;
    for (auto i : adversaries) sub.push_back(behaviors_.at(i - 1));
    return QuotientMdp(*arena_, *zones_, std::move(sub), mode_);
  }

  void check_state(const State& s) const {
    if (s.positions.size() != agent_count()) {
      throw IllegalState("state has " + std::to_string(s.positions.size()) + " positions, model has " +
                         std::to_string(agent_count()) + " agents");
    }
    if (s.turn >= agent_count()) throw IllegalState("turn index out of range");
    const auto n = arena_->node_count();
    for (const auto& p : s.positions) {
      if (p.from >= n || p.to >= n) throw IllegalState("position refers to an unknown node");
      if (p.remaining == 0 && p.from == p.to) continue;
      const auto e = arena_->find_edge(p.from, p.to);
      if (!e) throw IllegalState("position lies on a missing edge");
      if (p.remaining < 0 || p.remaining >= arena_->edge(*e).distance) {
        throw IllegalState("remaining steps out of range for the edge");
      }
    }
  }

  bool is_decision(const State& s) const { return s.turn == 0 && s.positions.at(0).remaining == 0; }

  std::vector<MdpAction> enabled_actions(const State& s) const {
    check_state(s);
    if (!is_decision(s)) return {MdpAction::alpha0()};
    std::vector<MdpAction> out;
    for (EdgeId e : arena_->out_edges(s.positions[0].to)) out.push_back(MdpAction::along(e));
    return out;
  }

  bool is_enabled(const State& s, const MdpAction& a) const {
    if (!is_decision(s)) return a.is_alpha0();
    if (a.is_alpha0() || a.edge >= arena_->edge_count()) return false;
    return arena_->edge(a.edge).from == s.positions[0].to;
  }

  TransitionDistribution successors(const State& s, const MdpAction& a) const {
    check_state(s);
    if (!is_enabled(s, a)) throw IllegalAction("action is not enabled in this state");
    const std::size_t i = s.turn;
    const auto next_turn = static_cast<std::uint32_t>((i + 1) % agent_count());
    const auto& pos = s.positions[i];
    TransitionDistribution out;

    if (pos.remaining > 0) {
      State next = s;
      next.positions[i].remaining -= 1;
      next.turn = next_turn;
      out.push_back({std::move(next), 1.0});
      return out;
    }
    if (i == 0) {
      const auto& edge = arena_->edge(a.edge);
      State next = s;
      next.positions[0] = {edge.from, edge.to, edge.distance - 1};
      next.turn = next_turn;
      out.push_back({std::move(next), 1.0});
      return out;
    }
    const NodeId v = pos.to;
    const ColorId color = zones_->assign(v, avatar_reference_node(s));
    const auto dist = behaviors_[i - 1]->distribution(v, color);
    const auto edges = arena_->out_edges(v);
    for (std::size_t k = 0; k < edges.size(); ++k) {
      if (!(dist[k] > 0.0)) continue;
      const auto& edge = arena_->edge(edges[k]);
      State next = s;
      next.positions[i] = {edge.from, edge.to, edge.distance - 1};
      next.turn = next_turn;
      out.push_back({std::move(next), dist[k]});
    }
    return out;
  }

  bool is_unsafe(const State& s) const { return probshield::is_unsafe(s, mode_); }

  /// Positions standing on a node forget their departure node; no transition,
  /// label or behavior depends on it.
  static State canonical(State s) {
    for (auto& p : s.positions) {
      if (p.remaining == 0) p.from = p.to;
    }
    return s;
  }

 private:
  static std::vector<const AdversaryBehavior*> pointers(const std::vector<AdversaryBehavior>& bs) {
    std::vector<const AdversaryBehavior*> out;
    for (const auto& b : bs) out.push_back(&b);
    return out;
  }

  const Arena* arena_;
  const ZoneColoring* zones_;
  std::vector<const AdversaryBehavior*> behaviors_;
  CollisionMode mode_;
};

/// Projection of a full state onto the avatar plus the listed adversaries.
inline QuotientState project(const QuotientState& s, std::span<const std::size_t> adversaries) {
  if (s.turn != 0) throw IllegalState("only avatar-turn states can be projected");
  QuotientState out;
  out.positions.push_back(s.positions.at(0));
  for (auto i : adversaries) out.positions.push_back(s.positions.at(i));
  out.turn = 0;
  return out;
}

// Canonical text encodings: "from,to,n|from,to,n|...|turn" for states and
// "from>to" for avatar edge actions.

inline std::string format_state_key(const Arena& arena, const QuotientState& s) {
  std::string out;
  for (const auto& p : s.positions) {
    out += arena.name(p.from);
    out += ',';
    out += arena.name(p.to);
    out += ',';
    out += std::to_string(p.remaining);
    out += '|';
  }
  out += std::to_string(s.turn);
  return out;
}

inline std::string format_action(const Arena& arena, const MdpAction& a) {
  if (a.is_alpha0()) return "alpha0";
  const auto& e = arena.edge(a.edge);
  return arena.name(e.from) + ">" + arena.name(e.to);
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool parse_int(std::string_view text, long long& out) {
  if (text.empty()) return false;
  std::size_t i = 0;
  bool neg = false;
  if (text[0] == '-' || text[0] == '+') {
    neg = text[0] == '-';
    i = 1;
    if (text.size() == 1) return false;
  }
  long long v = 0;
  for (; i < text.size(); ++i) {
    if (text[i] < '0' || text[i] > '9') return false;
    v = v * 10 + (text[i] - '0');
    if (v > (1LL << 40)) return false;
  }
  out = neg ? -v : v;
  return true;
}

}  // namespace detail

inline QuotientState parse_state_key(const Arena& arena, std::string_view key) {
  auto parts = detail::split(key, '|');
  if (parts.size() < 2) throw ParseError(1, 1, "state key needs at least one position and a turn");
  QuotientState s;
  std::size_t column = 1;
  auto node = [&](std::string_view name) {
    auto v = arena.find(name);
    if (!v) throw ParseError(1, column, "unknown node '" + std::string(name) + "' in state key");
    return *v;
  };
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    auto fields = detail::split(parts[i], ',');
    if (fields.size() != 3) throw ParseError(1, column, "position must be 'from,to,remaining'");
    long long n = 0;
    if (!detail::parse_int(fields[2], n) || n < 0) throw ParseError(1, column, "remaining must be a natural number");
    s.positions.push_back({node(fields[0]), node(fields[1]), static_cast<int>(n)});
    column += parts[i].size() + 1;
  }
  long long turn = 0;
  if (!detail::parse_int(parts.back(), turn) || turn < 0 || static_cast<std::size_t>(turn) >= s.positions.size()) {
    throw ParseError(1, column, "turn must be an agent index");
  }
  s.turn = static_cast<std::uint32_t>(turn);
  return s;
}

inline MdpAction parse_action(const Arena& arena, std::string_view text) {
  if (text == "alpha0") return MdpAction::alpha0();
  const auto pos = text.find('>');
  if (pos == std::string_view::npos) throw ParseError(1, 1, "action must be 'from>to' or 'alpha0'");
  auto from = arena.find(text.substr(0, pos));
  auto to = arena.find(text.substr(pos + 1));
  if (!from || !to) throw ParseError(1, 1, "unknown node in action '" + std::string(text) + "'");
  auto e = arena.find_edge(*from, *to);
  if (!e) throw ParseError(1, pos + 1, "no edge for action '" + std::string(text) + "'");
  return MdpAction::along(*e);
}

}  // namespace probshield
