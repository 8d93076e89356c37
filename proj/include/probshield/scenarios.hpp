#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "probshield/arena.hpp"
#include "probshield/behavior.hpp"
#include "probshield/error.hpp"
#include "probshield/model_checker.hpp"
#include "probshield/quotient_mdp.hpp"
#include "probshield/rl_agent.hpp"
#include "probshield/shield.hpp"
#include "probshield/zones.hpp"

namespace probshield {

enum class ScenarioKind { pacman, warehouse };

struct RewardSpec {
  double token_reward = 10.0;
  double step_penalty = -1.0;
  double win_bonus = 500.0;
  double lose_penalty = -500.0;
  std::optional<double> deliver_reward;
  friend bool operator==(const RewardSpec&, const RewardSpec&) = default;
};

inline RewardSpec pacman_rewards() { return {10.0, -1.0, 500.0, -500.0, std::nullopt}; }
inline RewardSpec warehouse_rewards() { return {20.0, -1.0, 500.0, -500.0, 20.0}; }

/// Collect-once rewards layered over the arena. Edges map to token groups; the
/// first arrival along any edge of an active group collects it.
///
/// PAC-MAN dots live on nodes: every edge into a dotted node belongs to the
/// node's group. Warehouse packages live in corridors: a token edge and its
/// reverse share one group.
struct TokenLayout {
  std::vector<int> group_of_edge;                // -1 if the edge carries no token
  std::vector<std::vector<NodeId>> group_nodes;  // endpoints used for distance features

  std::size_t group_count() const noexcept { return group_nodes.size(); }

  static TokenLayout from_arena(const Arena& arena, ScenarioKind kind) {
    TokenLayout t;
    t.group_of_edge.assign(arena.edge_count(), -1);
    if (kind == ScenarioKind::pacman) {
      std::vector<int> group_of_node(arena.node_count(), -1);
      for (EdgeId e = 0; e < arena.edge_count(); ++e) {
        const auto& edge = arena.edge(e);
        if (edge.token.value_or(false) && group_of_node[edge.to] < 0) {
          group_of_node[edge.to] = static_cast<int>(t.group_nodes.size());
          t.group_nodes.push_back({edge.to});
        }
      }
      for (EdgeId e = 0; e < arena.edge_count(); ++e) t.group_of_edge[e] = group_of_node[arena.edge(e).to];
    } else {
      for (EdgeId e = 0; e < arena.edge_count(); ++e) {
        const auto& edge = arena.edge(e);
        if (!edge.token.value_or(false) || t.group_of_edge[e] >= 0) continue;
        const int g = static_cast<int>(t.group_nodes.size());
        t.group_nodes.push_back({edge.from, edge.to});
        t.group_of_edge[e] = g;
        if (auto rev = arena.find_edge(edge.to, edge.from); rev && t.group_of_edge[*rev] < 0) t.group_of_edge[*rev] = g;
      }
    }
    return t;
  }
};

/// Arena, agents, learned adversary behaviors and rewards of one case study.
/// Members are referenced by models built from it; keep the object in place.
struct Scenario {
  ScenarioKind kind = ScenarioKind::pacman;
  Arena arena;
  AgentConfig agents;
  ZoneColoring zones;
  std::vector<AdversaryBehavior> behaviors;
  RewardSpec rewards;
  std::optional<NodeId> exit;
  TokenLayout tokens;
  DistanceMatrix distances;
  /// Synthetic observations the generators learned `behaviors` from.
  ObservationTrace observations;

  /// Recomputes derived data (tokens, distances) after editing the arena.
  void finalize() {
    tokens = TokenLayout::from_arena(arena, kind);
    distances = DistanceMatrix(arena);
    if (behaviors.size() != agents.adversary_starts.size()) {
      throw InvalidParameter("one behavior per adversary required");
    }
    if (kind == ScenarioKind::warehouse && !exit) throw InvalidParameter("warehouse scenarios need an exit");
  }

  QuotientMdp model() const { return QuotientMdp(arena, zones, behaviors, agents.collision_mode); }

  /// The k crossings closest to the exit (undirected distance, then node id).
  std::vector<NodeId> crossings_nearest_exit(std::size_t k) const {
    if (!exit) throw InvalidParameter("scenario has no exit");
    const DistanceMatrix undirected(arena, DistanceMatrix::Orientation::undirected);
    std::vector<NodeId> nodes(arena.node_count());
    std::iota(nodes.begin(), nodes.end(), NodeId{0});
    std::stable_sort(nodes.begin(), nodes.end(),
                     [&](NodeId a, NodeId b) { return undirected(*exit, a) < undirected(*exit, b); });
    nodes.resize(std::min(k, nodes.size()));
    return nodes;
  }
};

/// Decision rule of a simulated adversary: edge taken from `at` given the avatar node.
using AdversaryPolicy = std::function<EdgeId(const Arena&, NodeId at, NodeId avatar, std::mt19937_64&)>;

/// Moves toward the avatar with probability `chase`, uniformly otherwise.
inline AdversaryPolicy chasing_policy(const DistanceMatrix& dist, double chase) {
  return [&dist, chase](const Arena& arena, NodeId at, NodeId avatar, std::mt19937_64& rng) {
    const auto out = arena.out_edges(at);
    std::vector<EdgeId> closer;
    for (EdgeId e : out) {
      if (dist(arena.edge(e).to, avatar) < dist(at, avatar)) closer.push_back(e);
    }
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const auto& pool = (!closer.empty() && coin(rng) < chase) ? closer : std::vector<EdgeId>(out.begin(), out.end());
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    return pool[pick(rng)];
  };
}

/// Heads for `target` with probability `bias`, uniformly otherwise; ignores the avatar.
inline AdversaryPolicy homing_policy(const DistanceMatrix& dist, NodeId target, double bias) {
  return [&dist, target, bias](const Arena& arena, NodeId at, NodeId, std::mt19937_64& rng) {
    const auto out = arena.out_edges(at);
    std::vector<EdgeId> closer;
    for (EdgeId e : out) {
      if (dist(arena.edge(e).to, target) < dist(at, target)) closer.push_back(e);
    }
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    const auto& pool = (!closer.empty() && coin(rng) < bias) ? closer : std::vector<EdgeId>(out.begin(), out.end());
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    return pool[pick(rng)];
  };
}

/// Observations of `policy` with `per_cell` samples for every (node, color)
/// context that some avatar node realizes.
inline ObservationTrace synthesize_trace(const Arena& arena, const ZoneColoring& zones, const AdversaryPolicy& policy,
                                         std::size_t adversary, std::uint64_t per_cell, std::mt19937_64& rng) {
  ObservationTrace trace;
  std::vector<std::vector<NodeId>> by_color(zones.color_count());
  for (NodeId v = 0; v < arena.node_count(); ++v) {
    if (arena.out_edges(v).empty()) continue;
    for (auto& b : by_color) b.clear();
    for (NodeId u = 0; u < arena.node_count(); ++u) by_color[zones.assign(v, u)].push_back(u);
    for (const auto& avatars : by_color) {
      if (avatars.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, avatars.size() - 1);
      for (std::uint64_t k = 0; k < per_cell; ++k) {
        const NodeId u = avatars[pick(rng)];
        const auto& e = arena.edge(policy(arena, v, u, rng));
        trace.records.push_back({adversary, e.from, e.to, u});
      }
    }
  }
  return trace;
}

struct LearningSetup {
  double epsilon = 0.1;
  double confidence = 0.95;
  int near_radius = 3;
};

struct PacmanOptions {
  std::vector<bool> walls;  // row-major width x height, true = blocked
  double chase = 0.8;
  LearningSetup learning;
};

inline std::string grid_node_name(int x, int y) { return "c" + std::to_string(x) + "_" + std::to_string(y); }

namespace detail {

inline bool connected(const Arena& arena) {
  if (arena.node_count() == 0) return false;
  const DistanceMatrix d(arena);
  for (NodeId u = 0; u < arena.node_count(); ++u) {
    if (d(0, u) == kUnreachable || d(u, 0) == kUnreachable) return false;
  }
  return true;
}

inline void add_grid_edges(Arena& arena, const std::vector<int>& id_at, int width, int height, int distance) {
  auto at = [&](int x, int y) { return id_at[static_cast<std::size_t>(y) * width + x]; };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int v = at(x, y);
      if (v < 0) continue;
      const int dirs[4][2] = {{0, 1}, {0, -1}, {1, 0}, {-1, 0}};
      for (const auto& d : dirs) {
        const int nx = x + d[0];
        const int ny = y + d[1];
        if (nx < 0 || ny < 0 || nx >= width || ny >= height || at(nx, ny) < 0) continue;
        arena.add_edge(static_cast<NodeId>(v), static_cast<NodeId>(at(nx, ny)), distance);
      }
    }
  }
}

inline std::vector<AdversaryBehavior> learn_from_policies(const Arena& arena, const ZoneColoring& zones,
                                                          const std::vector<AdversaryPolicy>& policies,
                                                          const LearningSetup& setup, std::mt19937_64& rng,
                                                          ObservationTrace& all) {
  const auto per_cell = required_samples(setup.epsilon, setup.confidence);
  for (std::size_t i = 0; i < policies.size(); ++i) {
    auto t = synthesize_trace(arena, zones, policies[i], i + 1, per_cell, rng);
    all.records.insert(all.records.end(), t.records.begin(), t.records.end());
  }
  return learn_behaviors(all, arena, zones, policies.size());
}

}  // namespace detail

/// Open (or walled) grid with unit edges to the four neighbours, a dot on
/// every cell except the avatar's start, and chasing ghosts whose behavior is
/// learned from synthetic observations.
inline Scenario make_pacman(int width, int height, std::size_t ghosts, std::uint64_t seed,
                            const PacmanOptions& options = {}) {
  if (width < 3 || height < 3) throw InvalidParameter("PAC-MAN grids need width and height >= 3");
  const auto cells = static_cast<std::size_t>(width) * height;
  if (!options.walls.empty() && options.walls.size() != cells) throw InvalidParameter("wall mask size mismatch");
  std::mt19937_64 rng(seed);

  Scenario s;
  s.kind = ScenarioKind::pacman;
  s.rewards = pacman_rewards();
  std::vector<int> id_at(cells, -1);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const auto c = static_cast<std::size_t>(y) * width + x;
      if (!options.walls.empty() && options.walls[c]) continue;
      id_at[c] = static_cast<int>(s.arena.add_node(grid_node_name(x, y), GridCoord{x, y}));
    }
  }
  detail::add_grid_edges(s.arena, id_at, width, height, 1);
  if (!detail::connected(s.arena)) throw InvalidParameter("wall mask disconnects the maze");
  const auto n = s.arena.node_count();
  if (n < ghosts + 1) throw InvalidParameter("not enough free cells for all agents");

  const DistanceMatrix dist(s.arena);
  std::uniform_int_distribution<NodeId> pick(0, static_cast<NodeId>(n - 1));
  s.agents.avatar_start = pick(rng);
  s.agents.collision_mode = CollisionMode::node_only;
  const int min_gap = std::max(2, (width + height) / 4);
  std::vector<NodeId> far;
  for (NodeId v = 0; v < n; ++v) {
    if (dist(s.agents.avatar_start, v) >= min_gap) far.push_back(v);
  }
  std::shuffle(far.begin(), far.end(), rng);
  if (far.size() < ghosts) throw InvalidParameter("grid too small to place the ghosts apart from the avatar");
  for (std::size_t g = 0; g < ghosts; ++g) s.agents.adversary_starts.push_back(far[g]);

  // A dot on each cell, carried by the token of its lowest-ordered incoming edge.
  for (NodeId v = 0; v < n; ++v) {
    if (v == s.agents.avatar_start) continue;
    const auto in = s.arena.in_edges(v);
    const auto first = *std::min_element(in.begin(), in.end(), [&](EdgeId a, EdgeId b) {
      return s.arena.edge(a).from < s.arena.edge(b).from;
    });
    s.arena.set_token(first, true);
  }

  s.zones = default_zone_coloring(s.arena, options.learning.near_radius);
  std::vector<AdversaryPolicy> policies(ghosts, chasing_policy(dist, options.chase));
  s.behaviors = detail::learn_from_policies(s.arena, s.zones, policies, options.learning, rng, s.observations);
  s.finalize();
  return s;
}

struct WarehouseOptions {
  double exit_bias = 0.2;
  LearningSetup learning;
};

/// Crossings on a near-square grid joined by corridors of the given length,
/// the exit in the middle of the bottom row, packages in random corridors and
/// adversary units drifting toward the exit.
inline Scenario make_warehouse(std::size_t crossings, int corridor_length, std::size_t units, std::size_t packages,
                               std::uint64_t seed, const WarehouseOptions& options = {}) {
  if (crossings < 2 || corridor_length < 1 || units < 1 || packages < 1) {
    throw InvalidParameter("warehouse parameters must be positive (at least two crossings)");
  }
  if (units > crossings) throw InvalidParameter("more units than crossings");
  std::mt19937_64 rng(seed);
  const int width = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(crossings))));
  const int height = static_cast<int>((crossings + width - 1) / width);

  Scenario s;
  s.kind = ScenarioKind::warehouse;
  s.rewards = warehouse_rewards();
  std::vector<int> id_at(static_cast<std::size_t>(width) * height, -1);
  for (std::size_t i = 0; i < crossings; ++i) {
    const int x = static_cast<int>(i % width);
    const int y = static_cast<int>(i / width);
    id_at[i] = static_cast<int>(s.arena.add_node(grid_node_name(x, y), GridCoord{x, y}));
  }
  detail::add_grid_edges(s.arena, id_at, width, height, corridor_length);
  s.exit = static_cast<NodeId>(id_at[width / 2]);

  std::vector<EdgeId> corridors;
  for (EdgeId e = 0; e < s.arena.edge_count(); ++e) {
    const auto& edge = s.arena.edge(e);
    if (edge.from < edge.to && edge.from != *s.exit && edge.to != *s.exit) corridors.push_back(e);
  }
  if (packages > corridors.size()) throw InvalidParameter("more packages than corridors away from the exit");
  std::shuffle(corridors.begin(), corridors.end(), rng);
  for (std::size_t p = 0; p < packages; ++p) s.arena.set_token(corridors[p], true);

  std::vector<NodeId> starts;
  for (NodeId v = 0; v < s.arena.node_count(); ++v) {
    if (v != *s.exit) starts.push_back(v);
  }
  std::shuffle(starts.begin(), starts.end(), rng);
  s.agents.avatar_start = starts[0];
  s.agents.collision_mode = CollisionMode::node_and_edge_swap;
  std::vector<NodeId> others;
  for (NodeId v = 0; v < s.arena.node_count(); ++v) {
    if (v != s.agents.avatar_start) others.push_back(v);
  }
  std::shuffle(others.begin(), others.end(), rng);
  for (std::size_t u = 1; u < units; ++u) s.agents.adversary_starts.push_back(others[u - 1]);

  s.zones = default_zone_coloring(s.arena, options.learning.near_radius);
  const DistanceMatrix dist(s.arena);
  std::vector<AdversaryPolicy> policies(units - 1, homing_policy(dist, *s.exit, options.exit_bias));
  s.behaviors = detail::learn_from_policies(s.arena, s.zones, policies, options.learning, rng, s.observations);
  s.finalize();
  return s;
}

/// Mutable part of an episode on top of the quotient state.
struct EpisodeState {
  QuotientState state;
  std::vector<char> active;  // per token group
  bool loaded = false;
  std::size_t delivered = 0;
  std::size_t collected = 0;
};

/// Read-only view handed to controllers and feature extractors.
class EpisodeView {
 public:
  EpisodeView(const Scenario& scenario, const EpisodeState& episode) : scenario_(&scenario), episode_(&episode) {}

  const Scenario& scenario() const noexcept { return *scenario_; }
  const EpisodeState& episode() const noexcept { return *episode_; }
  const QuotientState& state() const noexcept { return episode_->state; }
  NodeId avatar_node() const { return episode_->state.positions.at(0).to; }

  /// Distance from `v` to the nearest active token group, kUnreachable if none.
  int distance_to_token(NodeId v) const {
    int best = kUnreachable;
    const auto& t = scenario_->tokens;
    for (std::size_t g = 0; g < t.group_count(); ++g) {
      if (!episode_->active[g]) continue;
      for (NodeId u : t.group_nodes[g]) best = std::min(best, scenario_->distances(v, u));
    }
    return best;
  }

  /// Whether taking `e` now would pick up a token on arrival.
  bool collects(EdgeId e) const {
    const int g = scenario_->tokens.group_of_edge[e];
    if (g < 0 || !episode_->active[g]) return false;
    return scenario_->kind == ScenarioKind::pacman || !episode_->loaded;
  }

 private:
  const Scenario* scenario_;
  const EpisodeState* episode_;
};

inline std::size_t feature_count(ScenarioKind kind) { return kind == ScenarioKind::pacman ? 3 : 5; }

inline double proximity(int d) { return d == kUnreachable ? 0.0 : 1.0 / (1.0 + d); }

/// (1) 1/(1 + distance to the closest dot) from the post-action node,
/// (2) a ghost occupies or is heading into that node, (3) a ghost is one step from it.
inline FeatureVector pacman_features(const EpisodeView& view, EdgeId action) {
  const auto& s = view.scenario();
  const NodeId target = s.arena.edge(action).to;
  const auto& positions = view.state().positions;
  bool imminent = false;
  bool one_step = false;
  for (std::size_t i = 1; i < positions.size(); ++i) {
    const NodeId ghost = positions[i].to;
    if (ghost == target) imminent = true;
    if (s.distances(target, ghost) == 1 || s.distances(ghost, target) == 1) one_step = true;
  }
  const int dot = view.collects(action) ? 0 : view.distance_to_token(target);
  return {proximity(dot), imminent ? 1.0 : 0.0, one_step ? 1.0 : 0.0};
}

/// (1) loaded after the action, (2) proximity to the next package while
/// unloaded, (3) proximity to the exit while loaded, (4) another unit within
/// distance 3 and (5) within distance 1 of the post-action node.
inline FeatureVector warehouse_features(const EpisodeView& view, EdgeId action) {
  const auto& s = view.scenario();
  const NodeId target = s.arena.edge(action).to;
  const bool delivering = view.episode().loaded && target == *s.exit;
  const bool loaded = (view.episode().loaded || view.collects(action)) && !delivering;
  const auto& positions = view.state().positions;
  int nearest = kUnreachable;
  for (std::size_t i = 1; i < positions.size(); ++i) {
    for (NodeId u : {positions[i].from, positions[i].to}) {
      nearest = std::min({nearest, s.distances(target, u), s.distances(u, target)});
    }
  }
  const double package = loaded ? 0.0 : proximity(view.collects(action) ? 0 : view.distance_to_token(target));
  const double exit = loaded ? proximity(s.distances(target, *s.exit)) : 0.0;
  return {loaded ? 1.0 : 0.0, package, exit, nearest <= 3 ? 1.0 : 0.0, nearest <= 1 ? 1.0 : 0.0};
}

inline FeatureVector extract_features(const EpisodeView& view, EdgeId action) {
  return view.scenario().kind == ScenarioKind::pacman ? pacman_features(view, action)
                                                      : warehouse_features(view, action);
}

/// Chooses avatar moves at decision states and optionally learns from the outcome.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::size_t choose(const EpisodeView& view, std::span<const MdpAction> candidates,
                             std::mt19937_64& rng) = 0;
  /// Reward accumulated between two decisions; `next` is null at the end of an episode.
  virtual void learn(const EpisodeView& /*from_view*/, const FeatureVector& /*taken*/, double /*reward*/,
                     const EpisodeView* /*next*/, std::span<const MdpAction> /*next_candidates*/) {}
  /// Whether learn() needs the features of the chosen action.
  virtual bool learns() const { return false; }
};

/// Approximate Q-learning over the scenario's feature extractor.
class QLearningAgent : public Controller {
 public:
  QLearningAgent(ScenarioKind kind, LearningConfig config)
      : kind_(kind), config_(config), weights_(feature_count(kind)) {
    config_.validate();
  }

  std::size_t choose(const EpisodeView& view, std::span<const MdpAction> candidates,
                     std::mt19937_64& rng) override {
    std::vector<std::size_t> idx(candidates.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return select_action<std::size_t>(
        idx, weights_, [&](std::size_t i) { return extract_features(view, candidates[i].edge); }, config_.epsilon,
        rng);
  }

  void learn(const EpisodeView&, const FeatureVector& taken, double reward, const EpisodeView* next,
             std::span<const MdpAction> next_candidates) override {
    double best_next = 0.0;
    if (next != nullptr && !next_candidates.empty()) {
      const auto i = greedy_index(next_candidates.size(), weights_, [&](std::size_t k) {
        return extract_features(*next, next_candidates[k].edge);
      });
      best_next = q_value(weights_, extract_features(*next, next_candidates[i].edge));
    }
    weights_ = q_update(std::move(weights_), taken, reward, best_next, config_);
  }

  bool learns() const override { return true; }

  const QWeights& weights() const noexcept { return weights_; }
  void set_weights(QWeights w) {
    if (w.size() != feature_count(kind_)) throw DimensionError("checkpoint does not match the feature extractor");
    weights_ = std::move(w);
  }
  const LearningConfig& config() const noexcept { return config_; }

 private:
  ScenarioKind kind_;
  LearningConfig config_;
  QWeights weights_;
};

/// Shield in effect during an episode. With a weakening controller its
/// current delta replaces `threshold`.
struct ShieldSetup {
  const ShieldTable* table = nullptr;
  double threshold = 1.0;
  WeakeningController* weakening = nullptr;
  bool strict = false;
};

struct SimulationOptions {
  std::size_t max_steps = 1000;
  /// Probability that an adversary ignores its behavior and moves uniformly.
  double behavior_noise = 0.0;
};

struct EpisodeResult {
  double score = 0.0;
  bool won = false;
  bool caught = false;
  std::size_t steps = 0;
  std::size_t decisions = 0;
  std::size_t shield_interventions = 0;
  std::size_t fallbacks = 0;
  std::size_t compliance_violations = 0;
  std::size_t tokens = 0;
  std::size_t deliveries = 0;
  QuotientState terminal;
};

namespace detail {

inline EdgeId sample_edge(std::span<const EdgeId> edges, std::span<const double> probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    acc += probs[k];
    if (r < acc) return edges[k];
  }
  for (std::size_t k = edges.size(); k-- > 0;) {
    if (probs[k] > 0.0) return edges[k];
  }
  return edges.back();
}

}  // namespace detail

/// Plays one episode: avatar decisions (shield-filtered when a shield is
/// given) alternate with sampled adversary moves, one transition per agent
/// turn, until all tokens are in, the avatar is caught or max_steps avatar
/// transitions have elapsed.
inline EpisodeResult run_episode(const Scenario& s, Controller& agent, const ShieldSetup* shield,
                                 const SimulationOptions& options, std::mt19937_64& rng) {
  const auto model = s.model();
  EpisodeState ep;
  ep.state = initial_state(s.agents);
  ep.active.assign(s.tokens.group_count(), 1);
  EpisodeResult result;
  const std::size_t agents = s.agents.agent_count();
  const bool use_shield = shield != nullptr && shield->table != nullptr;
  if (use_shield && shield->weakening != nullptr) shield->weakening->reset();

  auto allowed_at = [&](std::vector<MdpAction>& out) {
    auto enabled = model.enabled_actions(ep.state);
    if (!use_shield) {
      out = std::move(enabled);
      return;
    }
    const double threshold = shield->weakening ? shield->weakening->current_delta() : shield->threshold;
    auto q = query(*shield->table, model, ep.state, threshold, shield->strict);
    if (q.allowed.size() < enabled.size()) ++result.shield_interventions;
    if (q.fallback_used) ++result.fallbacks;
    out = std::move(q.allowed);
  };

  // Pending learning step: features of the last decision and reward since.
  bool pending = false;
  EpisodeState pending_state;
  FeatureVector pending_features;
  double pending_reward = 0.0;

  auto finish = [&](double terminal_reward, bool won, bool caught) {
    result.score += terminal_reward;
    pending_reward += terminal_reward;
    result.won = won;
    result.caught = caught;
  };

  std::vector<MdpAction> candidates;
  bool done = false;
  if (is_unsafe(ep.state, s.agents.collision_mode)) {
    finish(s.rewards.lose_penalty, false, true);
    done = true;
  }
  const std::size_t total_tokens = s.tokens.group_count();

  while (!done) {
    const std::size_t turn = ep.state.turn;
    if (turn == 0) {
      if (result.steps >= options.max_steps) break;
      double progress_reward = 0.0;
      if (model.is_decision(ep.state)) {
        allowed_at(candidates);
        if (pending) {
          const EpisodeView from(s, pending_state), next(s, ep);
          agent.learn(from, pending_features, pending_reward, &next, candidates);
          pending = false;
        }
        const EpisodeView view(s, ep);
        const auto choice = agent.choose(view, candidates, rng);
        if (choice >= candidates.size()) throw IllegalAction("controller picked a nonexistent candidate");
        const MdpAction action = candidates[choice];
        if (use_shield) {
          // Independent re-query: the executed action must be in the shield's allowed set.
          const double threshold = shield->weakening ? shield->weakening->current_delta() : shield->threshold;
          const auto check = query(*shield->table, model, ep.state, threshold, shield->strict);
          if (std::find(check.allowed.begin(), check.allowed.end(), action) == check.allowed.end()) {
            ++result.compliance_violations;
          }
        }
        ++result.decisions;
        if (agent.learns()) {
          pending = true;
          pending_state = ep;
          pending_features = extract_features(view, action.edge);
          pending_reward = 0.0;
        }
        ep.state = model.successors(ep.state, action).front().state;
      } else {
        ep.state = model.successors(ep.state, MdpAction::alpha0()).front().state;
      }
      ++result.steps;
      result.score += s.rewards.step_penalty;
      pending_reward += s.rewards.step_penalty;

      const auto& avatar = ep.state.positions[0];
      if (avatar.at_node() && avatar.from != avatar.to) {
        const auto e = s.arena.find_edge(avatar.from, avatar.to);
        const int g = e ? s.tokens.group_of_edge[*e] : -1;
        if (s.kind == ScenarioKind::pacman) {
          if (g >= 0 && ep.active[g]) {
            ep.active[g] = 0;
            ++ep.collected;
            progress_reward += s.rewards.token_reward;
          }
        } else {
          if (g >= 0 && ep.active[g] && !ep.loaded) {
            ep.active[g] = 0;
            ep.loaded = true;
            ++ep.collected;
            progress_reward += s.rewards.token_reward;
          }
          if (ep.loaded && avatar.to == *s.exit) {
            ep.loaded = false;
            ++ep.delivered;
            progress_reward += s.rewards.deliver_reward.value_or(0.0);
          }
        }
      }
      result.score += progress_reward;
      pending_reward += progress_reward;
      if (use_shield && shield->weakening != nullptr) shield->weakening->step(progress_reward > 0.0);

      if (is_unsafe(ep.state, s.agents.collision_mode)) {
        finish(s.rewards.lose_penalty, false, true);
        break;
      }
      const bool all_in = s.kind == ScenarioKind::pacman ? ep.collected == total_tokens : ep.delivered == total_tokens;
      if (all_in) {
        finish(s.rewards.win_bonus, true, false);
        break;
      }
      continue;
    }

    // Adversary turn.
    const auto& pos = ep.state.positions[turn];
    if (pos.remaining > 0) {
      ep.state = model.successors(ep.state, MdpAction::alpha0()).front().state;
    } else {
      const NodeId v = pos.to;
      const auto edges = s.arena.out_edges(v);
      std::uniform_real_distribution<double> coin(0.0, 1.0);
      EdgeId e;
      if (options.behavior_noise > 0.0 && coin(rng) < options.behavior_noise) {
        std::uniform_int_distribution<std::size_t> pick(0, edges.size() - 1);
        e = edges[pick(rng)];
      } else {
        const ColorId c = s.zones.assign(v, avatar_reference_node(ep.state));
        e = detail::sample_edge(edges, s.behaviors[turn - 1].distribution(v, c), rng);
      }
      const auto& edge = s.arena.edge(e);
      ep.state.positions[turn] = {edge.from, edge.to, edge.distance - 1};
      ep.state.turn = static_cast<std::uint32_t>((turn + 1) % agents);
    }
    if (is_unsafe(ep.state, s.agents.collision_mode)) {
      finish(s.rewards.lose_penalty, false, true);
      break;
    }
  }

  if (pending) {
    const EpisodeView from(s, pending_state);
    agent.learn(from, pending_features, pending_reward, nullptr, {});
  }
  result.tokens = ep.collected;
  result.deliveries = ep.delivered;
  result.terminal = ep.state;
  return result;
}

inline EpisodeResult run_episode(const Scenario& s, Controller& agent, const ShieldSetup* shield,
                                 std::size_t max_steps, std::mt19937_64& rng) {
  SimulationOptions options;
  options.max_steps = max_steps;
  return run_episode(s, agent, shield, options, rng);
}

/// Average of every block of `window` consecutive values (last block may be partial).
inline std::vector<double> windowed_averages(std::span<const double> values, std::size_t window = 10) {
  std::vector<double> out;
  for (std::size_t i = 0; i < values.size(); i += window) {
    const auto end = std::min(values.size(), i + window);
    double sum = 0.0;
    for (auto k = i; k < end; ++k) sum += values[k];
    out.push_back(sum / static_cast<double>(end - i));
  }
  return out;
}

struct TrainingMetrics {
  std::uint64_t seed = 0;
  std::vector<EpisodeResult> episodes;
  std::vector<double> per_episode_scores;
  std::vector<double> windowed_averages;
  double win_rate = 0.0;
  double mean_score = 0.0;
  std::size_t compliance_violations = 0;
  std::size_t fallbacks = 0;
  QWeights final_weights;
};

struct TrainingOptions {
  SimulationOptions simulation;
  std::size_t workers = 1;
  /// Weakening parameters; copied per seed. Ignored without a shield.
  std::optional<WeakeningController> weakening;
};

/// Trains one fresh Q-learning agent per seed for cfg.episodes episodes.
inline std::vector<TrainingMetrics> train(const Scenario& s, const LearningConfig& cfg, const ShieldSetup* shield,
                                          std::span<const std::uint64_t> seeds, const TrainingOptions& options = {}) {
  cfg.validate();
  std::vector<TrainingMetrics> out(seeds.size());
  detail::parallel_for(seeds.size(), options.workers, [&](std::size_t k) {
    TrainingMetrics m;
    m.seed = seeds[k];
    std::mt19937_64 rng(seeds[k]);
    QLearningAgent agent(s.kind, cfg);
    std::optional<WeakeningController> weakening = options.weakening;
    ShieldSetup setup;
    if (shield != nullptr) {
      setup = *shield;
      if (weakening) setup.weakening = &*weakening;
    }
    std::size_t wins = 0;
    for (int e = 0; e < cfg.episodes; ++e) {
      auto r = run_episode(s, agent, shield != nullptr ? &setup : nullptr, options.simulation, rng);
      wins += r.won ? 1 : 0;
      m.per_episode_scores.push_back(r.score);
      m.compliance_violations += r.compliance_violations;
      m.fallbacks += r.fallbacks;
      m.episodes.push_back(std::move(r));
    }
    m.windowed_averages = windowed_averages(m.per_episode_scores);
    if (cfg.episodes > 0) {
      m.win_rate = static_cast<double>(wins) / cfg.episodes;
      m.mean_score = std::accumulate(m.per_episode_scores.begin(), m.per_episode_scores.end(), 0.0) / cfg.episodes;
    }
    m.final_weights = agent.weights();
    out[k] = std::move(m);
  });
  return out;
}

}  // namespace probshield
