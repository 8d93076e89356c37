#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "probshield/arena.hpp"
#include "probshield/error.hpp"
#include "probshield/model_checker.hpp"
#include "probshield/quotient_mdp.hpp"

namespace probshield {

/// Slack on the shield inequality so that floating-point ties are not blocked.
inline constexpr double kShieldTolerance = 1e-12;

/// Actions a with delta * val(a) <= optval. Always contains every minimizer
/// because delta * optval <= optval for delta in [0, 1].
template <class State, class Action>
std::vector<Action> shield_for_state(const BasicActionValuation<State, Action>& valuation, double delta) {
  if (!(delta >= 0.0 && delta <= 1.0)) throw InvalidParameter("delta must lie in [0, 1]");
  std::vector<Action> allowed;
  for (const auto& [a, v] : valuation.values) {
    if (delta * v <= valuation.optimal + kShieldTolerance) allowed.push_back(a);
  }
  return allowed;
}

/// Actions attaining the optimal value.
template <class State, class Action>
std::vector<Action> optimal_actions(const BasicActionValuation<State, Action>& valuation) {
  std::vector<Action> out;
  for (const auto& [a, v] : valuation.values) {
    if (v <= valuation.optimal + kShieldTolerance) out.push_back(a);
  }
  return out;
}

/// Per action 1 - prod_i (1 - p_i): the probability of colliding with at
/// least one adversary when collisions with each are independent.
inline ActionValuation combine_adversary_valuations(std::span<const ActionValuation> per_adversary) {
  if (per_adversary.empty()) throw CompositionError("nothing to combine");
  // 1 - (1 - p) is not always p in floating point.
  if (per_adversary.size() == 1) return per_adversary.front();
  ActionValuation out;
  out.state = per_adversary.front().state;
  for (const auto& [a, v] : per_adversary.front().values) out.values.emplace_back(a, 1.0);
  for (const auto& valuation : per_adversary) {
    if (valuation.values.size() != out.values.size()) throw CompositionError("action domains differ");
    for (std::size_t k = 0; k < out.values.size(); ++k) {
      if (valuation.values[k].first != out.values[k].first) throw CompositionError("action domains differ");
      out.values[k].second *= 1.0 - valuation.values[k].second;
    }
  }
  for (auto& [a, v] : out.values) v = 1.0 - v;
  out.recompute_optimal();
  return out;
}

/// Adversaries (1-based agent indices) that may still reach the avatar within
/// the horizon: undirected distance between their nearest endpoints at most
/// radius_factor * rounds + slack.
///
/// Every agent advances at most one distance unit per round, so two agents
/// can meet on a node only if they start within 2 * rounds. Facing each other
/// inside a corridor needs up to one corridor length more; pass the longest
/// edge as `slack` when edge swaps are unsafe.
inline std::vector<std::size_t> prune_adversaries(const QuotientState& decision_state, int horizon_rounds,
                                                  const DistanceMatrix& undirected, double radius_factor = 2.0,
                                                  int slack = 0) {
  std::vector<std::size_t> kept;
  const auto& avatar = decision_state.positions.at(0);
  const double radius = radius_factor * horizon_rounds + slack;
  for (std::size_t i = 1; i < decision_state.positions.size(); ++i) {
    const auto& adv = decision_state.positions[i];
    int d = kUnreachable;
    for (NodeId x : {avatar.from, avatar.to}) {
      for (NodeId y : {adv.from, adv.to}) d = std::min(d, undirected(x, y));
    }
    if (d != kUnreachable && static_cast<double>(d) <= radius) kept.push_back(i);
  }
  return kept;
}

/// Slack needed by prune_adversaries under the given collision mode.
inline int prune_slack(const Arena& arena, CollisionMode mode) {
  return mode == CollisionMode::node_and_edge_swap ? arena.max_distance() : 0;
}

inline std::vector<std::size_t> prune_adversaries(const QuotientState& decision_state, Horizon horizon,
                                                  const Arena& arena, CollisionMode mode,
                                                  double radius_factor = 2.0) {
  const DistanceMatrix undirected(arena, DistanceMatrix::Orientation::undirected);
  return prune_adversaries(decision_state, horizon.rounds(decision_state.positions.size()), undirected,
                           radius_factor, prune_slack(arena, mode));
}

/// Worst-case valuation: each action is scored by Pr^max from its successor,
/// assuming the avatar's subsequent choices are adversarial.
inline ActionValuation conservative_valuation(const QuotientMdp& model, const QuotientState& decision_state,
                                              Horizon horizon) {
  const auto s = QuotientMdp::canonical(decision_state);
  return action_valuations_batch(model, std::span(&s, 1), horizon, Direction::max).front();
}

/// Threshold test of the conservative shield: only actions with val <= lambda.
/// May be empty.
inline std::vector<MdpAction> conservative_allowed(const ActionValuation& valuation, double lambda) {
  std::vector<MdpAction> out;
  for (const auto& [a, v] : valuation.values) {
    if (v <= lambda + kShieldTolerance) out.push_back(a);
  }
  return out;
}

enum class ShieldMode { delta, conservative };

/// How adversaries are combined when building valuations.
enum class Composition {
  automatic,      ///< joint model up to joint_limit adversaries in range, per-adversary beyond
  joint,          ///< always the joint model
  per_adversary,  ///< always one model per adversary, combined by inclusion-exclusion
};

/// Lookup table of action valuations; the shield threshold is applied per query.
struct ShieldTable {
  Horizon horizon;
  ShieldMode mode = ShieldMode::delta;
  bool per_adversary = false;
  std::string decision_state_filter = "all";
  std::map<QuotientState, ActionValuation> entries;
  std::vector<std::pair<QuotientState, std::string>> failures;

  const ActionValuation* find(const QuotientState& s) const {
    auto it = entries.find(QuotientMdp::canonical(s));
    return it == entries.end() ? nullptr : &it->second;
  }

  friend bool operator==(const ShieldTable&, const ShieldTable&) = default;
};

struct BuildOptions {
  Composition composition = Composition::automatic;
  std::size_t joint_limit = 2;
  /// Adversaries farther than factor * rounds are dropped; 0 disables pruning.
  double prune_radius_factor = 2.0;
  std::size_t workers = 1;
  /// Decision states whose fragments are materialized together.
  std::size_t batch_size = 512;
  ShieldMode mode = ShieldMode::delta;
  std::string filter_description = "all";
};

/// Builds a shield table for the given decision states. Each state is
/// evaluated independently of the others; the table does not depend on the
/// worker count, batch size or request order. States that cannot be evaluated
/// end up in `failures`.
inline ShieldTable build_shield(const QuotientMdp& model, std::span<const QuotientState> decision_states,
                                Horizon horizon, const BuildOptions& options = {}) {
  ShieldTable table;
  table.horizon = horizon;
  table.mode = options.mode;
  table.decision_state_filter = options.filter_description;
  const auto direction = options.mode == ShieldMode::delta ? Direction::min : Direction::max;
  const int rounds = horizon.rounds(model.turns_per_round());
  const DistanceMatrix undirected(model.arena(), DistanceMatrix::Orientation::undirected);
  const int slack = prune_slack(model.arena(), model.collision_mode());

  struct Request {
    QuotientState state;
    std::vector<std::pair<std::vector<std::size_t>, QuotientState>> jobs;
  };
  std::vector<Request> requests;
  std::map<std::vector<std::size_t>, std::map<QuotientState, std::size_t>> jobs_by_model;

  for (const auto& raw : decision_states) {
    QuotientState s = QuotientMdp::canonical(raw);
    try {
      model.check_state(s);
      if (!model.is_decision(s)) throw IllegalState("not a decision state");
    } catch (const Error& e) {
      table.failures.emplace_back(s, e.what());
      continue;
    }
    // Dropping agents changes the length of a round, so sub-models are only
    // equivalent to the joint model when the horizon is counted in rounds.
    const bool by_rounds = horizon.unit == HorizonUnit::rounds;
    std::vector<std::size_t> kept;
    if (by_rounds && options.prune_radius_factor > 0.0) {
      kept = prune_adversaries(s, rounds, undirected, options.prune_radius_factor, slack);
    } else {
      for (std::size_t i = 1; i < model.agent_count(); ++i) kept.push_back(i);
    }
    Request req{s, {}};
    const bool decompose = by_rounds && (options.composition == Composition::per_adversary ||
                           (options.composition == Composition::automatic && kept.size() > options.joint_limit));
    if (decompose && !kept.empty()) {
      table.per_adversary = true;
      for (auto i : kept) {
        std::vector<std::size_t> one{i};
        req.jobs.emplace_back(one, project(s, one));
      }
    } else {
      req.jobs.emplace_back(kept, project(s, kept));
    }
    for (const auto& [subset, projected] : req.jobs) jobs_by_model[subset].emplace(projected, 0);
    requests.push_back(std::move(req));
  }

  struct Task {
    const std::vector<std::size_t>* subset;
    std::vector<QuotientState> states;
    std::vector<ActionValuation> results;
    std::vector<std::string> errors;
  };
  std::vector<Task> tasks;
  const auto batch = std::max<std::size_t>(1, options.batch_size);
  for (auto& [subset, states] : jobs_by_model) {
    Task t{&subset, {}, {}, {}};
    std::size_t global = 0;
    for (auto& [state, slot] : states) {
      slot = global++;
      t.states.push_back(state);
      if (t.states.size() == batch) {
        tasks.push_back(std::move(t));
        t = Task{&subset, {}, {}, {}};
      }
    }
    if (!t.states.empty()) tasks.push_back(std::move(t));
  }

  detail::parallel_for(tasks.size(), options.workers, [&](std::size_t k) {
    auto& task = tasks[k];
    const auto sub = model.restricted(*task.subset);
    task.errors.assign(task.states.size(), {});
    try {
      task.results = action_valuations_batch(sub, std::span<const QuotientState>(task.states), horizon, direction);
    } catch (const Error&) {
      // Attribute the failure to individual states.
      task.results.assign(task.states.size(), {});
      for (std::size_t i = 0; i < task.states.size(); ++i) {
        try {
          task.results[i] =
              action_valuations_batch(sub, std::span<const QuotientState>(&task.states[i], 1), horizon, direction)
                  .front();
        } catch (const Error& e) {
          task.errors[i] = e.what();
        }
      }
    }
  });

  // Slots count per model across its tasks; map them back to (task, offset).
  std::map<const std::vector<std::size_t>*, std::vector<std::pair<std::size_t, std::size_t>>> where;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    auto& v = where[tasks[k].subset];
    for (std::size_t i = 0; i < tasks[k].states.size(); ++i) v.emplace_back(k, i);
  }

  for (const auto& req : requests) {
    std::vector<ActionValuation> parts;
    std::string error;
    for (const auto& [subset, projected] : req.jobs) {
      const auto& states = jobs_by_model.at(subset);
      const auto& key = jobs_by_model.find(subset)->first;
      const auto [k, i] = where.at(&key)[states.at(projected)];
      if (!tasks[k].errors[i].empty()) {
        error = tasks[k].errors[i];
        break;
      }
      parts.push_back(tasks[k].results[i]);
    }
    if (!error.empty()) {
      table.failures.emplace_back(req.state, error);
      continue;
    }
    ActionValuation v = parts.size() == 1 ? std::move(parts.front()) : combine_adversary_valuations(parts);
    v.state = req.state;
    table.entries.insert_or_assign(req.state, std::move(v));
  }
  std::sort(table.failures.begin(), table.failures.end());
  table.failures.erase(std::unique(table.failures.begin(), table.failures.end()), table.failures.end());
  return table;
}

struct QueryResult {
  std::vector<MdpAction> allowed;
  bool fallback_used = false;
  bool covered = false;
};

/// Allowed actions at a decision state. `threshold` is delta for delta-mode
/// tables and lambda for conservative ones. Uncovered states are unshielded
/// unless `strict`, which turns them into an error.
inline QueryResult query(const ShieldTable& table, const QuotientMdp& model, const QuotientState& state,
                         double threshold, bool strict = false) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidParameter("shield threshold must lie in [0, 1]");
  QueryResult out;
  const auto* entry = table.find(state);
  if (entry == nullptr) {
    if (strict) throw IllegalState("decision state is not covered by the shield");
    out.allowed = model.enabled_actions(state);
    return out;
  }
  out.covered = true;
  if (table.mode == ShieldMode::delta) {
    out.allowed = shield_for_state(*entry, threshold);
  } else {
    out.allowed = conservative_allowed(*entry, threshold);
  }
  if (out.allowed.empty()) {
    out.allowed = optimal_actions(*entry);
    out.fallback_used = true;
  }
  return out;
}

/// Runtime relaxation of delta: after `window` consecutive steps without
/// progress delta drops by epsilon (not below floor); any progress restores
/// the base value.
class WeakeningController {
 public:
  WeakeningController(double base_delta, double epsilon, double floor, int window)
      : base_(base_delta), epsilon_(epsilon), floor_(floor), window_(window), current_(base_delta) {
    if (!(base_delta >= 0.0 && base_delta <= 1.0)) throw InvalidParameter("base delta must lie in [0, 1]");
    if (!(epsilon > 0.0)) throw InvalidParameter("weakening epsilon must be positive");
    if (!(floor >= 0.0 && floor <= base_delta)) throw InvalidParameter("floor must lie in [0, base delta]");
    if (window < 1) throw InvalidParameter("progress window must be positive");
  }

  void step(bool progress_made) {
    if (progress_made) {
      current_ = base_;
      stalled_ = 0;
      return;
    }
    if (++stalled_ >= window_) {
      current_ = std::max(floor_, current_ - epsilon_);
      stalled_ = 0;
    }
  }

  void reset() {
    current_ = base_;
    stalled_ = 0;
  }

  double current_delta() const noexcept { return current_; }
  double base_delta() const noexcept { return base_; }
  double epsilon() const noexcept { return epsilon_; }
  double floor() const noexcept { return floor_; }
  int window() const noexcept { return window_; }
  int stalled() const noexcept { return stalled_; }

 private:
  double base_;
  double epsilon_;
  double floor_;
  int window_;
  double current_;
  int stalled_ = 0;
};

inline WeakeningController weakening_step(WeakeningController c, bool progress_made) {
  c.step(progress_made);
  return c;
}

/// Every canonical position an agent can occupy: standing on a node, or
/// mid-edge with 1..d transitions left.
inline std::vector<Position> all_positions(const Arena& arena) {
  std::vector<Position> out;
  for (NodeId v = 0; v < arena.node_count(); ++v) out.push_back({v, v, 0});
  for (const auto& e : arena.edges()) {
    for (int n = 1; n < e.distance; ++n) out.push_back({e.from, e.to, n});
  }
  return out;
}

/// All safe decision states with the avatar standing on a node accepted by
/// `avatar_filter` and the adversaries anywhere.
inline std::vector<QuotientState> enumerate_decision_states(const Arena& arena, std::size_t adversaries,
                                                            CollisionMode mode,
                                                            const std::function<bool(NodeId)>& avatar_filter = {}) {
  const auto positions = all_positions(arena);
  std::vector<QuotientState> out;
  std::vector<std::size_t> digits(adversaries, 0);
  for (NodeId v = 0; v < arena.node_count(); ++v) {
    if (avatar_filter && !avatar_filter(v)) continue;
    std::fill(digits.begin(), digits.end(), 0);
    while (true) {
      QuotientState s;
      s.positions.push_back({v, v, 0});
      for (auto d : digits) s.positions.push_back(positions[d]);
      if (!is_unsafe(s, mode)) out.push_back(std::move(s));
      std::size_t k = 0;
      while (k < adversaries && ++digits[k] == positions.size()) digits[k++] = 0;
      if (k == adversaries) break;
    }
  }
  return out;
}

}  // namespace probshield
