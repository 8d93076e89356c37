#pragma once

#include <algorithm>
#include <atomic>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "probshield/error.hpp"
#include "probshield/quotient_mdp.hpp"

namespace probshield {

/// Interface the finite-horizon checker needs from a model. QuotientMdp is the
/// production model; tests plug in small hand-written MDPs.
template <class M>
concept FiniteModel = requires(const M& m, const typename M::State& s, const typename M::Action& a) {
  typename M::StateHash;
  { m.enabled_actions(s) } -> std::same_as<std::vector<typename M::Action>>;
  { m.successors(s, a) } -> std::same_as<std::vector<Outcome<typename M::State>>>;
  { m.is_unsafe(s) } -> std::convertible_to<bool>;
  { m.is_decision(s) } -> std::convertible_to<bool>;
  { m.turns_per_round() } -> std::convertible_to<std::size_t>;
  { M::canonical(s) } -> std::same_as<typename M::State>;
};

enum class HorizonUnit { transitions, rounds };

/// Bounded number of steps; a round is one move of every agent.
struct Horizon {
  int steps = 10;
  HorizonUnit unit = HorizonUnit::rounds;

  int transitions(std::size_t turns_per_round) const {
    if (steps < 1) throw InvalidParameter("horizon must be at least one step");
    return unit == HorizonUnit::rounds ? steps * static_cast<int>(turns_per_round) : steps;
  }

  /// Horizon expressed in rounds, rounded up.
  int rounds(std::size_t turns_per_round) const {
    if (unit == HorizonUnit::rounds) return steps;
    const int t = static_cast<int>(turns_per_round);
    return (steps + t - 1) / t;
  }

  friend bool operator==(const Horizon&, const Horizon&) = default;
};

enum class Direction { min, max };

/// Optional restriction of the actions at a state with `remaining`
/// transitions to go. An empty function allows everything.
template <class State, class Action>
using ActionFilter = std::function<bool(const State&, const Action&, int remaining)>;

/// val(a) per enabled action of a decision state, plus the optimum over them.
template <class State, class Action>
struct BasicActionValuation {
  State state;
  std::vector<std::pair<Action, double>> values;
  double optimal = 0.0;

  double value(const Action& a) const {
    for (const auto& [act, v] : values) {
      if (act == a) return v;
    }
    throw IllegalAction("action has no valuation");
  }

  void recompute_optimal() {
    optimal = 1.0;
    for (const auto& [a, v] : values) optimal = std::min(optimal, v);
  }

  friend bool operator==(const BasicActionValuation&, const BasicActionValuation&) = default;
};

using ActionValuation = BasicActionValuation<QuotientState, MdpAction>;

/// Horizon-bounded fragment of a model rooted at a set of states.
///
/// Each stored state carries a budget: the largest number of transitions any
/// root still has left when reaching it. States are expanded only while their
/// budget is positive; unsafe states are never expanded (they are absorbing).
/// Canonically equal states are merged.
template <FiniteModel M>
class Fragment {
 public:
  using State = typename M::State;
  using Action = typename M::Action;
  using Filter = ActionFilter<State, Action>;

  struct Choice {
    Action action;
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
  };

  struct Successor {
    std::uint32_t state = 0;
    double probability = 0.0;
  };

  explicit Fragment(const M& model) : model_(&model) {}

  std::uint32_t add_root(const State& s, int budget) {
    const auto idx = intern(M::canonical(s), budget);
    return idx;
  }

  /// Materializes everything reachable from the roots within their budgets.
  void expand() {
    for (int b = static_cast<int>(buckets_.size()) - 1; b >= 1; --b) {
      // Buckets below b only grow while processing b, so indexing stays valid.
      for (std::size_t k = 0; k < buckets_[b].size(); ++k) {
        const auto idx = buckets_[b][k];
        if (budget_[idx] != b || unsafe_[idx]) continue;
        if (!expanded_[idx]) generate(idx);
        const auto [cb, ce] = choice_range_[idx];
        for (auto c = cb; c < ce; ++c) {
          for (auto o = choices_[c].begin; o < choices_[c].end; ++o) raise(successors_[o].state, b - 1);
        }
      }
      buckets_[b].clear();
      buckets_[b].shrink_to_fit();
    }
  }

  /// x^{budget(s)}(s) for every state: the optimal probability of reaching an
  /// unsafe state within the state's budget.
  std::vector<double> solve(Direction direction, const Filter& filter = {}) const {
    const auto n = states_.size();
    std::vector<std::uint32_t> order(n);
    for (std::uint32_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [this](std::uint32_t a, std::uint32_t b) { return budget_[a] > budget_[b]; });
    const int max_budget = n == 0 ? 0 : budget_[order[0]];

    std::vector<double> prev(n), cur(n), result(n);
    for (std::size_t i = 0; i < n; ++i) prev[i] = cur[i] = result[i] = unsafe_[i] ? 1.0 : 0.0;

    std::size_t active = n;
    for (int k = 1; k <= max_budget; ++k) {
      while (active > 0 && budget_[order[active - 1]] < k) --active;
      for (std::size_t j = 0; j < active; ++j) {
        const auto s = order[j];
        if (unsafe_[s]) continue;
        cur[s] = backup(s, prev, direction, filter, k);
        if (budget_[s] == k) result[s] = cur[s];
      }
      std::swap(prev, cur);
    }
    return result;
  }

  std::size_t size() const noexcept { return states_.size(); }
  const State& state(std::uint32_t i) const { return states_.at(i); }
  int budget(std::uint32_t i) const { return budget_.at(i); }
  bool unsafe(std::uint32_t i) const { return unsafe_.at(i) != 0; }

  std::optional<std::uint32_t> find(const State& s) const {
    auto it = index_.find(M::canonical(s));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::span<const Choice> choices(std::uint32_t i) const {
    const auto [b, e] = choice_range_.at(i);
    return std::span<const Choice>(choices_).subspan(b, e - b);
  }

  std::span<const Successor> outcomes(const Choice& c) const {
    return std::span<const Successor>(successors_).subspan(c.begin, c.end - c.begin);
  }

 private:
  std::uint32_t intern(State s, int budget) {
    auto [it, inserted] = index_.try_emplace(s, static_cast<std::uint32_t>(states_.size()));
    const auto idx = it->second;
    if (inserted) {
      unsafe_.push_back(model_->is_unsafe(s) ? 1 : 0);
      states_.push_back(std::move(s));
      budget_.push_back(-1);
      expanded_.push_back(0);
      choice_range_.emplace_back(0, 0);
    }
    raise(idx, budget);
    return idx;
  }

  void raise(std::uint32_t idx, int budget) {
    if (budget <= budget_[idx]) return;
    budget_[idx] = budget;
    if (budget > 0 && !unsafe_[idx]) {
      if (buckets_.size() <= static_cast<std::size_t>(budget)) buckets_.resize(budget + 1);
      buckets_[budget].push_back(idx);
    }
  }

  void generate(std::uint32_t idx) {
    expanded_[idx] = 1;
    const State s = states_[idx];
    const auto begin = static_cast<std::uint32_t>(choices_.size());
    for (const auto& a : model_->enabled_actions(s)) {
      Choice c{a, static_cast<std::uint32_t>(successors_.size()), 0};
      for (auto& o : model_->successors(s, a)) {
        const auto next = intern_unbudgeted(M::canonical(std::move(o.state)));
        successors_.push_back({next, o.probability});
      }
      c.end = static_cast<std::uint32_t>(successors_.size());
      choices_.push_back(c);
    }
    choice_range_[idx] = {begin, static_cast<std::uint32_t>(choices_.size())};
  }

  std::uint32_t intern_unbudgeted(State s) {
    auto [it, inserted] = index_.try_emplace(s, static_cast<std::uint32_t>(states_.size()));
    if (inserted) {
      unsafe_.push_back(model_->is_unsafe(s) ? 1 : 0);
      states_.push_back(std::move(s));
      budget_.push_back(-1);
      expanded_.push_back(0);
      choice_range_.emplace_back(0, 0);
    }
    return it->second;
  }

  double backup(std::uint32_t s, const std::vector<double>& prev, Direction direction, const Filter& filter,
                int remaining) const {
    const auto [cb, ce] = choice_range_[s];
    bool any = false;
    double best = direction == Direction::min ? std::numeric_limits<double>::infinity()
                                              : -std::numeric_limits<double>::infinity();
    for (auto c = cb; c < ce; ++c) {
      const auto& choice = choices_[c];
      if (filter && !filter(states_[s], choice.action, remaining)) continue;
      double v = 0.0;
      for (auto o = choice.begin; o < choice.end; ++o) v += successors_[o].probability * prev[successors_[o].state];
      best = direction == Direction::min ? std::min(best, v) : std::max(best, v);
      any = true;
    }
    if (!any) throw IllegalState("no action left at a state of the fragment (deadlock)");
    return best;
  }

  const M* model_;
  std::vector<State> states_;
  std::vector<int> budget_;
  std::vector<char> unsafe_;
  std::vector<char> expanded_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> choice_range_;
  std::vector<Choice> choices_;
  std::vector<Successor> successors_;
  std::vector<std::vector<std::uint32_t>> buckets_;
  std::unordered_map<State, std::uint32_t, typename M::StateHash> index_;
};

template <class State, class Hash>
struct BasicReachabilityResult {
  /// Value of each fragment state for the transitions it still had left when
  /// first reachable from the root.
  std::unordered_map<State, double, Hash> values;
  double root_value = 0.0;
  Direction direction = Direction::min;
  Horizon horizon;
};

using ReachabilityResult = BasicReachabilityResult<QuotientState, QuotientStateHash>;

/// Pr^min or Pr^max of reaching an unsafe state from `root` within the horizon.
template <FiniteModel M>
BasicReachabilityResult<typename M::State, typename M::StateHash> reach_prob(
    const M& model, const typename M::State& root, Horizon horizon, Direction direction,
    const ActionFilter<typename M::State, typename M::Action>& filter = {}) {
  const int h = horizon.transitions(model.turns_per_round());
  Fragment<M> fragment(model);
  const auto r = fragment.add_root(root, h);
  fragment.expand();
  const auto values = fragment.solve(direction, filter);
  BasicReachabilityResult<typename M::State, typename M::StateHash> out;
  out.direction = direction;
  out.horizon = horizon;
  out.root_value = values[r];
  out.values.reserve(fragment.size());
  for (std::uint32_t i = 0; i < fragment.size(); ++i) {
    if (fragment.budget(i) >= 0) out.values.emplace(fragment.state(i), values[i]);
  }
  return out;
}

namespace detail {

/// Runs fn(i) for i in [0, n) on `workers` threads; fn must not depend on order.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// Action valuations of many decision states evaluated over one shared
/// fragment. Values are identical to evaluating each state on its own.
/// Subsequent choices are resolved by `direction` (min for Pr^min valuations,
/// max for the conservative worst case).
template <FiniteModel M>
std::vector<BasicActionValuation<typename M::State, typename M::Action>> action_valuations_batch(
    const M& model, std::span<const typename M::State> decision_states, Horizon horizon,
    Direction direction = Direction::min, const ActionFilter<typename M::State, typename M::Action>& filter = {}) {
  using State = typename M::State;
  using Action = typename M::Action;
  const int h = horizon.transitions(model.turns_per_round());
  Fragment<M> fragment(model);

  struct Pending {
    Action action;
    std::vector<std::pair<std::uint32_t, double>> outcomes;
  };
  std::vector<std::vector<Pending>> pending(decision_states.size());
  for (std::size_t i = 0; i < decision_states.size(); ++i) {
    const State& sd = decision_states[i];
    if (!model.is_decision(sd)) throw IllegalState("action valuation requested for a non-decision state");
    for (const auto& a : model.enabled_actions(sd)) {
      if (filter && !filter(sd, a, h)) continue;
      Pending p{a, {}};
      for (const auto& o : model.successors(sd, a)) p.outcomes.emplace_back(fragment.add_root(o.state, h - 1), o.probability);
      pending[i].push_back(std::move(p));
    }
  }
  fragment.expand();
  const auto values = fragment.solve(direction, filter);

  std::vector<BasicActionValuation<State, Action>> out(decision_states.size());
  for (std::size_t i = 0; i < decision_states.size(); ++i) {
    out[i].state = decision_states[i];
    for (const auto& p : pending[i]) {
      double v = 0.0;
      for (auto [idx, prob] : p.outcomes) v += prob * values[idx];
      out[i].values.emplace_back(p.action, v);
    }
    out[i].recompute_optimal();
  }
  return out;
}

/// val(a) = Pr^min of reaching an unsafe state from the successor of a, with
/// the avatar's own move counted against the horizon.
template <FiniteModel M>
BasicActionValuation<typename M::State, typename M::Action> action_valuation(
    const M& model, const typename M::State& decision_state, Horizon horizon,
    const ActionFilter<typename M::State, typename M::Action>& filter = {}) {
  return action_valuations_batch(model, std::span(&decision_state, 1), horizon, Direction::min, filter).front();
}

/// Debug dump: one `state action prob state'` line per transition, then a
/// `values` line followed by `state value` lines.
template <FiniteModel M, class FormatState, class FormatAction>
void write_fragment(std::ostream& os, const Fragment<M>& fragment, std::span<const double> values,
                    FormatState&& format_state, FormatAction&& format_action) {
  char buf[40];
  for (std::uint32_t i = 0; i < fragment.size(); ++i) {
    for (const auto& c : fragment.choices(i)) {
      for (const auto& o : fragment.outcomes(c)) {
        std::snprintf(buf, sizeof buf, "%.17g", o.probability);
        os << format_state(fragment.state(i)) << ' ' << format_action(c.action) << ' ' << buf << ' '
           << format_state(fragment.state(o.state)) << '\n';
      }
    }
  }
  os << "values\n";
  for (std::uint32_t i = 0; i < fragment.size() && i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", values[i]);
    os << format_state(fragment.state(i)) << ' ' << buf << '\n';
  }
}

}  // namespace probshield
