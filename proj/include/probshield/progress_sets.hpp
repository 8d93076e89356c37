#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "probshield/error.hpp"
#include "probshield/model_checker.hpp"
#include "probshield/shield.hpp"

namespace probshield {

/// Minimum-regret selection of actions such that every progress set keeps at
/// least one allowed action.
template <class Action>
struct ProgressSetProblem {
  std::vector<Action> candidates;
  std::vector<double> regret;  // parallel to candidates, >= 0
  std::vector<std::vector<Action>> progress_sets;
};

/// Ties in cost (within this slack) are resolved by cardinality, then by the
/// lexicographic order of the selection in candidate order.
inline constexpr double kRegretTieTolerance = 1e-12;

namespace detail {

struct Selection {
  std::vector<std::size_t> members;  // ascending candidate indices
  double cost = std::numeric_limits<double>::infinity();

  bool better_than(const Selection& other) const {
    if (cost < other.cost - kRegretTieTolerance) return true;
    if (cost > other.cost + kRegretTieTolerance) return false;
    if (members.size() != other.members.size()) return members.size() < other.members.size();
    return members < other.members;
  }
};

inline double selection_cost(const std::vector<std::size_t>& members, const std::vector<double>& regret) {
  double c = 0.0;
  for (auto i : members) c += regret[i];
  return c;
}

}  // namespace detail

/// Exact branch and bound over irredundant covers; with nonnegative regrets
/// the optimum is always irredundant.
template <class Action>
std::vector<Action> solve_progress_sets(const ProgressSetProblem<Action>& problem) {
  const auto n = problem.candidates.size();
  if (problem.regret.size() != n) throw InvalidParameter("one regret per candidate action required");
  if (n > 64) throw InvalidParameter("at most 64 candidate actions are supported");
  for (double r : problem.regret) {
    if (!(r >= 0.0)) throw InvalidParameter("regrets must be nonnegative");
  }

  auto index_of = [&](const Action& a) -> std::size_t {
    for (std::size_t i = 0; i < n; ++i) {
      if (problem.candidates[i] == a) return i;
    }
    throw InvalidParameter("progress set contains an action that is not a candidate");
  };
  std::vector<std::uint64_t> sets;
  for (const auto& set : problem.progress_sets) {
    if (set.empty()) throw InvalidParameter("progress sets must be nonempty");
    std::uint64_t mask = 0;
    for (const auto& a : set) mask |= std::uint64_t{1} << index_of(a);
    sets.push_back(mask);
  }

  // Branch on the members of the first unhit set; the k-th branch forbids the
  // members before it, so every cover is generated once.
  detail::Selection best;
  auto search = [&](auto&& self, std::uint64_t picked, std::uint64_t forbidden, double cost) -> void {
    double bound = cost;
    const std::uint64_t* open = nullptr;
    for (const auto& m : sets) {
      if (m & picked) continue;
      const auto usable = m & ~forbidden;
      if (usable == 0) return;
      if (open == nullptr) open = &m;
      double cheapest = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        if (usable >> i & 1) cheapest = std::min(cheapest, problem.regret[i]);
      }
      bound = std::max(bound, cost + cheapest);
    }
    if (bound > best.cost + kRegretTieTolerance) return;
    if (open == nullptr) {
      detail::Selection cand;
      for (std::size_t i = 0; i < n; ++i) {
        if (picked >> i & 1) cand.members.push_back(i);
      }
      cand.cost = detail::selection_cost(cand.members, problem.regret);
      if (cand.better_than(best)) best = std::move(cand);
      return;
    }
    auto local_forbidden = forbidden;
    for (std::size_t i = 0; i < n; ++i) {
      const auto bit = std::uint64_t{1} << i;
      if (!(*open & bit) || (forbidden & bit)) continue;
      self(self, picked | bit, local_forbidden, cost + problem.regret[i]);
      local_forbidden |= bit;
    }
  };
  search(search, 0, 0, 0.0);

  std::vector<Action> out;
  for (auto i : best.members) out.push_back(problem.candidates[i]);
  return out;
}

/// Amount by which an action violates the delta-shield inequality.
template <class State, class Action>
double shield_regret(const BasicActionValuation<State, Action>& valuation, const Action& a, double delta) {
  return std::max(0.0, delta * valuation.value(a) - valuation.optimal);
}

/// delta-shield extended by the cheapest blocked actions that restore every
/// progress set. Sets already containing an allowed action impose nothing.
template <class State, class Action>
std::vector<Action> shield_with_progress_sets(const BasicActionValuation<State, Action>& valuation, double delta,
                                              const std::vector<std::vector<Action>>& progress_sets) {
  auto allowed = shield_for_state(valuation, delta);
  auto is_allowed = [&](const Action& a) { return std::find(allowed.begin(), allowed.end(), a) != allowed.end(); };
  ProgressSetProblem<Action> problem;
  for (const auto& [a, v] : valuation.values) {
    if (!is_allowed(a)) {
      problem.candidates.push_back(a);
      problem.regret.push_back(shield_regret(valuation, a, delta));
    }
  }
  for (const auto& set : progress_sets) {
    if (std::any_of(set.begin(), set.end(), is_allowed)) continue;
    problem.progress_sets.push_back(set);
  }
  const auto extra = solve_progress_sets(problem);
  std::vector<Action> out;
  for (const auto& [a, v] : valuation.values) {
    if (is_allowed(a) || std::find(extra.begin(), extra.end(), a) != extra.end()) out.push_back(a);
  }
  return out;
}

}  // namespace probshield
