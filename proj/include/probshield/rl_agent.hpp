#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "probshield/error.hpp"

namespace probshield {

using FeatureVector = std::vector<double>;

struct QWeights {
  std::vector<double> weights;

  QWeights() = default;
  explicit QWeights(std::size_t n) : weights(n, 0.0) {}
  explicit QWeights(std::vector<double> w) : weights(std::move(w)) {}
  std::size_t size() const noexcept { return weights.size(); }
  friend bool operator==(const QWeights&, const QWeights&) = default;
};

struct LearningConfig {
  double alpha = 0.2;
  double gamma = 0.8;
  double epsilon = 0.05;
  int episodes = 300;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidParameter("alpha must lie in (0, 1]");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidParameter("gamma must lie in (0, 1]");
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidParameter("epsilon must lie in [0, 1]");
    if (episodes < 0) throw InvalidParameter("episode count must be nonnegative");
  }
};

inline double q_value(const QWeights& w, std::span<const double> f) {
  if (w.size() != f.size()) {
    throw DimensionError("weights have " + std::to_string(w.size()) + " entries, features " +
                         std::to_string(f.size()));
  }
  double q = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) q += w.weights[i] * f[i];
  return q;
}

/// w_i += alpha * ((reward + gamma * best_next_q) - Q(w, f)) * f_i
inline QWeights q_update(QWeights w, std::span<const double> f, double reward, double best_next_q,
                         const LearningConfig& cfg) {
  if (!std::isfinite(reward) || !std::isfinite(best_next_q)) throw NumericError("non-finite reward or target");
  for (double x : f) {
    if (!std::isfinite(x)) throw NumericError("non-finite feature");
  }
  const double correction = (reward + cfg.gamma * best_next_q) - q_value(w, f);
  for (std::size_t i = 0; i < f.size(); ++i) w.weights[i] += cfg.alpha * correction * f[i];
  for (double x : w.weights) {
    if (!std::isfinite(x)) throw NumericError("weights diverged");
  }
  return w;
}

/// Index of the greedy candidate; the first maximum wins ties.
template <class Features>
std::size_t greedy_index(std::size_t count, const QWeights& w, Features&& features) {
  std::size_t best = 0;
  double best_q = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double q = q_value(w, features(i));
    if (i == 0 || q > best_q) {
      best = i;
      best_q = q;
    }
  }
  return best;
}

/// epsilon-greedy choice among `candidates`; `features(i)` yields the feature
/// vector of candidate i. Exactly one uniform draw decides exploration.
template <class Action, class Features, class Rng>
Action select_action(std::span<const Action> candidates, const QWeights& w, Features&& features, double epsilon,
                     Rng& rng) {
  if (candidates.empty()) throw InvalidParameter("select_action needs at least one candidate");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    return candidates[pick(rng)];
  }
  return candidates[greedy_index(candidates.size(), w, features)];
}

}  // namespace probshield
