#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace probshield;

namespace {

using Problem = ProgressSetProblem<char>;

std::vector<char> solve(std::vector<char> cands, std::vector<double> regret, std::vector<std::vector<char>> sets) {
  return solve_progress_sets(Problem{std::move(cands), std::move(regret), std::move(sets)});
}

}  // namespace

TEST(ProgressSets, SingletonCover) {
  EXPECT_EQ(solve({'a', 'b'}, {0.1, 0.3}, {{'a', 'b'}}), (std::vector<char>{'a'}));
}

TEST(ProgressSets, SharedActionBeatsTwoCheapOnes) {
  // {a, c} costs 0.2, {b} costs 0.15.
  EXPECT_EQ(solve({'a', 'b', 'c'}, {0.1, 0.15, 0.1}, {{'a', 'b'}, {'b', 'c'}}), (std::vector<char>{'b'}));
}

TEST(ProgressSets, DisjointSetsAreForced) {
  EXPECT_EQ(solve({'a', 'b', 'c'}, {0.5, 0.1, 0.5}, {{'a'}, {'c'}}), (std::vector<char>{'a', 'c'}));
}

TEST(ProgressSets, NoSetsMeansNothingExtra) {
  EXPECT_TRUE(solve({'a'}, {0.1}, {}).empty());
}

TEST(ProgressSets, TiesPreferFewerThenEarlierActions) {
  EXPECT_EQ(solve({'a', 'b', 'c'}, {0.0, 0.0, 0.0}, {{'a', 'b'}, {'b', 'c'}}), (std::vector<char>{'b'}));
  EXPECT_EQ(solve({'a', 'b'}, {0.2, 0.2}, {{'b', 'a'}}), (std::vector<char>{'a'}));
}

TEST(ProgressSets, InvalidProblemsThrow) {
  EXPECT_THROW(solve({'a'}, {0.1, 0.2}, {}), InvalidParameter);
  EXPECT_THROW(solve({'a'}, {-0.1}, {}), InvalidParameter);
  EXPECT_THROW(solve({'a'}, {0.1}, {{}}), InvalidParameter);
  EXPECT_THROW(solve({'a'}, {0.1}, {{'z'}}), InvalidParameter);
}

TEST(ProgressSets, MatchesBruteForceCost) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    Problem p;
    for (std::size_t i = 0; i < n; ++i) {
      p.candidates.push_back(static_cast<char>('a' + i));
      p.regret.push_back(u(rng));
    }
    const std::size_t m = rng() % 5;
    for (std::size_t k = 0; k < m; ++k) {
      std::vector<char> set;
      for (std::size_t i = 0; i < n; ++i) {
        if (u(rng) < 0.4) set.push_back(p.candidates[i]);
      }
      if (set.empty()) set.push_back(p.candidates[rng() % n]);
      p.progress_sets.push_back(set);
    }
    double best = 1e9;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      bool ok = true;
      for (const auto& set : p.progress_sets) {
        bool hit = false;
        for (char a : set) hit = hit || (mask >> (a - 'a') & 1);
        ok = ok && hit;
      }
      if (!ok) continue;
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += (mask >> i & 1) ? p.regret[i] : 0.0;
      best = std::min(best, c);
    }
    double got = 0.0;
    for (char a : solve_progress_sets(p)) got += p.regret[a - 'a'];
    EXPECT_NEAR(got, best, 1e-12);
  }
}

TEST(ShieldWithProgressSets, RestoresBlockedSets) {
  ActionValuation v;
  for (EdgeId e = 0; e < 3; ++e) v.values.emplace_back(MdpAction::along(e), 0.1 * (e + 1));
  v.recompute_optimal();
  const std::vector<std::vector<MdpAction>> sets{{MdpAction::along(1), MdpAction::along(2)}};
  // delta = 1 allows only edge 0; the set needs edge 1 (regret 0.1) rather than 2 (0.2).
  const auto out = shield_with_progress_sets(v, 1.0, sets);
  EXPECT_EQ(out, (std::vector<MdpAction>{MdpAction::along(0), MdpAction::along(1)}));
  EXPECT_NEAR(shield_regret(v, MdpAction::along(2), 1.0), 0.2, 1e-15);
  EXPECT_EQ(shield_regret(v, MdpAction::along(0), 1.0), 0.0);
  // A set already containing an allowed action adds nothing.
  EXPECT_EQ(shield_with_progress_sets(v, 1.0, {{MdpAction::along(0), MdpAction::along(2)}}),
            std::vector<MdpAction>{MdpAction::along(0)});
}
