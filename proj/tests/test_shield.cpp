#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace probshield;
using testing_support::grid;

namespace {

ActionValuation valuation(std::vector<double> values) {
  ActionValuation v;
  for (std::size_t i = 0; i < values.size(); ++i) v.values.emplace_back(MdpAction::along(static_cast<EdgeId>(i)), values[i]);
  v.recompute_optimal();
  return v;
}

std::vector<EdgeId> edges_of(const std::vector<MdpAction>& actions) {
  std::vector<EdgeId> out;
  for (const auto& a : actions) out.push_back(a.edge);
  return out;
}

// 5x5 grid with one uniformly moving adversary.
struct GridSetup {
  Arena arena = grid(5, 5);
  ZoneColoring zones = default_zone_coloring(arena, 2);
  std::vector<AdversaryBehavior> behaviors{AdversaryBehavior::uniform(arena, zones.color_count())};
  QuotientMdp model() const { return QuotientMdp(arena, zones, behaviors); }
};

}  // namespace

TEST(DeltaShield, BlocksByRatio) {
  const auto v = valuation({0.2, 0.3, 0.8});
  EXPECT_EQ(edges_of(shield_for_state(v, 0.5)), (std::vector<EdgeId>{0, 1}));
  EXPECT_EQ(edges_of(shield_for_state(v, 0.0)), (std::vector<EdgeId>{0, 1, 2}));
  EXPECT_EQ(edges_of(shield_for_state(v, 1.0)), (std::vector<EdgeId>{0}));
  EXPECT_EQ(edges_of(shield_for_state(valuation({0.4, 0.1, 0.1}), 1.0)), (std::vector<EdgeId>{1, 2}));
  EXPECT_THROW(shield_for_state(v, 1.5), InvalidParameter);
}

TEST(Combine, InclusionExclusion) {
  const ActionValuation parts[] = {valuation({0.1, 1.0}), valuation({0.2, 0.3})};
  const auto c = combine_adversary_valuations(parts);
  EXPECT_NEAR(c.values[0].second, 0.28, 1e-15);
  EXPECT_EQ(c.values[1].second, 1.0);
  EXPECT_NEAR(c.optimal, 0.28, 1e-15);
  const auto single = combine_adversary_valuations(std::span(parts, 1));
  EXPECT_EQ(single.values, parts[0].values);
}

TEST(Combine, MismatchedDomainsThrow) {
  const ActionValuation parts[] = {valuation({0.1, 0.2}), valuation({0.2})};
  EXPECT_THROW(combine_adversary_valuations(parts), CompositionError);
  EXPECT_THROW(combine_adversary_valuations({}), CompositionError);
}

TEST(Prune, ByDistance) {
  // Cycle of 10 nodes; horizon 2 rounds keeps adversaries within distance 4.
  Arena a = testing_support::cycle(10);
  const DistanceMatrix u(a, DistanceMatrix::Orientation::undirected);
  QuotientState s{{{0, 0, 0}, {1, 1, 0}, {5, 5, 0}, {4, 4, 0}}, 0};
  EXPECT_EQ(prune_adversaries(s, 2, u), (std::vector<std::size_t>{1, 3}));
  // Slack widens the radius.
  EXPECT_EQ(prune_adversaries(s, 2, u, 2.0, 1), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(prune_slack(a, CollisionMode::node_only), 0);
  EXPECT_EQ(prune_slack(a, CollisionMode::node_and_edge_swap), 1);
}

TEST(Query, DeltaCoveredAndUncovered) {
  GridSetup g;
  const auto m = g.model();
  QuotientState s{{{12, 12, 0}, {0, 0, 0}}, 0};
  ShieldTable t;
  auto v = action_valuation(m, s, Horizon{1});
  v.values[0].second = 0.2;
  v.values[1].second = 0.8;
  v.values[2].second = 0.8;
  v.values[3].second = 0.8;
  v.recompute_optimal();
  t.entries.emplace(s, v);
  const auto r = query(t, m, s, 0.5);
  EXPECT_EQ(r.allowed, std::vector<MdpAction>{v.values[0].first});
  EXPECT_FALSE(r.fallback_used);
  EXPECT_TRUE(r.covered);

  QuotientState other{{{6, 6, 0}, {0, 0, 0}}, 0};
  const auto u = query(t, m, other, 0.5);
  EXPECT_EQ(u.allowed, m.enabled_actions(other));
  EXPECT_FALSE(u.fallback_used);
  EXPECT_FALSE(u.covered);
  EXPECT_THROW(query(t, m, other, 0.5, true), IllegalState);
}

TEST(Query, ConservativeFallsBackToArgmin) {
  GridSetup g;
  const auto m = g.model();
  QuotientState s{{{12, 12, 0}, {0, 0, 0}}, 0};
  ShieldTable t;
  t.mode = ShieldMode::conservative;
  auto v = action_valuation(m, s, Horizon{1});
  for (std::size_t i = 0; i < v.values.size(); ++i) v.values[i].second = 0.3 + 0.1 * static_cast<double>(i);
  v.recompute_optimal();
  t.entries.emplace(s, v);
  const auto r = query(t, m, s, 0.1);
  EXPECT_EQ(r.allowed, std::vector<MdpAction>{v.values[0].first});
  EXPECT_TRUE(r.fallback_used);
  EXPECT_EQ(query(t, m, s, 0.35).allowed.size(), 1u);
  EXPECT_FALSE(query(t, m, s, 0.35).fallback_used);
}

TEST(Conservative, ZeroWhenNothingReachable) {
  GridSetup g;
  const auto m = g.model();
  QuotientState s{{{24, 24, 0}, {0, 0, 0}}, 0};
  const auto v = conservative_valuation(m, s, Horizon{2});
  for (const auto& [a, p] : v.values) EXPECT_EQ(p, 0.0);
  EXPECT_EQ(conservative_allowed(v, 0.0).size(), v.values.size());
}

TEST(Conservative, MatchesMaxOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 25; ++trial) {
    const auto inst = oracle::random_instance(rng, 5, 1, 2);
    const auto m = testing_support::model_of(inst);
    const auto s = oracle::random_decision_state(inst, rng);
    const auto v = conservative_valuation(m, testing_support::to_quotient(s), Horizon{2});
    for (const auto& [e, p] : oracle::action_values(inst, s, 4, false)) EXPECT_NEAR(v.value(MdpAction::along(e)), p, 1e-9);
  }
}

TEST(Weakening, DecrementResetAndClamp) {
  WeakeningController c(0.9, 0.1, 0.55, 1);
  c.step(false);
  EXPECT_NEAR(c.current_delta(), 0.8, 1e-15);
  c.step(true);
  EXPECT_EQ(c.current_delta(), 0.9);
  for (int i = 0; i < 10; ++i) c.step(false);
  EXPECT_EQ(c.current_delta(), 0.55);
  EXPECT_NEAR(weakening_step(WeakeningController(0.9, 0.1, 0.0, 1), false).current_delta(), 0.8, 1e-15);
}

TEST(Weakening, WindowDelaysDecrement) {
  WeakeningController c(1.0, 0.25, 0.0, 3);
  c.step(false);
  c.step(false);
  EXPECT_EQ(c.current_delta(), 1.0);
  EXPECT_EQ(c.stalled(), 2);
  c.step(false);
  EXPECT_EQ(c.current_delta(), 0.75);
  EXPECT_EQ(c.stalled(), 0);
  EXPECT_THROW(WeakeningController(1.0, 0.0, 0.0, 1), InvalidParameter);
  EXPECT_THROW(WeakeningController(0.5, 0.1, 0.6, 1), InvalidParameter);
  EXPECT_THROW(WeakeningController(1.0, 0.1, 0.0, 0), InvalidParameter);
}

TEST(BuildShield, EmptyAndSingle) {
  GridSetup g;
  const auto m = g.model();
  const auto empty = build_shield(m, {}, Horizon{2});
  EXPECT_TRUE(empty.entries.empty());
  QuotientState s{{{12, 12, 0}, {17, 17, 0}}, 0};
  const auto t = build_shield(m, std::span(&s, 1), Horizon{2});
  ASSERT_EQ(t.entries.size(), 1u);
  EXPECT_EQ(*t.find(s), action_valuation(m, s, Horizon{2}));
}

TEST(BuildShield, IndependentOfWorkersAndBatching) {
  GridSetup g;
  const auto m = g.model();
  const auto states = enumerate_decision_states(g.arena, 1, CollisionMode::node_only);
  BuildOptions one;
  BuildOptions many;
  many.workers = 8;
  many.batch_size = 7;
  EXPECT_EQ(build_shield(m, states, Horizon{2}, one), build_shield(m, states, Horizon{2}, many));
}

TEST(BuildShield, BadStatesBecomeFailures) {
  GridSetup g;
  const auto m = g.model();
  const QuotientState bad[] = {{{{12, 12, 0}, {17, 17, 0}}, 1}, {{{12, 12, 0}}, 0}};
  const auto t = build_shield(m, bad, Horizon{1});
  EXPECT_TRUE(t.entries.empty());
  EXPECT_EQ(t.failures.size(), 2u);
}

TEST(BuildShield, PerAdversaryComposition) {
  GridSetup g;
  g.behaviors.push_back(g.behaviors.front());
  const auto m = g.model();
  QuotientState s{{{12, 12, 0}, {11, 11, 0}, {13, 13, 0}}, 0};
  BuildOptions opts;
  opts.composition = Composition::per_adversary;
  const auto t = build_shield(m, std::span(&s, 1), Horizon{1}, opts);
  EXPECT_TRUE(t.per_adversary);
  const std::size_t one[] = {1}, two[] = {2};
  const ActionValuation parts[] = {action_valuation(m.restricted(one), project(s, one), Horizon{1}),
                                   action_valuation(m.restricted(two), project(s, two), Horizon{1})};
  const auto expected = combine_adversary_valuations(parts);
  EXPECT_EQ(t.find(s)->values, expected.values);
}

TEST(EnumerateDecisionStates, CountsSafeCombinations) {
  const auto a = testing_support::cycle(3, 2);
  // The avatar stands on one of 3 nodes; an adversary takes any of the 6
  // positions except that node.
  EXPECT_EQ(all_positions(a).size(), 6u);
  EXPECT_EQ(enumerate_decision_states(a, 1, CollisionMode::node_only).size(), 3u * 5u);
  EXPECT_EQ(enumerate_decision_states(a, 2, CollisionMode::node_only).size(), 3u * 5u * 5u);
  EXPECT_EQ(enumerate_decision_states(a, 1, CollisionMode::node_only, [](NodeId v) { return v == 0; }).size(), 5u);
}
