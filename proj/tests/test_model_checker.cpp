#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "support.hpp"

using namespace probshield;
using testing_support::model_of;
using testing_support::to_quotient;

namespace {

// Hand-written MDP: from state 0 action 0 goes to the unsafe state 3 with
// probability 0.5 (else 2), action 1 goes to 1; state 1 reaches 3 with 0.2
// per step. 2 is a safe sink.
struct TinyMdp {
  using State = int;
  using Action = int;
  using StateHash = std::hash<int>;

  std::vector<int> enabled_actions(int s) const { return s == 0 ? std::vector<int>{0, 1} : std::vector<int>{0}; }
  std::vector<Outcome<int>> successors(int s, int a) const {
    switch (s) {
      case 0:
        return a == 0 ? std::vector<Outcome<int>>{{3, 0.5}, {2, 0.5}} : std::vector<Outcome<int>>{{1, 1.0}};
      case 1:
        return {{3, 0.2}, {1, 0.8}};
      default:
        return {{s, 1.0}};
    }
  }
  bool is_unsafe(int s) const { return s == 3; }
  bool is_decision(int s) const { return s == 0; }
  std::size_t turns_per_round() const { return 1; }
  static int canonical(int s) { return s; }
};

// Line a - b - c with unit edges both ways. The adversary steps towards the
// avatar as far as its zone tells them apart.
struct Line {
  oracle::Instance inst;
  Line() {
    auto& ar = inst.arena;
    ar.add_node("a");
    ar.add_node("b");
    ar.add_node("c");
    ar.add_edge(0, 1);
    ar.add_edge(1, 0);
    ar.add_edge(1, 2);
    ar.add_edge(2, 1);
    inst.zones = default_zone_coloring(ar, 1);
    const DistanceMatrix d(ar);
    AdversaryBehavior b(ar, inst.zones.color_count());
    for (NodeId v = 0; v < 3; ++v) {
      for (NodeId avatar = 0; avatar < 3; ++avatar) {
        const auto out = ar.out_edges(v);
        std::vector<double> p(out.size(), 0.0);
        std::size_t best = 0;
        for (std::size_t k = 0; k < out.size(); ++k) {
          if (d(ar.edge(out[k]).to, avatar) < d(ar.edge(out[best]).to, avatar)) best = k;
        }
        p[best] = 1.0;
        b.set_distribution(v, inst.zones.assign(v, avatar), p);
      }
    }
    inst.behaviors.push_back(b);
  }
};

oracle::State st(std::vector<oracle::Pos> pos, std::size_t turn = 0) { return {std::move(pos), turn}; }

}  // namespace

static_assert(FiniteModel<TinyMdp>);
static_assert(FiniteModel<QuotientMdp>);

TEST(Horizon, Conversions) {
  EXPECT_EQ((Horizon{3, HorizonUnit::rounds}).transitions(2), 6);
  EXPECT_EQ((Horizon{5, HorizonUnit::transitions}).transitions(2), 5);
  EXPECT_EQ((Horizon{5, HorizonUnit::transitions}).rounds(2), 3);
  EXPECT_THROW((Horizon{0, HorizonUnit::rounds}).transitions(2), InvalidParameter);
}

TEST(ReachProb, HandBuiltMdp) {
  const TinyMdp m;
  const Horizon h{3, HorizonUnit::transitions};
  // Max: action 0 gives 0.5; action 1 gives 1 - 0.8^2 = 0.36.
  EXPECT_NEAR(reach_prob(m, 0, h, Direction::max).root_value, 0.5, 1e-15);
  EXPECT_NEAR(reach_prob(m, 0, h, Direction::min).root_value, 0.36, 1e-15);
  EXPECT_NEAR(reach_prob(m, 1, h, Direction::min).root_value, 1 - 0.8 * 0.8 * 0.8, 1e-15);
  EXPECT_EQ(reach_prob(m, 3, h, Direction::min).root_value, 1.0);
  const auto v = action_valuation(m, 0, h);
  EXPECT_NEAR(v.value(0), 0.5, 1e-15);
  EXPECT_NEAR(v.value(1), 0.36, 1e-15);
  EXPECT_NEAR(v.optimal, 0.36, 1e-15);
}

TEST(ReachProb, UnsafeRootIsOne) {
  Line l;
  const auto m = model_of(l.inst);
  for (int h = 1; h <= 3; ++h) {
    EXPECT_EQ(reach_prob(m, to_quotient(st({{1, 1, 0}, {1, 1, 0}})), Horizon{h}, Direction::min).root_value, 1.0);
  }
}

TEST(ReachProb, NoReachableCollisionIsZero) {
  Line l;
  const auto m = model_of(l.inst);
  // Avatar at a, adversary at c: within two transitions of one round they cannot meet.
  const auto s = to_quotient(st({{0, 0, 0}, {2, 2, 0}}));
  EXPECT_EQ(reach_prob(m, s, Horizon{1, HorizonUnit::transitions}, Direction::max).root_value, 0.0);
}

TEST(ReachProb, ThreeNodeLineMatchesEnumeration) {
  Line l;
  const auto m = model_of(l.inst);
  const auto root = st({{0, 0, 0}, {2, 2, 0}});
  for (auto dir : {Direction::min, Direction::max}) {
    const bool minimize = dir == Direction::min;
    const double expected = oracle::value(l.inst, root, 4, minimize);
    EXPECT_NEAR(reach_prob(m, to_quotient(root), Horizon{2}, dir).root_value, expected, 1e-12);
  }
  // The avatar is forced onto b and the adversary follows it there.
  EXPECT_EQ(oracle::value(l.inst, root, 4, true), 1.0);
}

TEST(ActionValuation, MatchesOracleOnLine) {
  Line l;
  const auto m = model_of(l.inst);
  const auto root = st({{1, 1, 0}, {2, 2, 0}});
  const auto v = action_valuation(m, to_quotient(root), Horizon{2});
  for (const auto& [e, p] : oracle::action_values(l.inst, root, 4)) {
    EXPECT_NEAR(v.value(MdpAction::along(e)), p, 1e-12);
  }
}

TEST(ActionValuation, SteppingOntoStationaryAdversaryIsCertain) {
  // The collision happens on arrival, before the adversary moves.
  Line l;
  const auto m = model_of(l.inst);
  const auto s = to_quotient(st({{1, 1, 0}, {0, 0, 0}}));
  const auto v = action_valuation(m, s, Horizon{1});
  EXPECT_EQ(v.value(MdpAction::along(*l.inst.arena.find_edge(1, 0))), 1.0);
}

TEST(ActionValuation, SafeEverywhereGivesZeros) {
  Line l;
  l.inst.behaviors.clear();
  const auto m = model_of(l.inst);
  const auto v = action_valuation(m, to_quotient(st({{1, 1, 0}})), Horizon{3});
  for (const auto& [a, p] : v.values) EXPECT_EQ(p, 0.0);
  EXPECT_EQ(v.optimal, 0.0);
}

TEST(ActionValuation, NonDecisionStateIsRejected) {
  Line l;
  const auto m = model_of(l.inst);
  EXPECT_THROW(action_valuation(m, to_quotient(st({{0, 0, 0}, {2, 2, 0}}, 1)), Horizon{1}), IllegalState);
}

TEST(ModelChecker, AgreesWithOracleOnRandomInstances) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    const auto inst = oracle::random_instance(rng, 4, trial % 2 + 1, 2);
    const auto m = model_of(inst);
    const auto s = oracle::random_decision_state(inst, rng);
    const int rounds = 1 + trial % 2;
    const int k = rounds * static_cast<int>(inst.agents());
    for (auto dir : {Direction::min, Direction::max}) {
      EXPECT_NEAR(reach_prob(m, to_quotient(s), Horizon{rounds}, dir).root_value,
                  oracle::value(inst, s, k, dir == Direction::min), 1e-9);
    }
    const auto v = action_valuation(m, to_quotient(s), Horizon{rounds});
    for (const auto& [e, p] : oracle::action_values(inst, s, k)) EXPECT_NEAR(v.value(MdpAction::along(e)), p, 1e-9);
  }
}

TEST(ModelChecker, BatchEqualsIndividual) {
  std::mt19937_64 rng(4);
  const auto inst = oracle::random_instance(rng, 6, 1, 2);
  const auto m = model_of(inst);
  std::vector<QuotientState> states;
  for (int i = 0; i < 10; ++i) states.push_back(QuotientMdp::canonical(to_quotient(oracle::random_decision_state(inst, rng))));
  const auto batch = action_valuations_batch(m, std::span<const QuotientState>(states), Horizon{2});
  for (std::size_t i = 0; i < states.size(); ++i) EXPECT_EQ(batch[i], action_valuation(m, states[i], Horizon{2}));
}

TEST(ModelChecker, FilterRestrictsSubsequentChoices) {
  const TinyMdp m;
  // Forbidding action 0 leaves only the slow leak.
  ActionFilter<int, int> only1 = [](const int& s, const int& a, int) { return s != 0 || a == 1; };
  EXPECT_NEAR(reach_prob(m, 0, Horizon{3, HorizonUnit::transitions}, Direction::max, only1).root_value, 0.36, 1e-15);
}

TEST(ModelChecker, FragmentDumpListsTransitionsAndValues) {
  const TinyMdp m;
  Fragment<TinyMdp> f(m);
  f.add_root(0, 2);
  f.expand();
  const auto values = f.solve(Direction::min);
  std::ostringstream out;
  write_fragment(out, f, values, [](int s) { return std::to_string(s); }, [](int a) { return std::to_string(a); });
  EXPECT_NE(out.str().find("0 0 0.5 3\n"), std::string::npos);
  EXPECT_NE(out.str().find("values\n"), std::string::npos);
}
