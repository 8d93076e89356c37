#include <gtest/gtest.h>

#include <random>
#include <set>

#include "support.hpp"

using namespace probshield;

namespace {

// Always takes the first candidate.
class FirstChoice : public Controller {
 public:
  std::size_t choose(const EpisodeView&, std::span<const MdpAction>, std::mt19937_64&) override { return 0; }
};

// Uniformly random candidate.
class RandomChoice : public Controller {
 public:
  std::size_t choose(const EpisodeView&, std::span<const MdpAction> c, std::mt19937_64& rng) override {
    return std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng);
  }
};

// a <-> b with one dot on b; optionally a ghost parked on b by a self-loop.
Scenario two_cells(bool ghost) {
  Scenario s;
  s.kind = ScenarioKind::pacman;
  s.rewards = pacman_rewards();
  const auto a = s.arena.add_node("a");
  const auto b = s.arena.add_node("b");
  s.arena.add_edge(a, b, 1, true);
  s.arena.add_edge(b, a);
  s.arena.add_edge(b, b);
  s.agents.avatar_start = a;
  s.zones = default_zone_coloring(s.arena, 1);
  if (ghost) {
    s.agents.adversary_starts.push_back(b);
    AdversaryBehavior beh(s.arena, s.zones.color_count());
    for (ColorId c = 0; c < s.zones.color_count(); ++c) beh.set_distribution(b, c, {0.0, 1.0});
    s.behaviors.push_back(beh);
  }
  s.finalize();
  return s;
}

}  // namespace

TEST(Pacman, GridSizesAndStarts) {
  for (auto [w, h] : {std::pair{5, 5}, std::pair{9, 7}}) {
    const auto s = make_pacman(w, h, 1, 1);
    EXPECT_EQ(s.arena.node_count(), static_cast<std::size_t>(w * h));
    ASSERT_EQ(s.agents.adversary_starts.size(), 1u);
    EXPECT_NE(s.agents.avatar_start, s.agents.adversary_starts[0]);
    EXPECT_TRUE(validate_arena(s.arena, s.agents).ok());
    EXPECT_EQ(s.tokens.group_count(), s.arena.node_count() - 1);
  }
  EXPECT_THROW(make_pacman(2, 5, 1, 1), InvalidParameter);
}

TEST(Pacman, SameSeedSameScenario) {
  const auto a = make_pacman(5, 5, 2, 7);
  const auto b = make_pacman(5, 5, 2, 7);
  EXPECT_EQ(a.arena, b.arena);
  EXPECT_EQ(a.agents.adversary_starts, b.agents.adversary_starts);
  EXPECT_EQ(a.behaviors, b.behaviors);
}

TEST(Pacman, WithoutGhostsLongEpisodesWin) {
  const auto s = make_pacman(5, 5, 0, 3);
  RandomChoice agent;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 5; ++i) {
    const auto r = run_episode(s, agent, nullptr, 100000, rng);
    EXPECT_TRUE(r.won);
    EXPECT_FALSE(r.caught);
    EXPECT_EQ(r.tokens, 24u);
  }
}

TEST(Pacman, LearnedGhostsChase) {
  const auto s = make_pacman(7, 7, 1, 2);
  const auto& b = s.behaviors[0];
  // From a corner the ghost mostly heads north when the avatar is far north.
  const NodeId corner = 0, far = 42;
  const auto c = s.zones.assign(corner, far);
  const auto d = b.distribution(corner, c);
  double closer = 0.0;
  const auto out = s.arena.out_edges(corner);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (s.distances(s.arena.edge(out[k]).to, far) < s.distances(corner, far)) closer += d[k];
  }
  EXPECT_GT(closer, 0.5);
}

TEST(Episode, OneDotWin) {
  const auto s = two_cells(false);
  FirstChoice agent;
  std::mt19937_64 rng(0);
  const auto r = run_episode(s, agent, nullptr, 10, rng);
  EXPECT_TRUE(r.won);
  EXPECT_EQ(r.steps, 1u);
  EXPECT_EQ(r.score, 10.0 + 500.0 - static_cast<double>(r.steps));
}

TEST(Episode, WalkingIntoParkedGhostLoses) {
  const auto s = two_cells(true);
  FirstChoice agent;
  std::mt19937_64 rng(0);
  const auto r = run_episode(s, agent, nullptr, 10, rng);
  EXPECT_FALSE(r.won);
  EXPECT_TRUE(r.caught);
  EXPECT_EQ(r.score, -500.0 - static_cast<double>(r.steps) + 10.0 * static_cast<double>(r.tokens));
}

TEST(Episode, TimeoutWithoutTerminalReward) {
  const auto s = make_pacman(3, 3, 0, 1);
  FirstChoice agent;
  std::mt19937_64 rng(0);
  const auto r = run_episode(s, agent, nullptr, 0, rng);
  EXPECT_EQ(r.steps, 0u);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_FALSE(r.won);
}

TEST(Episode, ScoreDecomposesIntoRewards) {
  const auto s = make_pacman(5, 5, 1, 4);
  QLearningAgent agent(s.kind, {});
  std::mt19937_64 rng(9);
  for (int i = 0; i < 30; ++i) {
    const auto r = run_episode(s, agent, nullptr, 200, rng);
    const double expected = 10.0 * r.tokens - 1.0 * r.steps + (r.won ? 500.0 : 0.0) + (r.caught ? -500.0 : 0.0);
    EXPECT_EQ(r.score, expected);
    EXPECT_LE(r.steps, 200u);
    EXPECT_FALSE(r.won && r.caught);
  }
}

TEST(Episode, ShieldedRunsComply) {
  auto s = make_pacman(5, 5, 1, 5);
  const auto model = s.model();
  const auto states = enumerate_decision_states(s.arena, 1, s.agents.collision_mode);
  const auto table = build_shield(model, states, Horizon{4});
  ShieldSetup setup{&table, 1.0, nullptr, true};
  QLearningAgent agent(s.kind, {});
  std::mt19937_64 rng(3);
  std::size_t interventions = 0;
  for (int i = 0; i < 30; ++i) {
    const auto r = run_episode(s, agent, &setup, 300, rng);
    EXPECT_EQ(r.compliance_violations, 0u);
    EXPECT_EQ(r.fallbacks, 0u);
    interventions += r.shield_interventions;
  }
  EXPECT_GT(interventions, 0u);
}

TEST(Episode, TokensAreCollectedOnce) {
  // Avatar bounces between a and b; only the first arrival on b pays.
  auto s = two_cells(false);
  s.arena = Arena();
  const auto a = s.arena.add_node("a");
  const auto b = s.arena.add_node("b");
  const auto c = s.arena.add_node("c");
  s.arena.add_edge(a, b, 1, true);
  s.arena.add_edge(b, a);
  s.arena.add_edge(b, c, 1, true);
  s.arena.add_edge(c, b);
  s.zones = default_zone_coloring(s.arena, 1);
  s.finalize();
  FirstChoice agent;  // a->b, b->a, a->b, ... never reaches c
  std::mt19937_64 rng(0);
  const auto r = run_episode(s, agent, nullptr, 9, rng);
  EXPECT_EQ(r.tokens, 1u);
  EXPECT_EQ(r.score, 10.0 - 9.0);
}

TEST(Warehouse, Construction) {
  const auto s = make_warehouse(9, 3, 3, 2, 1);
  EXPECT_EQ(s.arena.node_count(), 9u);
  EXPECT_EQ(s.agents.adversary_starts.size(), 2u);
  EXPECT_TRUE(s.exit.has_value());
  EXPECT_EQ(s.tokens.group_count(), 2u);
  EXPECT_EQ(s.arena.max_distance(), 3);
  EXPECT_NE(s.agents.avatar_start, *s.exit);
  const auto near = s.crossings_nearest_exit(4);
  EXPECT_EQ(near.front(), *s.exit);
  EXPECT_EQ(near.size(), 4u);
  EXPECT_THROW(make_warehouse(1, 3, 1, 1, 1), InvalidParameter);
  EXPECT_THROW(make_warehouse(4, 3, 5, 1, 1), InvalidParameter);
}

TEST(Warehouse, AloneNeverCollides) {
  const auto s = make_warehouse(4, 2, 1, 1, 2);
  RandomChoice agent;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 10; ++i) {
    const auto r = run_episode(s, agent, nullptr, 2000, rng);
    EXPECT_FALSE(r.caught);
    EXPECT_TRUE(r.won);
    EXPECT_EQ(r.deliveries, 1u);
    EXPECT_EQ(r.score, 20.0 + 20.0 + 500.0 - static_cast<double>(r.steps));
  }
}

TEST(Features, PacmanAndWarehouseShapes) {
  const auto p = make_pacman(5, 5, 1, 1);
  EpisodeState ep;
  ep.state = initial_state(p.agents);
  ep.active.assign(p.tokens.group_count(), 1);
  const EpisodeView view(p, ep);
  const auto e = p.arena.out_edges(p.agents.avatar_start)[0];
  const auto f = extract_features(view, e);
  ASSERT_EQ(f.size(), 3u);
  EXPECT_EQ(f[0], 1.0);  // every neighbour carries a dot
  const auto w = make_warehouse(9, 2, 2, 1, 1);
  EpisodeState wep;
  wep.state = initial_state(w.agents);
  wep.active.assign(w.tokens.group_count(), 1);
  EXPECT_EQ(extract_features(EpisodeView(w, wep), w.arena.out_edges(w.agents.avatar_start)[0]).size(), 5u);
}

TEST(Training, EmptyAndDeterministic) {
  const auto s = make_pacman(5, 5, 1, 1);
  LearningConfig cfg;
  cfg.episodes = 0;
  const std::uint64_t seeds[] = {1, 2};
  const auto none = train(s, cfg, nullptr, seeds);
  ASSERT_EQ(none.size(), 2u);
  EXPECT_TRUE(none[0].episodes.empty());
  EXPECT_TRUE(none[0].windowed_averages.empty());

  cfg.episodes = 20;
  TrainingOptions opts;
  opts.simulation.max_steps = 200;
  const auto a = train(s, cfg, nullptr, seeds, opts);
  opts.workers = 2;
  const auto b = train(s, cfg, nullptr, seeds, opts);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(a[k].per_episode_scores, b[k].per_episode_scores);
    EXPECT_EQ(a[k].final_weights, b[k].final_weights);
    EXPECT_EQ(a[k].windowed_averages.size(), 2u);
  }
}

TEST(Training, WindowedAverages) {
  const std::vector<double> v{1, 2, 3, 4, 5};
  EXPECT_EQ(windowed_averages(v, 2), (std::vector<double>{1.5, 3.5, 5.0}));
  EXPECT_TRUE(windowed_averages(std::vector<double>{}, 10).empty());
}
