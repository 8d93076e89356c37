#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "support.hpp"

using namespace probshield;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stdout captured and stderr discarded.
Run cli(const std::string& args) {
  const std::string cmd = std::string(PROBSHIELD_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  std::array<char, 4096> buf;
  while (auto n = std::fread(buf.data(), 1, buf.size(), p)) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("probshield_cli_" + std::string(
                                           ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
  fs::path dir;
};

}  // namespace

TEST_F(Cli, GeneratesAValidPacmanArena) {
  const auto r = cli("gen pacman --size 9x7 --ghosts 1 --seed 1 -o " + path("a.arena") + " --behavior " +
                     path("a.behavior"));
  ASSERT_EQ(r.code, 0);
  const auto f = parse_arena(io::read_file(path("a.arena")));
  EXPECT_EQ(f.arena.node_count(), 63u);
  EXPECT_EQ(f.agents.adversary_starts.size(), 1u);
  EXPECT_NO_THROW(parse_behavior(f.arena, io::read_file(path("a.behavior"))));
}

TEST_F(Cli, ShieldThenTrainProducesMetrics) {
  ASSERT_EQ(cli("gen pacman --size 5x5 --ghosts 1 --seed 2 -o " + path("p.arena") + " --behavior " +
                path("p.behavior") + " --trace " + path("p.trace"))
                .code,
            0);
  ASSERT_EQ(cli("learn-behavior " + path("p.arena") + " " + path("p.trace") + " -o " + path("l.behavior")).code, 0);
  EXPECT_EQ(io::read_file(path("l.behavior")), io::read_file(path("p.behavior")));
  ASSERT_EQ(cli("build-shield " + path("p.arena") + " " + path("p.behavior") + " --horizon 3 -o " + path("p.shield"))
                .code,
            0);
  const auto r = cli("--json train " + path("p.arena") + " " + path("p.behavior") + " --shield " + path("p.shield") +
                     " --delta 1 --episodes 5 --seeds 1-2 --max-steps 100 -o " + path("m"));
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(path("m.seed1.csv")));
  EXPECT_TRUE(fs::exists(path("m.seed2.windows.csv")));
  const auto csv = io::read_file(path("m.seed1.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_NE(r.out.find("\"compliance_violations\":0"), std::string::npos) << r.out;
}

TEST_F(Cli, CheckNextToGhostShowsCertainCollision) {
  // Avatar on a, ghost on b: stepping onto b collides before the ghost moves.
  io::write_file(path("t.arena"),
                 "probshield-arena 1\n[nodes]\na\nb\nc\n[edges]\na b\nb a\na c\nc a\nb c\nc b\n[agents]\navatar a\n"
                 "adversary b\n");
  io::write_file(path("t.behavior"),
                 "probshield-behavior 1\nnear_radius 1\nfallback uniform_out_edges\nadversaries 1\nadversary 1\n");
  const auto r = cli("check " + path("t.arena") + " " + path("t.behavior") + " --state 'a,a,0|b,b,0|0' --horizon 1");
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("a>b 1\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("optimal "), std::string::npos);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("gen pacman --size 2x2").code, 1);
  io::write_file(path("bad.arena"), "probshield-arena 1\n[nodes]\na\n");
  EXPECT_EQ(cli("learn-behavior " + path("bad.arena") + " " + path("bad.arena") + " -o " + path("x")).code, 2);
  EXPECT_EQ(cli("learn-behavior " + path("missing") + " " + path("missing") + " -o " + path("x")).code, 2);
}

TEST_F(Cli, DeterministicOutput) {
  const auto a = cli("gen warehouse --crossings 9 --corridor 3 --units 3 --packages 2 --seed 4");
  const auto b = cli("gen warehouse --crossings 9 --corridor 3 --units 3 --packages 2 --seed 4");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_NO_THROW(parse_arena(a.out));
}
