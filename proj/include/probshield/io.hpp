#pragma once

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "probshield/arena.hpp"
#include "probshield/behavior.hpp"
#include "probshield/error.hpp"
#include "probshield/quotient_mdp.hpp"
#include "probshield/rl_agent.hpp"
#include "probshield/scenarios.hpp"
#include "probshield/shield.hpp"
#include "probshield/zones.hpp"

namespace probshield {

// All formats are line oriented: '#' starts a comment, fields are separated by
// blanks, and the first non-comment line is a "probshield-<kind> <version>"
// header.

namespace io {

struct Token {
  std::string_view text;
  std::size_t column = 1;
};

struct Line {
  std::size_t number = 0;
  std::vector<Token> tokens;

  const Token& at(std::size_t i) const { return tokens.at(i); }
  std::size_t size() const noexcept { return tokens.size(); }
  [[noreturn]] void fail(std::size_t token, const std::string& what) const {
    throw ParseError(number, token < tokens.size() ? tokens[token].column : 1, what);
  }
};

/// Splits text into non-empty lines of tokens; views point into `text`.
inline std::vector<Line> tokenize(std::string_view text) {
  std::vector<Line> lines;
  std::size_t number = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++number;
    auto raw = text.substr(start, end - start);
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    Line line{number, {}};
    std::size_t i = 0;
    while (i < raw.size()) {
      while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t' || raw[i] == '\r')) ++i;
      const auto begin = i;
      while (i < raw.size() && raw[i] != ' ' && raw[i] != '\t' && raw[i] != '\r') ++i;
      if (i > begin) line.tokens.push_back({raw.substr(begin, i - begin), begin + 1});
    }
    if (!line.tokens.empty()) lines.push_back(std::move(line));
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

inline long long to_int(const Line& line, std::size_t i, const char* what) {
  long long v = 0;
  if (i >= line.size()) line.fail(i, std::string("expected ") + what);
  if (!detail::parse_int(line.at(i).text, v)) line.fail(i, std::string("expected ") + what + " (integer)");
  return v;
}

inline double to_real(const Line& line, std::size_t i, const char* what) {
  if (i >= line.size()) line.fail(i, std::string("expected ") + what);
  const auto t = line.at(i).text;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) {
    line.fail(i, std::string("expected ") + what + " (finite number)");
  }
  return v;
}

inline void expect_arity(const Line& line, std::size_t lo, std::size_t hi, const char* form) {
  if (line.size() < lo || line.size() > hi) line.fail(std::min(line.size(), hi), std::string("expected ") + form);
}

inline void expect_header(const std::vector<Line>& lines, std::string_view kind, long long version = 1) {
  if (lines.empty()) throw ParseError(1, 1, "empty input; expected 'probshield-" + std::string(kind) + "' header");
  const auto& h = lines.front();
  if (h.at(0).text != "probshield-" + std::string(kind)) h.fail(0, "expected 'probshield-" + std::string(kind) + "'");
  expect_arity(h, 2, 2, "format version");
  if (to_int(h, 1, "format version") != version) h.fail(1, "unsupported format version");
}

/// %.17g, enough to round-trip any double.
inline std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << content;
  if (!out) throw Error("failed writing '" + path + "'");
}

inline bool valid_name(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c == ',' || c == '|' || c == '>' || c == '#' || c == ' ' || c == '\t') return false;
  }
  return s != "alpha0";
}

}  // namespace io

// ---------------------------------------------------------------------------
// Arena files

/// Everything an arena file describes.
struct ArenaFile {
  Arena arena;
  AgentConfig agents;
  RewardSpec rewards;
  ScenarioKind kind = ScenarioKind::pacman;
  std::optional<NodeId> exit;
  friend bool operator==(const ArenaFile&, const ArenaFile&) = default;
};

/// Parses
///
///     probshield-arena 1
///     [nodes]      name [x y]
///     [edges]      from to [distance [token]]
///     [agents]     avatar name | adversary name
///     [unsafe]     collision node_only|node_and_edge_swap
///     [rewards]    kind K | token R | step R | win R | lose R | deliver R | exit name
///
/// and validates the result. [unsafe] and [rewards] may be omitted; they
/// default to node_only collisions and the PAC-MAN rewards.
inline ArenaFile parse_arena(std::string_view text) {
  const auto lines = io::tokenize(text);
  io::expect_header(lines, "arena");
  const std::set<std::string_view> known = {"nodes", "edges", "agents", "unsafe", "rewards"};
  std::set<std::string_view> seen;
  ArenaFile f;
  bool have_avatar = false;
  RewardSpec r;
  std::set<std::string_view> reward_keys;
  std::string_view section;

  auto node = [&](const io::Line& line, std::size_t i) {
    if (i >= line.size()) line.fail(i, "expected node name");
    auto v = f.arena.find(line.at(i).text);
    if (!v) line.fail(i, "unknown node '" + std::string(line.at(i).text) + "'");
    return *v;
  };

  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& line = lines[k];
    const auto head = line.at(0).text;
    if (head.size() >= 2 && head.front() == '[' && head.back() == ']') {
      io::expect_arity(line, 1, 1, "section header alone on its line");
      section = head.substr(1, head.size() - 2);
      if (!known.count(section)) line.fail(0, "unknown section '" + std::string(section) + "'");
      if (!seen.insert(section).second) line.fail(0, "duplicate section '" + std::string(section) + "'");
      continue;
    }
    if (section.empty()) line.fail(0, "expected a section header such as [nodes]");

    if (section == "nodes") {
      if (line.size() != 1 && line.size() != 3) line.fail(std::min<std::size_t>(line.size(), 3), "expected 'name [x y]'");
      if (!io::valid_name(head)) line.fail(0, "node names must not contain , | > # or blanks");
      if (f.arena.find(head)) line.fail(0, "duplicate node '" + std::string(head) + "'");
      std::optional<GridCoord> c;
      if (line.size() == 3) {
        c = GridCoord{static_cast<int>(io::to_int(line, 1, "x")), static_cast<int>(io::to_int(line, 2, "y"))};
      }
      f.arena.add_node(std::string(head), c);
    } else if (section == "edges") {
      io::expect_arity(line, 2, 4, "'from to [distance [token]]'");
      const auto from = node(line, 0);
      const auto to = node(line, 1);
      int d = 1;
      if (line.size() >= 3) {
        const auto v = io::to_int(line, 2, "distance");
        if (v < 1) line.fail(2, "distance must be >= 1");
        d = static_cast<int>(v);
      }
      std::optional<bool> token;
      if (line.size() == 4) {
        const auto t = io::to_int(line, 3, "token");
        if (t != 0 && t != 1) line.fail(3, "token must be 0 or 1");
        token = t == 1;
      }
      if (f.arena.find_edge(from, to)) line.fail(0, "duplicate edge");
      f.arena.add_edge(from, to, d, token);
    } else if (section == "agents") {
      io::expect_arity(line, 2, 2, "'avatar name' or 'adversary name'");
      if (head == "avatar") {
        if (have_avatar) line.fail(0, "avatar given twice");
        f.agents.avatar_start = node(line, 1);
        have_avatar = true;
      } else if (head == "adversary") {
        f.agents.adversary_starts.push_back(node(line, 1));
      } else {
        line.fail(0, "expected 'avatar' or 'adversary'");
      }
    } else if (section == "unsafe") {
      io::expect_arity(line, 2, 2, "'collision node_only|node_and_edge_swap'");
      if (head != "collision") line.fail(0, "expected 'collision'");
      const auto m = line.at(1).text;
      if (m == "node_only") {
        f.agents.collision_mode = CollisionMode::node_only;
      } else if (m == "node_and_edge_swap") {
        f.agents.collision_mode = CollisionMode::node_and_edge_swap;
      } else {
        line.fail(1, "expected node_only or node_and_edge_swap");
      }
    } else if (section == "rewards") {
      io::expect_arity(line, 2, 2, "'key value'");
      if (!reward_keys.insert(head).second) line.fail(0, "duplicate key '" + std::string(head) + "'");
      if (head == "kind") {
        const auto k2 = line.at(1).text;
        if (k2 == "pacman") {
          f.kind = ScenarioKind::pacman;
        } else if (k2 == "warehouse") {
          f.kind = ScenarioKind::warehouse;
        } else {
          line.fail(1, "expected pacman or warehouse");
        }
      } else if (head == "token") {
        r.token_reward = io::to_real(line, 1, "reward");
      } else if (head == "step") {
        r.step_penalty = io::to_real(line, 1, "reward");
      } else if (head == "win") {
        r.win_bonus = io::to_real(line, 1, "reward");
      } else if (head == "lose") {
        r.lose_penalty = io::to_real(line, 1, "reward");
      } else if (head == "deliver") {
        r.deliver_reward = io::to_real(line, 1, "reward");
      } else if (head == "exit") {
        f.exit = node(line, 1);
      } else {
        line.fail(0, "expected kind, token, step, win, lose, deliver or exit");
      }
    }
  }

  for (std::string_view name : {"nodes", "edges", "agents"}) {
    if (!seen.count(name)) throw SemanticError("missing section [" + std::string(name) + "]");
  }
  if (!have_avatar) throw SemanticError("section [agents] names no avatar");
  // Unspecified reward keys take the defaults of the scenario kind.
  const RewardSpec base = f.kind == ScenarioKind::pacman ? pacman_rewards() : warehouse_rewards();
  f.rewards = base;
  if (reward_keys.count("token")) f.rewards.token_reward = r.token_reward;
  if (reward_keys.count("step")) f.rewards.step_penalty = r.step_penalty;
  if (reward_keys.count("win")) f.rewards.win_bonus = r.win_bonus;
  if (reward_keys.count("lose")) f.rewards.lose_penalty = r.lose_penalty;
  if (reward_keys.count("deliver")) f.rewards.deliver_reward = r.deliver_reward;
  if (f.kind == ScenarioKind::warehouse && !f.exit) throw SemanticError("warehouse arenas need 'exit' in [rewards]");

  const auto report = validate_arena(f.arena, f.agents);
  if (!report.ok()) {
    std::string msg = "invalid arena:";
    for (const auto& p : report.problems) msg += "\n  " + p;
    throw SemanticError(msg);
  }
  return f;
}

/// Canonical text form; parse_arena(serialize_arena(f)) == f.
inline std::string serialize_arena(const ArenaFile& f) {
  const auto& a = f.arena;
  std::ostringstream out;
  out << "probshield-arena 1\n[nodes]\n";
  for (NodeId v = 0; v < a.node_count(); ++v) {
    out << a.name(v);
    if (auto c = a.coord(v)) out << ' ' << c->x << ' ' << c->y;
    out << '\n';
  }
  out << "[edges]\n";
  for (const auto& e : a.edges()) {
    out << a.name(e.from) << ' ' << a.name(e.to);
    if (e.distance != 1 || e.token) out << ' ' << e.distance;
    if (e.token) out << ' ' << (*e.token ? 1 : 0);
    out << '\n';
  }
  out << "[agents]\navatar " << a.name(f.agents.avatar_start) << '\n';
  for (auto v : f.agents.adversary_starts) out << "adversary " << a.name(v) << '\n';
  out << "[unsafe]\ncollision "
      << (f.agents.collision_mode == CollisionMode::node_only ? "node_only" : "node_and_edge_swap") << '\n';
  out << "[rewards]\nkind " << (f.kind == ScenarioKind::pacman ? "pacman" : "warehouse") << '\n';
  out << "token " << io::real(f.rewards.token_reward) << '\n';
  out << "step " << io::real(f.rewards.step_penalty) << '\n';
  out << "win " << io::real(f.rewards.win_bonus) << '\n';
  out << "lose " << io::real(f.rewards.lose_penalty) << '\n';
  if (f.rewards.deliver_reward) out << "deliver " << io::real(*f.rewards.deliver_reward) << '\n';
  if (f.exit) out << "exit " << a.name(*f.exit) << '\n';
  return out.str();
}

inline ArenaFile arena_file_of(const Scenario& s) {
  return {s.arena, s.agents, s.rewards, s.kind, s.exit};
}

// ---------------------------------------------------------------------------
// Behavior files

struct BehaviorFile {
  int near_radius = 3;
  FallbackPolicy fallback = FallbackPolicy::uniform_out_edges;
  std::vector<AdversaryBehavior> behaviors;
  friend bool operator==(const BehaviorFile&, const BehaviorFile&) = default;
};

/// Only observed contexts are stored; the rest follow the fallback policy.
///
///     probshield-behavior 1
///     near_radius 3
///     fallback uniform_out_edges|error
///     adversaries M
///     adversary i
///     v color edge_to prob      (one line per out-edge of v)
inline std::string serialize_behavior(const Arena& arena, const ZoneColoring& zones, const BehaviorFile& f) {
  std::ostringstream out;
  out << "probshield-behavior 1\nnear_radius " << f.near_radius << "\nfallback "
      << (f.fallback == FallbackPolicy::error ? "error" : "uniform_out_edges") << "\nadversaries "
      << f.behaviors.size() << '\n';
  for (std::size_t i = 0; i < f.behaviors.size(); ++i) {
    out << "adversary " << i + 1 << '\n';
    const auto& b = f.behaviors[i];
    for (NodeId v = 0; v < arena.node_count(); ++v) {
      const auto edges = arena.out_edges(v);
      for (ColorId c = 0; c < zones.color_count(); ++c) {
        if (!b.seen(v, c)) continue;
        const auto probs = b.distribution(v, c);
        for (std::size_t k = 0; k < edges.size(); ++k) {
          out << arena.name(v) << ' ' << zones.color_name(c) << ' ' << arena.name(arena.edge(edges[k]).to) << ' '
              << io::real(probs[k]) << '\n';
        }
      }
    }
  }
  return out.str();
}

/// The zone coloring is rebuilt from the arena with the recorded radius.
/// Out-edges missing from a listed context get probability 0.
inline BehaviorFile parse_behavior(const Arena& arena, std::string_view text) {
  const auto lines = io::tokenize(text);
  io::expect_header(lines, "behavior");
  BehaviorFile f;
  std::size_t k = 1;
  auto keyed = [&](std::string_view key) -> const io::Line& {
    if (k >= lines.size()) throw ParseError(lines.back().number + 1, 1, "expected '" + std::string(key) + "'");
    const auto& line = lines[k++];
    if (line.at(0).text != key) line.fail(0, "expected '" + std::string(key) + "'");
    io::expect_arity(line, 2, 2, "one value");
    return line;
  };
  const auto& radius = keyed("near_radius");
  f.near_radius = static_cast<int>(io::to_int(radius, 1, "radius"));
  if (f.near_radius < 1) radius.fail(1, "radius must be >= 1");
  const auto& fb = keyed("fallback");
  if (fb.at(1).text == "error") {
    f.fallback = FallbackPolicy::error;
  } else if (fb.at(1).text == "uniform_out_edges") {
    f.fallback = FallbackPolicy::uniform_out_edges;
  } else {
    fb.fail(1, "expected uniform_out_edges or error");
  }
  const auto& count_line = keyed("adversaries");
  const auto count = io::to_int(count_line, 1, "adversary count");
  if (count < 0) count_line.fail(1, "count must be >= 0");
  const auto zones = default_zone_coloring(arena, f.near_radius);

  for (long long i = 1; i <= count; ++i) {
    const auto& h = keyed("adversary");
    if (io::to_int(h, 1, "adversary index") != i) h.fail(1, "adversaries must be listed in order 1..M");
    AdversaryBehavior b(arena, zones.color_count(), f.fallback);
    // (v, c) -> probabilities in out-edge order, plus the line that opened it.
    std::map<std::pair<NodeId, ColorId>, std::pair<std::vector<double>, const io::Line*>> contexts;
    while (k < lines.size() && lines[k].at(0).text != "adversary") {
      const auto& line = lines[k++];
      io::expect_arity(line, 4, 4, "'v color edge_to prob'");
      auto v = arena.find(line.at(0).text);
      if (!v) line.fail(0, "unknown node");
      auto c = zones.find_color(line.at(1).text);
      if (!c) line.fail(1, "unknown color");
      auto to = arena.find(line.at(2).text);
      if (!to) line.fail(2, "unknown node");
      const auto e = arena.find_edge(*v, *to);
      if (!e) line.fail(2, "no such edge");
      const auto edges = arena.out_edges(*v);
      const auto slot = static_cast<std::size_t>(std::find(edges.begin(), edges.end(), *e) - edges.begin());
      auto [it, fresh] = contexts.try_emplace({*v, *c}, std::vector<double>(edges.size(), -1.0), &line);
      auto& probs = it->second.first;
      if (probs[slot] >= 0.0) line.fail(2, "edge listed twice for this context");
      probs[slot] = io::to_real(line, 3, "probability");
    }
    for (auto& [key, entry] : contexts) {
      for (auto& p : entry.first) p = std::max(p, 0.0);
      try {
        b.set_distribution(key.first, key.second, entry.first);
      } catch (const InvalidParameter& e) {
        entry.second->fail(3, e.what());
      }
    }
    f.behaviors.push_back(std::move(b));
  }
  if (k < lines.size()) lines[k].fail(0, "unexpected content after the last adversary");
  return f;
}

/// Scenario assembled from an arena file and learned behaviors.
inline Scenario scenario_from(const ArenaFile& a, const BehaviorFile& b) {
  if (b.behaviors.size() != a.agents.adversary_starts.size()) {
    throw SemanticError("behavior file describes " + std::to_string(b.behaviors.size()) + " adversaries, arena has " +
                        std::to_string(a.agents.adversary_starts.size()));
  }
  Scenario s;
  s.kind = a.kind;
  s.arena = a.arena;
  s.agents = a.agents;
  s.rewards = a.rewards;
  s.exit = a.exit;
  s.zones = default_zone_coloring(s.arena, b.near_radius);
  s.behaviors = b.behaviors;
  s.finalize();
  return s;
}

// ---------------------------------------------------------------------------
// Observation traces

///     probshield-trace 1
///     adversary from to avatar
inline std::string serialize_trace(const Arena& arena, const ObservationTrace& t) {
  std::ostringstream out;
  out << "probshield-trace 1\n";
  for (const auto& r : t.records) {
    out << r.adversary << ' ' << arena.name(r.from) << ' ' << arena.name(r.to) << ' ' << arena.name(r.avatar) << '\n';
  }
  return out.str();
}

inline ObservationTrace parse_trace(const Arena& arena, std::string_view text) {
  const auto lines = io::tokenize(text);
  io::expect_header(lines, "trace");
  ObservationTrace t;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& line = lines[k];
    io::expect_arity(line, 4, 4, "'adversary from to avatar'");
    const auto id = io::to_int(line, 0, "adversary id");
    if (id < 1) line.fail(0, "adversary ids start at 1");
    NodeId nodes[3];
    for (std::size_t i = 0; i < 3; ++i) {
      auto v = arena.find(line.at(i + 1).text);
      if (!v) line.fail(i + 1, "unknown node '" + std::string(line.at(i + 1).text) + "'");
      nodes[i] = *v;
    }
    if (!arena.find_edge(nodes[0], nodes[1])) line.fail(1, "no such edge");
    t.records.push_back({static_cast<std::size_t>(id), nodes[0], nodes[1], nodes[2]});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Shield tables

///     probshield-table 1
///     horizon H rounds|transitions
///     mode delta|conservative
///     per_adversary 0|1
///     filter TEXT
///     entries N
///     state KEY OPTIMAL K      followed by K lines: ACTION VALUE
///     failures F               followed by F lines: KEY MESSAGE...
inline std::string serialize_shield(const Arena& arena, const ShieldTable& t) {
  std::ostringstream out;
  out << "probshield-table 1\nhorizon " << t.horizon.steps << ' '
      << (t.horizon.unit == HorizonUnit::rounds ? "rounds" : "transitions") << "\nmode "
      << (t.mode == ShieldMode::delta ? "delta" : "conservative") << "\nper_adversary " << (t.per_adversary ? 1 : 0)
      << "\nfilter " << t.decision_state_filter << "\nentries " << t.entries.size() << '\n';
  for (const auto& [s, v] : t.entries) {
    out << "state " << format_state_key(arena, s) << ' ' << io::real(v.optimal) << ' ' << v.values.size() << '\n';
    for (const auto& [a, x] : v.values) out << format_action(arena, a) << ' ' << io::real(x) << '\n';
  }
  out << "failures " << t.failures.size() << '\n';
  for (const auto& [s, msg] : t.failures) {
    std::string flat = msg;
    for (char& c : flat) {
      if (c == '\n' || c == '#') c = ' ';
    }
    out << format_state_key(arena, s) << ' ' << flat << '\n';
  }
  return out.str();
}

inline ShieldTable parse_shield(const Arena& arena, std::string_view text) {
  const auto lines = io::tokenize(text);
  io::expect_header(lines, "table");
  ShieldTable t;
  std::size_t k = 1;
  auto next = [&](std::string_view key) -> const io::Line& {
    if (k >= lines.size()) throw ParseError(lines.back().number + 1, 1, "expected '" + std::string(key) + "'");
    const auto& line = lines[k++];
    if (line.at(0).text != key) line.fail(0, "expected '" + std::string(key) + "'");
    return line;
  };
  const auto& h = next("horizon");
  io::expect_arity(h, 3, 3, "'horizon H rounds|transitions'");
  t.horizon.steps = static_cast<int>(io::to_int(h, 1, "horizon"));
  if (t.horizon.steps < 1) h.fail(1, "horizon must be >= 1");
  if (h.at(2).text == "rounds") {
    t.horizon.unit = HorizonUnit::rounds;
  } else if (h.at(2).text == "transitions") {
    t.horizon.unit = HorizonUnit::transitions;
  } else {
    h.fail(2, "expected rounds or transitions");
  }
  const auto& m = next("mode");
  io::expect_arity(m, 2, 2, "'mode delta|conservative'");
  if (m.at(1).text == "delta") {
    t.mode = ShieldMode::delta;
  } else if (m.at(1).text == "conservative") {
    t.mode = ShieldMode::conservative;
  } else {
    m.fail(1, "expected delta or conservative");
  }
  const auto& pa = next("per_adversary");
  io::expect_arity(pa, 2, 2, "'per_adversary 0|1'");
  const auto flag = io::to_int(pa, 1, "flag");
  if (flag != 0 && flag != 1) pa.fail(1, "expected 0 or 1");
  t.per_adversary = flag == 1;
  const auto& fl = next("filter");
  io::expect_arity(fl, 2, 2, "'filter TEXT'");
  t.decision_state_filter = std::string(fl.at(1).text);

  const auto& en = next("entries");
  io::expect_arity(en, 2, 2, "'entries N'");
  const auto n = io::to_int(en, 1, "entry count");
  if (n < 0) en.fail(1, "count must be >= 0");
  for (long long i = 0; i < n; ++i) {
    const auto& sl = next("state");
    io::expect_arity(sl, 4, 4, "'state KEY OPTIMAL K'");
    ActionValuation v;
    try {
      v.state = parse_state_key(arena, sl.at(1).text);
    } catch (const ParseError& e) {
      sl.fail(1, e.what());
    }
    v.optimal = io::to_real(sl, 2, "optimal value");
    const auto actions = io::to_int(sl, 3, "action count");
    if (actions < 1) sl.fail(3, "a valuation needs at least one action");
    for (long long a = 0; a < actions; ++a) {
      if (k >= lines.size()) throw ParseError(sl.number, 1, "truncated valuation");
      const auto& al = lines[k++];
      io::expect_arity(al, 2, 2, "'ACTION VALUE'");
      MdpAction act;
      try {
        act = parse_action(arena, al.at(0).text);
      } catch (const ParseError& e) {
        al.fail(0, e.what());
      }
      const double x = io::to_real(al, 1, "value");
      if (x < 0.0 || x > 1.0) al.fail(1, "values are probabilities");
      v.values.emplace_back(act, x);
    }
    auto key = v.state;
    if (!t.entries.emplace(std::move(key), std::move(v)).second) sl.fail(1, "state listed twice");
  }
  const auto& fa = next("failures");
  io::expect_arity(fa, 2, 2, "'failures F'");
  const auto nf = io::to_int(fa, 1, "failure count");
  if (nf < 0) fa.fail(1, "count must be >= 0");
  for (long long i = 0; i < nf; ++i) {
    if (k >= lines.size()) throw ParseError(fa.number, 1, "truncated failure list");
    const auto& line = lines[k++];
    QuotientState s;
    try {
      s = parse_state_key(arena, line.at(0).text);
    } catch (const ParseError& e) {
      line.fail(0, e.what());
    }
    std::string msg;
    for (std::size_t w = 1; w < line.size(); ++w) {
      if (w > 1) msg += ' ';
      msg += line.at(w).text;
    }
    t.failures.emplace_back(std::move(s), std::move(msg));
  }
  if (k < lines.size()) lines[k].fail(0, "unexpected content after the failure list");
  return t;
}

// ---------------------------------------------------------------------------
// Weight checkpoints and metrics

///     probshield-weights 1
///     extractor pacman|warehouse
///     one weight per line
struct WeightsFile {
  ScenarioKind extractor = ScenarioKind::pacman;
  QWeights weights;
  friend bool operator==(const WeightsFile&, const WeightsFile&) = default;
};

inline std::string serialize_weights(const WeightsFile& f) {
  std::string out = "probshield-weights 1\nextractor ";
  out += f.extractor == ScenarioKind::pacman ? "pacman\n" : "warehouse\n";
  for (double w : f.weights.weights) out += io::real(w) + "\n";
  return out;
}

inline WeightsFile parse_weights(std::string_view text) {
  const auto lines = io::tokenize(text);
  io::expect_header(lines, "weights");
  if (lines.size() < 2 || lines[1].at(0).text != "extractor") {
    throw ParseError(lines.size() < 2 ? lines[0].number + 1 : lines[1].number, 1, "expected 'extractor'");
  }
  const auto& ex = lines[1];
  io::expect_arity(ex, 2, 2, "'extractor pacman|warehouse'");
  WeightsFile f;
  if (ex.at(1).text == "pacman") {
    f.extractor = ScenarioKind::pacman;
  } else if (ex.at(1).text == "warehouse") {
    f.extractor = ScenarioKind::warehouse;
  } else {
    ex.fail(1, "expected pacman or warehouse");
  }
  for (std::size_t k = 2; k < lines.size(); ++k) {
    io::expect_arity(lines[k], 1, 1, "one weight per line");
    f.weights.weights.push_back(io::to_real(lines[k], 0, "weight"));
  }
  if (f.weights.size() != feature_count(f.extractor)) {
    throw SemanticError("checkpoint has " + std::to_string(f.weights.size()) + " weights, extractor expects " +
                        std::to_string(feature_count(f.extractor)));
  }
  return f;
}

/// episode,score,won,interventions,fallbacks (episodes numbered from 1).
inline std::string metrics_csv(const TrainingMetrics& m) {
  std::ostringstream out;
  out << "episode,score,won,interventions,fallbacks\n";
  for (std::size_t i = 0; i < m.episodes.size(); ++i) {
    const auto& e = m.episodes[i];
    out << i + 1 << ',' << io::real(e.score) << ',' << (e.won ? 1 : 0) << ',' << e.shield_interventions << ','
        << e.fallbacks << '\n';
  }
  return out.str();
}

/// window,first_episode,average
inline std::string windows_csv(const TrainingMetrics& m, std::size_t window = 10) {
  std::ostringstream out;
  out << "window,first_episode,average\n";
  for (std::size_t i = 0; i < m.windowed_averages.size(); ++i) {
    out << i + 1 << ',' << i * window + 1 << ',' << io::real(m.windowed_averages[i]) << '\n';
  }
  return out.str();
}

}  // namespace probshield
