// probshield: learn adversary behavior, build shields, inspect valuations,
// train shielded agents and generate case-study arenas.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "probshield/probshield.hpp"

namespace ps = probshield;
using json = nlohmann::json;

namespace {

constexpr int kUsageError = 1;
constexpr int kDataError = 2;

std::size_t default_workers() {
  if (const char* env = std::getenv("PROBSHIELD_WORKERS")) {
    long long n = 0;
    if (ps::detail::parse_int(env, n) && n >= 1) return static_cast<std::size_t>(n);
  }
  return 1;
}

ps::Horizon make_horizon(int steps, const std::string& unit) {
  return {steps, unit == "transitions" ? ps::HorizonUnit::transitions : ps::HorizonUnit::rounds};
}

ps::Scenario load_scenario(const std::string& arena_path, const std::string& behavior_path) {
  const auto arena = ps::parse_arena(ps::io::read_file(arena_path));
  const auto behavior = ps::parse_behavior(arena.arena, ps::io::read_file(behavior_path));
  return ps::scenario_from(arena, behavior);
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (auto part : ps::detail::split(text, ',')) {
    if (part.empty()) continue;
    const auto dash = part.find('-');
    long long a = 0;
    long long b = 0;
    if (dash != std::string_view::npos && dash > 0) {
      if (!ps::detail::parse_int(part.substr(0, dash), a) || !ps::detail::parse_int(part.substr(dash + 1), b) ||
          a < 0 || b < a) {
        throw CLI::ValidationError("--seeds", "bad range '" + std::string(part) + "'");
      }
      for (long long s = a; s <= b; ++s) out.push_back(static_cast<std::uint64_t>(s));
    } else {
      if (!ps::detail::parse_int(part, a) || a < 0) throw CLI::ValidationError("--seeds", "bad seed");
      out.push_back(static_cast<std::uint64_t>(a));
    }
  }
  if (out.empty()) throw CLI::ValidationError("--seeds", "no seeds given");
  return out;
}

std::pair<int, int> parse_size(const std::string& text) {
  const auto x = text.find('x');
  long long w = 0;
  long long h = 0;
  if (x == std::string::npos || !ps::detail::parse_int(std::string_view(text).substr(0, x), w) ||
      !ps::detail::parse_int(std::string_view(text).substr(x + 1), h)) {
    throw CLI::ValidationError("--size", "expected WIDTHxHEIGHT");
  }
  return {static_cast<int>(w), static_cast<int>(h)};
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
  } else {
    ps::io::write_file(path, content);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic shields for multi-agent arenas"};
  app.require_subcommand(1);
  bool as_json = false;
  std::size_t workers = default_workers();
  app.add_flag("--json", as_json, "Print summaries as JSON");
  app.add_option("--workers", workers, "Worker threads (default $PROBSHIELD_WORKERS or 1)")
      ->check(CLI::PositiveNumber);

  // learn-behavior
  auto* learn = app.add_subcommand("learn-behavior", "Learn adversary behavior from an observation trace");
  std::string arena_path, trace_path, behavior_path, out_path;
  int near_radius = 3;
  std::string fallback = "uniform";
  learn->add_option("arena", arena_path)->required();
  learn->add_option("trace", trace_path)->required();
  learn->add_option("-o,--output", out_path, "Behavior file")->required();
  learn->add_option("--near-radius", near_radius)->check(CLI::PositiveNumber);
  learn->add_option("--fallback", fallback)->check(CLI::IsMember({"uniform", "error"}));

  // build-shield
  auto* build = app.add_subcommand("build-shield", "Compute a shield table");
  int horizon = 10;
  std::string unit = "rounds";
  bool per_adversary = false;
  bool joint = false;
  bool conservative = false;
  std::size_t crossings_only = 0;
  double prune_factor = 2.0;
  build->add_option("arena", arena_path)->required();
  build->add_option("behavior", behavior_path)->required();
  build->add_option("-o,--output", out_path, "Shield file")->required();
  build->add_option("--horizon", horizon)->check(CLI::PositiveNumber);
  build->add_option("--unit", unit)->check(CLI::IsMember({"rounds", "transitions"}));
  build->add_flag("--per-adversary", per_adversary, "Always decompose per adversary");
  build->add_flag("--joint", joint, "Always use the joint model")->excludes("--per-adversary");
  build->add_flag("--conservative", conservative, "Store worst-case (max) valuations for lambda shields");
  build->add_option("--crossings-only", crossings_only, "Shield only the N nodes nearest the exit");
  build->add_option("--prune-factor", prune_factor, "Drop adversaries beyond factor*horizon (0 disables)")
      ->check(CLI::NonNegativeNumber);

  // check
  auto* check = app.add_subcommand("check", "Print action valuations of one decision state");
  std::string state_key, dump_path;
  bool worst_case = false;
  check->add_option("arena", arena_path)->required();
  check->add_option("behavior", behavior_path)->required();
  check->add_option("--state", state_key, "State key from,to,n|...|turn")->required();
  check->add_option("--horizon", horizon)->check(CLI::PositiveNumber);
  check->add_option("--unit", unit)->check(CLI::IsMember({"rounds", "transitions"}));
  check->add_flag("--max", worst_case, "Pr^max continuation instead of Pr^min");
  check->add_option("--dump-fragment", dump_path, "Write the explored fragment and its values");

  // train
  auto* train = app.add_subcommand("train", "Train Q-learning agents and write metrics");
  std::string shield_path, weaken, seeds_text = "1", weights_path;
  double delta = 1.0;
  ps::LearningConfig cfg;
  std::size_t max_steps = 1000;
  double noise = 0.0;
  train->add_option("arena", arena_path)->required();
  train->add_option("behavior", behavior_path)->required();
  train->add_option("--shield", shield_path, "Shield file");
  train->add_option("--delta", delta, "delta (or lambda for conservative tables)")->check(CLI::Range(0.0, 1.0));
  train->add_option("--weaken", weaken, "Iterative weakening EPS,WINDOW,FLOOR");
  train->add_option("--episodes", cfg.episodes)->check(CLI::NonNegativeNumber);
  train->add_option("--alpha", cfg.alpha);
  train->add_option("--gamma", cfg.gamma);
  train->add_option("--epsilon", cfg.epsilon);
  train->add_option("--seeds", seeds_text, "Comma separated seeds or ranges, e.g. 1-5");
  train->add_option("--max-steps", max_steps)->check(CLI::PositiveNumber);
  train->add_option("--behavior-noise", noise)->check(CLI::Range(0.0, 1.0));
  train->add_option("--weights-out", weights_path, "Checkpoint prefix for final weights");
  train->add_option("-o,--output", out_path, "Metrics prefix: PREFIX.seed<S>.csv and PREFIX.seed<S>.windows.csv");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a case-study arena");
  gen->require_subcommand(1);
  std::string gen_behavior, gen_trace;
  std::uint64_t seed = 1;
  auto* pacman = gen->add_subcommand("pacman", "Open-grid PAC-MAN maze");
  std::string size = "9x7";
  std::size_t ghosts = 1;
  double chase = 0.8;
  pacman->add_option("--size", size, "WIDTHxHEIGHT");
  pacman->add_option("--ghosts", ghosts);
  pacman->add_option("--chase", chase)->check(CLI::Range(0.0, 1.0));
  auto* warehouse = gen->add_subcommand("warehouse", "Crossings and corridors with an exit");
  std::size_t crossings = 9, units = 2, packages = 3;
  int corridor = 2;
  warehouse->add_option("--crossings", crossings)->check(CLI::PositiveNumber);
  warehouse->add_option("--corridor", corridor)->check(CLI::PositiveNumber);
  warehouse->add_option("--units", units, "Agents including the avatar")->check(CLI::PositiveNumber);
  warehouse->add_option("--packages", packages)->check(CLI::PositiveNumber);
  for (auto* sub : {pacman, warehouse}) {
    sub->add_option("--seed", seed);
    sub->add_option("-o,--output", out_path, "Arena file (stdout if omitted)");
    sub->add_option("--behavior", gen_behavior, "Also write the learned behavior file");
    sub->add_option("--trace", gen_trace, "Also write the synthetic observation trace");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*learn) {
      const auto arena = ps::parse_arena(ps::io::read_file(arena_path));
      const auto trace = ps::parse_trace(arena.arena, ps::io::read_file(trace_path));
      const auto zones = ps::default_zone_coloring(arena.arena, near_radius);
      ps::BehaviorFile b;
      b.near_radius = near_radius;
      b.fallback = fallback == "error" ? ps::FallbackPolicy::error : ps::FallbackPolicy::uniform_out_edges;
      b.behaviors = ps::learn_behaviors(trace, arena.arena, zones, arena.agents.adversary_starts.size(), b.fallback);
      emit(out_path, ps::serialize_behavior(arena.arena, zones, b));
      if (as_json) {
        std::cout << json{{"records", trace.records.size()}, {"adversaries", b.behaviors.size()}}.dump() << '\n';
      } else {
        std::cout << "learned " << b.behaviors.size() << " behaviors from " << trace.records.size()
                  << " observations\n";
      }
    } else if (*build) {
      const auto scenario = load_scenario(arena_path, behavior_path);
      const auto model = scenario.model();
      std::function<bool(ps::NodeId)> filter;
      std::string filter_text = "all";
      std::vector<char> keep;
      if (crossings_only > 0) {
        if (!scenario.exit) throw ps::SemanticError("--crossings-only needs an arena with an exit");
        keep.assign(scenario.arena.node_count(), 0);
        for (auto v : scenario.crossings_nearest_exit(crossings_only)) keep[v] = 1;
        filter = [&keep](ps::NodeId v) { return keep[v] != 0; };
        filter_text = "crossings_nearest_exit:" + std::to_string(crossings_only);
      }
      const auto states = ps::enumerate_decision_states(scenario.arena, scenario.agents.adversary_starts.size(),
                                                        scenario.agents.collision_mode, filter);
      ps::BuildOptions opts;
      opts.workers = workers;
      opts.prune_radius_factor = prune_factor;
      opts.composition = per_adversary ? ps::Composition::per_adversary
                         : joint       ? ps::Composition::joint
                                       : ps::Composition::automatic;
      opts.mode = conservative ? ps::ShieldMode::conservative : ps::ShieldMode::delta;
      opts.filter_description = filter_text;
      auto table = ps::build_shield(model, states, make_horizon(horizon, unit), opts);
      emit(out_path, ps::serialize_shield(scenario.arena, table));
      if (as_json) {
        std::cout << json{{"states", states.size()},
                          {"entries", table.entries.size()},
                          {"failures", table.failures.size()},
                          {"per_adversary", table.per_adversary}}
                         .dump()
                  << '\n';
      } else {
        std::cout << "shielded " << table.entries.size() << " of " << states.size() << " decision states ("
                  << table.failures.size() << " failures)\n";
      }
      if (!table.failures.empty()) return kDataError;
    } else if (*check) {
      const auto scenario = load_scenario(arena_path, behavior_path);
      const auto model = scenario.model();
      auto state = ps::QuotientMdp::canonical(ps::parse_state_key(scenario.arena, state_key));
      model.check_state(state);
      if (!model.is_decision(state)) throw ps::IllegalState("state is not a decision state");
      const auto h = make_horizon(horizon, unit);
      const auto direction = worst_case ? ps::Direction::max : ps::Direction::min;
      const auto valuation = ps::action_valuations_batch(model, std::span(&state, 1), h, direction).front();
      if (!dump_path.empty()) {
        ps::Fragment<ps::QuotientMdp> fragment(model);
        fragment.add_root(state, h.transitions(model.turns_per_round()));
        fragment.expand();
        const auto values = fragment.solve(direction);
        std::ofstream out(dump_path);
        if (!out) throw ps::Error("cannot write '" + dump_path + "'");
        ps::write_fragment(
            out, fragment, values, [&](const ps::QuotientState& s) { return ps::format_state_key(scenario.arena, s); },
            [&](const ps::MdpAction& a) { return ps::format_action(scenario.arena, a); });
      }
      if (as_json) {
        json j{{"state", ps::format_state_key(scenario.arena, state)}, {"optimal", valuation.optimal}};
        for (const auto& [a, v] : valuation.values) j["values"][ps::format_action(scenario.arena, a)] = v;
        std::cout << j.dump() << '\n';
      } else {
        for (const auto& [a, v] : valuation.values) {
          std::cout << ps::format_action(scenario.arena, a) << ' ' << ps::io::real(v) << '\n';
        }
        std::cout << "optimal " << ps::io::real(valuation.optimal) << '\n';
      }
    } else if (*train) {
      const auto scenario = load_scenario(arena_path, behavior_path);
      const auto seeds = parse_seeds(seeds_text);
      std::optional<ps::ShieldTable> table;
      if (!shield_path.empty()) table = ps::parse_shield(scenario.arena, ps::io::read_file(shield_path));
      ps::TrainingOptions opts;
      opts.workers = workers;
      opts.simulation.max_steps = max_steps;
      opts.simulation.behavior_noise = noise;
      if (!weaken.empty()) {
        if (!table) throw CLI::ValidationError("--weaken", "requires --shield");
        const auto parts = ps::detail::split(weaken, ',');
        long long window = 0;
        double eps = 0.0;
        double floor = 0.0;
        if (parts.size() != 3 || !ps::detail::parse_int(parts[1], window)) {
          throw CLI::ValidationError("--weaken", "expected EPS,WINDOW,FLOOR");
        }
        try {
          eps = std::stod(std::string(parts[0]));
          floor = std::stod(std::string(parts[2]));
        } catch (const std::exception&) {
          throw CLI::ValidationError("--weaken", "expected EPS,WINDOW,FLOOR");
        }
        opts.weakening.emplace(delta, eps, floor, static_cast<int>(window));
      }
      ps::ShieldSetup setup;
      if (table) {
        setup.table = &*table;
        setup.threshold = delta;
      }
      const auto runs = ps::train(scenario, cfg, table ? &setup : nullptr, seeds, opts);
      json summary = json::array();
      for (const auto& m : runs) {
        if (!out_path.empty()) {
          const auto prefix = out_path + ".seed" + std::to_string(m.seed);
          ps::io::write_file(prefix + ".csv", ps::metrics_csv(m));
          ps::io::write_file(prefix + ".windows.csv", ps::windows_csv(m));
        }
        if (!weights_path.empty()) {
          ps::io::write_file(weights_path + ".seed" + std::to_string(m.seed) + ".weights",
                             ps::serialize_weights({scenario.kind, m.final_weights}));
        }
        if (as_json) {
          summary.push_back({{"seed", m.seed},
                             {"episodes", m.episodes.size()},
                             {"mean_score", m.mean_score},
                             {"win_rate", m.win_rate},
                             {"fallbacks", m.fallbacks},
                             {"compliance_violations", m.compliance_violations}});
        } else {
          std::cout << "seed " << m.seed << " episodes " << m.episodes.size() << " mean_score "
                    << ps::io::real(m.mean_score) << " win_rate " << ps::io::real(m.win_rate) << " fallbacks "
                    << m.fallbacks << " violations " << m.compliance_violations << '\n';
        }
        if (m.compliance_violations != 0) return kDataError;
      }
      if (as_json) std::cout << summary.dump() << '\n';
    } else if (*gen) {
      ps::Scenario s;
      if (*pacman) {
        const auto [w, h] = parse_size(size);
        ps::PacmanOptions po;
        po.chase = chase;
        s = ps::make_pacman(w, h, ghosts, seed, po);
      } else {
        s = ps::make_warehouse(crossings, corridor, units, packages, seed);
      }
      emit(out_path, ps::serialize_arena(ps::arena_file_of(s)));
      if (!gen_behavior.empty()) {
        ps::BehaviorFile b;
        b.near_radius = s.zones.near_radius();
        b.behaviors = s.behaviors;
        ps::io::write_file(gen_behavior, ps::serialize_behavior(s.arena, s.zones, b));
      }
      if (!gen_trace.empty()) ps::io::write_file(gen_trace, ps::serialize_trace(s.arena, s.observations));
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const ps::InvalidParameter& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return 0;
}
