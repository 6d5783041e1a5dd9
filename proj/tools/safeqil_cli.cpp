// safeqil command line: train, collect, eval, analyze, ablate.
//
// On failure a single JSON line {"error": {"kind": ..., "msg": ...}} goes to
// stderr and the exit code names the kind: 2 usage or config, 3 input data,
// 4 numerical failure, 1 anything else.

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

#include "safeqil/runtime.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

int fail(const std::string& kind, const std::string& msg, int code) {
  std::cerr << nlohmann::json{{"error", {{"kind", kind}, {"msg", msg}}}}.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace safeqil;
  CLI::App app{"SafeQIL lab: safe imitation from demonstrations"};
  app.require_subcommand(1);

  std::string config_path, out, variant, env_id = "toygoal", mode = "scripted";
  std::string checkpoint, stats_path, baseline, csv_out;
  std::uint64_t seed = 0;
  std::size_t episodes = 0, seeds = 0, attempt_cap = 0;
  std::uint16_t port = 0;
  bool safe_only = false, robust = false, pooled = false;

  auto* train = app.add_subcommand("train", "train one run into a run directory");
  train->add_option("--config", config_path, "flat key = value config")->required();
  auto* seed_opt = train->add_option("--seed", seed, "overrides the config seed");
  train->add_option("--variant", variant, "ablation variant (original, no_cosine, ...)");
  train->add_option("--out", out, "run directory")->required();

  auto* collect = app.add_subcommand("collect", "record demonstrations");
  collect->add_option("--env", env_id, "toygoal, toycircle or grid")->required();
  collect->add_option("--mode", mode, "scripted or teleop")->required();
  collect->add_option("--episodes", episodes, "episodes to retain")->required();
  collect->add_flag("--safe-only", safe_only, "keep only zero-cost episodes");
  collect->add_option("--out", out, "demo file (JSON Lines)")->required();
  auto* port_opt = collect->add_option("--port", port, "teleop WebSocket port");
  auto* collect_config = collect->add_option("--config", config_path, "map geometry and seed");
  auto* collect_seed = collect->add_option("--seed", seed, "scripted reset seed stream");
  auto* cap_opt = collect->add_option("--attempt-cap", attempt_cap, "scripted attempts before giving up");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint JSON")->required();
  eval->add_option("--episodes", episodes, "episodes per seed")->required();
  eval->add_option("--seeds", seeds, "evaluation seeds")->required();
  eval->add_flag("--pooled", pooled, "std over all episodes instead of per-seed means");
  eval->add_option("--stats-out", csv_out, "append the RunStats row to this CSV");

  auto* analyze = app.add_subcommand("analyze", "trade-off tables from RunStats CSV");
  analyze->add_option("--stats", stats_path, "RunStats CSV")->required();
  analyze->add_option("--baseline", baseline, "baseline algo name")->required();
  analyze->add_flag("--robust", robust, "also the variance-penalized table");
  analyze->add_option("--csv", csv_out, "write the trade-off rows as CSV");

  auto* ablate = app.add_subcommand("ablate", "run every ablation variant");
  ablate->add_option("--config", config_path, "flat key = value config")->required();
  ablate->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*train) {
      RunConfig cfg = load_config(config_path);
      if (*seed_opt) cfg.seed = seed;
      if (!variant.empty()) cfg.agent.ablation = Ablation::from_variant(variant);
      cfg.out = out;
      TrainResult r = cmd_train(cfg, out);
      nlohmann::json j = {{"run_dir", r.run_dir.string()}, {"steps", r.steps}};
      if (r.last_eval) j["last_eval"] = to_json(*r.last_eval);
      std::cout << j.dump() << std::endl;
    } else if (*collect) {
      CollectOptions o;
      RunConfig cfg;
      if (*collect_config) cfg = load_config(config_path);
      o.env = env_id;
      o.mode = mode;
      o.episodes = episodes;
      o.safe_only = safe_only;
      o.out = out;
      o.map = cfg.map;
      o.seed = *collect_seed ? seed : cfg.seed;
      o.port = *port_opt ? port : cfg.teleop_port;
      o.attempt_cap = *cap_opt ? attempt_cap : cfg.collect_attempt_cap;
      o.stop = &g_stop;
      o.on_listen = [](std::uint16_t p) {
        std::cout << nlohmann::json{{"listening", p}}.dump() << std::endl;
      };
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const std::size_t n = cmd_collect(o);
      std::cout << nlohmann::json{{"out", out}, {"episodes", n}}.dump() << std::endl;
    } else if (*eval) {
      RunStats s = cmd_eval(checkpoint, episodes, seeds, pooled);
      if (!csv_out.empty()) {
        std::vector<RunStats> rows;
        if (std::filesystem::exists(csv_out)) rows = read_stats_csv(csv_out);
        rows.push_back(s);
        std::ofstream(csv_out, std::ios::trunc) << stats_csv(rows);
      }
      std::cout << to_json(s).dump() << std::endl;
    } else if (*analyze) {
      AnalyzeOutput a = cmd_analyze(stats_path, baseline, robust);
      if (!csv_out.empty()) {
        std::vector<TradeoffRow> rows = a.standard;
        if (robust) rows.insert(rows.end(), a.robust.begin(), a.robust.end());
        std::ofstream(csv_out, std::ios::trunc) << tradeoff_csv(rows);
      }
      std::cout << a.text;
    } else if (*ablate) {
      RunConfig cfg = load_config(config_path);
      AblateResult r = cmd_ablate(cfg, out);
      std::cout << stats_csv(r.stats);
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const StatsFormatError& e) {
    return fail("stats_format", e.what(), 3);
  } catch (const DemoFormatError& e) {
    return fail("demo_format", e.what(), 3);
  } catch (const DimensionError& e) {
    return fail("dimension", e.what(), 3);
  } catch (const NonFiniteError& e) {
    return fail("non_finite", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
