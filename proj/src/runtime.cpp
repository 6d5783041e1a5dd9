#include "safeqil/runtime.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace safeqil {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double to_double(const std::string& s) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("expected a finite number, got \"" + s + "\"");
  return v;
}

std::uint64_t to_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("expected a non-negative integer, got \"" + s + "\"");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("expected true or false, got \"" + s + "\"");
}

std::vector<double> to_doubles(const std::string& s, std::size_t n) {
  std::vector<double> out;
  for (const auto& p : split(s, ',')) out.push_back(to_double(p));
  if (n != 0 && out.size() != n)
    throw ConfigError("expected " + std::to_string(n) + " comma-separated numbers");
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& p : split(s, ',')) out.push_back(to_uint(p));
  if (out.empty()) throw ConfigError("expected at least one layer size");
  for (auto v : out)
    if (v == 0) throw ConfigError("layer sizes must be positive");
  return out;
}

std::pair<std::size_t, std::size_t> to_cell(const std::string& s) {
  auto p = split(s, ',');
  if (p.size() != 2) throw ConfigError("expected row,col");
  return {to_uint(p[0]), to_uint(p[1])};
}

template <class T>
std::string join(const std::vector<T>& v, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    if constexpr (std::is_floating_point_v<T>) out += fmt(v[i]);
    else out += std::to_string(v[i]);
  }
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SQ_NUM(KEY, FIELD)                                                       \
  Key{KEY, [](RunConfig& c, const std::string& v) { c.FIELD = to_double(v); }, \
      [](const RunConfig& c) { return fmt(c.FIELD); }}
#define SQ_UINT(KEY, FIELD)                                                     \
  Key{KEY,                                                                     \
      [](RunConfig& c, const std::string& v) {                                 \
        c.FIELD = static_cast<decltype(c.FIELD)>(to_uint(v));                  \
      },                                                                       \
      [](const RunConfig& c) { return std::to_string(c.FIELD); }}
#define SQ_BOOL(KEY, FIELD)                                                    \
  Key{KEY, [](RunConfig& c, const std::string& v) { c.FIELD = to_bool(v); }, \
      [](const RunConfig& c) { return std::string(c.FIELD ? "true" : "false"); }}
#define SQ_HIDDEN(KEY, FIELD)                                                  \
  Key{KEY, [](RunConfig& c, const std::string& v) { c.FIELD = to_sizes(v); }, \
      [](const RunConfig& c) { return join(c.FIELD); }}

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = {
      Key{"env",
          [](RunConfig& c, const std::string& v) {
            if (v != "toygoal" && v != "toycircle" && v != "grid")
              throw ConfigError("unknown env \"" + v + "\"");
            c.env = v;
          },
          [](const RunConfig& c) { return c.env; }},
      SQ_UINT("seed", seed),
      Key{"mode",
          [](RunConfig& c, const std::string& v) {
            try {
              c.agent.mode = mode_from_string(v);
            } catch (const std::exception& e) {
              throw ConfigError(e.what());
            }
          },
          [](const RunConfig& c) { return std::string(to_string(c.agent.mode)); }},
      Key{"demos", [](RunConfig& c, const std::string& v) { c.demos = v; },
          [](const RunConfig& c) { return c.demos; }},
      Key{"out", [](RunConfig& c, const std::string& v) { c.out = v; },
          [](const RunConfig& c) { return c.out; }},
      SQ_BOOL("safe_only", safe_only),
      SQ_BOOL("no_cosine", agent.ablation.no_cosine),
      SQ_BOOL("no_max", agent.ablation.no_max),
      SQ_BOOL("no_constraint", agent.ablation.no_constraint),
      SQ_BOOL("no_ood", agent.ablation.no_ood),
      SQ_BOOL("no_demo", agent.ablation.no_demo),
      SQ_BOOL("no_sac", agent.ablation.no_sac),
      SQ_NUM("gamma", agent.gamma),
      SQ_NUM("lr", agent.lr),
      SQ_UINT("batch_size", agent.batch_size),
      SQ_NUM("eta", agent.eta),
      SQ_NUM("alpha0", agent.alpha0),
      Key{"target_entropy",
          [](RunConfig& c, const std::string& v) {
            if (v == "auto") c.agent.target_entropy.reset();
            else c.agent.target_entropy = to_double(v);
          },
          [](const RunConfig& c) {
            return c.agent.target_entropy ? fmt(*c.agent.target_entropy) : std::string("auto");
          }},
      SQ_UINT("warmup_steps", agent.warmup_steps),
      SQ_UINT("total_steps", total_steps),
      SQ_UINT("buffer_capacity", agent.buffer_capacity),
      SQ_UINT("updates_per_step", agent.updates_per_step),
      SQ_HIDDEN("actor_hidden", agent.actor_hidden),
      SQ_HIDDEN("critic_hidden", agent.critic_hidden),
      SQ_HIDDEN("disc_hidden", agent.disc_hidden),
      SQ_NUM("disc_lr", agent.disc_lr),
      SQ_NUM("lambda_gp", agent.lambda_gp),
      SQ_NUM("clamp_epsilon", agent.clamp_epsilon),
      SQ_NUM("log_std_init", agent.log_std_init),
      SQ_NUM("log_std_min", agent.log_std_min),
      SQ_NUM("log_std_max", agent.log_std_max),
      Key{"gate_mode",
          [](RunConfig& c, const std::string& v) {
            try {
              c.agent.gate_mode = gate_mode_from_string(v);
            } catch (const std::exception& e) {
              throw ConfigError(e.what());
            }
          },
          [](const RunConfig& c) { return std::string(to_string(c.agent.gate_mode)); }},
      Key{"forced_gate",
          [](RunConfig& c, const std::string& v) {
            if (v == "none") c.agent.forced_gate.reset();
            else c.agent.forced_gate = to_double(v);
          },
          [](const RunConfig& c) {
            return c.agent.forced_gate ? fmt(*c.agent.forced_gate) : std::string("none");
          }},
      SQ_BOOL("normalize_anchor_states", agent.normalize_anchor_states),
      SQ_UINT("eval_every", eval_every),
      SQ_UINT("eval_quick_episodes", eval_quick_episodes),
      SQ_UINT("eval_episodes", eval_episodes),
      SQ_UINT("eval_seeds", eval_seeds),
      SQ_UINT("checkpoint_every", checkpoint_every),
      SQ_UINT("collect_episodes", collect_episodes),
      SQ_UINT("collect_attempt_cap", collect_attempt_cap),
      Key{"teleop_port",
          [](RunConfig& c, const std::string& v) {
            const auto p = to_uint(v);
            if (p > 65535) throw ConfigError("port out of range");
            c.teleop_port = static_cast<std::uint16_t>(p);
          },
          [](const RunConfig& c) { return std::to_string(c.teleop_port); }},
      Key{"map.goal",
          [](RunConfig& c, const std::string& v) {
            auto d = to_doubles(v, 2);
            c.map.goal = {d[0], d[1]};
          },
          [](const RunConfig& c) {
            return join(std::vector<double>(c.map.goal.begin(), c.map.goal.end()));
          }},
      SQ_NUM("map.goal_radius", map.goal_radius),
      Key{"map.hazards",
          [](RunConfig& c, const std::string& v) {
            c.map.hazards.clear();
            for (const auto& h : split(v, ';')) {
              auto d = to_doubles(h, 3);
              if (!(d[2] > 0.0)) throw ConfigError("hazard radius must be positive");
              c.map.hazards.push_back({d[0], d[1], d[2]});
            }
          },
          [](const RunConfig& c) {
            std::string out;
            for (std::size_t i = 0; i < c.map.hazards.size(); ++i) {
              const Hazard& h = c.map.hazards[i];
              if (i) out += ';';
              out += fmt(h.x) + ',' + fmt(h.y) + ',' + fmt(h.radius);
            }
            return out;
          }},
      Key{"map.start_box",
          [](RunConfig& c, const std::string& v) {
            auto d = to_doubles(v, 4);
            if (!(d[0] <= d[1] && d[2] <= d[3])) throw ConfigError("start_box needs xmin<=xmax, ymin<=ymax");
            c.map.start_box = {d[0], d[1], d[2], d[3]};
          },
          [](const RunConfig& c) {
            return join(std::vector<double>(c.map.start_box.begin(), c.map.start_box.end()));
          }},
      SQ_NUM("map.goal_bonus", map.goal_bonus),
      SQ_NUM("map.circle_radius", map.circle_radius),
      SQ_NUM("map.boundary", map.boundary),
      SQ_NUM("map.arena", map.arena),
      SQ_NUM("map.dt", map.dt),
      SQ_UINT("map.max_episode_steps", map.max_episode_steps),
      SQ_NUM("map.expert_attraction", map.expert_attraction),
      SQ_NUM("map.expert_repulsion", map.expert_repulsion),
      SQ_NUM("map.expert_tangential", map.expert_tangential),
      SQ_NUM("map.expert_influence", map.expert_influence),
      SQ_UINT("map.grid_rows", map.grid_rows),
      SQ_UINT("map.grid_cols", map.grid_cols),
      Key{"map.grid_unsafe",
          [](RunConfig& c, const std::string& v) {
            c.map.grid_unsafe.clear();
            for (const auto& cell : split(v, ';')) c.map.grid_unsafe.push_back(to_cell(cell));
          },
          [](const RunConfig& c) {
            std::string out;
            for (std::size_t i = 0; i < c.map.grid_unsafe.size(); ++i) {
              if (i) out += ';';
              out += std::to_string(c.map.grid_unsafe[i].first) + ',' +
                     std::to_string(c.map.grid_unsafe[i].second);
            }
            return out;
          }},
      Key{"map.grid_goal",
          [](RunConfig& c, const std::string& v) { c.map.grid_goal = to_cell(v); },
          [](const RunConfig& c) {
            return std::to_string(c.map.grid_goal.first) + ',' +
                   std::to_string(c.map.grid_goal.second);
          }},
  };
  return keys;
}

#undef SQ_NUM
#undef SQ_UINT
#undef SQ_BOOL
#undef SQ_HIDDEN

void validate(const RunConfig& c) {
  const AgentConfig& a = c.agent;
  if (!(a.gamma >= 0.0 && a.gamma < 1.0)) throw ConfigError("gamma must be in [0, 1)");
  if (!(a.lr > 0.0) || !(a.disc_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(a.eta > 0.0 && a.eta <= 1.0)) throw ConfigError("eta must be in (0, 1]");
  if (!(a.alpha0 > 0.0)) throw ConfigError("alpha0 must be positive");
  if (a.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (a.buffer_capacity == 0) throw ConfigError("buffer_capacity must be positive");
  if (a.updates_per_step == 0) throw ConfigError("updates_per_step must be positive");
  if (!(a.lambda_gp >= 0.0)) throw ConfigError("lambda_gp must be non-negative");
  if (!(a.clamp_epsilon > 0.0 && a.clamp_epsilon < 0.5)) throw ConfigError("clamp_epsilon must be in (0, 0.5)");
  if (!(a.log_std_min < a.log_std_max)) throw ConfigError("log_std_min must be below log_std_max");
  if (a.forced_gate && !(*a.forced_gate > 0.0 && *a.forced_gate <= 1.0))
    throw ConfigError("forced_gate must be in (0, 1]");
  if (c.eval_every == 0) throw ConfigError("eval_every must be positive");
  if (c.eval_quick_episodes == 0 || c.eval_episodes == 0 || c.eval_seeds == 0)
    throw ConfigError("evaluation episodes and seeds must be positive");
  if (c.checkpoint_every == 0) throw ConfigError("checkpoint_every must be positive");
  if (c.collect_episodes == 0 || c.collect_attempt_cap == 0)
    throw ConfigError("collect_episodes and collect_attempt_cap must be positive");
  if (!(c.map.dt > 0.0) || !(c.map.arena > 0.0) || c.map.max_episode_steps == 0)
    throw ConfigError("map.dt, map.arena and map.max_episode_steps must be positive");
  if (c.map.grid_rows == 0 || c.map.grid_cols == 0) throw ConfigError("grid must be non-empty");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string algo_name(const AgentConfig& a) {
  std::string name(to_string(a.mode));
  if (a.mode == Mode::safeqil && a.ablation != Ablation{}) name += "_" + a.ablation.variant();
  return name;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out{"variant"};
    for (const auto& k : key_table()) out.push_back(k.name);
    return out;
  }();
  return names;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::map<std::string, std::pair<std::string, std::size_t>> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (seen.count(key))
      throw ConfigError("line " + std::to_string(n) + ": duplicate key \"" + key + "\"");
    seen[key] = {value, n};
  }

  // The variant sets the six switches; explicit switches must agree with it.
  if (auto it = seen.find("variant"); it != seen.end()) {
    try {
      c.agent.ablation = Ablation::from_variant(it->second.first);
    } catch (const std::exception& e) {
      throw ConfigError("line " + std::to_string(it->second.second) + ": " + e.what());
    }
  }
  const Ablation from_variant = c.agent.ablation;
  for (const auto& [key, entry] : seen) {
    if (key == "variant") continue;
    const Key* k = nullptr;
    for (const auto& cand : key_table())
      if (cand.name == key) k = &cand;
    if (!k) throw ConfigError("line " + std::to_string(entry.second) + ": unknown key \"" + key + "\"");
    try {
      k->set(c, entry.first);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(entry.second) + ": " + key + ": " + e.what());
    }
  }
  if (seen.count("variant") && c.agent.ablation != from_variant)
    throw ConfigError("line " + std::to_string(seen["variant"].second) +
                      ": variant conflicts with an explicit ablation switch");
  validate(c);
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(read_file(path));
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& k : key_table()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

const std::vector<std::string>& log_columns() {
  static const std::vector<std::string> cols = {
      "step",        "episodes",   "updates",       "eval_reward",      "eval_cost",
      "critic_loss", "constraint", "max_clip",      "ood",              "demo",
      "sac",         "disc_loss",  "policy_objective", "alpha_loss",   "alpha",
      "gate_mean",   "anchor_similarity", "anchor_distance"};
  return cols;
}

void save_checkpoint(const fs::path& path, const RunConfig& config, std::size_t step,
                     const Agent& agent) {
  nlohmann::json j = {{"format_version", 1},
                      {"kind", "run_checkpoint"},
                      {"step", step},
                      {"run_config", serialize_config(config)},
                      {"agent", to_json(agent)}};
  write_file(path, j.dump());
}

Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint is not valid JSON: " + std::string(e.what()));
  }
  if (!j.contains("format_version") || j.at("format_version").get<int>() != 1 ||
      j.value("kind", "") != "run_checkpoint")
    throw std::runtime_error("unsupported checkpoint format: " + path.string());
  Checkpoint c;
  c.config = parse_config(j.at("run_config").get<std::string>());
  c.step = j.at("step").get<std::size_t>();
  c.agent = agent_from_json(j.at("agent"));
  return c;
}

TrainResult cmd_train(const RunConfig& config, const fs::path& out_dir) {
  validate(config);
  // Demonstrations are checked before any directory or network exists.
  DemoSet demos;
  if (config.agent.uses_demos()) {
    if (config.demos.empty())
      throw ConfigError("mode " + std::string(to_string(config.agent.mode)) +
                        " requires a demonstration file (key demos)");
    if (!fs::exists(config.demos))
      throw ConfigError("demonstration file not found: " + config.demos);
    demos = load_demos(config.demos, config.safe_only);
    if (demos.empty()) throw ConfigError("demonstration file has no usable episodes: " + config.demos);
  }
  auto env = make_env(config.env, config.map);
  if (!demos.empty() && (demos.state_dim() != env->spec().state_dim ||
                         demos.action_dim() != env->spec().action_dim))
    throw DimensionError("demonstrations do not match environment " + config.env);

  fs::create_directories(out_dir / "checkpoints");
  write_file(out_dir / "config.txt", serialize_config(config));

  auto eval_env = env->clone();
  Trainer trainer(std::move(env), config.agent, std::move(demos), config.seed);
  save_checkpoint(out_dir / "checkpoints" / "step_0.json", config, 0, trainer.agent());

  TrainResult result;
  result.run_dir = out_dir;
  std::ofstream log(out_dir / "log.csv", std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write log.csv");
  for (std::size_t i = 0; i < log_columns().size(); ++i)
    log << (i ? "," : "") << log_columns()[i];
  log << '\n';

  Diagnostics last;
  const std::string algo = algo_name(config.agent);
  for (std::size_t step = 1; step <= config.total_steps; ++step) {
    try {
      if (auto d = trainer.train_step()) last = *d;
    } catch (const NonFiniteError& e) {
      log.flush();
      std::ofstream events(out_dir / "events.log", std::ios::app);
      events << nlohmann::json{{"event", "halted"}, {"step", step}, {"reason", e.what()}}.dump()
             << '\n';
      throw NonFiniteError("non-finite loss at step " + std::to_string(step) + ": " + e.what());
    }
    if (step % config.eval_every == 0) {
      RunStats s = evaluate(trainer.agent().actor(), *eval_env, config.eval_quick_episodes, 1, algo);
      result.last_eval = s;
      const CriticTerms& t = last.terms;
      const double row[] = {s.reward_mean,      s.cost_mean,   last.critic_loss,
                            t.constraint,       t.max_clip,    t.ood,
                            t.demo,             t.sac,         last.disc_loss,
                            last.policy_objective, last.alpha_loss, last.alpha,
                            last.gate_mean,     last.anchor_similarity, last.anchor_distance};
      log << step << ',' << trainer.episodes() << ',' << trainer.agent().update_count();
      for (double v : row) log << ',' << g9(v);
      log << '\n';
      log.flush();
    }
    if (step % config.checkpoint_every == 0 && step != config.total_steps)
      save_checkpoint(out_dir / "checkpoints" / ("step_" + std::to_string(step) + ".json"),
                      config, step, trainer.agent());
  }
  if (config.total_steps > 0)
    save_checkpoint(out_dir / "checkpoints" / "final.json", config, config.total_steps,
                    trainer.agent());
  result.steps = config.total_steps;
  return result;
}

RunStats cmd_eval(const fs::path& checkpoint, std::size_t episodes, std::size_t seeds,
                  bool pooled) {
  if (episodes == 0 || seeds == 0) throw std::invalid_argument("episodes and seeds must be >= 1");
  Checkpoint c = load_checkpoint(checkpoint);
  auto env = make_env(c.config.env, c.config.map);
  return evaluate(c.agent.actor(), *env, episodes, seeds, algo_name(c.agent.config()), pooled);
}

AnalyzeOutput analyze_stats(const std::vector<RunStats>& stats, const std::string& baseline,
                            bool robust) {
  const RunStats* base = nullptr;
  std::vector<RunStats> candidates;
  for (const auto& s : stats) {
    if (s.algo == baseline) {
      if (base) throw std::invalid_argument("baseline \"" + baseline + "\" appears twice");
      base = &s;
    } else {
      candidates.push_back(s);
    }
  }
  if (!base) throw std::invalid_argument("baseline \"" + baseline + "\" not found in stats");
  if (candidates.empty()) throw std::invalid_argument("no candidates besides the baseline");

  AnalyzeOutput out;
  for (const auto& c : candidates) {
    out.standard.push_back(standard_tradeoff(c, *base));
    out.robust.push_back(robust_tradeoff(c, *base));
  }
  out.best.standard = select_best(out.standard, *base);
  std::ostringstream text;
  text << "standard trade-off vs " << baseline << "\n"
       << format_tradeoff_table(out.standard, *base) << "best: " << out.best.standard << "\n";
  if (robust) {
    out.best.robust = select_best(out.robust, *base);
    text << "\nrobust trade-off vs " << baseline << "\n"
         << format_tradeoff_table(out.robust, *base) << "best (robust): " << out.best.robust
         << "\n";
  }
  out.text = text.str();
  return out;
}

AnalyzeOutput cmd_analyze(const fs::path& stats, const std::string& baseline, bool robust) {
  return analyze_stats(read_stats_csv(stats), baseline, robust);
}

std::vector<std::string> ablation_manifest() {
  return std::vector<std::string>(kVariants.begin(), kVariants.end());
}

AblateResult cmd_ablate(const RunConfig& config, const fs::path& out_dir) {
  if (config.agent.mode != Mode::safeqil)
    throw ConfigError("ablate needs mode = safeqil; the baselines ignore the switches");
  AblateResult result;
  result.variants = ablation_manifest();
  fs::create_directories(out_dir);
  write_file(out_dir / "manifest.json",
             nlohmann::json{{"variants", result.variants}, {"seed", config.seed},
                            {"config", serialize_config(config)}}
                     .dump(2) + "\n");
  for (const auto& v : result.variants) {
    RunConfig c = config;
    c.agent.ablation = Ablation::from_variant(v);
    cmd_train(c, out_dir / v);
    RunStats s = cmd_eval(out_dir / v / "checkpoints" /
                              (c.total_steps > 0 ? "final.json" : "step_0.json"),
                          c.eval_episodes, c.eval_seeds);
    s.algo = v;
    result.stats.push_back(s);
  }
  write_file(out_dir / "ablation.csv", stats_csv(result.stats));
  std::ostringstream table;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-15s %20s %20s\n", "variant", "reward", "cost");
  table << buf;
  for (const auto& s : result.stats) {
    std::snprintf(buf, sizeof buf, "%-15s %9.2f +- %-7.2f %9.2f +- %-7.2f\n", s.algo.c_str(),
                  s.reward_mean, s.reward_std, s.cost_mean, s.cost_std);
    table << buf;
  }
  write_file(out_dir / "ablation.txt", table.str());
  return result;
}

void link_next_actions(std::vector<Transition>& episode) {
  for (std::size_t i = 0; i < episode.size(); ++i)
    episode[i].next_action = i + 1 < episode.size()
                                 ? std::optional<std::vector<double>>(episode[i + 1].action)
                                 : std::nullopt;
}

std::vector<Transition> collect_scripted(const std::string& env_id, const MapConfig& map,
                                         std::size_t episodes, bool safe_only,
                                         std::size_t attempt_cap, std::uint64_t seed) {
  auto env = make_env(env_id, map);
  std::vector<Transition> out;
  std::size_t kept = 0;
  std::size_t attempts = 0;
  double worst_cost = 0.0;
  while (kept < episodes) {
    if (attempts == attempt_cap)
      throw std::runtime_error("collect: " + std::to_string(kept) + " of " +
                               std::to_string(episodes) + " episodes after " +
                               std::to_string(attempts) +
                               " attempts; the expert keeps incurring cost (last rejected cost " +
                               fmt(worst_cost) + ")");
    std::vector<double> s = env->reset(0x5eed0000ULL + seed * 1'000'003ULL + attempts);
    ++attempts;
    std::vector<Transition> ep;
    double cost = 0.0;
    while (!env->done()) {
      Transition t;
      t.state = s;
      t.action = env->expert_action();
      StepResult r = env->step(t.action);
      t.reward = r.reward;
      t.cost = r.cost;
      t.next_state = r.next_state;
      t.done = r.terminal;
      t.episode = static_cast<std::int64_t>(kept);
      t.step = static_cast<std::int64_t>(ep.size());
      cost += r.cost;
      s = std::move(r.next_state);
      ep.push_back(std::move(t));
    }
    if (safe_only && cost > 0.0) {
      worst_cost = cost;
      continue;
    }
    link_next_actions(ep);
    out.insert(out.end(), ep.begin(), ep.end());
    ++kept;
  }
  return out;
}

}  // namespace safeqil
