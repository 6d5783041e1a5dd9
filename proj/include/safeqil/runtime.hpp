#pragma once

// Run configuration, training driver, CLI command implementations and the
// teleoperation session service.

#include <atomic>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeqil/agent.hpp"
#include "safeqil/analysis.hpp"
#include "safeqil/buffers.hpp"
#include "safeqil/envs.hpp"

namespace safeqil {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs. Serialized as a flat "key = value" file; see
/// config_keys() for the documented key set.
struct RunConfig {
  std::string env = "toygoal";
  std::uint64_t seed = 0;
  std::string demos;  // empty for the plain SAC baseline
  std::string out;    // run directory; the CLI --out flag takes precedence
  bool safe_only = true;
  AgentConfig agent;
  MapConfig map;
  std::size_t total_steps = 50'000;
  std::size_t eval_every = 2000;
  std::size_t eval_quick_episodes = 5;
  std::size_t eval_episodes = 40;
  std::size_t eval_seeds = 3;
  std::size_t checkpoint_every = 10'000;
  std::size_t collect_episodes = 40;
  std::size_t collect_attempt_cap = 1000;
  std::uint16_t teleop_port = 8765;
};

const std::vector<std::string>& config_keys();

/// Parses the flat format. Unknown keys, repeated keys and bad values are
/// errors naming the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Every key, in config_keys() order; parse_config(serialize_config(c)) == c.
std::string serialize_config(const RunConfig& config);

/// Fixed log.csv columns.
const std::vector<std::string>& log_columns();

struct TrainResult {
  std::filesystem::path run_dir;
  std::size_t steps = 0;
  std::optional<RunStats> last_eval;
};

/// Trains into out_dir: config.txt, log.csv, checkpoints/step_<n>.json and
/// checkpoints/final.json. Demo requirements are checked before any compute.
TrainResult cmd_train(const RunConfig& config, const std::filesystem::path& out_dir);

struct Checkpoint {
  RunConfig config;
  std::size_t step = 0;
  Agent agent;
};
void save_checkpoint(const std::filesystem::path& path, const RunConfig& config,
                     std::size_t step, const Agent& agent);
Checkpoint load_checkpoint(const std::filesystem::path& path);

RunStats cmd_eval(const std::filesystem::path& checkpoint, std::size_t episodes,
                  std::size_t seeds, bool pooled = false);

struct AnalyzeOutput {
  std::vector<TradeoffRow> standard;
  std::vector<TradeoffRow> robust;
  Selection best;
  std::string text;
};
AnalyzeOutput cmd_analyze(const std::filesystem::path& stats, const std::string& baseline,
                          bool robust);
AnalyzeOutput analyze_stats(const std::vector<RunStats>& stats, const std::string& baseline,
                            bool robust);

/// Names of the ablation runs, original first.
std::vector<std::string> ablation_manifest();

struct AblateResult {
  std::vector<std::string> variants;
  std::vector<RunStats> stats;
};
/// Trains and evaluates every variant with shared seeds; writes
/// manifest.json and ablation.csv into out_dir.
AblateResult cmd_ablate(const RunConfig& config, const std::filesystem::path& out_dir);

/// Scripted expert episodes. Under safe_only only zero-cost episodes count;
/// throws after attempt_cap attempts without reaching the target.
std::vector<Transition> collect_scripted(const std::string& env_id, const MapConfig& map,
                                         std::size_t episodes, bool safe_only,
                                         std::size_t attempt_cap, std::uint64_t seed);

/// Fills next_action from the following step; the last step keeps none.
void link_next_actions(std::vector<Transition>& episode);

/// Collected demo file. mode is "scripted" or "teleop".
struct CollectOptions {
  std::string env = "toygoal";
  std::string mode = "scripted";
  std::size_t episodes = 40;
  bool safe_only = false;
  std::filesystem::path out;
  std::uint16_t port = 8765;
  std::uint64_t seed = 0;
  std::size_t attempt_cap = 1000;
  MapConfig map;
  std::atomic<bool>* stop = nullptr;  // teleop: operator stop
  std::function<void(std::uint16_t)> on_listen;
};
/// Returns the number of episodes written.
std::size_t cmd_collect(const CollectOptions& options);

/// Thread-safe appender shared by teleop sessions.
class DemoSink {
 public:
  DemoSink(std::filesystem::path path, bool safe_only);
  /// Returns true when the episode was written.
  bool offer(std::vector<Transition> episode);
  std::size_t retained() const;
  bool safe_only() const { return safe_only_; }

 private:
  mutable std::mutex mutex_;
  std::filesystem::path path_;
  bool safe_only_;
  std::int64_t next_episode_ = 0;
  std::size_t retained_ = 0;
};

/// One teleoperation connection: a private environment plus the episode
/// being recorded. handle() maps one client message to its responses.
class TeleopSession {
 public:
  TeleopSession(std::unique_ptr<Env> env, DemoSink* sink);

  std::vector<nlohmann::json> handle(const std::string& message);
  bool recording() const { return recording_; }
  std::size_t pending_steps() const { return episode_.size(); }

 private:
  nlohmann::json state_message(double r, double c, bool done) const;
  nlohmann::json error(const std::string& msg) const;

  std::unique_ptr<Env> env_;
  DemoSink* sink_;
  bool started_ = false;
  bool recording_ = false;
  bool capturing_ = false;  // recording and the episode started while on
  std::vector<double> state_;
  std::vector<Transition> episode_;
};

nlohmann::json scene_to_json(const Scene& scene);

/// WebSocket server: one TeleopSession per connection. Returns once stop is
/// set or the sink has retained target_episodes episodes (0 = unlimited).
/// on_listen receives the bound port (useful with port 0).
void run_teleop_server(const std::string& env_id, const MapConfig& map, DemoSink& sink,
                       std::uint16_t port, std::size_t target_episodes,
                       std::atomic<bool>& stop,
                       const std::function<void(std::uint16_t)>& on_listen = {});

}  // namespace safeqil
