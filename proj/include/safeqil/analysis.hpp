#pragma once

// Evaluation protocol and reward/cost trade-off analysis against an
// unconstrained baseline.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeqil/agent.hpp"
#include "safeqil/envs.hpp"

namespace safeqil {

struct RunStats {
  std::string algo;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  double cost_mean = 0.0;
  double cost_std = 0.0;
  std::size_t episodes = 1;  // per seed
  std::size_t seeds = 1;

  bool operator==(const RunStats&) const = default;
};

enum class TradeoffKind { standard, robust };

struct TradeoffRow {
  std::string algo;
  TradeoffKind kind = TradeoffKind::standard;
  double reward = 0.0;  // mean, or mean - std for the robust kind
  double cost = 0.0;    // mean, or mean + std for the robust kind
  double delta_c = 0.0;  // percent
  double delta_r = 0.0;  // percent
  std::optional<double> ratio;
  bool unsafe = false;               // delta_c < 0
  bool ratio_undefined = false;      // delta_r == 0
  bool baseline_degenerate = false;  // zero baseline mean, nothing computed
  bool dominant = false;             // cost reduced without any reward loss
};

/// dC = (C_B - C_A) / C_B * 100, dR = (R_B - R_A) / R_B * 100, rho = dC / dR.
TradeoffRow standard_tradeoff(const RunStats& candidate, const RunStats& baseline);
/// Same with C~ = mu_C + sigma_C and R~ = mu_R - sigma_R on both sides.
TradeoffRow robust_tradeoff(const RunStats& candidate, const RunStats& baseline);

/// Minimum-cost candidate when every candidate costs more than the baseline,
/// otherwise the best valid trade-off: dominant rows first, then the largest
/// ratio. Ties resolve by name, so the result ignores row order.
std::string select_best(const std::vector<TradeoffRow>& rows, const RunStats& baseline);

struct Selection {
  std::string standard;
  std::string robust;
};
Selection select_best_both(const std::vector<RunStats>& candidates, const RunStats& baseline);

/// "30.4%"-style percentage, "0.38"-style ratio or "N/A (Unsafe)".
std::string format_percent(double v);
std::string format_ratio(const TradeoffRow& row);
std::string format_tradeoff_table(const std::vector<TradeoffRow>& rows, const RunStats& baseline);
std::string tradeoff_csv(const std::vector<TradeoffRow>& rows);

class StatsFormatError : public std::runtime_error {
 public:
  StatsFormatError(const std::string& msg, std::size_t row)
      : std::runtime_error("row " + std::to_string(row) + ": " + msg), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

/// CSV with header algo,reward_mean,reward_std,cost_mean,cost_std,episodes,seeds.
std::vector<RunStats> read_stats_csv(const std::filesystem::path& path);
std::vector<RunStats> parse_stats_csv(const std::string& text);
std::string stats_csv(const std::vector<RunStats>& stats);
nlohmann::json to_json(const RunStats& s);
RunStats run_stats_from_json(const nlohmann::json& j);

struct EpisodeRecord {
  std::size_t seed_index = 0;
  std::uint64_t reset_seed = 0;
  double reward = 0.0;
  double cost = 0.0;
  std::vector<std::vector<double>> actions;
};

/// Reset seed of episode e under evaluation seed k.
std::uint64_t eval_reset_seed(std::size_t seed_index, std::size_t episode);

/// Deterministic-action rollouts. Mean and population std are taken across
/// per-seed means, or across all episodes when pooled is set.
RunStats evaluate(const Actor& actor, const Env& env, std::size_t episodes,
                  std::size_t seeds, const std::string& algo, bool pooled = false,
                  std::vector<EpisodeRecord>* records = nullptr);

/// Mean and population std of per-seed means of the recorded episodes.
RunStats summarize(const std::vector<EpisodeRecord>& records, std::size_t episodes,
                   std::size_t seeds, const std::string& algo, bool pooled = false);

}  // namespace safeqil
