#include "safeqil/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace safeqil {

namespace {

TradeoffRow compare(const std::string& algo, TradeoffKind kind, double r_a, double c_a,
                    double r_b, double c_b) {
  TradeoffRow row;
  row.algo = algo;
  row.kind = kind;
  row.reward = r_a;
  row.cost = c_a;
  if (c_b == 0.0 || r_b == 0.0) {
    row.baseline_degenerate = true;
    return row;
  }
  row.delta_c = (c_b - c_a) / c_b * 100.0;
  row.delta_r = (r_b - r_a) / r_b * 100.0;
  row.unsafe = row.delta_c < 0.0;
  row.dominant = row.delta_c > 0.0 && row.delta_r <= 0.0;
  if (row.delta_r == 0.0) {
    row.ratio_undefined = true;
  } else if (!row.unsafe) {
    row.ratio = row.delta_c / row.delta_r;
  }
  return row;
}

double baseline_cost(const RunStats& b, TradeoffKind kind) {
  return kind == TradeoffKind::robust ? b.cost_mean + b.cost_std : b.cost_mean;
}

}  // namespace

TradeoffRow standard_tradeoff(const RunStats& a, const RunStats& b) {
  return compare(a.algo, TradeoffKind::standard, a.reward_mean, a.cost_mean, b.reward_mean,
                 b.cost_mean);
}

TradeoffRow robust_tradeoff(const RunStats& a, const RunStats& b) {
  return compare(a.algo, TradeoffKind::robust, a.reward_mean - a.reward_std,
                 a.cost_mean + a.cost_std, b.reward_mean - b.reward_std,
                 b.cost_mean + b.cost_std);
}

std::string select_best(const std::vector<TradeoffRow>& rows, const RunStats& baseline) {
  if (rows.empty()) throw std::invalid_argument("select_best needs at least one row");
  const double cb = baseline_cost(baseline, rows.front().kind);
  auto min_cost = [&rows] {
    const TradeoffRow* best = &rows.front();
    for (const auto& r : rows)
      if (r.cost < best->cost || (r.cost == best->cost && r.algo < best->algo)) best = &r;
    return best->algo;
  };
  const bool all_worse =
      std::all_of(rows.begin(), rows.end(), [cb](const TradeoffRow& r) { return r.cost > cb; });
  if (all_worse) return min_cost();

  // Rank: dominant (by cost drop), then by ratio, then the remaining valid
  // rows whose ratio is undefined.
  auto rank = [](const TradeoffRow& r) {
    if (r.baseline_degenerate || r.unsafe) return 0;
    if (r.dominant) return 3;
    if (r.ratio) return 2;
    return 1;
  };
  const TradeoffRow* best = nullptr;
  for (const auto& r : rows) {
    if (rank(r) == 0) continue;
    if (!best) {
      best = &r;
      continue;
    }
    const int a = rank(r), b = rank(*best);
    bool better = a > b;
    if (a == b) {
      const double ka = a == 3 ? r.delta_c : (a == 2 ? *r.ratio : r.delta_c);
      const double kb = b == 3 ? best->delta_c : (b == 2 ? *best->ratio : best->delta_c);
      better = ka > kb || (ka == kb && r.algo < best->algo);
    }
    if (better) best = &r;
  }
  return best ? best->algo : min_cost();
}

Selection select_best_both(const std::vector<RunStats>& candidates, const RunStats& baseline) {
  std::vector<TradeoffRow> standard, robust;
  for (const auto& c : candidates) {
    standard.push_back(standard_tradeoff(c, baseline));
    robust.push_back(robust_tradeoff(c, baseline));
  }
  return {select_best(standard, baseline), select_best(robust, baseline)};
}

std::string format_percent(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f%%", v);
  return buf;
}

std::string format_ratio(const TradeoffRow& row) {
  if (row.baseline_degenerate) return "N/A (Degenerate baseline)";
  if (row.unsafe) return "N/A (Unsafe)";
  if (row.dominant) return "Dominant";
  if (!row.ratio) return "N/A (Undefined)";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", *row.ratio);
  return buf;
}

std::string format_tradeoff_table(const std::vector<TradeoffRow>& rows,
                                  const RunStats& baseline) {
  std::ostringstream out;
  const bool robust = !rows.empty() && rows.front().kind == TradeoffKind::robust;
  char head[160];
  std::snprintf(head, sizeof head, "%s trade-off vs %s (R %.2f, C %.2f)\n",
                robust ? "Robust" : "Standard", baseline.algo.c_str(),
                robust ? baseline.reward_mean - baseline.reward_std : baseline.reward_mean,
                baseline_cost(baseline, robust ? TradeoffKind::robust : TradeoffKind::standard));
  out << head;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %10s %10s %10s %10s  %s\n", "algo",
                robust ? "pess_R" : "reward", robust ? "pess_C" : "cost", "dC", "dR", "ratio");
  out << line;
  for (const auto& r : rows) {
    if (r.baseline_degenerate) {
      std::snprintf(line, sizeof line, "%-14s %10.2f %10.2f %10s %10s  %s\n", r.algo.c_str(),
                    r.reward, r.cost, "-", "-", format_ratio(r).c_str());
    } else {
      std::snprintf(line, sizeof line, "%-14s %10.2f %10.2f %10s %10s  %s\n", r.algo.c_str(),
                    r.reward, r.cost, format_percent(r.delta_c).c_str(),
                    format_percent(r.delta_r).c_str(), format_ratio(r).c_str());
    }
    out << line;
  }
  if (!rows.empty()) out << "best: " << select_best(rows, baseline) << "\n";
  return out.str();
}

std::string tradeoff_csv(const std::vector<TradeoffRow>& rows) {
  std::ostringstream out;
  out << "algo,kind,reward,cost,delta_c,delta_r,ratio,status\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    std::string status = "ok";
    if (r.baseline_degenerate) status = "baseline_degenerate";
    else if (r.unsafe) status = "unsafe";
    else if (r.dominant) status = "dominant";
    else if (r.ratio_undefined) status = "ratio_undefined";
    out << r.algo << ',' << (r.kind == TradeoffKind::robust ? "robust" : "standard") << ','
        << r.reward << ',' << r.cost << ',' << r.delta_c << ',' << r.delta_r << ',';
    if (r.ratio) out << *r.ratio;
    out << ',' << status << '\n';
  }
  return out.str();
}

// ------------------------------------------------------------------- CSV

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const char* column, std::size_t row) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw StatsFormatError(std::string("column ") + column + " is not a number: \"" + s + "\"",
                           row);
  }
  if (used != s.size() || !std::isfinite(v))
    throw StatsFormatError(std::string("column ") + column + " is not a finite number: \"" +
                               s + "\"",
                           row);
  return v;
}

std::size_t parse_count(const std::string& s, const char* column, std::size_t row) {
  const double v = parse_double(s, column, row);
  if (v < 1.0 || v != std::floor(v))
    throw StatsFormatError(std::string("column ") + column + " must be a positive integer",
                           row);
  return static_cast<std::size_t>(v);
}

const char* kStatsHeader[] = {"algo",      "reward_mean", "reward_std", "cost_mean",
                              "cost_std",  "episodes",    "seeds"};

}  // namespace

std::vector<RunStats> parse_stats_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  std::vector<RunStats> out;
  bool header = false;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (!header) {
      if (cells.size() != 7)
        throw StatsFormatError("header must have the 7 documented columns", row);
      for (std::size_t i = 0; i < 7; ++i)
        if (cells[i] != kStatsHeader[i])
          throw StatsFormatError("unexpected header column \"" + cells[i] + "\"", row);
      header = true;
      continue;
    }
    if (cells.size() != 7)
      throw StatsFormatError("expected 7 columns, found " + std::to_string(cells.size()), row);
    RunStats s;
    s.algo = cells[0];
    if (s.algo.empty()) throw StatsFormatError("empty algorithm name", row);
    s.reward_mean = parse_double(cells[1], "reward_mean", row);
    s.reward_std = parse_double(cells[2], "reward_std", row);
    s.cost_mean = parse_double(cells[3], "cost_mean", row);
    s.cost_std = parse_double(cells[4], "cost_std", row);
    if (s.reward_std < 0.0 || s.cost_std < 0.0)
      throw StatsFormatError("standard deviations must be non-negative", row);
    s.episodes = parse_count(cells[5], "episodes", row);
    s.seeds = parse_count(cells[6], "seeds", row);
    out.push_back(std::move(s));
  }
  if (!header) throw StatsFormatError("missing header", row == 0 ? 1 : row);
  return out;
}

std::vector<RunStats> read_stats_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open stats file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_stats_csv(ss.str());
}

std::string stats_csv(const std::vector<RunStats>& stats) {
  std::ostringstream out;
  out << "algo,reward_mean,reward_std,cost_mean,cost_std,episodes,seeds\n";
  out << std::setprecision(17);
  for (const auto& s : stats)
    out << s.algo << ',' << s.reward_mean << ',' << s.reward_std << ',' << s.cost_mean << ','
        << s.cost_std << ',' << s.episodes << ',' << s.seeds << '\n';
  return out.str();
}

nlohmann::json to_json(const RunStats& s) {
  return {{"algo", s.algo},           {"reward_mean", s.reward_mean},
          {"reward_std", s.reward_std}, {"cost_mean", s.cost_mean},
          {"cost_std", s.cost_std},     {"episodes", s.episodes},
          {"seeds", s.seeds}};
}

RunStats run_stats_from_json(const nlohmann::json& j) {
  RunStats s;
  s.algo = j.at("algo").get<std::string>();
  s.reward_mean = j.at("reward_mean").get<double>();
  s.reward_std = j.at("reward_std").get<double>();
  s.cost_mean = j.at("cost_mean").get<double>();
  s.cost_std = j.at("cost_std").get<double>();
  s.episodes = j.at("episodes").get<std::size_t>();
  s.seeds = j.at("seeds").get<std::size_t>();
  return s;
}

// ------------------------------------------------------------ evaluation

std::uint64_t eval_reset_seed(std::size_t seed_index, std::size_t episode) {
  return 1'000'000'007ULL * (seed_index + 1) + episode;
}

RunStats summarize(const std::vector<EpisodeRecord>& records, std::size_t episodes,
                   std::size_t seeds, const std::string& algo, bool pooled) {
  if (episodes == 0 || seeds == 0) throw std::invalid_argument("episodes and seeds must be >= 1");
  std::vector<double> rewards, costs;
  if (pooled) {
    for (const auto& r : records) {
      rewards.push_back(r.reward);
      costs.push_back(r.cost);
    }
  } else {
    rewards.assign(seeds, 0.0);
    costs.assign(seeds, 0.0);
    for (const auto& r : records) {
      rewards.at(r.seed_index) += r.reward / static_cast<double>(episodes);
      costs.at(r.seed_index) += r.cost / static_cast<double>(episodes);
    }
  }
  auto moments = [](const std::vector<double>& v, double& m, double& sd) {
    m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    sd = std::sqrt(var / static_cast<double>(v.size()));
  };
  RunStats s;
  s.algo = algo;
  s.episodes = episodes;
  s.seeds = seeds;
  moments(rewards, s.reward_mean, s.reward_std);
  moments(costs, s.cost_mean, s.cost_std);
  return s;
}

RunStats evaluate(const Actor& actor, const Env& env_proto, std::size_t episodes,
                  std::size_t seeds, const std::string& algo, bool pooled,
                  std::vector<EpisodeRecord>* records) {
  if (episodes == 0 || seeds == 0) throw std::invalid_argument("episodes and seeds must be >= 1");
  const EnvSpec& spec = env_proto.spec();
  if (actor.net().input_size() != spec.state_dim || actor.action_dim() != spec.action_dim)
    throw DimensionError("checkpoint dimensions do not match environment " + env_proto.id());
  std::vector<EpisodeRecord> local;
  auto env = env_proto.clone();
  Rng unused(0);
  for (std::size_t k = 0; k < seeds; ++k) {
    for (std::size_t e = 0; e < episodes; ++e) {
      EpisodeRecord rec;
      rec.seed_index = k;
      rec.reset_seed = eval_reset_seed(k, e);
      std::vector<double> s = env->reset(rec.reset_seed);
      while (!env->done()) {
        auto a = actor.sample(s, unused, true).action;
        StepResult r = env->step(a);
        rec.reward += r.reward;
        rec.cost += r.cost;
        if (records) rec.actions.push_back(std::move(a));
        s = std::move(r.next_state);
      }
      local.push_back(std::move(rec));
    }
  }
  RunStats stats = summarize(local, episodes, seeds, algo, pooled);
  if (records) *records = std::move(local);
  return stats;
}

}  // namespace safeqil
