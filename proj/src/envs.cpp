#include "safeqil/envs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

namespace safeqil {

namespace {

constexpr std::size_t kMaxRejections = 100000;

std::array<double, 2> scale_into_box(std::array<double, 2> a) {
  const double m = std::max(std::abs(a[0]), std::abs(a[1]));
  if (m > 0.0) {
    a[0] /= m;
    a[1] /= m;
  }
  return a;
}

std::array<double, 2> clip_action(std::span<const double> action,
                                  const EnvSpec& spec) {
  if (action.size() != spec.action_dim)
    throw DimensionError("action has " + std::to_string(action.size()) +
                         " entries, expected " + std::to_string(spec.action_dim));
  std::array<double, 2> a{};
  for (std::size_t i = 0; i < 2; ++i) {
    if (!std::isfinite(action[i])) throw NonFiniteError("non-finite action");
    a[i] = std::clamp(action[i], spec.action_low[i], spec.action_high[i]);
  }
  return a;
}

EnvSpec box_spec(std::size_t state_dim, std::size_t max_steps) {
  return EnvSpec{state_dim, 2, {-1.0, -1.0}, {1.0, 1.0}, max_steps};
}

}  // namespace

bool inside_any_hazard(const std::vector<Hazard>& hazards, double x, double y) {
  return std::any_of(hazards.begin(), hazards.end(), [&](const Hazard& h) {
    return std::hypot(x - h.x, y - h.y) < h.radius;
  });
}

std::array<double, 2> goal_expert_action(const MapConfig& map,
                                         std::array<double, 2> p) {
  std::array<double, 2> to_goal{map.goal[0] - p[0], map.goal[1] - p[1]};
  const double dist = std::hypot(to_goal[0], to_goal[1]);
  std::array<double, 2> a{0.0, 0.0};
  if (dist > 0.0) {
    a[0] = map.expert_attraction * to_goal[0] / dist;
    a[1] = map.expert_attraction * to_goal[1] / dist;
  }
  for (const Hazard& h : map.hazards) {
    const double dx = p[0] - h.x;
    const double dy = p[1] - h.y;
    const double center = std::hypot(dx, dy);
    const double surface = center - h.radius;
    if (surface >= map.expert_influence || center == 0.0) continue;
    const double rx = dx / center;
    const double ry = dy / center;
    const double s = std::max(surface, 0.02);
    const double push = map.expert_repulsion * (1.0 / s - 1.0 / map.expert_influence);
    a[0] += push * rx;
    a[1] += push * ry;
    // Slide around the hazard on the side that keeps heading toward the goal.
    double tx = -ry;
    double ty = rx;
    if (tx * to_goal[0] + ty * to_goal[1] < 0.0) {
      tx = -tx;
      ty = -ty;
    }
    const double slide =
        map.expert_tangential * (1.0 - std::max(surface, 0.0) / map.expert_influence);
    a[0] += slide * tx;
    a[1] += slide * ty;
  }
  return scale_into_box(a);
}

std::array<double, 2> circle_expert_action(const MapConfig& map,
                                           std::array<double, 2> p) {
  const double r = std::hypot(p[0], p[1]);
  std::array<double, 2> a{0.0, 0.0};
  if (r > 1e-9) {
    const double rx = p[0] / r;
    const double ry = p[1] / r;
    a[0] = -ry - 1.5 * (r - map.circle_radius) * rx;
    a[1] = rx - 1.5 * (r - map.circle_radius) * ry;
  } else {
    a[1] = 1.0;
  }
  const double margin = 0.15;
  const double inner = map.boundary - margin;
  if (std::abs(p[0]) > inner) {
    const double depth = (std::abs(p[0]) - inner) / margin;
    a[0] -= std::copysign(4.0 * depth, p[0]);
  }
  return scale_into_box(a);
}

// ---------------------------------------------------------------- GoalEnv

GoalEnv::GoalEnv(MapConfig map)
    : map_(std::move(map)),
      spec_(box_spec(6 + 2 * map_.hazards.size(), map_.max_episode_steps)) {}

std::vector<double> GoalEnv::observe() const {
  std::vector<double> s{pos_[0], pos_[1], vel_[0], vel_[1],
                        map_.goal[0] - pos_[0], map_.goal[1] - pos_[1]};
  for (const Hazard& h : map_.hazards) {
    s.push_back(h.x - pos_[0]);
    s.push_back(h.y - pos_[1]);
  }
  return s;
}

std::vector<double> GoalEnv::reset(std::uint64_t seed) {
  Rng rng(seed);
  const auto& b = map_.start_box;
  std::uniform_real_distribution<double> ux(b[0], b[1]);
  std::uniform_real_distribution<double> uy(b[2], b[3]);
  for (std::size_t i = 0; i < kMaxRejections; ++i) {
    const double x = ux(rng);
    const double y = uy(rng);
    if (inside_any_hazard(map_.hazards, x, y)) continue;
    if (std::hypot(x - map_.goal[0], y - map_.goal[1]) <= map_.goal_radius) continue;
    return reset_at(x, y);
  }
  throw std::runtime_error("toygoal: start box is covered by hazards or the goal");
}

std::vector<double> GoalEnv::reset_at(double x, double y) {
  pos_ = {x, y};
  vel_ = {0.0, 0.0};
  steps_ = 0;
  done_ = false;
  episode_cost_ = 0.0;
  episode_reward_ = 0.0;
  return observe();
}

StepResult GoalEnv::step(std::span<const double> action) {
  if (done_) throw EpisodeOver("toygoal: step after episode end; call reset");
  const auto a = clip_action(action, spec_);
  const double before = std::hypot(map_.goal[0] - pos_[0], map_.goal[1] - pos_[1]);
  pos_[0] = std::clamp(pos_[0] + map_.dt * a[0], -map_.arena, map_.arena);
  pos_[1] = std::clamp(pos_[1] + map_.dt * a[1], -map_.arena, map_.arena);
  vel_ = a;
  const double after = std::hypot(map_.goal[0] - pos_[0], map_.goal[1] - pos_[1]);
  StepResult out;
  out.reward = before - after;
  if (after <= map_.goal_radius) {
    out.reward += map_.goal_bonus;
    out.terminal = true;
  }
  out.cost = inside_any_hazard(map_.hazards, pos_[0], pos_[1]) ? 1.0 : 0.0;
  ++steps_;
  out.done = out.terminal || steps_ >= spec_.max_episode_steps;
  done_ = out.done;
  episode_cost_ += out.cost;
  episode_reward_ += out.reward;
  out.next_state = observe();
  return out;
}

double GoalEnv::state_cost(std::span<const double> state) const {
  return inside_any_hazard(map_.hazards, state[0], state[1]) ? 1.0 : 0.0;
}

Scene GoalEnv::scene() const {
  Scene sc;
  sc.agent = pos_;
  sc.goal = map_.goal;
  for (const Hazard& h : map_.hazards) sc.hazards.push_back({h.x, h.y, h.radius});
  sc.episode_cost = episode_cost_;
  sc.episode_reward = episode_reward_;
  sc.bounds = {-map_.arena, map_.arena, -map_.arena, map_.arena};
  return sc;
}

std::vector<double> GoalEnv::expert_action() const {
  const auto a = goal_expert_action(map_, pos_);
  return {a[0], a[1]};
}

std::unique_ptr<Env> GoalEnv::clone() const { return std::make_unique<GoalEnv>(*this); }

// -------------------------------------------------------------- CircleEnv

CircleEnv::CircleEnv(MapConfig map)
    : map_(std::move(map)), spec_(box_spec(6, map_.max_episode_steps)) {}

std::vector<double> CircleEnv::observe() const {
  return {pos_[0], pos_[1], vel_[0], vel_[1], map_.boundary - pos_[0],
          map_.boundary + pos_[0]};
}

std::vector<double> CircleEnv::reset(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-map_.circle_radius, map_.circle_radius);
  for (std::size_t i = 0; i < kMaxRejections; ++i) {
    const double x = u(rng);
    const double y = u(rng);
    if (std::abs(x) > map_.boundary) continue;
    return reset_at(x, y);
  }
  throw std::runtime_error("toycircle: could not sample an initial position");
}

std::vector<double> CircleEnv::reset_at(double x, double y) {
  pos_ = {x, y};
  vel_ = {0.0, 0.0};
  steps_ = 0;
  done_ = false;
  episode_cost_ = 0.0;
  episode_reward_ = 0.0;
  return observe();
}

StepResult CircleEnv::step(std::span<const double> action) {
  if (done_) throw EpisodeOver("toycircle: step after episode end; call reset");
  const auto a = clip_action(action, spec_);
  pos_[0] = std::clamp(pos_[0] + map_.dt * a[0], -map_.arena, map_.arena);
  pos_[1] = std::clamp(pos_[1] + map_.dt * a[1], -map_.arena, map_.arena);
  vel_ = a;
  StepResult out;
  const double r = std::hypot(pos_[0], pos_[1]);
  out.reward = r > 1e-9 ? (pos_[0] * a[1] - pos_[1] * a[0]) / r : 0.0;
  out.cost = std::abs(pos_[0]) > map_.boundary ? 1.0 : 0.0;
  ++steps_;
  out.done = steps_ >= spec_.max_episode_steps;
  done_ = out.done;
  episode_cost_ += out.cost;
  episode_reward_ += out.reward;
  out.next_state = observe();
  return out;
}

double CircleEnv::state_cost(std::span<const double> state) const {
  return std::abs(state[0]) > map_.boundary ? 1.0 : 0.0;
}

Scene CircleEnv::scene() const {
  Scene sc;
  sc.agent = pos_;
  sc.goal = {0.0, 0.0};
  sc.boundary = map_.boundary;
  sc.episode_cost = episode_cost_;
  sc.episode_reward = episode_reward_;
  sc.bounds = {-map_.arena, map_.arena, -map_.arena, map_.arena};
  return sc;
}

std::vector<double> CircleEnv::expert_action() const {
  const auto a = circle_expert_action(map_, pos_);
  return {a[0], a[1]};
}

std::unique_ptr<Env> CircleEnv::clone() const {
  return std::make_unique<CircleEnv>(*this);
}

// ---------------------------------------------------------------- GridEnv

std::size_t grid_action_index(std::span<const double> a) {
  const double ax = std::abs(a[0]);
  const double ay = std::abs(a[1]);
  if (std::max(ax, ay) < 0.5) return 0;
  if (ay > ax) return a[1] > 0.0 ? 1 : 2;
  return a[0] > 0.0 ? 4 : 3;
}

namespace {

std::pair<std::size_t, std::size_t> grid_move(const MapConfig& map, std::size_t r,
                                              std::size_t c, std::size_t action) {
  switch (action) {
    case 1: if (r + 1 < map.grid_rows) ++r; break;
    case 2: if (r > 0) --r; break;
    case 3: if (c > 0) --c; break;
    case 4: if (c + 1 < map.grid_cols) ++c; break;
    default: break;
  }
  return {r, c};
}

bool grid_unsafe(const MapConfig& map, std::size_t r, std::size_t c) {
  return std::find(map.grid_unsafe.begin(), map.grid_unsafe.end(),
                   std::make_pair(r, c)) != map.grid_unsafe.end();
}

// First action of a shortest path through safe cells; 0 when unreachable.
std::size_t grid_expert_move(const MapConfig& map, std::size_t r0, std::size_t c0) {
  const std::size_t cols = map.grid_cols;
  const std::size_t goal = map.grid_goal.first * cols + map.grid_goal.second;
  const std::size_t start = r0 * cols + c0;
  if (start == goal) return 0;
  std::vector<std::size_t> first(map.grid_rows * cols, 0);
  std::vector<bool> seen(map.grid_rows * cols, false);
  std::deque<std::size_t> queue{start};
  seen[start] = true;
  while (!queue.empty()) {
    const std::size_t s = queue.front();
    queue.pop_front();
    for (std::size_t a = 1; a <= 4; ++a) {
      const auto [r, c] = grid_move(map, s / cols, s % cols, a);
      const std::size_t n = r * cols + c;
      if (seen[n] || grid_unsafe(map, r, c)) continue;
      seen[n] = true;
      first[n] = (s == start) ? a : first[s];
      if (n == goal) return first[n];
      queue.push_back(n);
    }
  }
  return 0;
}

std::vector<double> grid_action_vector(std::size_t a) {
  switch (a) {
    case 1: return {0.0, 1.0};
    case 2: return {0.0, -1.0};
    case 3: return {-1.0, 0.0};
    case 4: return {1.0, 0.0};
    default: return {0.0, 0.0};
  }
}

}  // namespace

GridEnv::GridEnv(MapConfig map)
    : map_(std::move(map)), spec_(box_spec(2, map_.max_episode_steps)) {
  if (map_.grid_rows < 2 || map_.grid_cols < 2)
    throw std::invalid_argument("grid: needs at least 2 rows and 2 columns");
}

bool GridEnv::unsafe(std::size_t r, std::size_t c) const {
  return grid_unsafe(map_, r, c);
}

std::vector<double> GridEnv::observe() const {
  return {static_cast<double>(row_) / static_cast<double>(map_.grid_rows - 1),
          static_cast<double>(col_) / static_cast<double>(map_.grid_cols - 1)};
}

std::vector<double> GridEnv::reset(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> ur(0, map_.grid_rows - 1);
  std::uniform_int_distribution<std::size_t> uc(0, map_.grid_cols - 1);
  for (std::size_t i = 0; i < kMaxRejections; ++i) {
    const std::size_t r = ur(rng);
    const std::size_t c = uc(rng);
    if (unsafe(r, c) || std::make_pair(r, c) == map_.grid_goal) continue;
    row_ = r;
    col_ = c;
    steps_ = 0;
    done_ = false;
    episode_cost_ = 0.0;
    episode_reward_ = 0.0;
    return observe();
  }
  throw std::runtime_error("grid: no safe start cell");
}

StepResult GridEnv::step(std::span<const double> action) {
  if (done_) throw EpisodeOver("grid: step after episode end; call reset");
  clip_action(action, spec_);
  const auto [r, c] = grid_move(map_, row_, col_, grid_action_index(action));
  row_ = r;
  col_ = c;
  StepResult out;
  out.terminal = std::make_pair(r, c) == map_.grid_goal;
  out.reward = out.terminal ? 1.0 : 0.0;
  out.cost = unsafe(r, c) ? 1.0 : 0.0;
  ++steps_;
  out.done = out.terminal || steps_ >= spec_.max_episode_steps;
  done_ = out.done;
  episode_cost_ += out.cost;
  episode_reward_ += out.reward;
  out.next_state = observe();
  return out;
}

double GridEnv::state_cost(std::span<const double> state) const {
  const auto r = static_cast<std::size_t>(
      std::lround(state[0] * static_cast<double>(map_.grid_rows - 1)));
  const auto c = static_cast<std::size_t>(
      std::lround(state[1] * static_cast<double>(map_.grid_cols - 1)));
  return unsafe(r, c) ? 1.0 : 0.0;
}

Scene GridEnv::scene() const {
  Scene sc;
  sc.agent = {static_cast<double>(col_), static_cast<double>(row_)};
  sc.goal = {static_cast<double>(map_.grid_goal.second),
             static_cast<double>(map_.grid_goal.first)};
  for (const auto& [r, c] : map_.grid_unsafe)
    sc.hazards.push_back({static_cast<double>(c), static_cast<double>(r), 0.5});
  sc.episode_cost = episode_cost_;
  sc.episode_reward = episode_reward_;
  sc.bounds = {-0.5, static_cast<double>(map_.grid_cols) - 0.5, -0.5,
               static_cast<double>(map_.grid_rows) - 0.5};
  return sc;
}

std::vector<double> GridEnv::expert_action() const {
  return grid_action_vector(grid_expert_move(map_, row_, col_));
}

std::unique_ptr<Env> GridEnv::clone() const { return std::make_unique<GridEnv>(*this); }

std::unique_ptr<Env> make_env(std::string_view id, const MapConfig& map) {
  if (id == "toygoal") return std::make_unique<GoalEnv>(map);
  if (id == "toycircle") return std::make_unique<CircleEnv>(map);
  if (id == "grid") return std::make_unique<GridEnv>(map);
  throw std::invalid_argument("unknown environment id: " + std::string(id));
}

// ------------------------------------------------------------- TabularMDP

bool TabularMDP::in_support(std::size_t s, std::size_t a) const {
  return std::find(support.begin(), support.end(), std::make_pair(s, a)) !=
         support.end();
}

bool TabularMDP::state_in_support(std::size_t s) const {
  return std::any_of(support.begin(), support.end(),
                     [s](const auto& p) { return p.first == s; });
}

std::vector<std::string> TabularMDP::invariant_violations() const {
  std::vector<std::string> out;
  if (n_states == 0 || n_actions == 0) out.push_back("empty state or action set");
  if (next.size() != n_states || task_reward.size() != n_states ||
      safe.size() != n_states || safety_reward.size() != n_states) {
    out.push_back("table sizes do not match n_states");
    return out;
  }
  for (std::size_t s = 0; s < n_states; ++s) {
    if (next[s].size() != n_actions || task_reward[s].size() != n_actions) {
      out.push_back("row " + std::to_string(s) + " has the wrong action count");
      continue;
    }
    if (safe[s] != 0 && safe[s] != 1)
      out.push_back("safety label of state " + std::to_string(s) + " is not binary");
    if (safety_reward[s] > 0.0)
      out.push_back("r_s(" + std::to_string(s) + ") > 0");
    for (std::size_t a = 0; a < n_actions; ++a) {
      if (next[s][a] >= n_states)
        out.push_back("transition (" + std::to_string(s) + "," + std::to_string(a) +
                      ") leaves the state space");
      if (task_reward[s][a] < 0.0)
        out.push_back("r_d(" + std::to_string(s) + "," + std::to_string(a) + ") < 0");
    }
  }
  for (const auto& [s, a] : support) {
    if (s >= n_states || a >= n_actions) {
      out.push_back("support pair out of range");
      continue;
    }
    if (safe[s] != 1)
      out.push_back("supported state " + std::to_string(s) + " is labelled unsafe");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) out.push_back("discount outside [0, 1]");
  return out;
}

nlohmann::json to_json(const TabularMDP& m) {
  nlohmann::json support = nlohmann::json::array();
  for (const auto& [s, a] : m.support) support.push_back({s, a});
  return {{"n_states", m.n_states},       {"n_actions", m.n_actions},
          {"next", m.next},               {"task_reward", m.task_reward},
          {"safe", m.safe},               {"safety_reward", m.safety_reward},
          {"support", support},           {"horizon", m.horizon},
          {"gamma", m.gamma}};
}

TabularMDP tabular_mdp_from_json(const nlohmann::json& j) {
  TabularMDP m;
  m.n_states = j.at("n_states").get<std::size_t>();
  m.n_actions = j.at("n_actions").get<std::size_t>();
  m.next = j.at("next").get<std::vector<std::vector<std::size_t>>>();
  m.task_reward = j.at("task_reward").get<std::vector<std::vector<double>>>();
  m.safe = j.at("safe").get<std::vector<int>>();
  m.safety_reward = j.at("safety_reward").get<std::vector<double>>();
  for (const auto& p : j.at("support"))
    m.support.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
  m.horizon = j.at("horizon").get<std::size_t>();
  m.gamma = j.at("gamma").get<double>();
  return m;
}

TabularMDP grid_to_tabular(const MapConfig& map, std::size_t horizon, double gamma) {
  TabularMDP m;
  const std::size_t cols = map.grid_cols;
  m.n_states = map.grid_rows * cols;
  m.n_actions = 5;
  m.horizon = horizon;
  m.gamma = gamma;
  const std::size_t goal = map.grid_goal.first * cols + map.grid_goal.second;
  for (std::size_t s = 0; s < m.n_states; ++s) {
    const std::size_t r = s / cols;
    const std::size_t c = s % cols;
    std::vector<std::size_t> row_next;
    std::vector<double> row_reward;
    for (std::size_t a = 0; a < 5; ++a) {
      const auto [nr, nc] = grid_move(map, r, c, a);
      const std::size_t n = nr * cols + nc;
      row_next.push_back(n);
      row_reward.push_back(0.0);
    }
    m.next.push_back(std::move(row_next));
    m.task_reward.push_back(std::move(row_reward));
    const bool bad = grid_unsafe(map, r, c);
    m.safe.push_back(bad ? 0 : 1);
    m.safety_reward.push_back(bad ? -1.0 : 0.0);
  }
  // Expert path from cell 0 to the goal, then waiting at the goal.
  std::set<std::size_t> visited;
  std::size_t s = 0;
  while (s != goal && visited.insert(s).second) {
    const std::size_t a = grid_expert_move(map, s / cols, s % cols);
    if (a == 0) break;
    m.support.emplace_back(s, a);
    s = m.next[s][a];
  }
  if (s == goal) m.support.emplace_back(goal, 0);
  for (const auto& [ss, a] : m.support) m.task_reward[ss][a] = 1.0;
  return m;
}

}  // namespace safeqil
