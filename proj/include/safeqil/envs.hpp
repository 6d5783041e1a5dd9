#pragma once

// Constrained 2D environments, the finite gridworld and the scripted safe
// expert. Costs are geometric functions of the agent position and are only
// ever consumed by evaluation and demonstration filtering, never by learners.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "safeqil/numerics.hpp"

namespace safeqil {

struct Hazard {
  double x = 0.0;
  double y = 0.0;
  double radius = 0.0;
};

/// Geometry and controller gains, read from the run config.
struct MapConfig {
  // toygoal
  std::array<double, 2> goal{1.5, 0.0};
  double goal_radius = 0.2;
  std::vector<Hazard> hazards{{0.0, 0.0, 0.5}, {0.9, 1.1, 0.3}, {0.9, -1.1, 0.3}};
  std::array<double, 4> start_box{-1.8, -1.2, -0.6, 0.6};  // xmin xmax ymin ymax
  double goal_bonus = 10.0;
  // toycircle
  double circle_radius = 1.0;
  double boundary = 0.7;
  // shared
  double arena = 2.0;
  double dt = 0.1;
  std::size_t max_episode_steps = 200;
  // scripted expert
  double expert_attraction = 1.0;
  double expert_repulsion = 0.08;
  double expert_tangential = 0.6;
  double expert_influence = 0.4;
  // grid
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;
  std::vector<std::pair<std::size_t, std::size_t>> grid_unsafe{{1, 1}, {1, 2}};
  std::pair<std::size_t, std::size_t> grid_goal{3, 3};
};

struct EnvSpec {
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;
  std::vector<double> action_low;
  std::vector<double> action_high;
  std::size_t max_episode_steps = 0;
};

struct StepResult {
  std::vector<double> next_state;
  double reward = 0.0;
  double cost = 0.0;
  bool done = false;      // episode over (termination or step limit)
  bool terminal = false;  // true MDP termination; bootstrapping stops here
};

/// Everything a client needs to draw the world without environment logic.
struct Scene {
  std::array<double, 2> agent{};
  std::array<double, 2> goal{};
  std::vector<std::array<double, 3>> hazards;
  std::optional<double> boundary;
  double episode_cost = 0.0;
  double episode_reward = 0.0;
  std::array<double, 4> bounds{};  // xmin xmax ymin ymax
};

class EpisodeOver : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual std::string id() const = 0;
  virtual const EnvSpec& spec() const = 0;
  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  /// Throws EpisodeOver once the episode is done.
  virtual StepResult step(std::span<const double> action) = 0;
  virtual Scene scene() const = 0;
  /// Cost of occupying the given state; depends only on its position part.
  virtual double state_cost(std::span<const double> state) const = 0;
  /// Scripted safe controller evaluated at the current state.
  virtual std::vector<double> expert_action() const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;

  bool done() const { return done_; }
  std::size_t steps() const { return steps_; }

 protected:
  bool done_ = true;
  std::size_t steps_ = 0;
  double episode_cost_ = 0.0;
  double episode_reward_ = 0.0;
};

/// Point agent navigating to a goal disc among hazard discs.
/// State: position (2), velocity (2), goal displacement (2), and one
/// displacement per hazard (2 each).
class GoalEnv final : public Env {
 public:
  explicit GoalEnv(MapConfig map);
  std::string id() const override { return "toygoal"; }
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(std::span<const double> action) override;
  Scene scene() const override;
  double state_cost(std::span<const double> state) const override;
  std::vector<double> expert_action() const override;
  std::unique_ptr<Env> clone() const override;

  /// Places the agent (velocity zeroed) and starts a fresh episode there.
  std::vector<double> reset_at(double x, double y);
  std::array<double, 2> position() const { return pos_; }

 private:
  std::vector<double> observe() const;

  MapConfig map_;
  EnvSpec spec_;
  std::array<double, 2> pos_{};
  std::array<double, 2> vel_{};
};

/// Circle-following task: reward is counter-clockwise tangential speed
/// around the origin, cost is charged while |x| exceeds the boundary.
/// State: position (2), velocity (2), distance to each boundary line (2).
class CircleEnv final : public Env {
 public:
  explicit CircleEnv(MapConfig map);
  std::string id() const override { return "toycircle"; }
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(std::span<const double> action) override;
  Scene scene() const override;
  double state_cost(std::span<const double> state) const override;
  std::vector<double> expert_action() const override;
  std::unique_ptr<Env> clone() const override;

  std::vector<double> reset_at(double x, double y);
  std::array<double, 2> position() const { return pos_; }

 private:
  std::vector<double> observe() const;

  MapConfig map_;
  EnvSpec spec_;
  std::array<double, 2> pos_{};
  std::array<double, 2> vel_{};
};

/// Gridworld with continuous action interface: the dominant action axis
/// picks a move, actions inside the 0.5 box keep the agent in place.
/// State: normalized (row, col).
class GridEnv final : public Env {
 public:
  explicit GridEnv(MapConfig map);
  std::string id() const override { return "grid"; }
  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(std::span<const double> action) override;
  Scene scene() const override;
  double state_cost(std::span<const double> state) const override;
  std::vector<double> expert_action() const override;
  std::unique_ptr<Env> clone() const override;

  std::size_t cell() const { return row_ * map_.grid_cols + col_; }

 private:
  std::vector<double> observe() const;
  bool unsafe(std::size_t r, std::size_t c) const;

  MapConfig map_;
  EnvSpec spec_;
  std::size_t row_ = 0;
  std::size_t col_ = 0;
};

/// Discrete move used by the grid: 0 stay, 1 row+1, 2 row-1, 3 col-1, 4 col+1.
std::size_t grid_action_index(std::span<const double> action);

/// Ids: "toygoal", "toycircle", "grid".
std::unique_ptr<Env> make_env(std::string_view id, const MapConfig& map);

/// True when (x, y) lies strictly inside one of the discs.
bool inside_any_hazard(const std::vector<Hazard>& hazards, double x, double y);

/// Potential-field action for the goal task: attraction toward the goal,
/// radial repulsion from nearby hazards plus a tangential slide around them.
/// The result keeps its direction and is scaled into the unit box.
std::array<double, 2> goal_expert_action(const MapConfig& map,
                                         std::array<double, 2> position);

/// Counter-clockwise motion along the reference circle with boundary push.
std::array<double, 2> circle_expert_action(const MapConfig& map,
                                           std::array<double, 2> position);

/// Finite deterministic MDP with binary safety labels (theorem oracle input).
struct TabularMDP {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<std::vector<std::size_t>> next;   // [s][a] -> s'
  std::vector<std::vector<double>> task_reward;  // r_d[s][a]
  std::vector<int> safe;                         // I^S[s] in {0, 1}
  std::vector<double> safety_reward;             // r_s[s]
  std::vector<std::pair<std::size_t, std::size_t>> support;  // (s, a) pairs
  std::size_t horizon = 1;
  double gamma = 0.99;

  bool in_support(std::size_t s, std::size_t a) const;
  bool state_in_support(std::size_t s) const;
  /// Human-readable list of violated structural invariants (empty when valid):
  /// table shapes, r_s <= 0 <= r_d, supported pairs labelled safe.
  std::vector<std::string> invariant_violations() const;
};

nlohmann::json to_json(const TabularMDP& mdp);
TabularMDP tabular_mdp_from_json(const nlohmann::json& j);

/// Gridworld exported as a TabularMDP: actions {stay, up, down, left, right},
/// support = the expert path from cell 0 plus waiting at the goal, r_d = 1 on
/// supported pairs and 0 elsewhere, r_s = -1 on unsafe cells.
TabularMDP grid_to_tabular(const MapConfig& map, std::size_t horizon, double gamma);

}  // namespace safeqil
