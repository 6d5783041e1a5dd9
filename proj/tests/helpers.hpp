#pragma once

// Shared fixtures: a small toygoal setup with expert demonstrations and a
// replay buffer of random-action rollouts.

#include <filesystem>
#include <random>

#include "safeqil/agent.hpp"
#include "safeqil/runtime.hpp"

namespace safeqil::testing {

struct Rig {
  MapConfig map;
  std::unique_ptr<Env> env;
  DemoSet demos;
  ReplayBuffer buffer{100000};
};

inline Rig make_rig(std::size_t demo_episodes = 10, std::size_t rollout_steps = 600,
                    std::uint64_t seed = 1) {
  Rig r;
  r.env = make_env("toygoal", r.map);
  r.demos = DemoSet(collect_scripted("toygoal", r.map, demo_episodes, true, 1000, seed));
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> s;
  std::int64_t ep = 0;
  for (std::size_t i = 0; i < rollout_steps; ++i) {
    if (r.env->done()) s = r.env->reset(seed * 7919 + static_cast<std::uint64_t>(ep));
    Transition t;
    t.state = s;
    t.action = {u(rng), u(rng)};
    StepResult res = r.env->step(t.action);
    t.reward = res.reward;
    t.cost = res.cost;
    t.next_state = res.next_state;
    t.done = res.terminal;
    t.episode = ep;
    s = res.next_state;
    if (res.done) ++ep;
    r.buffer.push(std::move(t));
  }
  return r;
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double mean = 0.0,
                              double sd = 1.0) {
  std::normal_distribution<double> n(mean, sd);
  Matrix m(rows, cols);
  for (double& v : m.data) v = n(rng);
  return m;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "safeqil_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace safeqil::testing
