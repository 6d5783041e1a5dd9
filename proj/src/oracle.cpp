#include "safeqil/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace safeqil {

double mixed_reward(const TabularMDP& mdp, std::size_t s, std::size_t a) {
  return mdp.safe[s] ? mdp.task_reward[s][a] : mdp.safety_reward[s];
}

namespace {

void check_shapes(const TabularMDP& mdp, const std::vector<std::size_t>& policy,
                  const char* what) {
  if (mdp.next.size() != mdp.n_states || mdp.task_reward.size() != mdp.n_states ||
      mdp.safe.size() != mdp.n_states || mdp.safety_reward.size() != mdp.n_states)
    throw TheoremPreconditionError("malformed tabular MDP", 0);
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    if (mdp.next[s].size() != mdp.n_actions || mdp.task_reward[s].size() != mdp.n_actions)
      throw TheoremPreconditionError("malformed tabular MDP row", s);
  if (policy.size() != mdp.n_states)
    throw TheoremPreconditionError(std::string(what) + " must cover every state", 0);
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    if (policy[s] >= mdp.n_actions)
      throw TheoremPreconditionError(std::string(what) + " picks an invalid action", s);
}

}  // namespace

TabularQ evaluate_policy(const TabularMDP& mdp, const std::vector<std::size_t>& policy) {
  check_shapes(mdp, policy, "policy");
  TabularQ out;
  out.horizon = mdp.horizon;
  out.gamma = mdp.gamma;
  out.q.assign(mdp.n_states, std::vector<double>(mdp.n_actions, 0.0));
  if (mdp.horizon == 0) return out;
  for (std::size_t s = 0; s < mdp.n_states; ++s)
    for (std::size_t a = 0; a < mdp.n_actions; ++a) out.q[s][a] = mixed_reward(mdp, s, a);
  for (std::size_t k = 2; k <= mdp.horizon; ++k) {
    std::vector<std::vector<double>> next = out.q;
    for (std::size_t s = 0; s < mdp.n_states; ++s)
      for (std::size_t a = 0; a < mdp.n_actions; ++a) {
        const std::size_t sn = mdp.next[s][a];
        next[s][a] = mixed_reward(mdp, s, a) + mdp.gamma * out.q[sn][policy[sn]];
      }
    out.q = std::move(next);
  }
  return out;
}

double rollout_return(const TabularMDP& mdp, const std::vector<std::size_t>& policy,
                      std::size_t s, std::size_t a) {
  double total = 0.0;
  double discount = 1.0;
  for (std::size_t t = 0; t < mdp.horizon; ++t) {
    total += discount * mixed_reward(mdp, s, a);
    discount *= mdp.gamma;
    s = mdp.next[s][a];
    a = policy[s];
  }
  return total;
}

TheoremReport verify_theorem(const TabularMDP& mdp, const std::vector<std::size_t>& policy,
                             const std::vector<std::size_t>& demo_policy, double tolerance) {
  check_shapes(mdp, policy, "policy");
  check_shapes(mdp, demo_policy, "demo policy");
  TheoremReport report;
  for (const std::string& v : mdp.invariant_violations()) {
    report.hypotheses_hold = false;
    report.hypothesis_failures.push_back(v);
  }
  for (const auto& [s, a] : mdp.support) {
    if (s >= mdp.n_states || a >= mdp.n_actions)
      throw TheoremPreconditionError("support pair out of range", s);
    const std::size_t sn = mdp.next[s][a];
    if (!mdp.in_support(sn, demo_policy[sn]))
      throw TheoremPreconditionError(
          "demo policy leaves the support at state " + std::to_string(sn), sn);
  }
  if (mdp.support.empty()) return report;

  const TabularQ demo_q = evaluate_policy(mdp, demo_policy);
  double bound = std::numeric_limits<double>::infinity();
  for (const auto& [s, a] : mdp.support) bound = std::min(bound, demo_q.q[s][a]);
  report.bound = bound;

  const TabularQ q = evaluate_policy(mdp, policy);
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    if (mdp.state_in_support(s)) continue;
    for (std::size_t a = 0; a < mdp.n_actions; ++a) {
      ++report.checked_pairs;
      if (q.q[s][a] > bound + tolerance) report.violations.push_back({s, a, q.q[s][a], bound});
    }
  }
  return report;
}

nlohmann::json to_json(const TheoremReport& r) {
  nlohmann::json v = nlohmann::json::array();
  for (const auto& x : r.violations)
    v.push_back({{"state", x.state}, {"action", x.action}, {"lhs", x.lhs}, {"rhs", x.rhs}});
  return {{"hypotheses_hold", r.hypotheses_hold},
          {"hypothesis_failures", r.hypothesis_failures},
          {"bound", r.bound},
          {"checked_pairs", r.checked_pairs},
          {"violations", v}};
}

TheoremInstance random_theorem_instance(Rng& rng) {
  auto uniform_int = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  TheoremInstance inst;
  TabularMDP& m = inst.mdp;
  m.n_states = uniform_int(3, 9);
  m.n_actions = uniform_int(2, 4);
  m.horizon = uniform_int(1, 8);
  m.gamma = uniform(0.0, 0.99);
  m.next.assign(m.n_states, std::vector<std::size_t>(m.n_actions));
  for (auto& row : m.next)
    for (auto& n : row) n = uniform_int(0, m.n_states - 1);
  m.safe.resize(m.n_states);
  m.safety_reward.resize(m.n_states);
  for (std::size_t s = 0; s < m.n_states; ++s) {
    m.safe[s] = uniform(0.0, 1.0) < 0.6 ? 1 : 0;
    m.safety_reward[s] = -uniform(0.0, 3.0);
  }

  // Support states: a non-empty subset of the safe states, closed under the
  // demo policy. At least one state stays outside so the check is not vacuous.
  std::vector<std::size_t> support_states;
  for (std::size_t s = 0; s < m.n_states; ++s)
    if (m.safe[s] && uniform(0.0, 1.0) < 0.5) support_states.push_back(s);
  if (support_states.empty()) {
    const std::size_t s = uniform_int(0, m.n_states - 2);
    m.safe[s] = 1;
    support_states.push_back(s);
  }
  if (support_states.size() == m.n_states) support_states.pop_back();
  auto random_support_state = [&] {
    return support_states[uniform_int(0, support_states.size() - 1)];
  };
  inst.demo_policy.assign(m.n_states, 0);
  for (std::size_t s = 0; s < m.n_states; ++s) inst.demo_policy[s] = uniform_int(0, m.n_actions - 1);
  for (std::size_t s : support_states) {
    const std::size_t a = inst.demo_policy[s];
    m.next[s][a] = random_support_state();
    m.support.emplace_back(s, a);
    // Occasionally a second demonstrated action from the same state.
    if (m.n_actions > 1 && uniform(0.0, 1.0) < 0.3) {
      const std::size_t b = (a + 1) % m.n_actions;
      m.next[s][b] = random_support_state();
      m.support.emplace_back(s, b);
    }
  }

  const double c = uniform(0.5, 2.0);
  m.task_reward.assign(m.n_states, std::vector<double>(m.n_actions));
  for (auto& row : m.task_reward)
    for (auto& r : row) r = uniform(0.0, c);
  for (const auto& [s, a] : m.support) m.task_reward[s][a] = c;

  inst.policy.resize(m.n_states);
  for (auto& a : inst.policy) a = uniform_int(0, m.n_actions - 1);
  return inst;
}

TheoremInstance positive_penalty_instance() {
  TheoremInstance inst;
  TabularMDP& m = inst.mdp;
  m.n_states = 2;
  m.n_actions = 1;
  m.horizon = 3;
  m.gamma = 0.9;
  m.next = {{0}, {1}};
  m.task_reward = {{1.0}, {0.0}};
  m.safe = {1, 0};
  m.safety_reward = {0.0, 5.0};
  m.support = {{0, 0}};
  inst.policy = {0, 0};
  inst.demo_policy = {0, 0};
  return inst;
}

TheoremInstance grid_theorem_instance(const MapConfig& map, std::size_t horizon,
                                      double gamma) {
  TheoremInstance inst;
  inst.mdp = grid_to_tabular(map, horizon, gamma);
  const std::size_t cols = map.grid_cols;
  inst.demo_policy.assign(inst.mdp.n_states, 0);
  for (const auto& [s, a] : inst.mdp.support) inst.demo_policy[s] = a;
  // Walk toward the first unsafe cell and stay there.
  const auto [ur, uc] = map.grid_unsafe.front();
  inst.policy.assign(inst.mdp.n_states, 0);
  for (std::size_t s = 0; s < inst.mdp.n_states; ++s) {
    const std::size_t r = s / cols;
    const std::size_t c = s % cols;
    if (r < ur) inst.policy[s] = 1;
    else if (r > ur) inst.policy[s] = 2;
    else if (c < uc) inst.policy[s] = 4;
    else if (c > uc) inst.policy[s] = 3;
  }
  return inst;
}

std::size_t brute_force_retrieve(const std::vector<std::vector<double>>& states,
                                 const std::vector<double>& query) {
  if (states.empty()) throw std::invalid_argument("brute_force_retrieve needs states");
  double qq = 0.0;
  for (double v : query) qq += v * v;
  const double qn = std::sqrt(qq);
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].size() != query.size())
      throw DimensionError("brute_force_retrieve: dimension mismatch");
    double dot = 0.0, ss = 0.0;
    for (std::size_t k = 0; k < query.size(); ++k) {
      dot += states[i][k] * query[k];
      ss += states[i][k] * states[i][k];
    }
    const double sn = std::sqrt(ss);
    const double sim = (qn == 0.0 || sn == 0.0) ? -1.0 : dot / (qn * sn);
    if (sim > best_sim) {
      best_sim = sim;
      best = i;
    }
  }
  return best;
}

std::vector<double> finite_diff_grad(const std::function<double()>& f,
                                     std::span<double> params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double x = params[i];
    params[i] = x + h;
    const double up = f();
    params[i] = x - h;
    const double down = f();
    params[i] = x;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor) {
  if (analytic.size() != numeric.size())
    throw DimensionError("gradient sizes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    if (std::abs(a) < floor && std::abs(n) < floor) continue;
    worst = std::max(worst, std::abs(a - n) / std::max(std::abs(a), std::abs(n)));
  }
  return worst;
}

}  // namespace safeqil
