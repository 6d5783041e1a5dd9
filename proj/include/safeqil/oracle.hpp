#pragma once

// Brute-force verifiers: exact finite-horizon policy evaluation on tabular
// MDPs, the value-bound inequality checker, exhaustive retrieval and central
// finite differences.

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeqil/envs.hpp"
#include "safeqil/numerics.hpp"

namespace safeqil {

struct TabularQ {
  std::vector<std::vector<double>> q;  // [s][a]
  std::size_t horizon = 0;
  double gamma = 0.0;
};

/// R(s, a) = I(s) r_d(s, a) + (1 - I(s)) r_s(s).
double mixed_reward(const TabularMDP& mdp, std::size_t s, std::size_t a);

/// Backward induction: Q_1 = R, Q_k(s, a) = R(s, a) + g Q_{k-1}(s', pi(s')),
/// returned at k = horizon.
TabularQ evaluate_policy(const TabularMDP& mdp, const std::vector<std::size_t>& policy);

/// Discounted sum along the single rollout that starts with (s, a) and then
/// follows the policy for horizon steps in total.
double rollout_return(const TabularMDP& mdp, const std::vector<std::size_t>& policy,
                      std::size_t s, std::size_t a);

class TheoremPreconditionError : public std::invalid_argument {
 public:
  TheoremPreconditionError(const std::string& msg, std::size_t state)
      : std::invalid_argument(msg), state_(state) {}
  std::size_t state() const { return state_; }

 private:
  std::size_t state_;
};

struct TheoremViolation {
  std::size_t state = 0;
  std::size_t action = 0;
  double lhs = 0.0;  // Q^pi(s, a)
  double rhs = 0.0;  // min over the support of Q^{pi_d}
};

struct TheoremReport {
  bool hypotheses_hold = true;
  std::vector<std::string> hypothesis_failures;
  double bound = 0.0;
  std::size_t checked_pairs = 0;
  std::vector<TheoremViolation> violations;
};

/// Checks Q^pi(s, a) <= min_{(s_d, a_d) in support} Q^{pi_d}(s_d, a_d) for
/// every pair whose state is outside the support. Throws
/// TheoremPreconditionError when the demo policy leaves the support or the
/// tables are malformed. Sign conditions on the rewards are reported in
/// hypothesis_failures but do not stop the check.
TheoremReport verify_theorem(const TabularMDP& mdp, const std::vector<std::size_t>& policy,
                             const std::vector<std::size_t>& demo_policy,
                             double tolerance = 1e-9);

nlohmann::json to_json(const TheoremReport& report);

/// Random instance meeting the inequality's hypotheses: a closed demo support
/// of safe states on which the demo collects the largest task reward c, every
/// other task reward in [0, c], and r_s <= 0.
struct TheoremInstance {
  TabularMDP mdp;
  std::vector<std::size_t> policy;
  std::vector<std::size_t> demo_policy;
};
TheoremInstance random_theorem_instance(Rng& rng);

/// Two-state instance with r_s > 0 on an unsafe absorbing state.
TheoremInstance positive_penalty_instance();

/// 4x4 gridworld fixture with its expert demo policy and a policy that walks
/// into the unsafe cells.
TheoremInstance grid_theorem_instance(const MapConfig& map, std::size_t horizon, double gamma);

/// Exhaustive argmax of cosine similarity over rows, lowest index on ties,
/// -1 for pairs with a zero vector.
std::size_t brute_force_retrieve(const std::vector<std::vector<double>>& states,
                                 const std::vector<double>& query);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
/// params is restored before returning.
std::vector<double> finite_diff_grad(const std::function<double()>& f,
                                     std::span<double> params, double h);

/// Largest relative error between analytic and numeric gradients; pairs with
/// both magnitudes below floor are skipped.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor = 1e-8);

}  // namespace safeqil
