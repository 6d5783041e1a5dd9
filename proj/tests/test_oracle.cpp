#include <doctest.h>

#include <fstream>
#include <random>

#include "gradient_checks.hpp"
#include "helpers.hpp"

using namespace safeqil;
using namespace safeqil::testing;

namespace {

TabularMDP chain(std::size_t horizon, double gamma) {
  TabularMDP m;
  m.n_states = 3;
  m.n_actions = 1;
  m.next = {{1}, {2}, {2}};
  m.task_reward = {{1.0}, {1.0}, {1.0}};
  m.safe = {1, 1, 1};
  m.safety_reward = {0.0, 0.0, 0.0};
  m.support = {{0, 0}, {1, 0}, {2, 0}};
  m.horizon = horizon;
  m.gamma = gamma;
  return m;
}

nlohmann::json load_fixture() {
  std::ifstream in(std::string(SAFEQIL_FIXTURES) + "/grid4x4.json");
  REQUIRE(in.good());
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_SUITE("oracle") {
  TEST_CASE("single-step horizon returns the mixed reward") {
    Rng rng(1);
    for (int k = 0; k < 20; ++k) {
      TheoremInstance inst = random_theorem_instance(rng);
      inst.mdp.horizon = 1;
      const TabularQ q = evaluate_policy(inst.mdp, inst.policy);
      for (std::size_t s = 0; s < inst.mdp.n_states; ++s)
        for (std::size_t a = 0; a < inst.mdp.n_actions; ++a)
          CHECK(q.q[s][a] == mixed_reward(inst.mdp, s, a));
    }
  }

  TEST_CASE("zero discount returns the mixed reward") {
    Rng rng(2);
    TheoremInstance inst = random_theorem_instance(rng);
    inst.mdp.gamma = 0.0;
    const TabularQ q = evaluate_policy(inst.mdp, inst.policy);
    for (std::size_t s = 0; s < inst.mdp.n_states; ++s)
      for (std::size_t a = 0; a < inst.mdp.n_actions; ++a)
        CHECK(q.q[s][a] == mixed_reward(inst.mdp, s, a));
  }

  TEST_CASE("mixed reward switches on the safety indicator") {
    TabularMDP m = chain(2, 0.9);
    m.safe[1] = 0;
    m.safety_reward[1] = -3.0;
    CHECK(mixed_reward(m, 0, 0) == 1.0);
    CHECK(mixed_reward(m, 1, 0) == -3.0);
  }

  TEST_CASE("two-step chain") {
    const TabularQ q = evaluate_policy(chain(2, 0.99), {0, 0, 0});
    for (std::size_t s = 0; s < 3; ++s) CHECK(q.q[s][0] == doctest::Approx(1.99).epsilon(1e-15));
  }

  TEST_CASE("backward induction agrees with explicit rollouts") {
    Rng rng(3);
    for (int k = 0; k < 50; ++k) {
      const TheoremInstance inst = random_theorem_instance(rng);
      const TabularQ q = evaluate_policy(inst.mdp, inst.policy);
      for (std::size_t s = 0; s < inst.mdp.n_states; ++s)
        for (std::size_t a = 0; a < inst.mdp.n_actions; ++a)
          CHECK(std::abs(q.q[s][a] - rollout_return(inst.mdp, inst.policy, s, a)) <= 1e-12);
    }
  }

  TEST_CASE("support covering every state leaves nothing to check") {
    const TheoremReport r = verify_theorem(chain(4, 0.9), {0, 0, 0}, {0, 0, 0});
    CHECK(r.checked_pairs == 0);
    CHECK(r.violations.empty());
    CHECK(r.hypotheses_hold);
  }

  TEST_CASE("gridworld fixture matches the exporter and satisfies the bound") {
    const auto fx = load_fixture();
    MapConfig map;
    const TabularMDP frozen = tabular_mdp_from_json(fx.at("mdp"));
    const TabularMDP built = grid_to_tabular(map, frozen.horizon, frozen.gamma);
    CHECK(built.next == frozen.next);
    CHECK(built.task_reward == frozen.task_reward);
    CHECK(built.safe == frozen.safe);
    CHECK(built.safety_reward == frozen.safety_reward);
    CHECK(built.support == frozen.support);

    const auto demo = fx.at("demo_policy").get<std::vector<std::size_t>>();
    const auto pol = fx.at("policy").get<std::vector<std::size_t>>();
    const TheoremReport r = verify_theorem(frozen, pol, demo);
    CHECK(r.hypotheses_hold);
    CHECK(r.checked_pairs > 0);
    CHECK(r.violations.empty());

    const TheoremInstance inst = grid_theorem_instance(map, 10, 0.9);
    CHECK(verify_theorem(inst.mdp, inst.policy, inst.demo_policy).violations.empty());
  }

  TEST_CASE("random instances satisfy the bound") {
    Rng rng(4);
    for (int k = 0; k < 100; ++k) {
      const TheoremInstance inst = random_theorem_instance(rng);
      CHECK(inst.mdp.invariant_violations().empty());
      const TheoremReport r = verify_theorem(inst.mdp, inst.policy, inst.demo_policy);
      CHECK(r.hypotheses_hold);
      CHECK(r.violations.empty());
    }
  }

  TEST_CASE("a positive safety reward breaks the bound and is reported") {
    const TheoremInstance inst = positive_penalty_instance();
    const TheoremReport r = verify_theorem(inst.mdp, inst.policy, inst.demo_policy);
    CHECK_FALSE(r.hypotheses_hold);
    CHECK_FALSE(r.hypothesis_failures.empty());
    CHECK_FALSE(r.violations.empty());
    for (const auto& v : r.violations) CHECK(v.lhs > v.rhs);
    const auto j = to_json(r);
    CHECK(j.at("violations").size() == r.violations.size());
  }

  TEST_CASE("demo policy leaving the support is a precondition error") {
    TabularMDP m = chain(3, 0.9);
    m.support = {{0, 0}};
    CHECK_THROWS_AS(verify_theorem(m, {0, 0, 0}, {0, 0, 0}), TheoremPreconditionError);
    TabularMDP bad = chain(3, 0.9);
    bad.next[0] = {7};
    CHECK_THROWS_AS(verify_theorem(bad, {0, 0, 0}, {0, 0, 0}), TheoremPreconditionError);
  }

  TEST_CASE("brute-force retrieval") {
    CHECK(brute_force_retrieve({{1.0, 2.0, -0.5}}, {-3.0, 0.1, 9.0}) == 0);
    const std::vector<std::vector<double>> basis{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    CHECK(brute_force_retrieve(basis, {0.0, 0.0, 2.0}) == 2);
    CHECK(brute_force_retrieve(basis, {0.0, 5.0, 0.0}) == 1);
    // Ties go to the lower index, a zero row never wins over a real match.
    CHECK(brute_force_retrieve({{0, 0}, {2, 0}, {1, 0}}, {3.0, 0.0}) == 1);
    CHECK(brute_force_retrieve({{1, 1}, {1, -1}}, {1.0, 0.0}) == 0);
  }

  TEST_CASE("finite differences restore the parameters") {
    std::vector<double> p{0.3, -1.2};
    auto f = [&] { return p[0] * p[0] * p[1]; };
    const auto g = finite_diff_grad(f, p, 1e-5);
    CHECK(p == std::vector<double>{0.3, -1.2});
    CHECK(g[0] == doctest::Approx(2 * 0.3 * -1.2).epsilon(1e-8));
    CHECK(g[1] == doctest::Approx(0.09).epsilon(1e-8));
    CHECK(max_relative_error(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 1e-12}) == 0.0);
  }
}
