#pragma once

// Random-instance finite-difference checks, shared by the unit tests and the
// acceptance runner. Each returns the largest relative error of one instance.

#include <cmath>
#include <random>

#include "safeqil/agent.hpp"
#include "safeqil/discriminator.hpp"
#include "safeqil/oracle.hpp"

namespace safeqil::testing {

inline constexpr double kFdStep = 1e-5;

// Central differences straddling a non-smooth point measure the kink, not
// the gradient. Instances are redrawn until every ReLU pre-activation, min
// branch, deadzone residual and clamp bound sits this far from its kink.
inline constexpr double kKinkMargin = 1e-3;

inline Matrix normal_matrix(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (double& v : m.data) v = n(rng);
  return m;
}

/// Smallest |z| over hidden ReLU pre-activations for this input.
inline double relu_margin(const DenseNet& net, const Matrix& input) {
  if (net.hidden_activation() != Activation::relu) return INFINITY;
  ForwardTrace t;
  net.forward(input, t);
  double m = INFINITY;
  for (std::size_t l = 0; l + 1 < t.pre.size(); ++l)
    for (double z : t.pre[l].data) m = std::min(m, std::abs(z));
  return m;
}

inline AgentConfig small_agent_config() {
  AgentConfig cfg;
  cfg.actor_hidden = {16, 16};
  cfg.critic_hidden = {16, 16};
  return cfg;
}

struct CriticInstance {
  CriticPair critics;
  UpdateBatch batch;
  CriticTargets targets;
};

inline bool well_conditioned(const CriticInstance& c) {
  const Matrix xb = concat_columns(c.batch.s_B, c.batch.a_B);
  const Matrix xd = concat_columns(c.batch.s_D, c.batch.a_D);
  for (const auto& net : c.critics.online) {
    if (relu_margin(net, xb) < kKinkMargin || relu_margin(net, xd) < kKinkMargin) return false;
    const Matrix q = net.forward(xb);
    for (std::size_t i = 0; i < q.rows; ++i)
      if (std::abs(q(i, 0) - c.targets.q_min[i]) < kKinkMargin) return false;
  }
  return true;
}

/// Critics on a 3+2 input with targets chosen so the constraint, OOD, demo
/// and SAC terms are all active and the anchor residual takes both signs.
inline CriticInstance random_critic_instance(std::uint64_t seed) {
  Rng rng(seed);
  const AgentConfig cfg = small_agent_config();
  for (;;) {
    CriticInstance c;
    c.critics = CriticPair(5, cfg, rng);
    const std::size_t n = 6;
    c.batch.s_B = normal_matrix(n, 3, rng);
    c.batch.a_B = normal_matrix(n, 2, rng, 0.5);
    c.batch.s_D = normal_matrix(n, 3, rng);
    c.batch.a_D = normal_matrix(n, 2, rng, 0.5);
    std::uniform_real_distribution<double> gate(0.05, 0.95);
    // Targets on the scale of the initial outputs keep the loss, and with it
    // the rounding noise of the differences, small.
    std::normal_distribution<double> t(0.0, 0.3);
    for (std::size_t i = 0; i < n; ++i) {
      c.targets.gate.push_back(gate(rng));
      c.targets.q_min.push_back(t(rng));
      c.targets.ood.push_back(t(rng) - 0.5);
      c.targets.sac.push_back(t(rng));
      c.targets.demo.push_back(t(rng));
    }
    if (well_conditioned(c)) return c;
  }
}

inline double critic_fd_error(std::uint64_t seed, const Ablation& ablation = {}) {
  CriticInstance c = random_critic_instance(seed);
  double worst = 0.0;
  for (std::size_t j = 0; j < 2; ++j) {
    std::vector<double> g1(c.critics.online[0].num_params(), 0.0);
    std::vector<double> g2(c.critics.online[1].num_params(), 0.0);
    critic_loss(c.critics, c.batch, c.targets, ablation, g1, g2);
    auto f = [&] { return critic_loss(c.critics, c.batch, c.targets, ablation, {}, {}).total; };
    auto num = finite_diff_grad(f, c.critics.online[j].params(), kFdStep);
    worst = std::max(worst, max_relative_error(j == 0 ? g1 : g2, num));
  }
  return worst;
}

struct PolicyInstance {
  Actor actor;
  CriticPair critics;
  Matrix states;
  Matrix noise;
  double alpha = 0.0;
};

inline bool well_conditioned(const PolicyInstance& p) {
  if (relu_margin(p.actor.net(), p.states) < kKinkMargin) return false;
  const Matrix out = p.actor.net().forward(p.states);
  const std::size_t d = p.actor.action_dim();
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double ls = out(i, d + k);
      if (ls - p.actor.log_std_min() < kKinkMargin || p.actor.log_std_max() - ls < kKinkMargin)
        return false;
    }
  Matrix a;
  std::vector<double> lp;
  p.actor.sample_batch(p.states, p.noise, a, lp);
  const Matrix sa = concat_columns(p.states, a);
  for (const auto& net : p.critics.target)
    if (relu_margin(net, sa) < kKinkMargin) return false;
  const Matrix q1 = p.critics.target[0].forward(sa), q2 = p.critics.target[1].forward(sa);
  for (std::size_t i = 0; i < q1.rows; ++i)
    if (std::abs(q1(i, 0) - q2(i, 0)) < kKinkMargin) return false;
  return true;
}

inline PolicyInstance random_policy_instance(std::uint64_t seed) {
  Rng rng(seed);
  AgentConfig cfg = small_agent_config();
  cfg.log_std_init = -0.5;  // wide enough that the squashing matters
  for (;;) {
    PolicyInstance p;
    p.actor = Actor(3, {-1.0, -2.0}, {1.0, 0.5}, cfg, rng);
    p.critics = CriticPair(5, cfg, rng);
    p.states = normal_matrix(8, 3, rng);
    p.noise = normal_matrix(8, 2, rng);
    p.alpha = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    if (well_conditioned(p)) return p;
  }
}

inline double policy_fd_error(std::uint64_t seed) {
  PolicyInstance p = random_policy_instance(seed);
  const QFn q = target_min_q(p.critics);
  std::vector<double> grad(p.actor.net().num_params(), 0.0);
  policy_objective_and_grad(p.actor, q, p.states, p.noise, p.alpha, grad);
  std::vector<double> scratch(grad.size());
  auto f = [&] {
    return -policy_objective_and_grad(p.actor, q, p.states, p.noise, p.alpha, scratch).objective;
  };
  auto num = finite_diff_grad(f, p.actor.net().params(), kFdStep);
  return max_relative_error(grad, num);
}

inline double discriminator_fd_error(std::uint64_t seed) {
  Rng rng(seed);
  DiscriminatorConfig cfg;
  cfg.lambda_gp = 0.5;  // large enough that the penalty shapes the gradient
  cfg.hidden = {16, 16};
  for (;;) {
    Discriminator d(4, cfg, rng);
    const Matrix rollout = normal_matrix(6, 4, rng);
    Matrix demo = normal_matrix(6, 4, rng);
    for (double& v : demo.data) v += 1.0;
    std::vector<double> eps(6);
    for (double& e : eps) e = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    Matrix mix(6, 4);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        mix(i, j) = eps[i] * demo(i, j) + (1.0 - eps[i]) * rollout(i, j);
    if (relu_margin(d.net(), rollout) < kKinkMargin || relu_margin(d.net(), demo) < kKinkMargin ||
        relu_margin(d.net(), mix) < kKinkMargin)
      continue;
    std::vector<double> grad(d.net().num_params(), 0.0);
    const DiscriminatorLoss loss = d.loss_and_grad(rollout, demo, eps, grad);
    if (!(loss.penalty > 0.0)) return 1.0;
    auto f = [&] { return d.loss_and_grad(rollout, demo, eps, {}).total; };
    auto num = finite_diff_grad(f, d.net().params(), kFdStep);
    return max_relative_error(grad, num);
  }
}

inline double net_fd_error(std::uint64_t seed) {
  Rng rng(seed);
  const Activation hidden = seed % 2 ? Activation::tanh : Activation::relu;
  const Activation outs[] = {Activation::identity, Activation::sigmoid, Activation::softplus};
  for (;;) {
    DenseNet net({4, 8, 8, 2}, hidden, outs[seed % 3]);
    net.init_uniform(rng);
    const Matrix x = normal_matrix(3, 4, rng);
    const Matrix w = normal_matrix(3, 2, rng);
    if (relu_margin(net, x) < kKinkMargin) continue;
    ForwardTrace t;
    net.forward(x, t);
    std::vector<double> grad(net.num_params(), 0.0);
    net.backward(t, w, grad, nullptr);
    auto f = [&] {
      const Matrix y = net.forward(x);
      double s = 0.0;
      for (std::size_t i = 0; i < y.data.size(); ++i) s += w.data[i] * y.data[i];
      return s;
    };
    return max_relative_error(grad, finite_diff_grad(f, net.params(), kFdStep));
  }
}

}  // namespace safeqil::testing
