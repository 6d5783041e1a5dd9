#include "safeqil/discriminator.hpp"

#include <algorithm>
#include <cmath>

namespace safeqil {

namespace {

double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Discriminator::Discriminator(std::size_t input_dim, DiscriminatorConfig config,
                             Rng& rng)
    : config_(std::move(config)) {
  if (config_.lambda_gp < 0.0) throw std::invalid_argument("lambda_gp must be non-negative");
  if (!(config_.clamp_epsilon > 0.0 && config_.clamp_epsilon < 0.5))
    throw std::invalid_argument("clamp epsilon must lie in (0, 0.5)");
  std::vector<std::size_t> sizes{input_dim};
  sizes.insert(sizes.end(), config_.hidden.begin(), config_.hidden.end());
  sizes.push_back(1);
  net_ = DenseNet(sizes, config_.hidden_activation, Activation::sigmoid);
  net_.init_uniform(rng);
  adam_ = AdamState(net_.num_params(), config_.learning_rate);
}

double Discriminator::probability(std::span<const double> x) const {
  return net_.forward(x)[0];
}

double Discriminator::gate(std::span<const double> x) const {
  const double e = config_.clamp_epsilon;
  return std::clamp(probability(x), e, 1.0 - e);
}

std::vector<double> Discriminator::gate_batch(const Matrix& x) const {
  const Matrix out = net_.forward(x);
  const double e = config_.clamp_epsilon;
  std::vector<double> g(out.rows);
  for (std::size_t i = 0; i < out.rows; ++i) g[i] = std::clamp(out(i, 0), e, 1.0 - e);
  return g;
}

double Discriminator::safety_reward(std::span<const double> x) const {
  return std::log(gate(x));
}

std::vector<double> Discriminator::safety_reward_batch(const Matrix& x) const {
  auto g = gate_batch(x);
  for (double& v : g) v = std::log(v);
  return g;
}

DiscriminatorLoss Discriminator::loss_and_grad(const Matrix& rollout,
                                               const Matrix& demo,
                                               std::span<const double> eps,
                                               std::span<double> grad) const {
  const std::size_t n = rollout.rows;
  if (demo.rows != n || eps.size() != n)
    throw DimensionError("discriminator batches must have equal sizes");
  if (rollout.cols != input_dim() || demo.cols != input_dim())
    throw DimensionError("discriminator input has the wrong dimension");
  if (n == 0) throw std::invalid_argument("empty discriminator batch");
  const bool want_grad = !grad.empty();
  if (want_grad && grad.size() != net_.num_params())
    throw DimensionError("discriminator gradient has the wrong size");
  const double inv = 1.0 / (2.0 * static_cast<double>(n));
  DiscriminatorLoss loss;

  // -log(1 - phi) = softplus(z), -log(phi) = softplus(-z) on the logit z.
  ForwardTrace tb, td;
  net_.forward(rollout, tb);
  net_.forward(demo, td);
  const Matrix& zb = tb.pre.back();
  const Matrix& zd = td.pre.back();
  Matrix gb(n, 1), gd(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    loss.logistic += inv * (softplus(zb(i, 0)) + softplus(-zd(i, 0)));
    gb(i, 0) = inv * sigmoid(zb(i, 0));
    gd(i, 0) = -inv * sigmoid(-zd(i, 0));
  }
  if (want_grad) {
    net_.backward(tb, gb, grad, nullptr, true);
    net_.backward(td, gd, grad, nullptr, true);
  }

  if (config_.lambda_gp > 0.0) {
    const std::size_t dim = input_dim();
    Matrix mix(n, dim);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        mix(i, j) = eps[i] * demo(i, j) + (1.0 - eps[i]) * rollout(i, j);
    ForwardTrace tm;
    net_.forward(mix, tm);
    InputGradTrace ig;
    const Matrix& g = net_.input_gradient(tm, ig);
    Matrix adj(n, dim);
    const double w = config_.lambda_gp * inv;
    for (std::size_t i = 0; i < n; ++i) {
      double sq = 0.0;
      for (double v : g.row(i)) sq += v * v;
      const double norm = std::sqrt(sq);
      loss.penalty += w * (norm - 1.0) * (norm - 1.0);
      if (norm > 0.0)
        for (std::size_t j = 0; j < dim; ++j)
          adj(i, j) = w * 2.0 * (norm - 1.0) * g(i, j) / norm;
    }
    if (want_grad) net_.backward_input_gradient(tm, ig, adj, grad);
  }
  loss.total = loss.logistic + loss.penalty;
  return loss;
}

DiscriminatorLoss Discriminator::update(const Matrix& rollout, const Matrix& demo,
                                        Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> eps(rollout.rows);
  for (double& e : eps) e = u(rng);
  std::vector<double> grad(net_.num_params(), 0.0);
  const DiscriminatorLoss loss = loss_and_grad(rollout, demo, eps, grad);
  adam_step(net_.params(), grad, adam_);
  return loss;
}

nlohmann::json to_json(const Discriminator& d) {
  return {{"net", to_json(d.net())},
          {"adam", to_json(d.adam())},
          {"lambda_gp", d.config().lambda_gp},
          {"clamp_epsilon", d.config().clamp_epsilon}};
}

Discriminator discriminator_from_json(const nlohmann::json& j) {
  Discriminator d;
  d.net() = net_from_json(j.at("net"));
  d.adam() = adam_from_json(j.at("adam"));
  if (d.adam().first_moment.size() != d.net().num_params())
    throw DimensionError("discriminator optimizer state does not match its network");
  auto& c = d.config();
  c.lambda_gp = j.at("lambda_gp").get<double>();
  c.clamp_epsilon = j.at("clamp_epsilon").get<double>();
  c.learning_rate = d.adam().learning_rate;
  c.hidden.assign(d.net().layer_sizes().begin() + 1, d.net().layer_sizes().end() - 1);
  c.hidden_activation = d.net().hidden_activation();
  return d;
}

}  // namespace safeqil
