#pragma once

// State (or state-action) discriminator estimating membership in the
// demonstration distribution. Its clamped output is the gate weight that
// blends the critic terms, and its log is the safety reward.

#include <span>
#include <vector>

#include "safeqil/numerics.hpp"

namespace safeqil {

struct DiscriminatorConfig {
  std::vector<std::size_t> hidden{32, 32};
  Activation hidden_activation = Activation::relu;
  double learning_rate = 3e-4;
  double lambda_gp = 0.005;
  double clamp_epsilon = 1e-6;
};

struct DiscriminatorLoss {
  double total = 0.0;
  double logistic = 0.0;
  double penalty = 0.0;
};

class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(std::size_t input_dim, DiscriminatorConfig config, Rng& rng);

  std::size_t input_dim() const { return net_.input_size(); }
  const DiscriminatorConfig& config() const { return config_; }
  DiscriminatorConfig& config() { return config_; }
  DenseNet& net() { return net_; }
  const DenseNet& net() const { return net_; }
  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }

  /// Unclamped sigmoid output.
  double probability(std::span<const double> x) const;
  /// phi(x) clamped to [eps, 1 - eps].
  double gate(std::span<const double> x) const;
  std::vector<double> gate_batch(const Matrix& x) const;
  /// log(gate(x)); never positive.
  double safety_reward(std::span<const double> x) const;
  std::vector<double> safety_reward_batch(const Matrix& x) const;

  /// Logistic loss (rollout labelled 0, demo labelled 1) plus the gradient
  /// penalty on interpolates eps[i] * demo_i + (1 - eps[i]) * rollout_i.
  /// Accumulates the parameter gradient into grad when it is non-empty.
  DiscriminatorLoss loss_and_grad(const Matrix& rollout, const Matrix& demo,
                                  std::span<const double> eps,
                                  std::span<double> grad) const;

  /// One Adam step on freshly drawn interpolation coefficients. Returns the
  /// loss before the step.
  DiscriminatorLoss update(const Matrix& rollout, const Matrix& demo, Rng& rng);

 private:
  DiscriminatorConfig config_;
  DenseNet net_;
  AdamState adam_;
};

nlohmann::json to_json(const Discriminator& d);
Discriminator discriminator_from_json(const nlohmann::json& j);

}  // namespace safeqil
