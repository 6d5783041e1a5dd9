#pragma once

/**
 * @file agent.hpp
 * @brief Soft actor-critic backbone with the SafeQIL critic objective.
 *
 * Per critic j and a paired minibatch (B from rollouts, D from
 * demonstrations) the critic minimizes
 *
 *   1/(2N) [ sum_B (1-w)(LC + L_OOD) + w L_SAC  +  sum_D L_D ]
 *
 * with w the discriminator gate of s_B,
 *   LC    = (max(Q, Qmin) - Qmin)^2,  Qmin = r* + g min Qbar(s'*, a'*)
 *   L_OOD = (Q - r_s(s_B) - g min Qbar(s'_B, a'~pi))^2
 *   L_SAC = (Q - r_B - g (min Qbar(s'_B, a') - alpha log pi(a'|s'_B)))^2
 *   L_D   = (Q(s_D, a_D) - r_D - g min Qbar(s'_D, a'_D))^2
 * where (s*, a*, ...) is the demonstration transition whose state is most
 * cosine-similar to s_B. Bootstrapping stops at true terminations.
 */

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "safeqil/buffers.hpp"
#include "safeqil/discriminator.hpp"
#include "safeqil/envs.hpp"
#include "safeqil/numerics.hpp"

namespace safeqil {

enum class Mode { safeqil, sac, sac_gail };
enum class GateMode { continuous, threshold };

std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);
std::string_view to_string(GateMode m);
GateMode gate_mode_from_string(std::string_view s);

/// Loss-term switches. Each one removes a single piece of the objective.
struct Ablation {
  bool no_cosine = false;      // random demonstration anchor instead of retrieval
  bool no_max = false;         // constraint residual without the max deadzone
  bool no_constraint = false;  // drop LC
  bool no_ood = false;         // drop L_OOD
  bool no_demo = false;        // drop L_D
  bool no_sac = false;         // drop L_SAC

  /// "original" or one of the six switch names.
  static Ablation from_variant(std::string_view name);
  std::string variant() const;
  bool operator==(const Ablation&) const = default;
};

inline constexpr std::array<std::string_view, 7> kVariants{
    "original", "no_cosine", "no_max", "no_constraint", "no_ood", "no_demo", "no_sac"};

struct AgentConfig {
  Mode mode = Mode::safeqil;
  Ablation ablation;
  double gamma = 0.99;
  double lr = 3e-4;
  double eta = 0.005;
  double alpha0 = 1.0;
  std::optional<double> target_entropy;  // default -action_dim
  std::size_t batch_size = 64;
  std::size_t warmup_steps = 1000;
  std::size_t buffer_capacity = 1'000'000;
  std::size_t updates_per_step = 1;
  std::vector<std::size_t> actor_hidden{32, 32};
  std::vector<std::size_t> critic_hidden{32, 32};
  std::vector<std::size_t> disc_hidden{32, 32};
  double disc_lr = 3e-4;
  double lambda_gp = 0.005;
  double clamp_epsilon = 1e-6;
  double log_std_init = -3.0;
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  GateMode gate_mode = GateMode::continuous;
  std::optional<double> forced_gate;  // overrides the discriminator gate
  bool normalize_anchor_states = false;

  bool uses_demos() const { return mode != Mode::sac; }
};

/// Squashed Gaussian policy. The net emits (mean, log_std) per action
/// dimension; actions are lo + (hi - lo) (tanh(u) + 1) / 2.
class Actor {
 public:
  Actor() = default;
  Actor(std::size_t state_dim, std::vector<double> low, std::vector<double> high,
        const AgentConfig& config, Rng& rng);

  struct Sample {
    std::vector<double> action;
    double log_prob = 0.0;  // 0 in deterministic mode
  };

  Sample sample(std::span<const double> state, Rng& rng, bool deterministic) const;
  /// Row-wise reparameterized sample from given standard-normal noise.
  void sample_batch(const Matrix& states, const Matrix& noise, Matrix& actions,
                    std::vector<double>& log_probs) const;
  Matrix deterministic_batch(const Matrix& states) const;
  /// Density of a given in-box action, including the squashing correction.
  double log_prob(std::span<const double> state, std::span<const double> action) const;

  std::size_t action_dim() const { return low_.size(); }
  const std::vector<double>& low() const { return low_; }
  const std::vector<double>& high() const { return high_; }
  double log_std_min() const { return log_std_min_; }
  double log_std_max() const { return log_std_max_; }
  DenseNet& net() { return net_; }
  const DenseNet& net() const { return net_; }
  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }

 private:
  friend nlohmann::json to_json(const Actor&);
  friend Actor actor_from_json(const nlohmann::json&);
  double squash(double u, std::size_t d) const;

  DenseNet net_;
  AdamState adam_;
  std::vector<double> low_;
  std::vector<double> high_;
  double log_std_min_ = -20.0;
  double log_std_max_ = 2.0;
};

struct CriticPair {
  std::array<DenseNet, 2> online;
  std::array<DenseNet, 2> target;
  std::array<AdamState, 2> adam;

  CriticPair() = default;
  CriticPair(std::size_t input_dim, const AgentConfig& config, Rng& rng);

  /// min over the two target critics, row-wise.
  std::vector<double> target_min(const Matrix& state_action) const;
  void soft_update(double rate);
};

struct EntropyTuner {
  double log_alpha = 0.0;
  double target_entropy = -1.0;
  AdamState adam;

  EntropyTuner() = default;
  EntropyTuner(double alpha0, double target_entropy, double lr);
  double alpha() const;
};

/// Row-wise concatenation [s, a].
Matrix concat_columns(const Matrix& a, const Matrix& b);

/// Paired minibatch plus the anchor retrieved for every rollout sample.
struct UpdateBatch {
  Matrix s_B, a_B, sn_B;
  std::vector<double> r_B, done_B;
  Matrix s_D, a_D, sn_D, an_D;
  std::vector<double> r_D, done_D;
  Matrix anchor_s, anchor_sn, anchor_an;
  std::vector<double> anchor_r, anchor_done, anchor_similarity;
  std::size_t size() const { return s_B.rows; }
};

/// Regression targets, all built from target critics.
struct CriticTargets {
  std::vector<double> q_min;  // anchor bound per rollout sample
  std::vector<double> ood;
  std::vector<double> sac;
  std::vector<double> demo;
  std::vector<double> gate;
  std::vector<double> safety_reward;
  std::vector<double> next_log_prob;
};

/// Per-component loss values. Every ablation switch owns one component.
struct CriticTerms {
  double constraint = 0.0;  // (1-w) max(Q - Qmin, 0)^2 part (no_constraint)
  double max_clip = 0.0;    // (1-w) min(Q - Qmin, 0)^2 part removed by the max (no_max)
  double ood = 0.0;         // no_ood
  double demo = 0.0;        // no_demo
  double sac = 0.0;         // no_sac
  double total = 0.0;       // value actually minimized
};

/// Objective of one critic given its outputs on B and D. Writes dL/dq into
/// dq_B and dq_D when non-null.
CriticTerms critic_objective(std::span<const double> q_B, std::span<const double> q_D,
                             const CriticTargets& targets, const Ablation& ablation,
                             std::vector<double>* dq_B, std::vector<double>* dq_D);

/// Sum over both online critics. Gradients are accumulated per critic.
CriticTerms critic_loss(const CriticPair& critics, const UpdateBatch& batch,
                        const CriticTargets& targets, const Ablation& ablation,
                        std::span<double> grad_q1, std::span<double> grad_q2);

double q_min_anchor(const CriticPair& critics, double reward,
                    std::span<const double> next_state,
                    std::span<const double> next_action, double gamma, bool done);

/// Q(s, a) and dQ/da for every row; used by the policy objective.
using QFn = std::function<void(const Matrix& states, const Matrix& actions,
                               std::vector<double>& q, Matrix* dq_da)>;

/// min over the target critics, with the gradient of the active branch.
QFn target_min_q(const CriticPair& critics);

struct PolicyResult {
  double objective = 0.0;  // mean(Q - alpha log pi)
  std::vector<double> log_probs;
};

/// Objective and gradient of the NEGATED objective (the descent direction)
/// wrt actor parameters, for fixed noise.
PolicyResult policy_objective_and_grad(const Actor& actor, const QFn& q,
                                       const Matrix& states, const Matrix& noise,
                                       double alpha, std::span<double> grad);

/// One Adam step on the actor; returns the pre-step objective.
PolicyResult policy_update(Actor& actor, const QFn& q, const Matrix& states,
                           double alpha, Rng& rng);

/// mean(-alpha (log pi + target)); one Adam step on log_alpha.
double alpha_update(EntropyTuner& tuner, std::span<const double> log_probs);

struct Diagnostics {
  std::size_t step = 0;
  double disc_loss = 0.0;
  double critic_loss = 0.0;
  CriticTerms terms;
  double anchor_similarity = 0.0;  // mean similarity of retrieved anchors (no_cosine)
  double anchor_distance = 0.0;    // mean Euclidean distance s_B -> anchor state
  double policy_objective = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double gate_mean = 0.0;
};

class Agent {
 public:
  Agent() = default;
  Agent(const EnvSpec& spec, AgentConfig config, Rng& rng);

  const AgentConfig& config() const { return config_; }
  AgentConfig& config() { return config_; }
  Actor& actor() { return actor_; }
  const Actor& actor() const { return actor_; }
  CriticPair& critics() { return critics_; }
  const CriticPair& critics() const { return critics_; }
  Discriminator& discriminator() { return disc_; }
  const Discriminator& discriminator() const { return disc_; }
  bool has_discriminator() const { return config_.mode != Mode::sac; }
  EntropyTuner& tuner() { return tuner_; }
  const EntropyTuner& tuner() const { return tuner_; }
  std::size_t update_count() const { return updates_; }

  /// Gate weights and safety rewards for the batch under the current mode.
  void gates(const UpdateBatch& batch, std::vector<double>& gate,
             std::vector<double>& safety_reward) const;

  /// Targets for a frozen batch; next actions are drawn from rng.
  CriticTargets compute_targets(const UpdateBatch& batch, Rng& rng) const;

  /// Loss components of a frozen batch and frozen targets, without updating.
  Diagnostics evaluate(const UpdateBatch& batch, const CriticTargets& targets) const;

  /// Discriminator, critics, policy, entropy coefficient, then targets.
  Diagnostics update(const UpdateBatch& batch, Rng& rng);

 private:
  friend nlohmann::json to_json(const Agent&);
  friend Agent agent_from_json(const nlohmann::json&);

  AgentConfig config_;
  Actor actor_;
  CriticPair critics_;
  Discriminator disc_;
  EntropyTuner tuner_;
  std::size_t updates_ = 0;
};

/// Assembles UpdateBatch objects from the two buffers.
/// Anchors are retrieved only in SafeQIL mode; no_cosine draws them uniformly.
UpdateBatch make_batch(const ReplayBuffer& buffer, const DemoSet& demos,
                       std::size_t n, const AgentConfig& config, Rng& rng);

/// Switches actually in force: the baselines drop every SafeQIL-only term.
Ablation effective_ablation(const AgentConfig& config);

/// Environment interaction plus updates, one call per environment step.
class Trainer {
 public:
  Trainer(std::unique_ptr<Env> env, AgentConfig config, DemoSet demos,
          std::uint64_t seed);

  /// Returns diagnostics when an update ran on this step.
  std::optional<Diagnostics> train_step();

  Agent& agent() { return agent_; }
  const Agent& agent() const { return agent_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const DemoSet& demos() const { return demos_; }
  Env& env() { return *env_; }
  std::size_t steps() const { return steps_; }
  std::size_t episodes() const { return episodes_; }

 private:
  std::unique_ptr<Env> env_;
  Agent agent_;
  DemoSet demos_;
  ReplayBuffer buffer_;
  Rng act_rng_;
  Rng update_rng_;
  std::uint64_t seed_;
  std::vector<double> state_;
  std::size_t steps_ = 0;
  std::size_t episodes_ = 0;
};

nlohmann::json to_json(const Actor& actor);
Actor actor_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AgentConfig& c);
AgentConfig agent_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Agent& agent);
Agent agent_from_json(const nlohmann::json& j);

}  // namespace safeqil
