#include "safeqil/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace safeqil {

namespace {

double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

// log(1 - tanh(u)^2) without cancellation for large |u|.
double log_one_minus_tanh_sq(double u) {
  return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u));
}

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden,
                                     std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

}  // namespace

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::safeqil: return "safeqil";
    case Mode::sac: return "sac";
    case Mode::sac_gail: return "sac_gail";
  }
  return "safeqil";
}

Mode mode_from_string(std::string_view s) {
  if (s == "safeqil") return Mode::safeqil;
  if (s == "sac") return Mode::sac;
  if (s == "sac_gail") return Mode::sac_gail;
  throw std::invalid_argument("unknown mode \"" + std::string(s) + "\"");
}

std::string_view to_string(GateMode m) {
  return m == GateMode::continuous ? "continuous" : "threshold";
}

GateMode gate_mode_from_string(std::string_view s) {
  if (s == "continuous") return GateMode::continuous;
  if (s == "threshold") return GateMode::threshold;
  throw std::invalid_argument("unknown gate mode \"" + std::string(s) + "\"");
}

Ablation Ablation::from_variant(std::string_view name) {
  Ablation a;
  if (name == "original") return a;
  if (name == "no_cosine") a.no_cosine = true;
  else if (name == "no_max") a.no_max = true;
  else if (name == "no_constraint") a.no_constraint = true;
  else if (name == "no_ood") a.no_ood = true;
  else if (name == "no_demo") a.no_demo = true;
  else if (name == "no_sac") a.no_sac = true;
  else throw std::invalid_argument("unknown variant \"" + std::string(name) + "\"");
  return a;
}

std::string Ablation::variant() const {
  const int count = no_cosine + no_max + no_constraint + no_ood + no_demo + no_sac;
  if (count == 0) return "original";
  if (count > 1) return "custom";
  if (no_cosine) return "no_cosine";
  if (no_max) return "no_max";
  if (no_constraint) return "no_constraint";
  if (no_ood) return "no_ood";
  if (no_demo) return "no_demo";
  return "no_sac";
}

Ablation effective_ablation(const AgentConfig& config) {
  Ablation a = config.ablation;
  if (config.mode != Mode::safeqil) {
    a.no_cosine = true;
    a.no_max = true;
    a.no_constraint = true;
    a.no_ood = true;
    a.no_demo = true;
  }
  return a;
}

Matrix concat_columns(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) throw DimensionError("concat_columns: row counts differ");
  Matrix out(a.rows, a.cols + b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
    std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + a.cols);
  }
  return out;
}

// ------------------------------------------------------------------ Actor

Actor::Actor(std::size_t state_dim, std::vector<double> low, std::vector<double> high,
             const AgentConfig& config, Rng& rng)
    : low_(std::move(low)),
      high_(std::move(high)),
      log_std_min_(config.log_std_min),
      log_std_max_(config.log_std_max) {
  if (low_.size() != high_.size() || low_.empty())
    throw DimensionError("action bounds must be non-empty and of equal length");
  for (std::size_t d = 0; d < low_.size(); ++d)
    if (!(low_[d] < high_[d])) throw std::invalid_argument("action low must be below high");
  const std::size_t A = low_.size();
  net_ = DenseNet(layer_sizes(state_dim, config.actor_hidden, 2 * A), Activation::relu,
                  Activation::identity);
  net_.init_uniform(rng);
  auto bias = net_.biases(net_.num_layers() - 1);
  for (std::size_t d = 0; d < A; ++d) bias[A + d] = config.log_std_init;
  adam_ = AdamState(net_.num_params(), config.lr);
}

double Actor::squash(double u, std::size_t d) const {
  const double half = 0.5 * (high_[d] - low_[d]);
  const double a = low_[d] + half * (std::tanh(u) + 1.0);
  return std::clamp(a, std::nextafter(low_[d], high_[d]), std::nextafter(high_[d], low_[d]));
}

void Actor::sample_batch(const Matrix& states, const Matrix& noise, Matrix& actions,
                         std::vector<double>& log_probs) const {
  const std::size_t A = action_dim();
  if (noise.rows != states.rows || noise.cols != A)
    throw DimensionError("noise must have one row per state and one column per action");
  const Matrix out = net_.forward(states);
  actions.resize(states.rows, A);
  log_probs.assign(states.rows, 0.0);
  for (std::size_t r = 0; r < states.rows; ++r) {
    double lp = 0.0;
    for (std::size_t d = 0; d < A; ++d) {
      const double ls = std::clamp(out(r, A + d), log_std_min_, log_std_max_);
      const double z = noise(r, d);
      const double u = out(r, d) + std::exp(ls) * z;
      actions(r, d) = squash(u, d);
      lp += -0.5 * z * z - ls - kHalfLog2Pi - log_one_minus_tanh_sq(u) -
            std::log(0.5 * (high_[d] - low_[d]));
    }
    log_probs[r] = lp;
  }
}

Matrix Actor::deterministic_batch(const Matrix& states) const {
  const std::size_t A = action_dim();
  const Matrix out = net_.forward(states);
  Matrix actions(states.rows, A);
  for (std::size_t r = 0; r < states.rows; ++r)
    for (std::size_t d = 0; d < A; ++d) actions(r, d) = squash(out(r, d), d);
  return actions;
}

Actor::Sample Actor::sample(std::span<const double> state, Rng& rng,
                            bool deterministic) const {
  Matrix s(1, state.size());
  s.set_row(0, state);
  Sample out;
  if (deterministic) {
    const Matrix a = deterministic_batch(s);
    out.action.assign(a.data.begin(), a.data.end());
    return out;
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix noise(1, action_dim());
  for (double& z : noise.data) z = normal(rng);
  Matrix a;
  std::vector<double> lp;
  sample_batch(s, noise, a, lp);
  out.action.assign(a.data.begin(), a.data.end());
  out.log_prob = lp[0];
  return out;
}

double Actor::log_prob(std::span<const double> state, std::span<const double> action) const {
  const std::size_t A = action_dim();
  if (action.size() != A) throw DimensionError("action has the wrong dimension");
  const auto out = net_.forward(state);
  double lp = 0.0;
  for (std::size_t d = 0; d < A; ++d) {
    const double half = 0.5 * (high_[d] - low_[d]);
    const double t = (action[d] - low_[d]) / half - 1.0;
    if (!(t > -1.0 && t < 1.0)) return -std::numeric_limits<double>::infinity();
    const double u = std::atanh(t);
    const double ls = std::clamp(out[A + d], log_std_min_, log_std_max_);
    const double z = (u - out[d]) / std::exp(ls);
    lp += -0.5 * z * z - ls - kHalfLog2Pi - log_one_minus_tanh_sq(u) - std::log(half);
  }
  return lp;
}

// ---------------------------------------------------------------- Critics

CriticPair::CriticPair(std::size_t input_dim, const AgentConfig& config, Rng& rng) {
  for (std::size_t j = 0; j < 2; ++j) {
    online[j] = DenseNet(layer_sizes(input_dim, config.critic_hidden, 1), Activation::relu,
                         Activation::identity);
    online[j].init_uniform(rng);
    target[j] = online[j];
    adam[j] = AdamState(online[j].num_params(), config.lr);
  }
}

std::vector<double> CriticPair::target_min(const Matrix& x) const {
  const Matrix q1 = target[0].forward(x);
  const Matrix q2 = target[1].forward(x);
  std::vector<double> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = std::min(q1.data[i], q2.data[i]);
  return out;
}

void CriticPair::soft_update(double rate) {
  for (std::size_t j = 0; j < 2; ++j)
    safeqil::soft_update(target[j].params(), online[j].params(), rate);
}

EntropyTuner::EntropyTuner(double alpha0, double target, double lr)
    : log_alpha(std::log(alpha0)), target_entropy(target), adam(1, lr) {
  if (!(alpha0 > 0.0)) throw std::invalid_argument("alpha0 must be positive");
}

double EntropyTuner::alpha() const { return std::exp(log_alpha); }

double q_min_anchor(const CriticPair& critics, double reward,
                    std::span<const double> next_state,
                    std::span<const double> next_action, double gamma, bool done) {
  if (done) return reward;
  Matrix x(1, next_state.size() + next_action.size());
  std::copy(next_state.begin(), next_state.end(), x.row(0).begin());
  std::copy(next_action.begin(), next_action.end(), x.row(0).begin() + next_state.size());
  return reward + gamma * critics.target_min(x)[0];
}

// -------------------------------------------------------- critic objective

CriticTerms critic_objective(std::span<const double> q_B, std::span<const double> q_D,
                             const CriticTargets& t, const Ablation& ab,
                             std::vector<double>* dq_B, std::vector<double>* dq_D) {
  const std::size_t n = q_B.size();
  if (n == 0) throw std::invalid_argument("empty critic batch");
  const bool anchored = !t.q_min.empty();
  const bool with_ood = !t.ood.empty();
  const bool with_demo = !t.demo.empty() && !ab.no_demo;
  if (t.gate.size() != n || t.sac.size() != n || (anchored && t.q_min.size() != n) ||
      (with_ood && t.ood.size() != n) || (!t.demo.empty() && t.demo.size() != q_D.size()))
    throw DimensionError("critic targets do not match the batch");
  const double inv = 1.0 / (2.0 * static_cast<double>(n));
  CriticTerms terms;
  if (dq_B) dq_B->assign(n, 0.0);
  if (dq_D) dq_D->assign(q_D.size(), 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    const double w = t.gate[i];
    const double q = q_B[i];
    double g = 0.0;
    if (anchored) {
      const double diff = q - t.q_min[i];
      const double above = std::max(diff, 0.0);
      const double below = std::min(diff, 0.0);
      if (!ab.no_max) terms.max_clip += inv * (1.0 - w) * below * below;
      if (!ab.no_constraint) {
        terms.constraint += inv * (1.0 - w) * above * above;
        terms.total += inv * (1.0 - w) * above * above;
        g += (1.0 - w) * 2.0 * above;
        if (ab.no_max) {
          terms.total += inv * (1.0 - w) * below * below;
          g += (1.0 - w) * 2.0 * below;
        }
      }
    }
    if (with_ood && !ab.no_ood) {
      const double e = q - t.ood[i];
      terms.ood += inv * (1.0 - w) * e * e;
      g += (1.0 - w) * 2.0 * e;
    }
    if (!ab.no_sac) {
      const double e = q - t.sac[i];
      terms.sac += inv * w * e * e;
      g += w * 2.0 * e;
    }
    if (dq_B) (*dq_B)[i] = inv * g;
  }
  terms.total += terms.ood + terms.sac;
  if (with_demo) {
    for (std::size_t i = 0; i < q_D.size(); ++i) {
      const double e = q_D[i] - t.demo[i];
      terms.demo += inv * e * e;
      if (dq_D) (*dq_D)[i] = inv * 2.0 * e;
    }
    terms.total += terms.demo;
  }
  return terms;
}

CriticTerms critic_loss(const CriticPair& critics, const UpdateBatch& batch,
                        const CriticTargets& targets, const Ablation& ablation,
                        std::span<double> grad_q1, std::span<double> grad_q2) {
  const Matrix xB = concat_columns(batch.s_B, batch.a_B);
  const bool demo = !targets.demo.empty() && !ablation.no_demo;
  const Matrix xD = demo ? concat_columns(batch.s_D, batch.a_D) : Matrix();
  CriticTerms sum;
  const std::array<std::span<double>, 2> grads{grad_q1, grad_q2};
  for (std::size_t j = 0; j < 2; ++j) {
    const DenseNet& net = critics.online[j];
    ForwardTrace tB, tD;
    net.forward(xB, tB);
    if (demo) net.forward(xD, tD);
    std::vector<double> dqB, dqD;
    const auto& qD = demo ? tD.output().data : std::vector<double>{};
    const CriticTerms t =
        critic_objective(tB.output().data, qD, targets, ablation, &dqB, &dqD);
    sum.constraint += t.constraint;
    sum.max_clip += t.max_clip;
    sum.ood += t.ood;
    sum.demo += t.demo;
    sum.sac += t.sac;
    sum.total += t.total;
    if (grads[j].empty()) continue;
    Matrix gB(dqB.size(), 1);
    gB.data = dqB;
    net.backward(tB, gB, grads[j], nullptr);
    if (demo) {
      Matrix gD(dqD.size(), 1);
      gD.data = dqD;
      net.backward(tD, gD, grads[j], nullptr);
    }
  }
  return sum;
}

// ----------------------------------------------------------------- policy

QFn target_min_q(const CriticPair& critics) {
  return [&critics](const Matrix& s, const Matrix& a, std::vector<double>& q,
                    Matrix* dq_da) {
    const Matrix x = concat_columns(s, a);
    std::array<ForwardTrace, 2> tr;
    for (std::size_t j = 0; j < 2; ++j) critics.target[j].forward(x, tr[j]);
    q.resize(x.rows);
    std::vector<int> pick(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double q1 = tr[0].output().data[i];
      const double q2 = tr[1].output().data[i];
      pick[i] = q2 < q1 ? 1 : 0;
      q[i] = std::min(q1, q2);
    }
    if (!dq_da) return;
    dq_da->resize(x.rows, a.cols);
    for (std::size_t j = 0; j < 2; ++j) {
      Matrix og(x.rows, 1);
      bool any = false;
      for (std::size_t i = 0; i < x.rows; ++i)
        if (pick[i] == static_cast<int>(j)) {
          og(i, 0) = 1.0;
          any = true;
        }
      if (!any) continue;
      std::vector<double> scratch(critics.target[j].num_params(), 0.0);
      Matrix gx;
      critics.target[j].backward(tr[j], og, scratch, &gx);
      for (std::size_t i = 0; i < x.rows; ++i)
        if (pick[i] == static_cast<int>(j))
          for (std::size_t d = 0; d < a.cols; ++d) (*dq_da)(i, d) = gx(i, s.cols + d);
    }
  };
}

PolicyResult policy_objective_and_grad(const Actor& actor, const QFn& qfn,
                                       const Matrix& states, const Matrix& noise,
                                       double alpha, std::span<double> grad) {
  const std::size_t n = states.rows;
  const std::size_t A = actor.action_dim();
  if (n == 0) throw std::invalid_argument("empty policy batch");
  if (noise.rows != n || noise.cols != A) throw DimensionError("noise shape mismatch");
  const DenseNet& net = actor.net();
  ForwardTrace tr;
  net.forward(states, tr);
  const Matrix& out = tr.output();
  Matrix actions(n, A), u(n, A), sigma(n, A);
  std::vector<std::uint8_t> clamped(n * A, 0);
  PolicyResult res;
  res.log_probs.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t d = 0; d < A; ++d) {
      const double raw = out(r, A + d);
      const double ls = std::clamp(raw, actor.log_std_min(), actor.log_std_max());
      clamped[r * A + d] = (raw < actor.log_std_min() || raw > actor.log_std_max());
      const double z = noise(r, d);
      sigma(r, d) = std::exp(ls);
      u(r, d) = out(r, d) + sigma(r, d) * z;
      const double half = 0.5 * (actor.high()[d] - actor.low()[d]);
      actions(r, d) = actor.low()[d] + half * (std::tanh(u(r, d)) + 1.0);
      res.log_probs[r] += -0.5 * z * z - ls - kHalfLog2Pi -
                          log_one_minus_tanh_sq(u(r, d)) - std::log(half);
    }
  }
  std::vector<double> q;
  Matrix dq;
  qfn(states, actions, q, grad.empty() ? nullptr : &dq);
  for (std::size_t r = 0; r < n; ++r) res.objective += q[r] - alpha * res.log_probs[r];
  res.objective /= static_cast<double>(n);
  if (grad.empty()) return res;

  // Descent direction of -J through a = lo + half (tanh(u) + 1), u = mu + sigma z.
  Matrix og(n, 2 * A);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t d = 0; d < A; ++d) {
      const double half = 0.5 * (actor.high()[d] - actor.low()[d]);
      const double t = std::tanh(u(r, d));
      const double dj_du = dq(r, d) * half * (1.0 - t * t) - alpha * 2.0 * t;
      og(r, d) = -inv * dj_du;
      og(r, A + d) =
          clamped[r * A + d] ? 0.0 : -inv * (dj_du * sigma(r, d) * noise(r, d) + alpha);
    }
  }
  net.backward(tr, og, grad, nullptr);
  return res;
}

PolicyResult policy_update(Actor& actor, const QFn& q, const Matrix& states,
                           double alpha, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix noise(states.rows, actor.action_dim());
  for (double& z : noise.data) z = normal(rng);
  std::vector<double> grad(actor.net().num_params(), 0.0);
  PolicyResult res = policy_objective_and_grad(actor, q, states, noise, alpha, grad);
  adam_step(actor.net().params(), grad, actor.adam());
  return res;
}

double alpha_update(EntropyTuner& tuner, std::span<const double> log_probs) {
  if (log_probs.empty()) throw std::invalid_argument("alpha_update needs samples");
  const double alpha = tuner.alpha();
  double m = 0.0;
  for (double lp : log_probs) m += lp + tuner.target_entropy;
  m /= static_cast<double>(log_probs.size());
  const double loss = -alpha * m;
  std::vector<double> p{tuner.log_alpha};
  const std::vector<double> g{-alpha * m};
  adam_step(p, g, tuner.adam);
  tuner.log_alpha = p[0];
  return loss;
}

// ------------------------------------------------------------------ Agent

Agent::Agent(const EnvSpec& spec, AgentConfig config, Rng& rng) : config_(std::move(config)) {
  if (config_.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(config_.gamma >= 0.0 && config_.gamma < 1.0))
    throw std::invalid_argument("gamma must lie in [0, 1)");
  actor_ = Actor(spec.state_dim, spec.action_low, spec.action_high, config_, rng);
  critics_ = CriticPair(spec.state_dim + spec.action_dim, config_, rng);
  if (has_discriminator()) {
    DiscriminatorConfig dc;
    dc.hidden = config_.disc_hidden;
    dc.learning_rate = config_.disc_lr;
    dc.lambda_gp = config_.lambda_gp;
    dc.clamp_epsilon = config_.clamp_epsilon;
    const std::size_t in = config_.mode == Mode::sac_gail
                               ? spec.state_dim + spec.action_dim
                               : spec.state_dim;
    disc_ = Discriminator(in, dc, rng);
  }
  const double target = config_.target_entropy.value_or(-static_cast<double>(spec.action_dim));
  tuner_ = EntropyTuner(config_.alpha0, target, config_.lr);
}

void Agent::gates(const UpdateBatch& batch, std::vector<double>& gate,
                  std::vector<double>& safety_reward) const {
  const std::size_t n = batch.size();
  if (config_.mode != Mode::safeqil) {
    gate.assign(n, 1.0);
    safety_reward.assign(n, 0.0);
    return;
  }
  safety_reward = disc_.safety_reward_batch(batch.s_B);
  if (config_.forced_gate) {
    gate.assign(n, *config_.forced_gate);
    return;
  }
  gate = disc_.gate_batch(batch.s_B);
  if (config_.gate_mode == GateMode::threshold)
    for (double& w : gate) w = w >= 0.5 ? 1.0 : 0.0;
}

CriticTargets Agent::compute_targets(const UpdateBatch& batch, Rng& rng) const {
  const std::size_t n = batch.size();
  const Ablation ab = effective_ablation(config_);
  const bool anchored = config_.mode == Mode::safeqil;
  const bool demo = anchored && batch.s_D.rows > 0;
  const double g = config_.gamma;
  const double alpha = tuner_.alpha();
  CriticTargets t;
  gates(batch, t.gate, t.safety_reward);

  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix noise(n, actor_.action_dim());
  for (double& z : noise.data) z = normal(rng);
  Matrix next_a;
  actor_.sample_batch(batch.sn_B, noise, next_a, t.next_log_prob);

  // One pass of the target critics over every bootstrap input.
  std::vector<const Matrix*> states{&batch.sn_B};
  std::vector<const Matrix*> actions{&next_a};
  if (anchored) {
    states.push_back(&batch.anchor_sn);
    actions.push_back(&batch.anchor_an);
  }
  if (demo) {
    states.push_back(&batch.sn_D);
    actions.push_back(&batch.an_D);
  }
  std::size_t rows = 0;
  for (const Matrix* s : states) rows += s->rows;
  const std::size_t width = batch.sn_B.cols + actor_.action_dim();
  Matrix x(rows, width);
  std::size_t r0 = 0;
  for (std::size_t k = 0; k < states.size(); ++k) {
    const Matrix part = concat_columns(*states[k], *actions[k]);
    std::copy(part.data.begin(), part.data.end(), x.data.begin() + r0 * width);
    r0 += part.rows;
  }
  const std::vector<double> qmin = critics_.target_min(x);

  std::vector<double> reward = batch.r_B;
  if (config_.mode == Mode::sac_gail)
    reward = disc_.safety_reward_batch(concat_columns(batch.s_B, batch.a_B));
  t.sac.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mask = 1.0 - batch.done_B[i];
    t.sac[i] = reward[i] + g * mask * (qmin[i] - alpha * t.next_log_prob[i]);
  }
  std::size_t off = n;
  if (anchored) {
    t.ood.resize(n);
    t.q_min.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      t.ood[i] = t.safety_reward[i] + g * (1.0 - batch.done_B[i]) * qmin[i];
      t.q_min[i] = batch.anchor_r[i] + g * (1.0 - batch.anchor_done[i]) * qmin[off + i];
    }
    off += n;
  }
  if (demo && !ab.no_demo) {
    t.demo.resize(batch.s_D.rows);
    for (std::size_t i = 0; i < batch.s_D.rows; ++i)
      t.demo[i] = batch.r_D[i] + g * (1.0 - batch.done_D[i]) * qmin[off + i];
  }
  return t;
}

Diagnostics Agent::evaluate(const UpdateBatch& batch, const CriticTargets& targets) const {
  const Ablation ab = effective_ablation(config_);
  Diagnostics d;
  d.step = updates_;
  d.terms = critic_loss(critics_, batch, targets, ab, {}, {});
  d.critic_loss = d.terms.total;
  d.gate_mean = mean(targets.gate);
  d.alpha = tuner_.alpha();
  if (config_.mode == Mode::safeqil && !ab.no_cosine) {
    d.anchor_similarity = mean(batch.anchor_similarity);
    double dist = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      double sq = 0.0;
      for (std::size_t k = 0; k < batch.s_B.cols; ++k) {
        const double e = batch.s_B(i, k) - batch.anchor_s(i, k);
        sq += e * e;
      }
      dist += std::sqrt(sq);
    }
    d.anchor_distance = dist / static_cast<double>(batch.size());
  }
  return d;
}

Diagnostics Agent::update(const UpdateBatch& batch, Rng& rng) {
  const Ablation ab = effective_ablation(config_);
  double disc_loss = 0.0;
  if (config_.mode == Mode::safeqil) {
    disc_loss = disc_.update(batch.s_B, batch.s_D, rng).total;
  } else if (config_.mode == Mode::sac_gail) {
    disc_loss = disc_
                    .update(concat_columns(batch.s_B, batch.a_B),
                            concat_columns(batch.s_D, batch.a_D), rng)
                    .total;
  }

  const CriticTargets targets = compute_targets(batch, rng);
  Diagnostics d = evaluate(batch, targets);
  d.disc_loss = disc_loss;
  {
    std::vector<double> g1(critics_.online[0].num_params(), 0.0);
    std::vector<double> g2(critics_.online[1].num_params(), 0.0);
    critic_loss(critics_, batch, targets, ab, g1, g2);
    adam_step(critics_.online[0].params(), g1, critics_.adam[0]);
    adam_step(critics_.online[1].params(), g2, critics_.adam[1]);
  }
  const PolicyResult pr =
      policy_update(actor_, target_min_q(critics_), batch.s_B, tuner_.alpha(), rng);
  d.policy_objective = pr.objective;
  d.alpha_loss = alpha_update(tuner_, pr.log_probs);
  d.alpha = tuner_.alpha();
  critics_.soft_update(config_.eta);
  ++updates_;
  d.step = updates_;
  return d;
}

// ---------------------------------------------------------------- batches

UpdateBatch make_batch(const ReplayBuffer& buffer, const DemoSet& demos, std::size_t n,
                       const AgentConfig& config, Rng& rng) {
  UpdateBatch b;
  const auto idx = buffer.sample_indices(n, rng);
  const Transition& first = buffer.at(idx[0]);
  const std::size_t sd = first.state.size();
  const std::size_t ad = first.action.size();
  b.s_B.resize(n, sd);
  b.a_B.resize(n, ad);
  b.sn_B.resize(n, sd);
  b.r_B.resize(n);
  b.done_B.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Transition& t = buffer.at(idx[i]);
    b.s_B.set_row(i, t.state);
    b.a_B.set_row(i, t.action);
    b.sn_B.set_row(i, t.next_state);
    b.r_B[i] = t.reward;
    b.done_B[i] = t.done ? 1.0 : 0.0;
  }
  if (!config.uses_demos()) return b;
  if (demos.empty()) throw std::logic_error("this mode needs demonstrations");
  if (demos.state_dim() != sd || demos.action_dim() != ad)
    throw DimensionError("demonstrations do not match the environment dimensions");

  std::uniform_int_distribution<std::size_t> pick(0, demos.size() - 1);
  b.s_D.resize(n, sd);
  b.a_D.resize(n, ad);
  b.sn_D.resize(n, sd);
  b.an_D.resize(n, ad);
  b.r_D.resize(n);
  b.done_D.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Anchor a = demos.anchor(pick(rng));
    b.s_D.set_row(i, a.state);
    b.a_D.set_row(i, a.action);
    b.sn_D.set_row(i, a.next_state);
    b.an_D.set_row(i, a.next_action);
    b.r_D[i] = a.reward;
    b.done_D[i] = a.done ? 1.0 : 0.0;
  }
  if (config.mode != Mode::safeqil) return b;

  std::vector<std::size_t> anchor_idx;
  std::vector<double> sim;
  if (config.ablation.no_cosine) {
    anchor_idx.resize(n);
    for (auto& k : anchor_idx) k = pick(rng);
    sim.assign(n, 0.0);
  } else {
    anchor_idx = demos.retrieve_batch(b.s_B, &sim);
  }
  b.anchor_s.resize(n, sd);
  b.anchor_sn.resize(n, sd);
  b.anchor_an.resize(n, ad);
  b.anchor_r.resize(n);
  b.anchor_done.resize(n);
  b.anchor_similarity = sim;
  for (std::size_t i = 0; i < n; ++i) {
    const Anchor a = demos.anchor(anchor_idx[i], sim[i]);
    b.anchor_s.set_row(i, a.state);
    b.anchor_sn.set_row(i, a.next_state);
    b.anchor_an.set_row(i, a.next_action);
    b.anchor_r[i] = a.reward;
    b.anchor_done[i] = a.done ? 1.0 : 0.0;
  }
  return b;
}

// ---------------------------------------------------------------- Trainer

Trainer::Trainer(std::unique_ptr<Env> env, AgentConfig config, DemoSet demos,
                 std::uint64_t seed)
    : env_(std::move(env)), demos_(std::move(demos)), buffer_(config.buffer_capacity),
      seed_(seed) {
  std::seed_seq init{seed, std::uint64_t{1}};
  std::seed_seq act{seed, std::uint64_t{2}};
  std::seed_seq upd{seed, std::uint64_t{3}};
  Rng init_rng(init);
  act_rng_ = Rng(act);
  update_rng_ = Rng(upd);
  if (config.uses_demos() && demos_.empty())
    throw std::invalid_argument("mode " + std::string(to_string(config.mode)) +
                                " requires a non-empty demonstration set");
  if (config.normalize_anchor_states) demos_.set_standardize(true);
  agent_ = Agent(env_->spec(), std::move(config), init_rng);
}

std::optional<Diagnostics> Trainer::train_step() {
  const AgentConfig& cfg = agent_.config();
  if (env_->done()) state_ = env_->reset(seed_ * 1'000'003ULL + episodes_);
  std::vector<double> action;
  if (steps_ < cfg.warmup_steps) {
    const auto& spec = env_->spec();
    action.resize(spec.action_dim);
    for (std::size_t d = 0; d < spec.action_dim; ++d) {
      std::uniform_real_distribution<double> u(spec.action_low[d], spec.action_high[d]);
      action[d] = u(act_rng_);
    }
  } else {
    action = agent_.actor().sample(state_, act_rng_, false).action;
  }
  StepResult res = env_->step(action);
  Transition t;
  t.state = state_;
  t.action = action;
  t.reward = res.reward;
  t.cost = res.cost;
  t.next_state = res.next_state;
  t.done = res.terminal;
  t.episode = static_cast<std::int64_t>(episodes_);
  t.step = static_cast<std::int64_t>(env_->steps()) - 1;
  buffer_.push(std::move(t));
  state_ = std::move(res.next_state);
  if (res.done) ++episodes_;
  ++steps_;

  if (steps_ < cfg.warmup_steps || buffer_.size() < cfg.batch_size) return std::nullopt;
  std::optional<Diagnostics> diag;
  for (std::size_t u = 0; u < cfg.updates_per_step; ++u) {
    const UpdateBatch batch = make_batch(buffer_, demos_, cfg.batch_size, cfg, update_rng_);
    diag = agent_.update(batch, update_rng_);
    const double loss = diag->critic_loss + diag->disc_loss + diag->policy_objective;
    if (!std::isfinite(loss))
      throw NonFiniteError("non-finite loss at environment step " + std::to_string(steps_));
  }
  if (diag) diag->step = steps_;
  return diag;
}

// ------------------------------------------------------------ persistence

nlohmann::json to_json(const Actor& a) {
  return {{"net", to_json(a.net_)},
          {"adam", to_json(a.adam_)},
          {"low", a.low_},
          {"high", a.high_},
          {"log_std_min", a.log_std_min_},
          {"log_std_max", a.log_std_max_}};
}

Actor actor_from_json(const nlohmann::json& j) {
  Actor a;
  a.net_ = net_from_json(j.at("net"));
  a.adam_ = adam_from_json(j.at("adam"));
  a.low_ = j.at("low").get<std::vector<double>>();
  a.high_ = j.at("high").get<std::vector<double>>();
  a.log_std_min_ = j.at("log_std_min").get<double>();
  a.log_std_max_ = j.at("log_std_max").get<double>();
  if (a.net_.output_size() != 2 * a.low_.size())
    throw DimensionError("actor output does not match its action bounds");
  return a;
}

nlohmann::json to_json(const AgentConfig& c) {
  nlohmann::json j = {{"mode", to_string(c.mode)},
                      {"variant", c.ablation.variant()},
                      {"no_cosine", c.ablation.no_cosine},
                      {"no_max", c.ablation.no_max},
                      {"no_constraint", c.ablation.no_constraint},
                      {"no_ood", c.ablation.no_ood},
                      {"no_demo", c.ablation.no_demo},
                      {"no_sac", c.ablation.no_sac},
                      {"gamma", c.gamma},
                      {"lr", c.lr},
                      {"eta", c.eta},
                      {"alpha0", c.alpha0},
                      {"target_entropy", nullptr},
                      {"batch_size", c.batch_size},
                      {"warmup_steps", c.warmup_steps},
                      {"buffer_capacity", c.buffer_capacity},
                      {"updates_per_step", c.updates_per_step},
                      {"actor_hidden", c.actor_hidden},
                      {"critic_hidden", c.critic_hidden},
                      {"disc_hidden", c.disc_hidden},
                      {"disc_lr", c.disc_lr},
                      {"lambda_gp", c.lambda_gp},
                      {"clamp_epsilon", c.clamp_epsilon},
                      {"log_std_init", c.log_std_init},
                      {"log_std_min", c.log_std_min},
                      {"log_std_max", c.log_std_max},
                      {"gate_mode", to_string(c.gate_mode)},
                      {"forced_gate", nullptr},
                      {"normalize_anchor_states", c.normalize_anchor_states}};
  if (c.target_entropy) j["target_entropy"] = *c.target_entropy;
  if (c.forced_gate) j["forced_gate"] = *c.forced_gate;
  return j;
}

AgentConfig agent_config_from_json(const nlohmann::json& j) {
  AgentConfig c;
  c.mode = mode_from_string(j.at("mode").get<std::string>());
  c.ablation.no_cosine = j.at("no_cosine").get<bool>();
  c.ablation.no_max = j.at("no_max").get<bool>();
  c.ablation.no_constraint = j.at("no_constraint").get<bool>();
  c.ablation.no_ood = j.at("no_ood").get<bool>();
  c.ablation.no_demo = j.at("no_demo").get<bool>();
  c.ablation.no_sac = j.at("no_sac").get<bool>();
  c.gamma = j.at("gamma").get<double>();
  c.lr = j.at("lr").get<double>();
  c.eta = j.at("eta").get<double>();
  c.alpha0 = j.at("alpha0").get<double>();
  if (!j.at("target_entropy").is_null()) c.target_entropy = j.at("target_entropy").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.warmup_steps = j.at("warmup_steps").get<std::size_t>();
  c.buffer_capacity = j.at("buffer_capacity").get<std::size_t>();
  c.updates_per_step = j.at("updates_per_step").get<std::size_t>();
  c.actor_hidden = j.at("actor_hidden").get<std::vector<std::size_t>>();
  c.critic_hidden = j.at("critic_hidden").get<std::vector<std::size_t>>();
  c.disc_hidden = j.at("disc_hidden").get<std::vector<std::size_t>>();
  c.disc_lr = j.at("disc_lr").get<double>();
  c.lambda_gp = j.at("lambda_gp").get<double>();
  c.clamp_epsilon = j.at("clamp_epsilon").get<double>();
  c.log_std_init = j.at("log_std_init").get<double>();
  c.log_std_min = j.at("log_std_min").get<double>();
  c.log_std_max = j.at("log_std_max").get<double>();
  c.gate_mode = gate_mode_from_string(j.at("gate_mode").get<std::string>());
  if (!j.at("forced_gate").is_null()) c.forced_gate = j.at("forced_gate").get<double>();
  c.normalize_anchor_states = j.at("normalize_anchor_states").get<bool>();
  return c;
}

nlohmann::json to_json(const Agent& a) {
  nlohmann::json j = {{"format_version", kCheckpointFormatVersion},
                      {"config", to_json(a.config_)},
                      {"actor", to_json(a.actor_)},
                      {"critic1", to_json(a.critics_.online[0])},
                      {"critic2", to_json(a.critics_.online[1])},
                      {"target1", to_json(a.critics_.target[0])},
                      {"target2", to_json(a.critics_.target[1])},
                      {"critic1_adam", to_json(a.critics_.adam[0])},
                      {"critic2_adam", to_json(a.critics_.adam[1])},
                      {"log_alpha", a.tuner_.log_alpha},
                      {"target_entropy", a.tuner_.target_entropy},
                      {"alpha_adam", to_json(a.tuner_.adam)},
                      {"updates", a.updates_},
                      {"discriminator", nullptr}};
  if (a.has_discriminator()) j["discriminator"] = to_json(a.disc_);
  return j;
}

Agent agent_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("unsupported checkpoint format version");
  Agent a;
  a.config_ = agent_config_from_json(j.at("config"));
  a.actor_ = actor_from_json(j.at("actor"));
  a.critics_.online[0] = net_from_json(j.at("critic1"));
  a.critics_.online[1] = net_from_json(j.at("critic2"));
  a.critics_.target[0] = net_from_json(j.at("target1"));
  a.critics_.target[1] = net_from_json(j.at("target2"));
  a.critics_.adam[0] = adam_from_json(j.at("critic1_adam"));
  a.critics_.adam[1] = adam_from_json(j.at("critic2_adam"));
  for (std::size_t k = 0; k < 2; ++k)
    if (!a.critics_.online[k].same_shape(a.critics_.target[k]))
      throw DimensionError("target critic shape differs from its online critic");
  a.tuner_.log_alpha = j.at("log_alpha").get<double>();
  a.tuner_.target_entropy = j.at("target_entropy").get<double>();
  a.tuner_.adam = adam_from_json(j.at("alpha_adam"));
  a.updates_ = j.at("updates").get<std::size_t>();
  if (!j.at("discriminator").is_null())
    a.disc_ = discriminator_from_json(j.at("discriminator"));
  return a;
}

}  // namespace safeqil
