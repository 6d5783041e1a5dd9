#include "safeqil/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "safeqil/kernels.hpp"

namespace safeqil {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    case Activation::sigmoid: return sigmoid(z);
    case Activation::softplus: return softplus(z);
  }
  return z;
}

// First derivative from pre-activation z and post-activation h.
double derivative(Activation a, double z, double h) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - h * h;
    case Activation::sigmoid: return h * (1.0 - h);
    case Activation::softplus: return sigmoid(z);
  }
  return 1.0;
}

double second_derivative(Activation a, double z, double h) {
  switch (a) {
    case Activation::identity:
    case Activation::relu: return 0.0;
    case Activation::tanh: return -2.0 * h * (1.0 - h * h);
    case Activation::sigmoid: return h * (1.0 - h) * (1.0 - 2.0 * h);
    case Activation::softplus: {
      const double s = sigmoid(z);
      return s * (1.0 - s);
    }
  }
  return 0.0;
}

}  // namespace

void Matrix::set_row(std::size_t r, std::span<const double> values) {
  if (values.size() != cols)
    throw DimensionError("row length " + std::to_string(values.size()) +
                         " does not match matrix width " + std::to_string(cols));
  std::copy(values.begin(), values.end(), data.begin() + r * cols);
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softplus: return "softplus";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "softplus") return Activation::softplus;
  throw std::invalid_argument("unknown activation: " + std::string(name));
}

DenseNet::DenseNet(std::vector<std::size_t> layer_sizes, Activation hidden,
                   Activation output)
    : sizes_(std::move(layer_sizes)), hidden_(hidden), output_(output) {
  if (sizes_.size() < 2)
    throw DimensionError("a network needs at least an input and an output layer");
  for (std::size_t s : sizes_)
    if (s == 0) throw DimensionError("layer sizes must be positive");
  if (hidden_ != Activation::relu && hidden_ != Activation::tanh)
    throw std::invalid_argument("hidden activation must be relu or tanh");
  if (output_ == Activation::relu || output_ == Activation::tanh)
    throw std::invalid_argument(
        "output activation must be identity, sigmoid or softplus");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
  }
  params_.assign(total, 0.0);
}

std::span<double> DenseNet::weights(std::size_t layer) {
  return {params_.data() + offsets_[layer], sizes_[layer] * sizes_[layer + 1]};
}
std::span<const double> DenseNet::weights(std::size_t layer) const {
  return {params_.data() + offsets_[layer], sizes_[layer] * sizes_[layer + 1]};
}
std::span<double> DenseNet::biases(std::size_t layer) {
  return {params_.data() + offsets_[layer] + sizes_[layer] * sizes_[layer + 1],
          sizes_[layer + 1]};
}
std::span<const double> DenseNet::biases(std::size_t layer) const {
  return {params_.data() + offsets_[layer] + sizes_[layer] * sizes_[layer + 1],
          sizes_[layer + 1]};
}

void DenseNet::init_uniform(Rng& rng) {
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : weights(l)) w = dist(rng);
    for (double& b : biases(l)) b = dist(rng);
  }
}

bool DenseNet::same_shape(const DenseNet& other) const {
  return sizes_ == other.sizes_ && hidden_ == other.hidden_ &&
         output_ == other.output_;
}

std::vector<double> DenseNet::forward(std::span<const double> input) const {
  Matrix x(1, input.size());
  x.set_row(0, input);
  Matrix y = forward(x);
  return std::move(y.data);
}

Matrix DenseNet::forward(const Matrix& input) const {
  ForwardTrace trace;
  forward(input, trace);
  return std::move(trace.post.back());
}

void DenseNet::forward(const Matrix& input, ForwardTrace& trace) const {
  if (input.cols != input_size())
    throw DimensionError("network expects input size " +
                         std::to_string(input_size()) + ", got " +
                         std::to_string(input.cols));
  const auto& k = kernels::active();
  const std::size_t batch = input.rows;
  const std::size_t L = num_layers();
  trace.layer_sizes = sizes_;
  trace.pre.resize(L);
  trace.post.resize(L + 1);
  trace.post[0] = input;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = sizes_[l];
    const std::size_t out = sizes_[l + 1];
    Matrix& z = trace.pre[l];
    z.resize(batch, out);
    k.gemm_nt(batch, out, in, trace.post[l].data.data(), weights(l).data(),
              z.data.data(), false);
    const auto b = biases(l);
    const Activation act = (l + 1 == L) ? output_ : hidden_;
    Matrix& h = trace.post[l + 1];
    h.resize(batch, out);
    for (std::size_t r = 0; r < batch; ++r) {
      double* zr = z.data.data() + r * out;
      double* hr = h.data.data() + r * out;
      for (std::size_t j = 0; j < out; ++j) {
        zr[j] += b[j];
        hr[j] = activate(act, zr[j]);
      }
    }
  }
}

void DenseNet::check_trace(const ForwardTrace& trace) const {
  if (trace.layer_sizes != sizes_ || trace.pre.size() != num_layers() ||
      trace.post.size() != num_layers() + 1)
    throw DimensionError("forward trace was recorded by a different network");
}

void DenseNet::backward(const ForwardTrace& trace, const Matrix& output_grad,
                        std::span<double> param_grad, Matrix* input_grad,
                        bool grad_wrt_preactivation) const {
  check_trace(trace);
  if (param_grad.size() != params_.size())
    throw DimensionError("parameter gradient has the wrong size");
  const std::size_t batch = trace.post[0].rows;
  if (output_grad.rows != batch || output_grad.cols != output_size())
    throw DimensionError("output gradient shape does not match the trace");
  const auto& k = kernels::active();
  const std::size_t L = num_layers();

  Matrix dz = output_grad;
  if (!grad_wrt_preactivation) {
    const Matrix& z = trace.pre[L - 1];
    const Matrix& h = trace.post[L];
    for (std::size_t i = 0; i < dz.data.size(); ++i)
      dz.data[i] *= derivative(output_, z.data[i], h.data[i]);
  }
  Matrix dh;
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = sizes_[l];
    const std::size_t out = sizes_[l + 1];
    double* gw = param_grad.data() + offsets_[l];
    double* gb = gw + in * out;
    k.gemm_tn_acc(out, in, batch, dz.data.data(), trace.post[l].data.data(), gw);
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t j = 0; j < out; ++j) gb[j] += dz.data[r * out + j];
    if (l == 0 && input_grad == nullptr) break;
    dh.resize(batch, in);
    k.gemm_nn_acc(batch, in, out, dz.data.data(), weights(l).data(),
                  dh.data.data());
    if (l == 0) {
      *input_grad = std::move(dh);
      break;
    }
    const Matrix& z = trace.pre[l - 1];
    const Matrix& h = trace.post[l];
    for (std::size_t i = 0; i < dh.data.size(); ++i)
      dh.data[i] *= derivative(hidden_, z.data[i], h.data[i]);
    std::swap(dz, dh);
  }
}

const Matrix& DenseNet::input_gradient(const ForwardTrace& trace,
                                       InputGradTrace& g) const {
  check_trace(trace);
  if (output_size() != 1)
    throw DimensionError("input_gradient requires a scalar-output network");
  const auto& k = kernels::active();
  const std::size_t L = num_layers();
  const std::size_t batch = trace.post[0].rows;
  g.delta.resize(L);
  g.upstream.resize(L);
  g.upstream[L - 1] = Matrix(batch, 1, 1.0);
  for (std::size_t l = L; l-- > 0;) {
    const Activation act = (l + 1 == L) ? output_ : hidden_;
    const Matrix& z = trace.pre[l];
    const Matrix& h = trace.post[l + 1];
    Matrix& d = g.delta[l];
    d = g.upstream[l];
    for (std::size_t i = 0; i < d.data.size(); ++i)
      d.data[i] *= derivative(act, z.data[i], h.data[i]);
    Matrix& u = (l == 0) ? g.input_grad : g.upstream[l - 1];
    u.resize(batch, sizes_[l]);
    k.gemm_nn_acc(batch, sizes_[l], sizes_[l + 1], d.data.data(),
                  weights(l).data(), u.data.data());
  }
  return g.input_grad;
}

void DenseNet::backward_input_gradient(const ForwardTrace& trace,
                                       const InputGradTrace& g,
                                       const Matrix& adjoint,
                                       std::span<double> param_grad) const {
  check_trace(trace);
  const std::size_t L = num_layers();
  const std::size_t batch = trace.post[0].rows;
  if (g.delta.size() != L || adjoint.rows != batch || adjoint.cols != input_size())
    throw DimensionError("input-gradient adjoint does not match the trace");
  if (param_grad.size() != params_.size())
    throw DimensionError("parameter gradient has the wrong size");
  const auto& k = kernels::active();

  // Reverse through u_{l-1} = delta_l W_l and delta_l = f'(z_l) * u_l.
  // Second-order activation terms land on z_l as injected adjoints.
  std::vector<Matrix> z_adj(L);
  Matrix delta_adj(batch, sizes_[1]);
  k.gemm_nt(batch, sizes_[1], sizes_[0], adjoint.data.data(), weights(0).data(),
            delta_adj.data.data(), false);
  k.gemm_tn_acc(sizes_[1], sizes_[0], batch, g.delta[0].data.data(),
                adjoint.data.data(), param_grad.data() + offsets_[0]);
  for (std::size_t l = 0; l < L; ++l) {
    const Activation act = (l + 1 == L) ? output_ : hidden_;
    const Matrix& z = trace.pre[l];
    const Matrix& h = trace.post[l + 1];
    const Matrix& u = g.upstream[l];
    Matrix& za = z_adj[l];
    za.resize(batch, sizes_[l + 1]);
    for (std::size_t i = 0; i < za.data.size(); ++i)
      za.data[i] = second_derivative(act, z.data[i], h.data[i]) * u.data[i] *
                   delta_adj.data[i];
    if (l + 1 == L) break;
    Matrix u_adj(batch, sizes_[l + 1]);
    for (std::size_t i = 0; i < u_adj.data.size(); ++i)
      u_adj.data[i] = derivative(act, z.data[i], h.data[i]) * delta_adj.data[i];
    const std::size_t in = sizes_[l + 1];
    const std::size_t out = sizes_[l + 2];
    Matrix next_adj(batch, out);
    k.gemm_nt(batch, out, in, u_adj.data.data(), weights(l + 1).data(),
              next_adj.data.data(), false);
    k.gemm_tn_acc(out, in, batch, g.delta[l + 1].data.data(), u_adj.data.data(),
                  param_grad.data() + offsets_[l + 1]);
    delta_adj = std::move(next_adj);
  }

  // Ordinary reverse pass of the forward computation with the injected
  // pre-activation adjoints.
  Matrix dz = std::move(z_adj[L - 1]);
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = sizes_[l];
    const std::size_t out = sizes_[l + 1];
    double* gw = param_grad.data() + offsets_[l];
    double* gb = gw + in * out;
    k.gemm_tn_acc(out, in, batch, dz.data.data(), trace.post[l].data.data(), gw);
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t j = 0; j < out; ++j) gb[j] += dz.data[r * out + j];
    if (l == 0) break;
    Matrix dh(batch, in);
    k.gemm_nn_acc(batch, in, out, dz.data.data(), weights(l).data(),
                  dh.data.data());
    const Matrix& z = trace.pre[l - 1];
    const Matrix& h = trace.post[l];
    Matrix& za = z_adj[l - 1];
    for (std::size_t i = 0; i < dh.data.size(); ++i)
      za.data[i] += dh.data[i] * derivative(hidden_, z.data[i], h.data[i]);
    dz = std::move(za);
  }
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state) {
  if (params.size() != grads.size() ||
      state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw DimensionError("adam_step: parameter, gradient and moment shapes differ");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      std::ostringstream msg;
      msg << "adam_step: non-finite gradient at index " << i << " (" << grads[i]
          << "); step rejected";
      throw NonFiniteError(msg.str());
    }
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const kernels::AdamCoeffs coeffs{state.learning_rate,
                                   state.beta1,
                                   state.beta2,
                                   state.epsilon,
                                   1.0 - std::pow(state.beta1, t),
                                   1.0 - std::pow(state.beta2, t)};
  kernels::active().adam(params.data(), grads.data(), state.first_moment.data(),
                         state.second_moment.data(), params.size(), coeffs);
  if (!all_finite(params))
    throw NonFiniteError("adam_step produced non-finite parameters");
}

void soft_update(std::span<double> target, std::span<const double> online,
                 double rate) {
  if (target.size() != online.size())
    throw DimensionError("soft_update: target and online shapes differ");
  if (!(rate > 0.0 && rate < 1.0))
    throw std::invalid_argument("soft_update: rate must lie in (0, 1)");
  kernels::active().blend(target.data(), online.data(), rate, target.size());
}

nlohmann::json to_json(const DenseNet& net) {
  return {{"format_version", kCheckpointFormatVersion},
          {"layer_sizes", net.layer_sizes()},
          {"hidden_activation", to_string(net.hidden_activation())},
          {"output_activation", to_string(net.output_activation())},
          {"params", std::vector<double>(net.params().begin(), net.params().end())}};
}

nlohmann::json to_json(const AdamState& s) {
  return {{"format_version", kCheckpointFormatVersion},
          {"step_count", s.step_count},
          {"learning_rate", s.learning_rate},
          {"beta1", s.beta1},
          {"beta2", s.beta2},
          {"epsilon", s.epsilon},
          {"first_moment", s.first_moment},
          {"second_moment", s.second_moment}};
}

namespace {
void check_version(const nlohmann::json& j) {
  const int v = j.at("format_version").get<int>();
  if (v != kCheckpointFormatVersion)
    throw std::runtime_error("unsupported checkpoint format version " +
                             std::to_string(v));
}
}  // namespace

DenseNet net_from_json(const nlohmann::json& j) {
  check_version(j);
  DenseNet net(j.at("layer_sizes").get<std::vector<std::size_t>>(),
               activation_from_string(j.at("hidden_activation").get<std::string>()),
               activation_from_string(j.at("output_activation").get<std::string>()));
  const auto p = j.at("params").get<std::vector<double>>();
  if (p.size() != net.num_params())
    throw DimensionError("checkpoint parameter count does not match layer sizes");
  std::copy(p.begin(), p.end(), net.params().begin());
  return net;
}

AdamState adam_from_json(const nlohmann::json& j) {
  check_version(j);
  AdamState s;
  s.step_count = j.at("step_count").get<std::uint64_t>();
  s.learning_rate = j.at("learning_rate").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.epsilon = j.at("epsilon").get<double>();
  s.first_moment = j.at("first_moment").get<std::vector<double>>();
  s.second_moment = j.at("second_moment").get<std::vector<double>>();
  if (s.first_moment.size() != s.second_moment.size())
    throw DimensionError("checkpoint Adam moments differ in size");
  return s;
}

}  // namespace safeqil
