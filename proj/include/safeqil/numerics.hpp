#pragma once

/**
 * @file numerics.hpp
 * @brief Small dense-network engine: batched forward pass, exact reverse-mode
 *        gradients (including the second-order path needed by input-gradient
 *        penalties), Adam and soft target averaging.
 *
 * Parameters of a network live in one flat vector. Layer l owns a weight
 * block of shape (out x in), row-major, followed by its bias vector; layers
 * are stored in order. Optimizers, soft updates, checkpoints and
 * finite-difference checks all operate on that flat view.
 */

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace safeqil {

using Rng = std::mt19937_64;

/// Rejected input: shapes or dimensions that do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced or was fed a NaN/inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major dense matrix; rows are batch entries throughout the library.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
  void resize(std::size_t r, std::size_t c) {
    rows = r;
    cols = c;
    data.assign(r * c, 0.0);
  }
  void set_row(std::size_t r, std::span<const double> values);
};

enum class Activation { identity, relu, tanh, sigmoid, softplus };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct ForwardTrace {
  std::vector<std::size_t> layer_sizes;
  std::vector<Matrix> pre;   // z_l for l = 1..L
  std::vector<Matrix> post;  // h_l for l = 0..L; post[0] is the input
  const Matrix& output() const { return post.back(); }
};

/// Reverse pass of d(output)/d(input) for a scalar-output net, kept so the
/// input gradient itself can be differentiated wrt the parameters.
struct InputGradTrace {
  std::vector<Matrix> delta;  // d out / d z_l
  std::vector<Matrix> upstream;  // d out / d h_l, l = 1..L (last is all ones)
  Matrix input_grad;
};

class DenseNet {
 public:
  DenseNet() = default;
  DenseNet(std::vector<std::size_t> layer_sizes, Activation hidden,
           Activation output);

  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  std::size_t num_layers() const { return sizes_.empty() ? 0 : sizes_.size() - 1; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  std::size_t num_params() const { return params_.size(); }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> biases(std::size_t layer);
  std::span<const double> biases(std::size_t layer) const;

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  void init_uniform(Rng& rng);

  bool same_shape(const DenseNet& other) const;

  std::vector<double> forward(std::span<const double> input) const;
  Matrix forward(const Matrix& input) const;
  void forward(const Matrix& input, ForwardTrace& trace) const;

  /// Accumulates dL/dparams into param_grad and optionally writes dL/dinput.
  /// output_grad is dL/d(output) or, with grad_wrt_preactivation, dL/dz_L.
  void backward(const ForwardTrace& trace, const Matrix& output_grad,
                std::span<double> param_grad, Matrix* input_grad,
                bool grad_wrt_preactivation = false) const;

  /// d(output)/d(input) per batch row; requires a single output unit.
  const Matrix& input_gradient(const ForwardTrace& trace,
                               InputGradTrace& grad_trace) const;

  /// Given dL/d(input_gradient), accumulates dL/dparams through the reverse
  /// pass recorded by input_gradient().
  void backward_input_gradient(const ForwardTrace& trace,
                               const InputGradTrace& grad_trace,
                               const Matrix& input_grad_adjoint,
                               std::span<double> param_grad) const;

 private:
  void check_trace(const ForwardTrace& trace) const;

  std::vector<std::size_t> sizes_;
  Activation hidden_ = Activation::relu;
  Activation output_ = Activation::identity;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;  // start of each layer's weight block
};

struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(std::size_t n, double lr)
      : first_moment(n, 0.0), second_moment(n, 0.0), learning_rate(lr) {}
};

/// Bias-corrected Adam. A non-finite gradient throws NonFiniteError and
/// leaves params and state untouched.
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state);

/// target <- (1 - rate) * target + rate * online, rate in (0, 1).
void soft_update(std::span<double> target, std::span<const double> online,
                 double rate);

bool all_finite(std::span<const double> values);

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json to_json(const DenseNet& net);
nlohmann::json to_json(const AdamState& state);
DenseNet net_from_json(const nlohmann::json& j);
AdamState adam_from_json(const nlohmann::json& j);

}  // namespace safeqil
