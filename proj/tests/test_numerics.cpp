#include <doctest.h>

#include <cmath>

#include "safeqil/numerics.hpp"
#include "safeqil/oracle.hpp"

using namespace safeqil;

namespace {

// Sum of w_i * out_i over a batch, w fixed; its gradient wrt out is w.
double weighted_output(const DenseNet& net, const Matrix& x, const Matrix& w) {
  Matrix y = net.forward(x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) s += w.data[i] * y.data[i];
  return s;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.data) v = n(rng);
  return m;
}

}  // namespace

TEST_SUITE("numerics") {
  TEST_CASE("zero network maps everything to zero") {
    DenseNet net({3, 5, 2}, Activation::tanh, Activation::identity);
    auto y = net.forward(std::vector<double>{1.0, -2.0, 0.5});
    CHECK(y == std::vector<double>{0.0, 0.0});
  }

  TEST_CASE("identity layer") {
    DenseNet net({2, 2}, Activation::relu, Activation::identity);
    auto w = net.weights(0);
    w[0] = 1.0;
    w[3] = 1.0;
    CHECK(net.forward(std::vector<double>{1.0, 2.0}) == std::vector<double>{1.0, 2.0});
  }

  TEST_CASE("2-3-1 forward matches a hand-rolled matrix multiply") {
    const double W1[] = {0.5, -0.3, 0.8, 0.2, -0.6, 0.9};
    const double b1[] = {0.1, -0.2, 0.05};
    const double W2[] = {1.2, -0.7, 0.4};
    for (Activation hidden : {Activation::tanh, Activation::relu}) {
      DenseNet net({2, 3, 1}, hidden, Activation::identity);
      std::copy(std::begin(W1), std::end(W1), net.weights(0).begin());
      std::copy(std::begin(b1), std::end(b1), net.biases(0).begin());
      std::copy(std::begin(W2), std::end(W2), net.weights(1).begin());
      net.biases(1)[0] = 0.3;
      const double y = net.forward(std::vector<double>{0.7, -1.1})[0];
      CHECK(y == doctest::Approx(hidden == Activation::tanh ? 0.635326106650338 : 1.138)
                     .epsilon(1e-14));
    }
  }

  TEST_CASE("wrong input size is rejected") {
    DenseNet net({3, 2}, Activation::relu, Activation::identity);
    CHECK_THROWS_AS(net.forward(std::vector<double>{1.0, 2.0}), DimensionError);
  }

  TEST_CASE("linear layer gradient is the input broadcast") {
    DenseNet net({3, 2}, Activation::relu, Activation::identity);
    Rng rng(1);
    net.init_uniform(rng);
    Matrix x(1, 3);
    x.data = {0.3, -1.2, 2.0};
    ForwardTrace t;
    net.forward(x, t);
    Matrix g(1, 2, 1.0);
    std::vector<double> grad(net.num_params(), 0.0);
    net.backward(t, g, grad, nullptr);
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t i = 0; i < 3; ++i) CHECK(grad[o * 3 + i] == x.data[i]);
    CHECK(grad[6] == 1.0);
    CHECK(grad[7] == 1.0);
  }

  TEST_CASE("zero output gradient gives zero parameter gradient") {
    DenseNet net({4, 8, 2}, Activation::tanh, Activation::identity);
    Rng rng(2);
    net.init_uniform(rng);
    Matrix x = random_matrix(5, 4, rng);
    ForwardTrace t;
    net.forward(x, t);
    std::vector<double> grad(net.num_params(), 0.0);
    net.backward(t, Matrix(5, 2), grad, nullptr);
    for (double g : grad) CHECK(g == 0.0);
  }

  TEST_CASE("backward matches finite differences on 4-8-8-2 nets") {
    for (Activation hidden : {Activation::tanh, Activation::relu})
      for (Activation out : {Activation::identity, Activation::sigmoid, Activation::softplus}) {
        Rng rng(10 + static_cast<int>(hidden) * 7 + static_cast<int>(out));
        DenseNet net({4, 8, 8, 2}, hidden, out);
        net.init_uniform(rng);
        Matrix x = random_matrix(3, 4, rng);
        Matrix w = random_matrix(3, 2, rng);
        ForwardTrace t;
        net.forward(x, t);
        std::vector<double> grad(net.num_params(), 0.0);
        Matrix gx;
        net.backward(t, w, grad, &gx);
        auto f = [&] { return weighted_output(net, x, w); };
        auto num = finite_diff_grad(f, net.params(), 1e-5);
        CHECK(max_relative_error(grad, num) < 1e-4);
        auto num_x = finite_diff_grad(f, x.data, 1e-5);
        CHECK(max_relative_error(gx.data, num_x) < 1e-4);
      }
  }

  TEST_CASE("input-gradient penalty differentiates through the double backward") {
    for (Activation out : {Activation::identity, Activation::sigmoid}) {
      Rng rng(21);
      DenseNet net({3, 6, 6, 1}, Activation::tanh, out);
      net.init_uniform(rng);
      Matrix x = random_matrix(4, 3, rng);
      // L = sum_i (||d out / d x_i|| - 1)^2
      auto penalty = [&] {
        ForwardTrace t;
        net.forward(x, t);
        InputGradTrace it;
        const Matrix& g = net.input_gradient(t, it);
        double s = 0.0;
        for (std::size_t i = 0; i < g.rows; ++i) {
          double sq = 0.0;
          for (double v : g.row(i)) sq += v * v;
          s += (std::sqrt(sq) - 1.0) * (std::sqrt(sq) - 1.0);
        }
        return s;
      };
      ForwardTrace t;
      net.forward(x, t);
      InputGradTrace it;
      const Matrix g = net.input_gradient(t, it);
      Matrix adj(g.rows, g.cols);
      for (std::size_t i = 0; i < g.rows; ++i) {
        double sq = 0.0;
        for (double v : g.row(i)) sq += v * v;
        const double n = std::sqrt(sq);
        for (std::size_t j = 0; j < g.cols; ++j) adj(i, j) = 2.0 * (n - 1.0) * g(i, j) / n;
      }
      std::vector<double> grad(net.num_params(), 0.0);
      net.backward_input_gradient(t, it, adj, grad);
      auto num = finite_diff_grad(penalty, net.params(), 1e-5);
      CHECK(max_relative_error(grad, num) < 1e-4);
    }
  }

  TEST_CASE("adam first step from zero with unit gradient") {
    std::vector<double> p{0.0};
    std::vector<double> g{1.0};
    AdamState s(1, 1e-3);
    adam_step(p, g, s);
    CHECK(p[0] == doctest::Approx(-1e-3).epsilon(1e-7));
    CHECK(s.step_count == 1);
  }

  TEST_CASE("adam with zero gradient leaves parameters and counts the step") {
    std::vector<double> p{0.5, -2.0};
    std::vector<double> g{0.0, 0.0};
    AdamState s(2, 3e-4);
    adam_step(p, g, s);
    CHECK(p == std::vector<double>{0.5, -2.0});
    CHECK(s.step_count == 1);
  }

  TEST_CASE("adam is deterministic and rejects non-finite gradients") {
    std::vector<double> p1{0.1, 0.2}, p2{0.1, 0.2};
    std::vector<double> g{0.3, -0.7};
    AdamState s1(2, 1e-2), s2(2, 1e-2);
    adam_step(p1, g, s1);
    adam_step(p2, g, s2);
    CHECK(p1 == p2);
    std::vector<double> bad{NAN, 1.0};
    CHECK_THROWS_AS(adam_step(p1, bad, s1), NonFiniteError);
    CHECK(p1 == p2);
    CHECK(s1.step_count == 1);
  }

  TEST_CASE("soft update") {
    std::vector<double> t{0.0}, o{1.0};
    soft_update(t, o, 0.005);
    CHECK(t[0] == doctest::Approx(0.005).epsilon(1e-15));
    std::vector<double> same{0.3, -0.2};
    auto copy = same;
    soft_update(same, copy, 0.005);
    CHECK(same == copy);
    CHECK_THROWS(soft_update(t, o, 0.0));
    CHECK_THROWS(soft_update(t, o, 1.0));
  }

  TEST_CASE("soft update contracts geometrically") {
    Rng rng(3);
    std::normal_distribution<double> n;
    std::vector<double> t(50), o(50);
    for (auto& v : t) v = n(rng);
    for (auto& v : o) v = n(rng);
    auto dist = [&] {
      double s = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) s += (t[i] - o[i]) * (t[i] - o[i]);
      return std::sqrt(s);
    };
    const double d0 = dist();
    const double rate = 0.005;
    for (int k = 1; k <= 200; ++k) {
      const double before = dist();
      soft_update(t, o, rate);
      CHECK(std::abs(dist() - (1.0 - rate) * before) <= 1e-12);
      if (k == 200) CHECK(dist() == doctest::Approx(std::pow(1.0 - rate, 200) * d0).epsilon(1e-10));
    }
  }

  TEST_CASE("network and optimizer state round-trip through JSON") {
    Rng rng(4);
    DenseNet net({3, 4, 1}, Activation::tanh, Activation::sigmoid);
    net.init_uniform(rng);
    DenseNet back = net_from_json(to_json(net));
    CHECK(back.same_shape(net));
    CHECK(std::equal(back.params().begin(), back.params().end(), net.params().begin()));
    AdamState s(net.num_params(), 1e-3);
    std::vector<double> g(net.num_params(), 0.1);
    adam_step(net.params(), g, s);
    AdamState sb = adam_from_json(to_json(s));
    CHECK(sb.step_count == s.step_count);
    CHECK(sb.first_moment == s.first_moment);
    CHECK(sb.second_moment == s.second_moment);
  }

  TEST_CASE("finite differences") {
    std::vector<double> x{3.0};
    auto g = finite_diff_grad([&] { return x[0] * x[0]; }, x, 1e-5);
    CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-6));
    CHECK(x[0] == 3.0);
    for (double h : {1e-1, 1e-3, 1.0}) {
      std::vector<double> y{0.5, -1.5};
      auto gl = finite_diff_grad([&] { return 2.0 * y[0] - 4.0 * y[1] + 1.0; }, y, h);
      CHECK(gl[0] == doctest::Approx(2.0).epsilon(1e-12));
      CHECK(gl[1] == doctest::Approx(-4.0).epsilon(1e-12));
    }
    const std::vector<double> a{1e-9, 1.0}, n{-1e-9, 1.0};
    CHECK(max_relative_error(a, n) == 0.0);
  }
}
