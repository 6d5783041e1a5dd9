#include "safeqil/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

namespace safeqil::kernels {

namespace {

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

void gemm_nn_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* cr = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = a[i * k + p];
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += s * br[j];
    }
  }
}

void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 const double* b, double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ar = a + p * m;
    const double* br = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = ar[i];
      double* cr = c + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += s * br[j];
    }
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void blend(double* target, const double* online, double rate, std::size_t n) {
  const double keep = 1.0 - rate;
  for (std::size_t i = 0; i < n; ++i)
    target[i] = keep * target[i] + rate * online[i];
}

void adam(double* params, const double* grads, double* m, double* v,
          std::size_t n, const AdamCoeffs& c) {
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = m[i] / c.bias1;
    const double vhat = v[i] / c.bias2;
    params[i] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{"scalar", gemm_nt, gemm_nn_acc, gemm_tn_acc,
                                 dot,      blend,   adam};
  return table;
}

namespace {

const KernelTable* initial_table() {
  if (const char* env = std::getenv("SAFEQIL_KERNELS");
      env != nullptr && std::string(env) == "scalar")
    return &scalar_table();
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

const KernelTable*& current() {
  static const KernelTable* table = initial_table();
  return table;
}

}  // namespace

const KernelTable& active() { return *current(); }

bool select(std::string_view name) {
  if (name == "scalar") {
    current() = &scalar_table();
    return true;
  }
  if (name == "avx2") {
    if (const KernelTable* t = avx2_table()) {
      current() = t;
      return true;
    }
  }
  return false;
}

}  // namespace safeqil::kernels
