#pragma once

// Dense arithmetic kernels used by the network engine and state retrieval.
//
// Every kernel has a scalar reference implementation; an AVX2+FMA variant is
// compiled separately and picked at runtime when the CPU supports it. All
// matrices are row-major and tightly packed.

#include <cstddef>
#include <string_view>

namespace safeqil::kernels {

struct AdamCoeffs {
  double lr;
  double beta1;
  double beta2;
  double epsilon;
  double bias1;  // 1 - beta1^t
  double bias2;  // 1 - beta2^t
};

struct KernelTable {
  const char* name;

  // c[m x n] = a[m x k] * b[n x k]^T (accumulates into c when accumulate is set)
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  // c[m x n] += a[m x k] * b[k x n]
  void (*gemm_nn_acc)(std::size_t m, std::size_t n, std::size_t k,
                      const double* a, const double* b, double* c);
  // c[m x n] += a[k x m]^T * b[k x n]
  void (*gemm_tn_acc)(std::size_t m, std::size_t n, std::size_t k,
                      const double* a, const double* b, double* c);
  double (*dot)(const double* a, const double* b, std::size_t n);
  // target = (1 - rate) * target + rate * online
  void (*blend)(double* target, const double* online, double rate,
                std::size_t n);
  void (*adam)(double* params, const double* grads, double* m, double* v,
               std::size_t n, const AdamCoeffs& coeffs);
};

const KernelTable& scalar_table();

// nullptr when the build has no AVX2 variant or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table();

// Table used by the library. Defaults to the fastest supported variant;
// SAFEQIL_KERNELS=scalar in the environment forces the reference path.
const KernelTable& active();

// Overrides the active table ("scalar" or "avx2"). Returns false when the
// requested variant is unavailable.
bool select(std::string_view name);

}  // namespace safeqil::kernels
