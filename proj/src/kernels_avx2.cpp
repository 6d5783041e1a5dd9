// AVX2 + FMA variants of the reference kernels. This translation unit is the
// only one built with -mavx2 -mfma; nothing here runs unless avx2_table()
// confirmed CPU support.

#include "safeqil/kernels.hpp"

#include <cmath>

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define SAFEQIL_HAVE_AVX2 1
#endif

namespace safeqil::kernels {

#ifdef SAFEQIL_HAVE_AVX2

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s0 = _mm256_setzero_pd();
      __m256d s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd();
      __m256d s3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d va = _mm256_loadu_pd(ar + p);
        s0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b3 + p), s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (; p < k; ++p) {
        r0 += ar[p] * b0[p];
        r1 += ar[p] * b1[p];
        r2 += ar[p] * b2[p];
        r3 += ar[p] * b3[p];
      }
      if (accumulate) {
        cr[j] += r0;
        cr[j + 1] += r1;
        cr[j + 2] += r2;
        cr[j + 3] += r3;
      } else {
        cr[j] = r0;
        cr[j + 1] = r1;
        cr[j + 2] = r2;
        cr[j + 3] = r3;
      }
    }
    for (; j < n; ++j) {
      const double r = dot(ar, b + j * k, k);
      cr[j] = accumulate ? cr[j] + r : r;
    }
  }
}

void gemm_nn_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* cr = c + i * n;
    const double* ar = a + i * k;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256d c0 = _mm256_loadu_pd(cr + j);
      __m256d c1 = _mm256_loadu_pd(cr + j + 4);
      __m256d c2 = _mm256_loadu_pd(cr + j + 8);
      __m256d c3 = _mm256_loadu_pd(cr + j + 12);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d s = _mm256_broadcast_sd(ar + p);
        const double* br = b + p * n + j;
        c0 = _mm256_fmadd_pd(s, _mm256_loadu_pd(br), c0);
        c1 = _mm256_fmadd_pd(s, _mm256_loadu_pd(br + 4), c1);
        c2 = _mm256_fmadd_pd(s, _mm256_loadu_pd(br + 8), c2);
        c3 = _mm256_fmadd_pd(s, _mm256_loadu_pd(br + 12), c3);
      }
      _mm256_storeu_pd(cr + j, c0);
      _mm256_storeu_pd(cr + j + 4, c1);
      _mm256_storeu_pd(cr + j + 8, c2);
      _mm256_storeu_pd(cr + j + 12, c3);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_loadu_pd(cr + j);
      for (std::size_t p = 0; p < k; ++p)
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(ar + p),
                             _mm256_loadu_pd(b + p * n + j), c0);
      _mm256_storeu_pd(cr + j, c0);
    }
    for (; j < n; ++j) {
      double acc = cr[j];
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * b[p * n + j];
      cr[j] = acc;
    }
  }
}

void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* cr = c + i * n;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256d c0 = _mm256_loadu_pd(cr + j);
      __m256d c1 = _mm256_loadu_pd(cr + j + 4);
      __m256d c2 = _mm256_loadu_pd(cr + j + 8);
      __m256d c3 = _mm256_loadu_pd(cr + j + 12);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d s = _mm256_broadcast_sd(a + p * m + i);
        const double* br = b + p * n + j;
        c0 = _mm256_fmadd_pd(s, _mm256_loadu_pd(br), c0);
        c1 = _mm256_fmadd_pd(s, _mm256_loadu_pd(br + 4), c1);
        c2 = _mm256_fmadd_pd(s, _mm256_loadu_pd(br + 8), c2);
        c3 = _mm256_fmadd_pd(s, _mm256_loadu_pd(br + 12), c3);
      }
      _mm256_storeu_pd(cr + j, c0);
      _mm256_storeu_pd(cr + j + 4, c1);
      _mm256_storeu_pd(cr + j + 8, c2);
      _mm256_storeu_pd(cr + j + 12, c3);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_loadu_pd(cr + j);
      for (std::size_t p = 0; p < k; ++p)
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p * m + i),
                             _mm256_loadu_pd(b + p * n + j), c0);
      _mm256_storeu_pd(cr + j, c0);
    }
    for (; j < n; ++j) {
      double acc = cr[j];
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      cr[j] = acc;
    }
  }
}

void blend(double* target, const double* online, double rate, std::size_t n) {
  const __m256d keep = _mm256_set1_pd(1.0 - rate);
  const __m256d r = _mm256_set1_pd(rate);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_mul_pd(keep, _mm256_loadu_pd(target + i));
    _mm256_storeu_pd(target + i,
                     _mm256_fmadd_pd(r, _mm256_loadu_pd(online + i), t));
  }
  for (; i < n; ++i) target[i] = (1.0 - rate) * target[i] + rate * online[i];
}

void adam(double* params, const double* grads, double* m, double* v,
          std::size_t n, const AdamCoeffs& c) {
  const __m256d b1 = _mm256_set1_pd(c.beta1);
  const __m256d b2 = _mm256_set1_pd(c.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - c.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - c.beta2);
  const __m256d inv_bias1 = _mm256_set1_pd(1.0 / c.bias1);
  const __m256d inv_bias2 = _mm256_set1_pd(1.0 / c.bias2);
  const __m256d lr = _mm256_set1_pd(c.lr);
  const __m256d eps = _mm256_set1_pd(c.epsilon);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grads + i);
    const __m256d mi =
        _mm256_fmadd_pd(b1, _mm256_loadu_pd(m + i), _mm256_mul_pd(omb1, g));
    const __m256d vi = _mm256_fmadd_pd(b2, _mm256_loadu_pd(v + i),
                                       _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mhat = _mm256_mul_pd(mi, inv_bias1);
    const __m256d denom =
        _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vi, inv_bias2)), eps);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lr, mhat), denom);
    _mm256_storeu_pd(params + i, _mm256_sub_pd(_mm256_loadu_pd(params + i), step));
  }
  for (; i < n; ++i) {
    const double g = grads[i];
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    params[i] -= c.lr * (m[i] / c.bias1) / (std::sqrt(v[i] / c.bias2) + c.epsilon);
  }
}

bool cpu_supported() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{"avx2", gemm_nt, gemm_nn_acc, gemm_tn_acc,
                                 dot,    blend,   adam};
  static const bool supported = cpu_supported();
  return supported ? &table : nullptr;
}

#else

const KernelTable* avx2_table() { return nullptr; }

#endif

}  // namespace safeqil::kernels
