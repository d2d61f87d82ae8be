// Compiled with -mavx2 -mfma; only entered after a runtime CPU check.

#include "qpr/kernels/batch_propagate.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

#include "lane_group.hpp"

namespace qpr::kernels::detail {

namespace {

struct Avx2 {
  static constexpr int kWidth = 4;
  using reg = __m256d;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg set1(double x) { return _mm256_set1_pd(x); }
  static reg load(const double* p) { return _mm256_load_pd(p); }
  static void store(double* p, reg v) { _mm256_store_pd(p, v); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg fnmadd(reg a, reg b, reg c) { return _mm256_fnmadd_pd(a, b, c); }
};

}  // namespace

bool avx2_compiled() { return true; }

void propagate_avx2(const BatchProblem& p, const StepPlan& plan, std::span<const double> shifted,
                    std::span<cplx> out) {
  propagate_groups<Avx2>(p, plan, shifted, out);
}

}  // namespace qpr::kernels::detail

#else

namespace qpr::kernels::detail {

bool avx2_compiled() { return false; }

void propagate_avx2(const BatchProblem& p, const StepPlan& plan, std::span<const double> shifted,
                    std::span<cplx> out) {
  propagate_scalar(p, plan, shifted, out);
}

}  // namespace qpr::kernels::detail

#endif
