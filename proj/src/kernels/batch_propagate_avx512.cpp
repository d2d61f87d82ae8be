// Compiled with -mavx512f; only entered after a runtime CPU check.

#include "qpr/kernels/batch_propagate.hpp"

#if defined(__AVX512F__)
#include <immintrin.h>

#include "lane_group.hpp"

namespace qpr::kernels::detail {

namespace {

struct Avx512 {
  static constexpr int kWidth = 8;
  using reg = __m512d;
  static reg zero() { return _mm512_setzero_pd(); }
  static reg set1(double x) { return _mm512_set1_pd(x); }
  static reg load(const double* p) { return _mm512_load_pd(p); }
  static void store(double* p, reg v) { _mm512_store_pd(p, v); }
  static reg add(reg a, reg b) { return _mm512_add_pd(a, b); }
  static reg sub(reg a, reg b) { return _mm512_sub_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm512_mul_pd(a, b); }
  static reg fmadd(reg a, reg b, reg c) { return _mm512_fmadd_pd(a, b, c); }
  static reg fnmadd(reg a, reg b, reg c) { return _mm512_fnmadd_pd(a, b, c); }
};

}  // namespace

bool avx512_compiled() { return true; }

void propagate_avx512(const BatchProblem& p, const StepPlan& plan, std::span<const double> shifted,
                    std::span<cplx> out) {
  propagate_groups<Avx512>(p, plan, shifted, out);
}

}  // namespace qpr::kernels::detail

#else

namespace qpr::kernels::detail {

bool avx512_compiled() { return false; }

void propagate_avx512(const BatchProblem& p, const StepPlan& plan, std::span<const double> shifted,
                    std::span<cplx> out) {
  propagate_scalar(p, plan, shifted, out);
}

}  // namespace qpr::kernels::detail

#endif
