#pragma once

// Vector-width-generic lane-group kernel. Included by one translation unit per
// ISA, each compiled with its own target flags and supplying a traits type V:
//   V::kWidth, V::reg, zero(), set1(), load(), store(), add(), sub(), mul(),
//   fmadd(a,b,c) = a*b+c, fnmadd(a,b,c) = c-a*b.
// Everything sits in an anonymous namespace so the per-ISA copies never merge
// at link time.

#include <algorithm>
#include <array>
#include <type_traits>
#include <vector>

#include "qpr/kernels/batch_propagate.hpp"

namespace qpr::kernels::detail {
namespace {

template <int kCount, typename T>
using Buffer = std::conditional_t<(kCount > 0), std::array<T, static_cast<std::size_t>(kCount > 0 ? kCount : 1)>,
                                  std::vector<T>>;

template <int kCount, typename T>
Buffer<kCount, T> make_buffer(int n) {
  if constexpr (kCount > 0) {
    (void)n;
    return {};
  } else {
    return std::vector<T>(static_cast<std::size_t>(n));
  }
}

// V::kWidth lanes in structure-of-arrays form. kDim > 0 fixes the dimension at
// compile time so the state lives in registers; kDim == 0 handles any size.
// kReal skips every imaginary product of coupling and field, which is exact
// when both are real.
template <class V, bool kReal, int kDim>
void run_group(const BatchProblem& p, const StepPlan& plan, std::span<const double> shifted,
               const Lane* const* lanes, std::span<cplx> out, const int* out_index) {
  using reg = typename V::reg;
  constexpr int W = V::kWidth;
  struct alignas(64) Pack {
    double v[W];
  };
  const int n = kDim > 0 ? kDim : p.dim;
  const auto nn = static_cast<std::size_t>(n) * n;
  auto c_re = make_buffer<kDim * kDim, Pack>(static_cast<int>(nn));
  auto c_im = make_buffer<kDim * kDim, Pack>(static_cast<int>(nn));
  for (std::size_t e = 0; e < nn; ++e) {
    for (int l = 0; l < W; ++l) {
      c_re[e].v[l] = lanes[l]->coupling[e].real();
      c_im[e].v[l] = lanes[l]->coupling[e].imag();
    }
  }
  auto e_diag = make_buffer<kDim, reg>(n);
  for (int a = 0; a < n; ++a) e_diag[a] = V::set1(shifted[a]);

  auto v_re = make_buffer<kDim, reg>(n);
  auto v_im = make_buffer<kDim, reg>(n);
  auto t_re = make_buffer<kDim, reg>(n);
  auto t_im = make_buffer<kDim, reg>(n);
  auto n_re = make_buffer<kDim, reg>(n);
  auto n_im = make_buffer<kDim, reg>(n);
  for (int a = 0; a < n; ++a) {
    Pack init;
    for (int l = 0; l < W; ++l) init.v[l] = lanes[l]->initial_state == a ? 1.0 : 0.0;
    v_re[a] = V::load(init.v);
    v_im[a] = V::zero();
  }

  const double h = p.dt / plan.substeps;
  std::vector<reg> coef(static_cast<std::size_t>(plan.taylor_order) + 1);
  for (int k = 1; k <= plan.taylor_order; ++k) coef[k] = V::set1(h / k);
  const reg zero = V::zero();

  Pack fr, fi;
  for (int q = 0; q < p.n_steps; ++q) {
    for (int l = 0; l < W; ++l) {
      fr.v[l] = lanes[l]->field[q].real();
      if constexpr (!kReal) fi.v[l] = lanes[l]->field[q].imag();
    }
    const reg f_re = V::load(fr.v);
    const reg f_im = kReal ? zero : V::load(fi.v);
    for (int r = 0; r < plan.substeps; ++r) {
      for (int a = 0; a < n; ++a) {
        t_re[a] = v_re[a];
        t_im[a] = v_im[a];
      }
      for (int k = 1; k <= plan.taylor_order; ++k) {
        for (int a = 0; a < n; ++a) {
          reg w_re = zero;
          reg w_im = zero;
          const auto* cr = c_re.data() + static_cast<std::size_t>(a) * n;
          const auto* ci = c_im.data() + static_cast<std::size_t>(a) * n;
          for (int b = 0; b < n; ++b) {
            const reg mr = V::load(cr[b].v);
            w_re = V::fmadd(mr, t_re[b], w_re);
            w_im = V::fmadd(mr, t_im[b], w_im);
            if constexpr (!kReal) {
              const reg mi = V::load(ci[b].v);
              w_re = V::fnmadd(mi, t_im[b], w_re);
              w_im = V::fmadd(mi, t_re[b], w_im);
            }
          }
          // hv = E_a t_a - eps * w
          reg hv_re = V::mul(e_diag[a], t_re[a]);
          reg hv_im = V::mul(e_diag[a], t_im[a]);
          hv_re = V::fnmadd(f_re, w_re, hv_re);
          hv_im = V::fnmadd(f_re, w_im, hv_im);
          if constexpr (!kReal) {
            hv_re = V::fmadd(f_im, w_im, hv_re);
            hv_im = V::fnmadd(f_im, w_re, hv_im);
          }
          // (-i c) * hv = (c * hv_im, -c * hv_re)
          n_re[a] = V::mul(coef[k], hv_im);
          n_im[a] = V::sub(zero, V::mul(coef[k], hv_re));
        }
        for (int a = 0; a < n; ++a) {
          t_re[a] = n_re[a];
          t_im[a] = n_im[a];
          v_re[a] = V::add(v_re[a], t_re[a]);
          v_im[a] = V::add(v_im[a], t_im[a]);
        }
      }
    }
  }

  for (int a = 0; a < n; ++a) {
    Pack re, im;
    V::store(re.v, v_re[a]);
    V::store(im.v, v_im[a]);
    for (int l = 0; l < W; ++l) {
      if (out_index[l] >= 0) out[static_cast<std::size_t>(out_index[l]) * n + a] = cplx(re.v[l], im.v[l]);
    }
  }
}

template <class V, bool kReal>
void dispatch_dim(const BatchProblem& p, const StepPlan& plan, std::span<const double> shifted,
                  const Lane* const* lanes, std::span<cplx> out, const int* out_index) {
  switch (p.dim) {
    case 2: return run_group<V, kReal, 2>(p, plan, shifted, lanes, out, out_index);
    case 3: return run_group<V, kReal, 3>(p, plan, shifted, lanes, out, out_index);
    case 4: return run_group<V, kReal, 4>(p, plan, shifted, lanes, out, out_index);
    case 5: return run_group<V, kReal, 5>(p, plan, shifted, lanes, out, out_index);
    case 6: return run_group<V, kReal, 6>(p, plan, shifted, lanes, out, out_index);
    default: return run_group<V, kReal, 0>(p, plan, shifted, lanes, out, out_index);
  }
}

bool lane_is_real(const Lane& lane, int dim, int n_steps) {
  const auto nn = static_cast<std::size_t>(dim) * dim;
  for (std::size_t e = 0; e < nn; ++e) {
    if (lane.coupling[e].imag() != 0.0) return false;
  }
  for (int q = 0; q < n_steps; ++q) {
    if (lane.field[q].imag() != 0.0) return false;
  }
  return true;
}

// Splits the batch into groups of V::kWidth lanes; a short final group is
// padded with copies of the last lane whose results are discarded.
template <class V>
void propagate_groups(const BatchProblem& p, const StepPlan& plan, std::span<const double> shifted,
                      std::span<cplx> out) {
  constexpr int W = V::kWidth;
  const auto count = p.lanes.size();
  for (std::size_t base = 0; base < count; base += W) {
    const Lane* group[W];
    int index[W];
    bool real = true;
    for (int l = 0; l < W; ++l) {
      const std::size_t src = std::min(base + l, count - 1);
      group[l] = &p.lanes[src];
      index[l] = base + l < count ? static_cast<int>(base + l) : -1;
      if (index[l] >= 0) real = real && lane_is_real(*group[l], p.dim, p.n_steps);
    }
    if (real) {
      dispatch_dim<V, true>(p, plan, shifted, group, out, index);
    } else {
      dispatch_dim<V, false>(p, plan, shifted, group, out, index);
    }
  }
}

}  // namespace
}  // namespace qpr::kernels::detail
