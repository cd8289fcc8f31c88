#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sbm/common.hpp"
#include "sbm/tensor.hpp"

namespace sbm {

// Selective SSM parameters for one scan call.
//   a:      [d_state]           diagonal continuous-time state matrix, a < 0
//   delta:  [lanes, L, d_inner] input-dependent step size, delta > 0
//   b:      [lanes, L, d_state] input map
//   c_out:  [lanes, L, d_state] output map
//   d_skip: [d_inner]           direct feedthrough
template <class T>
struct SSMParams {
  TensorT<T> a;
  TensorT<T> delta;
  TensorT<T> b;
  TensorT<T> c_out;
  TensorT<T> d_skip;
};

enum class ScanImpl { sequential, parallel };

// Monoid element of the scan recurrence h' = gain * h + offset.
// Composition applies e1 first, then e2.
template <class T>
struct ScanElement {
  T gain;
  T offset;
  static ScanElement identity() { return {T(1), T(0)}; }
  friend ScanElement compose(const ScanElement& e2, const ScanElement& e1) {
    return {e2.gain * e1.gain, e2.gain * e1.offset + e2.offset};
  }
};

// Negativity / positivity constraints used by callers that learn raw params.
template <class T>
TensorT<T> constrain_state_matrix(const TensorT<T>& a_raw) {
  return neg(softplus(a_raw));
}
template <class T>
TensorT<T> constrain_step_size(const TensorT<T>& delta_raw) {
  return softplus(delta_raw);
}

// Zero-order-hold discretization of the diagonal system:
//   a_bar = exp(delta a),  b_bar = phi1(delta a) * delta * b,
// with phi1(x) = (e^x - 1)/x, so b_bar -> delta b as delta a -> 0.
// Shapes: a_bar, b_bar are [lanes, L, d_inner, d_state].
template <class T>
std::pair<TensorT<T>, TensorT<T>> discretize(const TensorT<T>& a, const TensorT<T>& delta,
                                             const TensorT<T>& b) {
  if (a.rank() != 1 || delta.rank() != 3 || b.rank() != 3)
    throw DimensionError("discretize: expected a[N], delta[lanes,L,D], b[lanes,L,N]");
  const std::size_t lanes = delta.dim(0), L = delta.dim(1), D = delta.dim(2), N = a.dim(0);
  auto d4 = reshape(delta, {lanes, L, D, 1});
  auto e = d4 * reshape(a, {1, 1, 1, N});
  auto a_bar = exp(e);
  auto b_bar = expm1_over_x(e) * d4 * reshape(b, {lanes, L, 1, N});
  return {a_bar, b_bar};
}

namespace detail {

template <class T>
inline void zoh_row(const T* a, std::size_t N, T dlt, T* abar, T* phi) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  Eigen::Map<const Arr> am(a, N);
  Eigen::Map<Arr> ab(abar, N);
  ab = (am * dlt).exp();
  for (std::size_t n = 0; n < N; ++n) {
    const T e = a[n] * dlt;
    phi[n] = std::abs(e) < T(1e-5) ? T(1) + e / T(2) + e * e / T(6) : (abar[n] - T(1)) / e;
  }
}

template <class T>
inline T phi1_grad_from(T e, T abar) {
  if (std::abs(e) < T(1e-4)) return T(0.5) + e / T(3) + e * e / T(8);
  return (abar * (e - T(1)) + T(1)) / (e * e);
}

// Forward recurrence for one lane; optionally records the hidden-state history
// (layout hist[(t*D + d)*N + n]).
template <class T>
void scan_lane_forward(const T* u, const T* delta, const T* b, const T* c, const T* a,
                       const T* d_skip, std::size_t L, std::size_t D, std::size_t N, T* y,
                       T* hist /* nullable */, std::vector<T>& h, std::vector<T>& abar,
                       std::vector<T>& phi) {
  std::fill(h.begin(), h.end(), T(0));
  for (std::size_t t = 0; t < L; ++t) {
    const T* bt = b + t * N;
    const T* ct = c + t * N;
    for (std::size_t d = 0; d < D; ++d) {
      const T dlt = delta[t * D + d];
      const T ut = u[t * D + d];
      zoh_row(a, N, dlt, abar.data(), phi.data());
      T* hd = h.data() + d * N;
      T acc = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        const T bbar = phi[n] * dlt * bt[n];
        hd[n] = abar[n] * hd[n] + bbar * ut;
        acc += ct[n] * hd[n];
      }
      y[t * D + d] = acc + d_skip[d] * ut;
      if (hist) std::copy(hd, hd + N, hist + (t * D + d) * N);
    }
  }
}

// Blelloch-style work-efficient scan over ScanElement, one lane. Produces the
// same y as the sequential path; N state channels are swept together.
template <class T>
void scan_lane_parallel(const T* u, const T* delta, const T* b, const T* c, const T* a,
                        const T* d_skip, std::size_t L, std::size_t D, std::size_t N, T* y,
                        std::vector<T>& abar, std::vector<T>& phi) {
  std::size_t Lp = 1;
  while (Lp < L) Lp <<= 1;
  std::vector<T> gain(Lp * N), off(Lp * N);
  for (std::size_t d = 0; d < D; ++d) {
    // Element construction per timestep.
    for (std::size_t t = 0; t < L; ++t) {
      const T dlt = delta[t * D + d];
      const T ut = u[t * D + d];
      zoh_row(a, N, dlt, abar.data(), phi.data());
      for (std::size_t n = 0; n < N; ++n) {
        gain[t * N + n] = abar[n];
        off[t * N + n] = phi[n] * dlt * b[t * N + n] * ut;
      }
    }
    for (std::size_t t = L; t < Lp; ++t)
      for (std::size_t n = 0; n < N; ++n) {
        gain[t * N + n] = T(1);
        off[t * N + n] = T(0);
      }
    // Up-sweep.
    for (std::size_t stride = 1; stride < Lp; stride <<= 1)
      for (std::size_t i = 2 * stride - 1; i < Lp; i += 2 * stride)
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t lo = (i - stride) * N + n, hi = i * N + n;
          // right element composed after left: (g_hi, o_hi) ∘ (g_lo, o_lo)
          off[hi] = gain[hi] * off[lo] + off[hi];
          gain[hi] = gain[hi] * gain[lo];
        }
    // Down-sweep to an exclusive scan, then shift to inclusive on the fly.
    std::vector<T> total(N);
    for (std::size_t n = 0; n < N; ++n) {
      total[n] = off[(Lp - 1) * N + n];
      gain[(Lp - 1) * N + n] = T(1);
      off[(Lp - 1) * N + n] = T(0);
    }
    for (std::size_t stride = Lp >> 1; stride >= 1; stride >>= 1) {
      for (std::size_t i = 2 * stride - 1; i < Lp; i += 2 * stride)
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t lo = (i - stride) * N + n, hi = i * N + n;
          const T g = gain[lo], o = off[lo];
          // parent's prefix goes left; right child's prefix applies the parent
          // prefix first, then the left aggregate
          gain[lo] = gain[hi];
          off[lo] = off[hi];
          off[hi] = g * off[lo] + o;
          gain[hi] = g * gain[lo];
        }
      if (stride == 1) break;
    }
    // off now holds the exclusive prefix offset (h_{t-1} with h_{-1} = 0);
    // the inclusive value is element_t applied to it.
    for (std::size_t t = 0; t < L; ++t) {
      const T dlt = delta[t * D + d];
      const T ut = u[t * D + d];
      zoh_row(a, N, dlt, abar.data(), phi.data());
      T acc = T(0);
      for (std::size_t n = 0; n < N; ++n) {
        const T bbar = phi[n] * dlt * b[t * N + n];
        const T h = abar[n] * off[t * N + n] + bbar * ut;
        acc += c[t * N + n] * h;
      }
      y[t * D + d] = acc + d_skip[d] * ut;
    }
    (void)total;
  }
}

}  // namespace detail

// Selective scan: y_t = <c_t, h_t> + d_skip * u_t with
// h_t = a_bar_t ⊙ h_{t-1} + b_bar_t u_t, h_0 = 0, strict left-to-right order.
// The backward pass always runs through the sequential formulation.
template <class T>
TensorT<T> selective_scan(const TensorT<T>& u, const SSMParams<T>& p,
                          ScanImpl impl = ScanImpl::sequential) {
  if (u.rank() != 3) throw DimensionError("selective_scan: u must be [lanes, L, d_inner]");
  const std::size_t lanes = u.dim(0), L = u.dim(1), D = u.dim(2);
  const std::size_t N = p.a.dim(0);
  if (p.delta.shape() != Shape{lanes, L, D})
    throw DimensionError("selective_scan: delta shape mismatch");
  if (p.b.shape() != Shape{lanes, L, N} || p.c_out.shape() != Shape{lanes, L, N})
    throw DimensionError("selective_scan: b/c shape mismatch");
  if (p.d_skip.shape() != Shape{D}) throw DimensionError("selective_scan: d_skip shape mismatch");

  std::vector<T> y(u.size());
  const auto& uv = u.value();
  const auto& dv = p.delta.value();
  const auto& bv = p.b.value();
  const auto& cv = p.c_out.value();
  const auto& av = p.a.value();
  const auto& skv = p.d_skip.value();
  {
    std::vector<T> h(D * N), abar(N), phi(N);
    for (std::size_t l = 0; l < lanes; ++l) {
      const std::size_t ou = l * L * D, obc = l * L * N;
      if (impl == ScanImpl::sequential) {
        detail::scan_lane_forward(uv.data() + ou, dv.data() + ou, bv.data() + obc,
                                  cv.data() + obc, av.data(), skv.data(), L, D, N,
                                  y.data() + ou, static_cast<T*>(nullptr), h, abar, phi);
      } else {
        detail::scan_lane_parallel(uv.data() + ou, dv.data() + ou, bv.data() + obc,
                                   cv.data() + obc, av.data(), skv.data(), L, D, N,
                                   y.data() + ou, abar, phi);
      }
    }
  }

  auto un = u.node();
  auto dn = p.delta.node();
  auto bn = p.b.node();
  auto cn = p.c_out.node();
  auto an = p.a.node();
  auto skn = p.d_skip.node();
  return TensorT<T>::make(
      u.shape(), std::move(y), {u, p.delta, p.b, p.c_out, p.a, p.d_skip},
      [un, dn, bn, cn, an, skn, lanes, L, D, N](TensorNode<T>& self) {
        const auto& uv = un->value;
        const auto& dv = dn->value;
        const auto& bv = bn->value;
        const auto& cv = cn->value;
        const auto& av = an->value;
        const auto& skv = skn->value;
        const auto& go = self.grad;
        for (auto* node : {un.get(), dn.get(), bn.get(), cn.get(), an.get(), skn.get()})
          if (node->requires_grad) node->ensure_grad();

        std::vector<T> hist(L * D * N), h(D * N), abar(N), phi(N), gh(N);
        std::vector<T> ytmp(L * D);
        for (std::size_t l = 0; l < lanes; ++l) {
          const std::size_t ou = l * L * D, obc = l * L * N;
          const T* ul = uv.data() + ou;
          const T* dl = dv.data() + ou;
          const T* bl = bv.data() + obc;
          const T* cl = cv.data() + obc;
          const T* gl = go.data() + ou;
          // Recompute hidden states for this lane (checkpointed backward).
          detail::scan_lane_forward(ul, dl, bl, cl, av.data(), skv.data(), L, D, N, ytmp.data(),
                                    hist.data(), h, abar, phi);
          for (std::size_t d = 0; d < D; ++d) {
            std::fill(gh.begin(), gh.end(), T(0));
            for (std::size_t t = L; t-- > 0;) {
              const T dlt = dl[t * D + d];
              const T ut = ul[t * D + d];
              const T gy = gl[t * D + d];
              const T* bt = bl + t * N;
              const T* ct = cl + t * N;
              const T* ht = hist.data() + (t * D + d) * N;
              const T* htm1 = t > 0 ? hist.data() + ((t - 1) * D + d) * N : nullptr;
              detail::zoh_row(av.data(), N, dlt, abar.data(), phi.data());
              if (skn->requires_grad) skn->grad[d] += gy * ut;
              T gu = skv[d] * gy;
              T gdlt = T(0);
              for (std::size_t n = 0; n < N; ++n) {
                T ghn = gh[n] + gy * ct[n];
                if (cn->requires_grad) cn->grad[obc + t * N + n] += gy * ht[n];
                const T hprev = htm1 ? htm1[n] : T(0);
                const T bbar = phi[n] * dlt * bt[n];
                const T gabar = ghn * hprev;
                const T gbbar = ghn * ut;
                gu += ghn * bbar;
                const T e = av[n] * dlt;
                T ge = gabar * abar[n];
                ge += gbbar * dlt * bt[n] * detail::phi1_grad_from(e, abar[n]);
                if (bn->requires_grad) bn->grad[obc + t * N + n] += gbbar * phi[n] * dlt;
                gdlt += gbbar * phi[n] * bt[n] + ge * av[n];
                if (an->requires_grad) an->grad[n] += ge * dlt;
                gh[n] = ghn * abar[n];
              }
              if (un->requires_grad) un->grad[ou + t * D + d] += gu;
              if (dn->requires_grad) dn->grad[ou + t * D + d] += gdlt;
            }
          }
        }
      });
}

template <class T>
TensorT<T> scan_sequential(const TensorT<T>& u, const SSMParams<T>& p) {
  return selective_scan(u, p, ScanImpl::sequential);
}
template <class T>
TensorT<T> scan_parallel(const TensorT<T>& u, const SSMParams<T>& p) {
  return selective_scan(u, p, ScanImpl::parallel);
}

// Time-invariant convolutional kernel K[j] = <c, a_bar^j ⊙ b_bar>.
template <class T>
std::vector<T> ssm_kernel(const std::vector<T>& a_bar, const std::vector<T>& b_bar,
                          const std::vector<T>& c_out, std::size_t L) {
  const std::size_t N = a_bar.size();
  if (b_bar.size() != N || c_out.size() != N) throw DimensionError("ssm_kernel: size mismatch");
  std::vector<T> k(L, T(0));
  std::vector<T> pw(N, T(1));
  for (std::size_t j = 0; j < L; ++j) {
    T acc = T(0);
    for (std::size_t n = 0; n < N; ++n) acc += c_out[n] * pw[n] * b_bar[n];
    k[j] = acc;
    for (std::size_t n = 0; n < N; ++n) pw[n] *= a_bar[n];
  }
  return k;
}

// Kernel from scan params; rejects time-varying parameters.
template <class T>
std::vector<T> ssm_kernel_from_params(const SSMParams<T>& p, std::size_t lane, std::size_t channel,
                                      std::size_t L) {
  const std::size_t Lp = p.delta.dim(1), D = p.delta.dim(2), N = p.a.dim(0);
  const auto& dv = p.delta.value();
  const auto& bv = p.b.value();
  const auto& cv = p.c_out.value();
  const std::size_t ou = lane * Lp * D, obc = lane * Lp * N;
  for (std::size_t t = 1; t < Lp; ++t) {
    if (dv[ou + t * D + channel] != dv[ou + channel])
      throw ContractError("ssm_kernel: time-varying delta");
    for (std::size_t n = 0; n < N; ++n)
      if (bv[obc + t * N + n] != bv[obc + n] || cv[obc + t * N + n] != cv[obc + n])
        throw ContractError("ssm_kernel: time-varying b/c");
  }
  const T dlt = dv[ou + channel];
  const auto& av = p.a.value();
  std::vector<T> abar(N), phi(N), bbar(N), c0(N);
  detail::zoh_row(av.data(), N, dlt, abar.data(), phi.data());
  for (std::size_t n = 0; n < N; ++n) {
    bbar[n] = phi[n] * dlt * bv[obc + n];
    c0[n] = cv[obc + n];
  }
  return ssm_kernel(abar, bbar, c0, L);
}

// Causal convolution y_t = sum_j K[j] u_{t-j}; oracle-side helper for the
// kernel form of a time-invariant SSM.
template <class T>
std::vector<T> conv_causal(const std::vector<T>& u, const std::vector<T>& k) {
  std::vector<T> y(u.size(), T(0));
  for (std::size_t t = 0; t < u.size(); ++t) {
    const std::size_t jmax = std::min(t + 1, k.size());
    T acc = T(0);
    for (std::size_t j = 0; j < jmax; ++j) acc += k[j] * u[t - j];
    y[t] = acc;
  }
  return y;
}

}  // namespace sbm
