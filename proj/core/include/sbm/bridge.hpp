#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>

#include "sbm/common.hpp"
#include "sbm/random.hpp"
#include "sbm/tensor.hpp"

namespace sbm {

enum class SampleMode { sde, ode };

// Complex Gaussian convention for spectral noise: `split` draws each of the
// real/imag planes with variance sigma^2/2 (circularly symmetric N_C),
// `full` uses sigma^2 per plane.
enum class ComplexConvention { split, full };

inline double complex_noise_scale(ComplexConvention c) {
  return c == ComplexConvention::split ? 0.70710678118654752440 : 1.0;
}

// Variance-exploding bridge schedule:
//   g^2(t) = c * k^(2t),  f == 0,  sigma^2(t) = c * (k^(2t) - 1) / (2 ln k).
struct BridgeSchedule {
  std::string kind = "ve";
  double c = 0.3;
  double k = 2.6;
  double T = 1.0;
  double t_eps = 1e-2;

  void validate() const {
    if (kind != "ve") throw ConfigError("schedule kind must be 've', got '" + kind + "'");
    if (c <= 0) throw ConfigError("schedule c must be positive");
    if (k <= 1) throw ConfigError("schedule k must be > 1");
    if (T <= 0) throw ConfigError("schedule T must be positive");
    if (t_eps <= 0 || t_eps >= T) throw ConfigError("schedule t_eps must lie in (0, T)");
  }
};

struct MarginalCoeffs {
  double w_x = 0;
  double w_y = 0;
  double sigma_x = 0;
  double t = 0;
};

inline double ve_g2(const BridgeSchedule& s, double t) { return s.c * std::pow(s.k, 2.0 * t); }

inline double ve_sigma2(const BridgeSchedule& s, double t) {
  if (t < 0.0 || t > s.T) throw DomainError("ve_sigma2: t outside [0, T]");
  return s.c * std::expm1(2.0 * t * std::log(s.k)) / (2.0 * std::log(s.k));
}

inline MarginalCoeffs marginal_coeffs(const BridgeSchedule& s, double t) {
  const double s2T = ve_sigma2(s, s.T);
  if (s2T <= 0.0) throw ConfigError("degenerate schedule: sigma^2(T) == 0");
  const double s2t = ve_sigma2(s, t);
  MarginalCoeffs m;
  m.t = t;
  m.w_x = (s2T - s2t) / s2T;
  m.w_y = s2t / s2T;
  m.sigma_x = std::sqrt(std::max(0.0, s2t * (s2T - s2t) / s2T));
  return m;
}

// x_t = w_x x + w_y y + sigma_x z, with z standard normal per plane.
template <class T>
TensorT<T> sample_state(const TensorT<T>& x, const TensorT<T>& y, double t, const TensorT<T>& z,
                        const BridgeSchedule& sched,
                        ComplexConvention conv = ComplexConvention::split) {
  if (x.shape() != y.shape() || x.shape() != z.shape())
    throw DimensionError("sample_state: x, y, z shapes must match");
  const MarginalCoeffs m = marginal_coeffs(sched, t);
  if (t == 0.0) return x * 1.0;  // boundary exactness, bit-identical to x
  if (t == sched.T) return y * 1.0;
  const double ns = m.sigma_x * complex_noise_scale(conv);
  return x * m.w_x + y * m.w_y + z * ns;
}

// One reverse step t -> s given the model's clean prediction x_hat.
// Mean relaxes exponentially toward x_hat: r x_t + (1 - r) x_hat with
// r = sigma^2(s)/sigma^2(t); sde mode injects the g^2-integral noise
// sigma^2(t) - sigma^2(s). At s == 0 both modes return x_hat exactly.
template <class T>
TensorT<T> posterior_step(const TensorT<T>& x_t, const TensorT<T>& x_hat, double t, double s,
                          const TensorT<T>& z, const BridgeSchedule& sched, SampleMode mode,
                          ComplexConvention conv = ComplexConvention::split) {
  if (s >= t) throw ContractError("posterior_step requires s < t");
  if (s < 0.0 || t > sched.T) throw DomainError("posterior_step: times outside [0, T]");
  if (s == 0.0) return x_hat * 1.0;
  const double s2t = ve_sigma2(sched, t);
  const double s2s = ve_sigma2(sched, s);
  const double r = s2s / s2t;
  auto next = x_t * r + x_hat * (1.0 - r);
  if (mode == SampleMode::sde) {
    const double std_dev = std::sqrt(std::max(0.0, s2t - s2s)) * complex_noise_scale(conv);
    next = next + z * std_dev;
  }
  return next;
}

template <class T>
using BridgeModel = std::function<TensorT<T>(const TensorT<T>& state, double t)>;

template <class T>
struct SampleResult {
  TensorT<T> output;
  std::size_t nfe = 0;
};

// Reverse-time sampling from x_T = y over a uniform grid T = t_0 > ... > t_n = 0,
// one model evaluation per step.
template <class T>
SampleResult<T> iterative_sample(const TensorT<T>& y, const BridgeModel<T>& model,
                                 std::size_t n_steps, const BridgeSchedule& sched, SampleMode mode,
                                 RandomStream& rng,
                                 ComplexConvention conv = ComplexConvention::split) {
  if (n_steps < 1) throw ContractError("iterative_sample: n_steps must be >= 1");
  SampleResult<T> res;
  TensorT<T> state = y;
  res.nfe = 0;
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double t = sched.T * static_cast<double>(n_steps - i) / static_cast<double>(n_steps);
    const double s = sched.T * static_cast<double>(n_steps - i - 1) / static_cast<double>(n_steps);
    auto x_hat = model(state, t);
    ++res.nfe;
    TensorT<T> z;
    if (mode == SampleMode::sde && s > 0.0) {
      z = TensorT<T>::randn(state.shape(), rng);
    } else {
      z = TensorT<T>::zeros(state.shape());
    }
    state = posterior_step(state, x_hat, t, s, z, sched, mode, conv);
  }
  res.output = state;
  return res;
}

// One-step inference: evaluate the model once at t = T, where the bridge
// state equals the degraded input.
template <class T>
TensorT<T> one_step_enhance(const TensorT<T>& y, const BridgeModel<T>& model,
                            const BridgeSchedule& sched) {
  return model(y, sched.T);
}

}  // namespace sbm
