#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sbm/common.hpp"
#include "sbm/signal.hpp"
#include "sbm/tensor.hpp"

namespace sbm {

// Scale-invariant SDR in dB: project est onto ref, 10 log10(||target||^2 /
// ||residual||^2). Capped at +100 dB so aggregates stay finite.
template <class S>
double si_sdr(const std::vector<S>& ref, const std::vector<S>& est) {
  if (ref.size() != est.size()) throw DimensionError("si_sdr: length mismatch");
  if (ref.empty()) throw MetricError("si_sdr: empty signals");
  double dot = 0.0, ref_energy = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    dot += static_cast<double>(est[i]) * static_cast<double>(ref[i]);
    ref_energy += static_cast<double>(ref[i]) * static_cast<double>(ref[i]);
  }
  if (ref_energy <= 0.0) throw MetricError("si_sdr: zero reference");
  const double alpha = dot / ref_energy;
  double target_energy = 0.0, residual_energy = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double t = alpha * static_cast<double>(ref[i]);
    const double r = static_cast<double>(est[i]) - t;
    target_energy += t * t;
    residual_energy += r * r;
  }
  const double cap = 100.0;
  if (residual_energy <= 0.0) return cap;
  const double db = 10.0 * std::log10(target_energy / residual_energy);
  return std::min(db, cap);
}

// RMS over frames and bins of 20 (log10(|S_ref| + eps) - log10(|S_est| + eps)).
template <class S>
double log_spectral_distance(const std::vector<S>& ref, const std::vector<S>& est,
                             std::size_t n_fft = 512, std::size_t hop = 128,
                             double eps = 1e-8) {
  if (ref.size() != est.size()) throw DimensionError("log_spectral_distance: length mismatch");
  StftTransform<double> tf(n_fft, hop);
  auto to_tensor = [](const std::vector<S>& w) {
    std::vector<double> v(w.begin(), w.end());
    const std::size_t n = v.size();
    return Tensor64::from({1, n}, std::move(v));
  };
  auto mr = magnitude(tf.stft(to_tensor(ref)));
  auto me = magnitude(tf.stft(to_tensor(est)));
  double acc = 0.0;
  for (std::size_t i = 0; i < mr.size(); ++i) {
    const double d = 20.0 * (std::log10(mr.value()[i] + eps) - std::log10(me.value()[i] + eps));
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(mr.size()));
}

// T60 from the Schroeder backward-integrated energy-decay curve, using the
// T30 extrapolation: time for the curve to fall from -5 dB to -35 dB, doubled.
// The reference level is the curve just after the direct sound (index 1), so
// the estimate is independent of the direct-to-reverberant ratio.
template <class S>
double schroeder_t60(const std::vector<S>& rir, double sample_rate) {
  if (rir.size() < 2) throw MetricError("schroeder_t60: impulse response too short");
  std::vector<double> edc(rir.size());
  double acc = 0.0;
  for (std::size_t i = rir.size(); i-- > 0;) {
    acc += static_cast<double>(rir[i]) * static_cast<double>(rir[i]);
    edc[i] = acc;
  }
  if (edc[1] <= 0.0) throw MetricError("schroeder_t60: zero-energy decay tail");
  auto crossing = [&](double floor_db) -> double {
    double prev_db = 0.0;
    for (std::size_t i = 2; i < edc.size(); ++i) {
      const double db = edc[i] > 0.0 ? 10.0 * std::log10(edc[i] / edc[1]) : -1e9;
      if (db <= floor_db) {
        const double frac = (prev_db - floor_db) / (prev_db - db);
        return (static_cast<double>(i - 1) + frac - 1.0) / sample_rate;
      }
      prev_db = db;
    }
    throw MetricError("schroeder_t60: decay never reaches the evaluation range");
  };
  const double t5 = crossing(-5.0);
  const double t35 = crossing(-35.0);
  return 2.0 * (t35 - t5);
}

}  // namespace sbm
