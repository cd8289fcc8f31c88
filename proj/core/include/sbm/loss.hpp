#pragma once

#include <map>
#include <memory>
#include <tuple>
#include <utility>
#include <vector>

#include "sbm/common.hpp"
#include "sbm/signal.hpp"
#include "sbm/tensor.hpp"

namespace sbm {

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double lambda4 = 1.0;
  std::vector<std::pair<std::size_t, std::size_t>> mr_resolutions = {
      {128, 32}, {256, 64}, {512, 128}};

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
      throw ConfigError("loss weights must be nonnegative");
    if (lambda1 + lambda2 + lambda3 + lambda4 <= 0.0)
      throw ConfigError("at least one loss weight must be positive");
    for (auto [n, h] : mr_resolutions)
      if (h != n / 2 && h != n / 4)
        throw ConfigError("mr resolution (" + std::to_string(n) + ", " + std::to_string(h) +
                          ") violates COLA");
  }
};

template <class T>
struct LossTerms {
  TensorT<T> total;  // scalar, differentiable
  double term1 = 0, term2 = 0, term3 = 0, term4 = 0;
};

namespace detail {

// Transforms are construction-heavy (DFT bases); cache per geometry.
template <class T>
const StftTransform<T>& cached_transform(std::size_t n_fft, std::size_t hop,
                                         std::size_t sample_rate) {
  static std::map<std::tuple<std::size_t, std::size_t, std::size_t>,
                  std::unique_ptr<StftTransform<T>>>
      cache;
  auto key = std::make_tuple(n_fft, hop, sample_rate);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, std::make_unique<StftTransform<T>>(n_fft, hop, sample_rate)).first;
  return *it->second;
}

template <class T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
  auto d = a - b;
  return mean_all(d * d);
}

}  // namespace detail

// L = l1 MSE(S, S_hat) + l2 MSE(|S|, |S_hat|)
//   + mean over mr resolutions of the same two MSEs on re-analyzed spectra
//   of the waveforms istft(S), istft(S_hat), weighted l3 / l4.
template <class T>
LossTerms<T> data_prediction_loss_terms(const SpectroBatch<T>& S, const SpectroBatch<T>& S_hat,
                                        const LossWeights& w) {
  S.check();
  S_hat.check();
  w.validate();
  if (S.planes.shape() != S_hat.planes.shape() || S.n_fft != S_hat.n_fft || S.hop != S_hat.hop)
    throw DimensionError("data_prediction_loss: geometry mismatch");
  LossTerms<T> out;
  auto t1 = detail::mse(S.planes, S_hat.planes);
  auto t2 = detail::mse(magnitude(S), magnitude(S_hat));
  out.term1 = static_cast<double>(t1.item());
  out.term2 = static_cast<double>(t2.item());
  out.total = t1 * w.lambda1 + t2 * w.lambda2;
  if ((w.lambda3 > 0.0 || w.lambda4 > 0.0) && !w.mr_resolutions.empty()) {
    const std::size_t target_len = S.n_samples;
    if (target_len == 0)
      throw ContractError("data_prediction_loss: multi-resolution terms need n_samples > 0");
    const auto& base = detail::cached_transform<T>(S.n_fft, S.hop, S.sample_rate);
    auto wave = base.istft(S, target_len);
    auto wave_hat = base.istft(S_hat, target_len);
    TensorT<T> t3, t4;
    for (auto [n_fft, hop] : w.mr_resolutions) {
      const auto& tf = detail::cached_transform<T>(n_fft, hop, S.sample_rate);
      auto R = tf.stft(wave);
      auto R_hat = tf.stft(wave_hat);
      auto m3 = detail::mse(R.planes, R_hat.planes);
      auto m4 = detail::mse(magnitude(R), magnitude(R_hat));
      t3 = t3.defined() ? t3 + m3 : m3;
      t4 = t4.defined() ? t4 + m4 : m4;
    }
    const double inv = 1.0 / static_cast<double>(w.mr_resolutions.size());
    t3 = t3 * inv;
    t4 = t4 * inv;
    out.term3 = static_cast<double>(t3.item());
    out.term4 = static_cast<double>(t4.item());
    out.total = out.total + t3 * w.lambda3 + t4 * w.lambda4;
  }
  return out;
}

template <class T>
TensorT<T> data_prediction_loss(const SpectroBatch<T>& S, const SpectroBatch<T>& S_hat,
                                const LossWeights& w) {
  return data_prediction_loss_terms(S, S_hat, w).total;
}

}  // namespace sbm
