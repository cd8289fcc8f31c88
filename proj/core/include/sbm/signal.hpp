#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "sbm/common.hpp"
#include "sbm/tensor.hpp"

namespace sbm {

// Batched complex STFT as paired real/imag channel planes.
template <class T>
struct SpectroBatch {
  TensorT<T> planes;  // [batch, 2, F, L]
  std::size_t sample_rate = 16000;
  std::size_t n_fft = 512;
  std::size_t hop = 128;
  std::size_t n_samples = 0;  // original waveform length (for exact inversion)

  std::size_t batch() const { return planes.dim(0); }
  std::size_t bins() const { return planes.dim(2); }
  std::size_t frames() const { return planes.dim(3); }

  void check() const {
    if (planes.rank() != 4 || planes.dim(1) != 2)
      throw DimensionError("SpectroBatch planes must be [batch, 2, F, L]");
    if (planes.dim(2) != n_fft / 2 + 1)
      throw DimensionError("SpectroBatch F must equal n_fft/2 + 1");
  }
};

namespace detail {

// out[b, 0, ...] = a, out[b, 1, ...] = b2 for a, b2 of shape [batch, F, L].
template <class T>
TensorT<T> stack_planes(const TensorT<T>& re, const TensorT<T>& im) {
  if (re.shape() != im.shape() || re.rank() != 3)
    throw DimensionError("stack_planes: expected matching [batch, F, L] inputs");
  const std::size_t B = re.dim(0), F = re.dim(1), L = re.dim(2), FL = F * L;
  std::vector<T> v(2 * B * FL);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy(re.value().begin() + b * FL, re.value().begin() + (b + 1) * FL,
              v.begin() + (2 * b) * FL);
    std::copy(im.value().begin() + b * FL, im.value().begin() + (b + 1) * FL,
              v.begin() + (2 * b + 1) * FL);
  }
  auto rn = re.node();
  auto in2 = im.node();
  return TensorT<T>::make({B, 2, F, L}, std::move(v), {re, im},
                          [rn, in2, B, FL](TensorNode<T>& self) {
                            for (std::size_t b = 0; b < B; ++b) {
                              if (rn->requires_grad) {
                                rn->ensure_grad();
                                for (std::size_t i = 0; i < FL; ++i)
                                  rn->grad[b * FL + i] += self.grad[(2 * b) * FL + i];
                              }
                              if (in2->requires_grad) {
                                in2->ensure_grad();
                                for (std::size_t i = 0; i < FL; ++i)
                                  in2->grad[b * FL + i] += self.grad[(2 * b + 1) * FL + i];
                              }
                            }
                          });
}

// Overlap-add of [batch, L, n_fft] frames into [batch, out_len] at the given hop.
template <class T>
TensorT<T> overlap_add(const TensorT<T>& frames, std::size_t hop, std::size_t out_len) {
  const std::size_t B = frames.dim(0), L = frames.dim(1), n = frames.dim(2);
  std::vector<T> v(B * out_len, T(0));
  const auto& fv = frames.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l) {
      const T* src = fv.data() + (b * L + l) * n;
      T* dst = v.data() + b * out_len + l * hop;
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  auto fn = frames.node();
  return TensorT<T>::make({B, out_len}, std::move(v), {frames},
                          [fn, B, L, n, hop, out_len](TensorNode<T>& self) {
                            if (!fn->requires_grad) return;
                            fn->ensure_grad();
                            for (std::size_t b = 0; b < B; ++b)
                              for (std::size_t l = 0; l < L; ++l) {
                                T* dst = fn->grad.data() + (b * L + l) * n;
                                const T* g = self.grad.data() + b * out_len + l * hop;
                                for (std::size_t j = 0; j < n; ++j) dst[j] += g[j];
                              }
                          });
}

}  // namespace detail

// Differentiable STFT/iSTFT with periodic Hann window, reflect center padding
// and window-square overlap-add normalization. COLA is enforced at
// construction: hop must be n_fft/2 or n_fft/4.
template <class T>
class StftTransform {
 public:
  StftTransform(std::size_t n_fft, std::size_t hop, std::size_t sample_rate = 16000)
      : n_fft_(n_fft), hop_(hop), sample_rate_(sample_rate) {
    if (hop > n_fft) throw ConfigError("stft: hop must not exceed n_fft");
    if (hop != n_fft / 2 && hop != n_fft / 4)
      throw ConfigError("stft: (hann, hop) must satisfy COLA; use hop = n_fft/2 or n_fft/4");
    const std::size_t F = n_fft / 2 + 1;
    window_.resize(n_fft);
    for (std::size_t i = 0; i < n_fft; ++i)
      window_[i] = static_cast<T>(
          0.5 * (1.0 - std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(i) /
                                static_cast<double>(n_fft))));
    fwd_re_.assign(n_fft * F, T(0));
    fwd_im_.assign(n_fft * F, T(0));
    inv_re_.assign(F * n_fft, T(0));
    inv_im_.assign(F * n_fft, T(0));
    for (std::size_t nidx = 0; nidx < n_fft; ++nidx)
      for (std::size_t k = 0; k < F; ++k) {
        const double ang = 2.0 * 3.14159265358979323846 * static_cast<double>(k * nidx) /
                           static_cast<double>(n_fft);
        fwd_re_[nidx * F + k] = static_cast<T>(std::cos(ang));
        fwd_im_[nidx * F + k] = static_cast<T>(-std::sin(ang));
        const double wk = (k == 0 || k == n_fft / 2) ? 1.0 : 2.0;
        inv_re_[k * n_fft + nidx] = static_cast<T>(wk * std::cos(ang) / static_cast<double>(n_fft));
        inv_im_[k * n_fft + nidx] =
            static_cast<T>(-wk * std::sin(ang) / static_cast<double>(n_fft));
      }
  }

  std::size_t n_fft() const { return n_fft_; }
  std::size_t hop() const { return hop_; }
  std::size_t bins() const { return n_fft_ / 2 + 1; }
  std::size_t frames_for(std::size_t n_samples) const { return (n_samples + hop_ - 1) / hop_; }

  SpectroBatch<T> stft(const TensorT<T>& wave) const {
    if (wave.rank() != 2) throw DimensionError("stft: wave must be [batch, N]");
    std::size_t N = wave.dim(1);
    TensorT<T> w = wave;
    if (N < n_fft_) {
      // Short input: zero-pad to one analysis window, never error.
      const std::size_t pad = n_fft_ - N;
      std::vector<T> v(wave.dim(0) * n_fft_, T(0));
      // differentiable zero pad via axis_remap is not possible (new zeros);
      // use a scatter-style custom op
      const auto& xv = wave.value();
      const std::size_t B = wave.dim(0);
      for (std::size_t b = 0; b < B; ++b)
        std::copy(xv.begin() + b * N, xv.begin() + (b + 1) * N, v.begin() + b * n_fft_);
      auto xn = wave.node();
      w = TensorT<T>::make({B, n_fft_}, std::move(v), {wave}, [xn, B, N](TensorNode<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const std::size_t n = self.shape[1];
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < N; ++i) xn->grad[b * N + i] += self.grad[b * n + i];
      });
      (void)pad;
      N = n_fft_;
    }
    const std::size_t B = w.dim(0);
    const std::size_t L = frames_for(N);
    const std::size_t F = bins();
    auto padded = pad_reflect(w, 1, n_fft_ / 2, n_fft_ / 2);
    // Overlapping frame gather, then window, then DFT bases as one GEMM.
    std::vector<std::size_t> map(L * n_fft_);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < n_fft_; ++j) map[l * n_fft_ + j] = l * hop_ + j;
    auto frames = reshape(axis_remap(padded, 1, map), {B, L, n_fft_});
    auto windowed = frames * TensorT<T>::from({n_fft_}, window_);
    auto flat = reshape(windowed, {B * L, n_fft_});
    auto re = transpose(reshape(matmul(flat, TensorT<T>::from({n_fft_, F}, fwd_re_)), {B, L, F}),
                        {0, 2, 1});
    auto im = transpose(reshape(matmul(flat, TensorT<T>::from({n_fft_, F}, fwd_im_)), {B, L, F}),
                        {0, 2, 1});
    SpectroBatch<T> out;
    out.planes = detail::stack_planes(re, im);
    out.sample_rate = sample_rate_;
    out.n_fft = n_fft_;
    out.hop = hop_;
    out.n_samples = wave.dim(1);
    return out;
  }

  TensorT<T> istft(const SpectroBatch<T>& s, std::size_t target_len) const {
    s.check();
    if (s.n_fft != n_fft_ || s.hop != hop_)
      throw ConfigError("istft: SpectroBatch geometry does not match transform");
    const std::size_t B = s.batch(), F = s.bins(), L = s.frames();
    const std::size_t padded_len = (L - 1) * hop_ + n_fft_;
    auto re = reshape(slice(s.planes, 1, 0, 1), {B, F, L});
    auto im = reshape(slice(s.planes, 1, 1, 1), {B, F, L});
    auto re_t = reshape(transpose(re, {0, 2, 1}), {B * L, F});
    auto im_t = reshape(transpose(im, {0, 2, 1}), {B * L, F});
    auto frames = matmul(re_t, TensorT<T>::from({F, n_fft_}, inv_re_)) +
                  matmul(im_t, TensorT<T>::from({F, n_fft_}, inv_im_));
    auto windowed = reshape(frames, {B, L, n_fft_}) * TensorT<T>::from({n_fft_}, window_);
    auto ola = detail::overlap_add(windowed, hop_, padded_len);
    // Window-square normalization (exact inversion wherever coverage is nonzero).
    std::vector<T> denom(padded_len, T(0));
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t j = 0; j < n_fft_; ++j) denom[l * hop_ + j] += window_[j] * window_[j];
    for (auto& d : denom) d = std::max(d, T(1e-12));
    auto norm = ola / TensorT<T>::from({padded_len}, denom);
    const std::size_t start = n_fft_ / 2;
    if (start + target_len > padded_len)
      throw DimensionError("istft: target_len exceeds synthesized span");
    return slice(norm, 1, start, target_len);
  }

 private:
  std::size_t n_fft_, hop_, sample_rate_;
  std::vector<T> window_;
  std::vector<T> fwd_re_, fwd_im_, inv_re_, inv_im_;
};

// sqrt(re^2 + im^2 + eps) with a small epsilon inside the root so the
// gradient stays finite at the origin.
template <class T>
TensorT<T> magnitude(const SpectroBatch<T>& s, double eps_mag = 1e-9) {
  s.check();
  const std::size_t B = s.batch(), F = s.bins(), L = s.frames();
  auto re = reshape(slice(s.planes, 1, 0, 1), {B, F, L});
  auto im = reshape(slice(s.planes, 1, 1, 1), {B, F, L});
  return sqrt(re * re + im * im + eps_mag);
}

enum class SpecTransformMode { none, compress };

// Magnitude compression beta * |S|^alpha with phase preserved.
template <class T>
SpectroBatch<T> spec_transform(const SpectroBatch<T>& s, SpecTransformMode mode,
                               double alpha = 0.5, double beta = 0.15) {
  if (mode == SpecTransformMode::none) return s;
  if (alpha <= 0.0 || alpha > 1.0 || beta <= 0.0)
    throw ConfigError("spec_transform: need alpha in (0,1], beta > 0");
  SpectroBatch<T> out = s;
  auto mag = magnitude(s);
  auto factor = pow(mag, alpha - 1.0) * beta;  // [B, F, L]
  const std::size_t B = s.batch(), F = s.bins(), L = s.frames();
  auto f4 = reshape(factor, {B, 1, F, L});
  out.planes = s.planes * f4;
  return out;
}

template <class T>
SpectroBatch<T> spec_transform_inverse(const SpectroBatch<T>& s, SpecTransformMode mode,
                                       double alpha = 0.5, double beta = 0.15) {
  if (mode == SpecTransformMode::none) return s;
  SpectroBatch<T> out = s;
  auto mag = magnitude(s);  // this is beta * |S|^alpha
  auto orig = pow(mag * (1.0 / beta), 1.0 / alpha);
  auto factor = orig / mag;
  const std::size_t B = s.batch(), F = s.bins(), L = s.frames();
  out.planes = s.planes * reshape(factor, {B, 1, F, L});
  return out;
}

}  // namespace sbm
