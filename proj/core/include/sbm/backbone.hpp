#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sbm/common.hpp"
#include "sbm/random.hpp"
#include "sbm/signal.hpp"
#include "sbm/ssm.hpp"
#include "sbm/tensor.hpp"

namespace sbm {

// Ordered named parameter collection. Order is the creation order, which keeps
// optimizer state, checkpoints and training bit-reproducible.
template <class T>
class ParamStore {
 public:
  TensorT<T>& add(const std::string& name, TensorT<T> t, bool trainable = true) {
    for (auto& it : items_)
      if (it.first == name) throw ContractError("duplicate parameter name: " + name);
    t.set_requires_grad(trainable);
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  TensorT<T>& get(const std::string& name) {
    for (auto& it : items_)
      if (it.first == name) return it.second;
    throw ContractError("unknown parameter: " + name);
  }

  bool has(const std::string& name) const {
    for (auto& it : items_)
      if (it.first == name) return true;
    return false;
  }

  std::vector<std::pair<std::string, TensorT<T>>>& items() { return items_; }
  const std::vector<std::pair<std::string, TensorT<T>>>& items() const { return items_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (auto& it : items_) n += it.second.size();
    return n;
  }

  void zero_grad() {
    for (auto& it : items_) it.second.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, TensorT<T>>> items_;
};

struct BackboneConfig {
  std::size_t n_blocks = 4;
  std::size_t d_model = 64;
  std::size_t d_state = 16;
  std::size_t freq_factor = 4;
  std::size_t time_factor = 2;
  bool time_causal = true;
  std::size_t fourier_dim = 64;
  double fourier_scale = 16.0;
  std::size_t expand = 2;
  std::size_t conv_kernel = 4;
  bool use_timestep = true;  // false -> predictive-mapping (Mamba-base) model
  bool zero_init_out_proj = false;
  bool train_fourier_freqs = false;
  ScanImpl scan_impl = ScanImpl::sequential;

  std::size_t d_inner() const { return d_model * expand; }

  void validate() const {
    if (n_blocks == 0 || d_model == 0 || d_state == 0) throw ConfigError("backbone: zero size");
    if (fourier_dim % 2 != 0) throw ConfigError("backbone: fourier_dim must be even");
    if (freq_factor == 0 || time_factor == 0) throw ConfigError("backbone: zero tf factor");
  }
};

namespace detail {
inline double inv_softplus(double y) { return std::log(std::expm1(y)); }
}

// Mamba-based enhancement network: narrow-band time-axis blocks with
// time-frequency compression, one full-band frequency-axis block, and
// Gaussian Fourier timestep conditioning.
template <class T>
class Backbone {
 public:
  Backbone(BackboneConfig cfg, RandomStream& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t d = cfg_.d_model, din = cfg_.d_inner(), ns = cfg_.d_state;
    const std::size_t in_ch = 2 * cfg_.freq_factor * cfg_.time_factor;

    params_.add("input_proj.w", init_linear({in_ch, d}, in_ch, rng));
    params_.add("input_proj.b", TensorT<T>::zeros({d}));
    params_.add("output_proj.w", init_linear({d, in_ch}, d, rng));
    params_.add("output_proj.b", TensorT<T>::zeros({in_ch}));

    if (cfg_.use_timestep) {
      auto freqs = TensorT<T>::randn({cfg_.fourier_dim / 2}, rng,
                                     static_cast<T>(cfg_.fourier_scale));
      params_.add("t_embed.freqs", freqs, cfg_.train_fourier_freqs);
      params_.add("t_embed.proj.w", init_linear({cfg_.fourier_dim, d}, cfg_.fourier_dim, rng));
      params_.add("t_embed.proj.b", TensorT<T>::zeros({d}));
    }

    for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      params_.add(p + "ln.g", TensorT<T>::full({d}, T(1)));
      params_.add(p + "ln.b", TensorT<T>::zeros({d}));
      if (cfg_.use_timestep) {
        params_.add(p + "t_affine.w", init_linear({d, d}, d, rng, 0.1));
        params_.add(p + "t_affine.b", TensorT<T>::zeros({d}));
      }
      add_cell(p + "cell.", cfg_.time_causal ? 1 : 2, rng);
    }
    params_.add("fullband.ln.g", TensorT<T>::full({d}, T(1)));
    params_.add("fullband.ln.b", TensorT<T>::zeros({d}));
    add_cell("fullband.cell.", 2, rng);
    (void)din;
    (void)ns;
  }

  const BackboneConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  std::size_t param_count() const { return params_.total_size(); }

  // Pre-projection Gaussian Fourier features [sin(2 pi f t), cos(2 pi f t)].
  std::vector<T> fourier_features(double t) const {
    const auto& freqs = const_cast<ParamStore<T>&>(params_).get("t_embed.freqs").value();
    std::vector<T> feats(cfg_.fourier_dim);
    const double two_pi = 6.28318530717958647692;
    for (std::size_t j = 0; j < freqs.size(); ++j) {
      feats[j] = static_cast<T>(std::sin(two_pi * static_cast<double>(freqs[j]) * t));
      feats[freqs.size() + j] =
          static_cast<T>(std::cos(two_pi * static_cast<double>(freqs[j]) * t));
    }
    return feats;
  }

  TensorT<T> fourier_embed(double t) {
    if (!cfg_.use_timestep) throw ContractError("fourier_embed on a model without timestep input");
    const std::size_t half = cfg_.fourier_dim / 2;
    auto freqs = params_.get("t_embed.freqs");
    auto ft = freqs * (6.28318530717958647692 * t);
    auto s = reshape(sin(ft), {1, half});
    auto c = reshape(cos(ft), {1, half});
    auto w = params_.get("t_embed.proj.w");
    auto ws = slice(w, 0, 0, half);
    auto wc = slice(w, 0, half, half);
    return matmul(s, ws) + matmul(c, wc) + params_.get("t_embed.proj.b");
  }

  // [B, 2, F, L] -> [B, F', L', d_model]; reflect padding to divisibility,
  // (freq_factor x time_factor) patches folded into channels, linear proj.
  TensorT<T> tf_compress(const TensorT<T>& planes) {
    const std::size_t B = planes.dim(0), F = planes.dim(1 + 1), L = planes.dim(3);
    const std::size_t pf = cfg_.freq_factor, pt = cfg_.time_factor;
    if (pf > F || pt > L) throw ConfigError("tf_compress: factor exceeds dimension");
    const std::size_t Fp = (F + pf - 1) / pf, Lp = (L + pt - 1) / pt;
    auto x = planes;
    if (Fp * pf > F) x = pad_reflect(x, 2, 0, Fp * pf - F);
    if (Lp * pt > L) x = pad_reflect(x, 3, 0, Lp * pt - L);
    x = reshape(x, {B, 2, Fp, pf, Lp, pt});
    x = transpose(x, {0, 2, 4, 1, 3, 5});
    x = reshape(x, {B * Fp * Lp, 2 * pf * pt});
    x = matmul(x, params_.get("input_proj.w")) + params_.get("input_proj.b");
    return reshape(x, {B, Fp, Lp, cfg_.d_model});
  }

  // Exact inverse geometry of tf_compress, cropped to (F, L).
  TensorT<T> tf_decompress(const TensorT<T>& h, std::size_t F, std::size_t L) {
    const std::size_t B = h.dim(0), Fp = h.dim(1), Lp = h.dim(2);
    const std::size_t pf = cfg_.freq_factor, pt = cfg_.time_factor;
    auto x = reshape(h, {B * Fp * Lp, cfg_.d_model});
    x = matmul(x, params_.get("output_proj.w")) + params_.get("output_proj.b");
    x = reshape(x, {B, Fp, Lp, 2, pf, pt});
    x = transpose(x, {0, 3, 1, 4, 2, 5});
    x = reshape(x, {B, 2, Fp * pf, Lp * pt});
    if (Fp * pf > F) x = slice(x, 2, 0, F);
    if (Lp * pt > L) x = slice(x, 3, 0, L);
    return x;
  }

  // Per-frequency processing along time; bins share weights and exchange no
  // information inside the block.
  TensorT<T> narrowband_block(std::size_t index, const TensorT<T>& h, const TensorT<T>& t_emb) {
    const std::string p = "block" + std::to_string(index) + ".";
    auto z = layer_norm(h, 2, 1e-5, params_.get(p + "ln.g"), params_.get(p + "ln.b"));
    if (t_emb.defined()) {
      auto e = matmul(t_emb, params_.get(p + "t_affine.w")) + params_.get(p + "t_affine.b");
      z = z + e;
    }
    return h + cell_forward(p + "cell.", z, cfg_.time_causal ? 1 : 2);
  }

  // Bidirectional scan along the frequency axis per time frame.
  TensorT<T> fullband_block(const TensorT<T>& h4) {
    const std::size_t B = h4.dim(0), Fp = h4.dim(1), Lp = h4.dim(2), d = cfg_.d_model;
    auto ht = reshape(transpose(h4, {0, 2, 1, 3}), {B * Lp, Fp, d});
    auto z = layer_norm(ht, 2, 1e-5, params_.get("fullband.ln.g"), params_.get("fullband.ln.b"));
    auto out = ht + cell_forward("fullband.cell.", z, 2);
    return transpose(reshape(out, {B, Lp, Fp, d}), {0, 2, 1, 3});
  }

  SpectroBatch<T> forward(const SpectroBatch<T>& x_t, double t) {
    x_t.check();
    for (T v : x_t.planes.value())
      if (!std::isfinite(static_cast<double>(v))) throw InputError("backbone: non-finite input");
    const std::size_t B = x_t.batch(), F = x_t.bins(), L = x_t.frames();
    TensorT<T> t_emb;
    if (cfg_.use_timestep) t_emb = fourier_embed(t);
    auto h = tf_compress(x_t.planes);
    const std::size_t Fp = h.dim(1), Lp = h.dim(2), d = cfg_.d_model;
    for (std::size_t i = 0; i < cfg_.n_blocks; ++i) {
      auto lanes = reshape(h, {B * Fp, Lp, d});
      h = reshape(narrowband_block(i, lanes, t_emb), {B, Fp, Lp, d});
    }
    h = fullband_block(h);
    SpectroBatch<T> out = x_t;
    out.planes = tf_decompress(h, F, L);
    return out;
  }

 private:
  TensorT<T> init_linear(Shape shape, std::size_t fan_in, RandomStream& rng, double gain = 1.0) {
    return TensorT<T>::randn(std::move(shape), rng,
                             static_cast<T>(gain / std::sqrt(static_cast<double>(fan_in))));
  }

  void add_cell(const std::string& p, std::size_t n_heads, RandomStream& rng) {
    const std::size_t d = cfg_.d_model, din = cfg_.d_inner(), ns = cfg_.d_state,
                      K = cfg_.conv_kernel;
    params_.add(p + "in_x.w", init_linear({d, din}, d, rng));
    params_.add(p + "in_g.w", init_linear({d, din}, d, rng));
    params_.add(p + "conv.w", init_linear({din, K}, K, rng));
    params_.add(p + "conv.b", TensorT<T>::zeros({din}));
    for (std::size_t hidx = 0; hidx < n_heads; ++hidx) {
      const std::string hp = p + "head" + std::to_string(hidx) + ".";
      params_.add(hp + "dt.w", init_linear({din, din}, din, rng, 0.1));
      auto dt_b = TensorT<T>::zeros({din});
      for (auto& v : dt_b.mutable_value()) {
        // softplus(dt_b) log-uniform in [1e-3, 1e-1]
        const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        v = static_cast<T>(detail::inv_softplus(dt));
      }
      params_.add(hp + "dt.b", dt_b);
      params_.add(hp + "b.w", init_linear({din, ns}, din, rng));
      params_.add(hp + "c.w", init_linear({din, ns}, din, rng));
      auto a_raw = TensorT<T>::zeros({ns});
      for (std::size_t n = 0; n < ns; ++n)
        a_raw.mutable_value()[n] = static_cast<T>(detail::inv_softplus(static_cast<double>(n + 1)));
      params_.add(hp + "a_raw", a_raw);
      params_.add(hp + "d_skip", TensorT<T>::full({din}, T(1)));
    }
    auto out_w = cfg_.zero_init_out_proj ? TensorT<T>::zeros({din, d})
                                         : init_linear({din, d}, din, rng, 0.1);
    params_.add(p + "out.w", out_w);
    params_.add(p + "out.b", TensorT<T>::zeros({d}));
  }

  TensorT<T> mm2(const TensorT<T>& x, const TensorT<T>& w) {
    const std::size_t lanes = x.dim(0), L = x.dim(1), din = x.dim(2);
    auto y = matmul(reshape(x, {lanes * L, din}), w);
    return reshape(y, {lanes, L, w.dim(1)});
  }

  // Gated Mamba cell: expand, depthwise causal conv, silu, selective scan
  // (optionally a second reversed-direction head), gate multiply, contract.
  TensorT<T> cell_forward(const std::string& p, const TensorT<T>& z, std::size_t n_heads) {
    auto u0 = mm2(z, params_.get(p + "in_x.w"));
    auto g = mm2(z, params_.get(p + "in_g.w"));
    auto u = silu(conv1d_depthwise_causal(u0, params_.get(p + "conv.w"), params_.get(p + "conv.b")));
    TensorT<T> y;
    for (std::size_t hidx = 0; hidx < n_heads; ++hidx) {
      const std::string hp = p + "head" + std::to_string(hidx) + ".";
      auto input = hidx == 0 ? u : flip(u, 1);
      SSMParams<T> sp;
      sp.delta = softplus(mm2(input, params_.get(hp + "dt.w")) + params_.get(hp + "dt.b"));
      sp.b = mm2(input, params_.get(hp + "b.w"));
      sp.c_out = mm2(input, params_.get(hp + "c.w"));
      sp.a = constrain_state_matrix(params_.get(hp + "a_raw"));
      sp.d_skip = params_.get(hp + "d_skip");
      auto yh = selective_scan(input, sp, cfg_.scan_impl);
      if (hidx == 1) yh = flip(yh, 1);
      y = y.defined() ? y + yh : yh;
    }
    y = y * silu(g);
    return mm2(y, params_.get(p + "out.w")) + params_.get(p + "out.b");
  }

  BackboneConfig cfg_;
  ParamStore<T> params_;
};

}  // namespace sbm
