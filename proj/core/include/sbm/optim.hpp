#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <vector>

#include "sbm/backbone.hpp"
#include "sbm/common.hpp"
#include "sbm/tensor.hpp"

namespace sbm {

struct OptimConfig {
  double lr_base = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 100;
  std::size_t total_steps = 2000;

  void validate() const {
    if (lr_base < 0) throw ConfigError("optim: lr_base must be nonnegative");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw ConfigError("optim: betas must lie in [0, 1)");
    if (eps <= 0) throw ConfigError("optim: eps must be positive");
    if (weight_decay < 0) throw ConfigError("optim: weight_decay must be nonnegative");
    if (total_steps == 0) throw ConfigError("optim: total_steps must be positive");
  }
};

// Linear warmup then cosine decay to zero at total_steps.
inline double lr_schedule(const OptimConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr_base * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  double progress = span > 0 ? static_cast<double>(step - cfg.warmup_steps) / span : 1.0;
  if (progress > 1.0) progress = 1.0;
  return cfg.lr_base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Scales all trainable gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <class T>
double clip_grad_global_norm(ParamStore<T>& params, double max_norm) {
  double sq = 0.0;
  for (auto& it : params.items()) {
    if (!it.second.requires_grad()) continue;
    for (T g : it.second.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& it : params.items()) {
      if (!it.second.requires_grad()) continue;
      for (T& g : it.second.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

// AdamW with decoupled weight decay, bias correction, warmup + cosine lr.
template <class T>
class AdamW {
 public:
  AdamW(ParamStore<T>& params, OptimConfig cfg) : params_(&params), cfg_(cfg) {
    cfg_.validate();
    for (auto& it : params.items()) {
      m_.emplace_back(it.second.size(), T(0));
      v_.emplace_back(it.second.size(), T(0));
    }
  }

  const OptimConfig& config() const { return cfg_; }
  std::size_t step_count() const { return step_; }
  double current_lr() const { return lr_schedule(cfg_, step_); }

  // One update from the gradients currently stored on the parameters.
  void step() {
    const double lr = lr_schedule(cfg_, step_);
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    auto& items = params_->items();
    for (std::size_t pi = 0; pi < items.size(); ++pi) {
      auto& p = items[pi].second;
      if (!p.requires_grad()) continue;
      const auto& g = p.grad();
      auto& w = p.mutable_value();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        double wi = static_cast<double>(w[i]);
        wi -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * wi);
        w[i] = static_cast<T>(wi);
      }
    }
  }

  void save_state(std::ostream& os) const {
    const std::uint64_t step64 = step_, n = m_.size();
    os.write(reinterpret_cast<const char*>(&step64), sizeof(step64));
    os.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const std::uint64_t len = m_[i].size();
      os.write(reinterpret_cast<const char*>(&len), sizeof(len));
      os.write(reinterpret_cast<const char*>(m_[i].data()),
               static_cast<std::streamsize>(len * sizeof(T)));
      os.write(reinterpret_cast<const char*>(v_[i].data()),
               static_cast<std::streamsize>(len * sizeof(T)));
    }
  }

  void load_state(std::istream& is) {
    std::uint64_t step64 = 0, n = 0;
    is.read(reinterpret_cast<char*>(&step64), sizeof(step64));
    is.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (!is || n != m_.size()) throw DataError("optimizer state does not match parameters");
    step_ = static_cast<std::size_t>(step64);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      std::uint64_t len = 0;
      is.read(reinterpret_cast<char*>(&len), sizeof(len));
      if (!is || len != m_[i].size()) throw DataError("optimizer moment shape mismatch");
      is.read(reinterpret_cast<char*>(m_[i].data()),
              static_cast<std::streamsize>(len * sizeof(T)));
      is.read(reinterpret_cast<char*>(v_[i].data()),
              static_cast<std::streamsize>(len * sizeof(T)));
      if (!is) throw DataError("optimizer state truncated");
    }
  }

 private:
  ParamStore<T>* params_;
  OptimConfig cfg_;
  std::size_t step_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace sbm
