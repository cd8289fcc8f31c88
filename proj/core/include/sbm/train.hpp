#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sbm/backbone.hpp"
#include "sbm/bridge.hpp"
#include "sbm/checkpoint.hpp"
#include "sbm/common.hpp"
#include "sbm/config.hpp"
#include "sbm/data.hpp"
#include "sbm/loss.hpp"
#include "sbm/optim.hpp"
#include "sbm/signal.hpp"
#include "sbm/wav.hpp"

namespace sbm {

// Fixed-length clip: zero-padded or cropped to n_samples.
inline std::vector<float> load_clip(const std::string& path, std::size_t n_samples,
                                    std::size_t expected_rate) {
  WavData w = read_wav(path);
  if (w.sample_rate != expected_rate)
    throw InputError("sample rate mismatch in " + path + ": got " +
                     std::to_string(w.sample_rate) + ", expected " +
                     std::to_string(expected_rate));
  w.samples.resize(n_samples, 0.0f);
  return w.samples;
}

template <class T>
TensorT<T> waves_to_tensor(const std::vector<std::vector<float>>& waves) {
  const std::size_t B = waves.size(), N = waves.front().size();
  std::vector<T> v(B * N);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < N; ++i) v[b * N + i] = static_cast<T>(waves[b][i]);
  return TensorT<T>::from({B, N}, std::move(v));
}

template <class T>
struct TrainBatch {
  SpectroBatch<T> clean;
  SpectroBatch<T> degraded;
};

template <class T>
struct StepResult {
  LossTerms<T> terms;
  double grad_norm = 0.0;
  double t = 0.0;  // drawn bridge time (0 for predictive steps)
};

namespace detail {
template <class T>
void check_finite_loss(const LossTerms<T>& terms) {
  if (!std::isfinite(static_cast<double>(terms.total.item())))
    throw NumericalError("non-finite loss; step aborted");
}
}  // namespace detail

// One SB-mode update: t ~ U[t_eps, T], z ~ N_C(0, I), x_t from the bridge
// marginal, data-prediction loss against the clean spectrum, AdamW step.
template <class T>
StepResult<T> sb_training_step(const TrainBatch<T>& batch, Backbone<T>& model,
                               const BridgeSchedule& sched, const LossWeights& lw, AdamW<T>& opt,
                               RandomStream& rng, ComplexConvention conv, double grad_clip) {
  StepResult<T> res;
  res.t = rng.uniform(sched.t_eps, sched.T);
  auto z = TensorT<T>::randn(batch.clean.planes.shape(), rng);
  SpectroBatch<T> x_t = batch.clean;
  x_t.planes = sample_state(batch.clean.planes.detach(), batch.degraded.planes.detach(), res.t, z,
                            sched, conv);
  auto S_hat = model.forward(x_t, res.t);
  res.terms = data_prediction_loss_terms(batch.clean, S_hat, lw);
  detail::check_finite_loss(res.terms);
  model.params().zero_grad();
  backward(res.terms.total);
  res.grad_norm = clip_grad_global_norm(model.params(), grad_clip);
  opt.step();
  return res;
}

// One predictive-mapping update: fixed input y, no bridge sampling, no
// timestep conditioning.
template <class T>
StepResult<T> predictive_training_step(const TrainBatch<T>& batch, Backbone<T>& model,
                                       const LossWeights& lw, AdamW<T>& opt, double grad_clip) {
  if (model.config().use_timestep)
    throw ContractError("predictive_training_step requires a model without timestep input");
  StepResult<T> res;
  auto S_hat = model.forward(batch.degraded, 0.0);
  res.terms = data_prediction_loss_terms(batch.clean, S_hat, lw);
  detail::check_finite_loss(res.terms);
  model.params().zero_grad();
  backward(res.terms.total);
  res.grad_norm = clip_grad_global_norm(model.params(), grad_clip);
  opt.step();
  return res;
}

enum class EnhanceMode { one_step, sde, ode };

template <class T>
struct EnhanceResult {
  std::vector<float> wav;
  std::size_t nfe = 0;
};

// stft -> (one-step | iterative bridge sampling) -> istft.
template <class T>
EnhanceResult<T> enhance_waveform(Backbone<T>& model, const std::vector<float>& input,
                                  std::size_t n_fft, std::size_t hop, std::size_t sample_rate,
                                  const BridgeSchedule& sched, EnhanceMode mode, std::size_t steps,
                                  RandomStream& rng,
                                  ComplexConvention conv = ComplexConvention::split,
                                  SpecTransformMode st = SpecTransformMode::none) {
  if (!model.config().use_timestep && (mode != EnhanceMode::one_step || steps > 1))
    throw ContractError("this model has no timestep conditioning; only one-step enhancement");
  StftTransform<T> tf(n_fft, hop, sample_rate);
  std::vector<T> v(input.begin(), input.end());
  auto wave = TensorT<T>::from({1, input.size()}, std::move(v));
  SpectroBatch<T> y = spec_transform(tf.stft(wave), st);

  SpectroBatch<T> geom = y;  // carries geometry metadata for model calls
  BridgeModel<T> bridge_model = [&](const TensorT<T>& state, double t) {
    SpectroBatch<T> sb = geom;
    sb.planes = state;
    return model.forward(sb, t).planes;
  };

  EnhanceResult<T> res;
  SpectroBatch<T> out = y;
  if (mode == EnhanceMode::one_step) {
    out.planes = one_step_enhance(y.planes.detach(), bridge_model, sched);
    res.nfe = 1;
  } else {
    auto sr = iterative_sample(y.planes.detach(), bridge_model, steps, sched,
                               mode == EnhanceMode::sde ? SampleMode::sde : SampleMode::ode, rng,
                               conv);
    out.planes = sr.output;
    res.nfe = sr.nfe;
  }
  out = spec_transform_inverse(out, st);
  auto wav_out = tf.istft(out, input.size());
  res.wav.resize(input.size());
  for (std::size_t i = 0; i < input.size(); ++i)
    res.wav[i] = static_cast<float>(wav_out.value()[i]);
  return res;
}

// Training driver: deterministic batch sampling, metrics log, periodic
// checkpoints, bit-exact resumption from (checkpoint, RNG state).
template <class T>
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, const std::string& mode, const CorpusManifest& manifest,
          const std::string& out_dir)
      : cfg_(cfg), mode_(mode), manifest_(manifest), out_dir_(out_dir), rng_(cfg.train.seed) {
    if (mode != "sbm" && mode != "mamba-base")
      throw ConfigError("train mode must be 'sbm' or 'mamba-base', got '" + mode + "'");
    if (manifest_.entries.empty()) throw DataError("training manifest is empty");
    BackboneConfig bc = cfg_.backbone;
    bc.use_timestep = (mode == "sbm");
    RandomStream init_rng(RandomStream::derive(cfg_.train.seed, 0xB0DE));
    model_ = std::make_unique<Backbone<T>>(bc, init_rng);
    OptimConfig oc = cfg_.optim;
    if (oc.total_steps < cfg_.train.steps) oc.total_steps = cfg_.train.steps;
    opt_ = std::make_unique<AdamW<T>>(model_->params(), oc);
    std::filesystem::create_directories(out_dir_);
  }

  Backbone<T>& model() { return *model_; }
  std::size_t step() const { return step_; }

  void resume(const std::string& checkpoint_path) {
    auto ck = load_checkpoint<T>(checkpoint_path);
    if (ck.meta.mode != mode_)
      throw ConfigError("checkpoint mode '" + ck.meta.mode + "' does not match '" + mode_ + "'");
    apply_checkpoint(ck, *model_);
    if (ck.optimizer_blob.empty())
      throw DataError("checkpoint has no optimizer state; cannot resume training");
    std::istringstream is(ck.optimizer_blob, std::ios::binary);
    opt_->load_state(is);
    rng_.load(ck.meta.rng_state);
    step_ = ck.meta.step;
  }

  // Returns the path of the last checkpoint written.
  std::string run() {
    const std::size_t n_samples =
        static_cast<std::size_t>(cfg_.data.clip_seconds * static_cast<double>(cfg_.sample_rate));
    StftTransform<T> tf(cfg_.n_fft, cfg_.hop, cfg_.sample_rate);
    std::ofstream log(std::filesystem::path(out_dir_) / "metrics.tsv",
                      step_ == 0 ? std::ios::trunc : std::ios::app);
    if (step_ == 0)
      log << "step\tlr\tloss\tterm1\tterm2\tterm3\tterm4\tgrad_norm\tt\twall_s\n";
    std::string last_ckpt = write_checkpoint_file();
    const auto t_start = std::chrono::steady_clock::now();
    while (step_ < cfg_.train.steps) {
      auto batch = next_batch(tf, n_samples);
      StepResult<T> res;
      try {
        if (mode_ == "sbm")
          res = sb_training_step(batch, *model_, cfg_.schedule, cfg_.loss, *opt_, rng_,
                                 cfg_.complex_conv, cfg_.train.grad_clip);
        else
          res = predictive_training_step(batch, *model_, cfg_.loss, *opt_, cfg_.train.grad_clip);
      } catch (const NumericalError&) {
        // Last-good checkpoint stays on disk.
        throw;
      }
      ++step_;
      if (cfg_.train.log_every > 0 &&
          (step_ % cfg_.train.log_every == 0 || step_ == cfg_.train.steps)) {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        log << step_ << '\t' << opt_->current_lr() << '\t'
            << static_cast<double>(res.terms.total.item()) << '\t' << res.terms.term1 << '\t'
            << res.terms.term2 << '\t' << res.terms.term3 << '\t' << res.terms.term4 << '\t'
            << res.grad_norm << '\t' << res.t << '\t' << wall << '\n';
        log.flush();
      }
      if ((cfg_.train.checkpoint_every > 0 && step_ % cfg_.train.checkpoint_every == 0) ||
          step_ == cfg_.train.steps)
        last_ckpt = write_checkpoint_file();
    }
    return last_ckpt;
  }

 private:
  TrainBatch<T> next_batch(const StftTransform<T>& tf, std::size_t n_samples) {
    std::vector<std::vector<float>> clean, degraded;
    for (std::size_t b = 0; b < cfg_.train.batch; ++b) {
      const std::size_t idx = static_cast<std::size_t>(
          rng_.uniform() * static_cast<double>(manifest_.entries.size()));
      const auto& e = manifest_.entries[std::min(idx, manifest_.entries.size() - 1)];
      clean.push_back(load_clip(e.clean_path, n_samples, cfg_.sample_rate));
      degraded.push_back(load_clip(e.degraded_path, n_samples, cfg_.sample_rate));
    }
    TrainBatch<T> batch;
    batch.clean = spec_transform(tf.stft(waves_to_tensor<T>(clean)), cfg_.spec_transform);
    batch.degraded = spec_transform(tf.stft(waves_to_tensor<T>(degraded)), cfg_.spec_transform);
    return batch;
  }

  std::string write_checkpoint_file() {
    auto ck = make_checkpoint(mode_, *model_, cfg_.schedule, cfg_.n_fft, cfg_.hop,
                              cfg_.sample_rate, step_, rng_.save(), opt_.get(),
                              cfg_.complex_conv, cfg_.spec_transform);
    const std::string path =
        (std::filesystem::path(out_dir_) / ("checkpoint_" + std::to_string(step_) + ".sbmc"))
            .string();
    save_checkpoint(path, ck);
    const std::string latest = (std::filesystem::path(out_dir_) / "checkpoint_latest.sbmc").string();
    save_checkpoint(latest, ck);
    return path;
  }

  ExperimentConfig cfg_;
  std::string mode_;
  CorpusManifest manifest_;
  std::string out_dir_;
  RandomStream rng_;
  std::unique_ptr<Backbone<T>> model_;
  std::unique_ptr<AdamW<T>> opt_;
  std::size_t step_ = 0;
};

}  // namespace sbm
