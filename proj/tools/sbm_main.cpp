// sbm: Schrodinger Bridge Mamba speech enhancement at desk scale.
//
// Subcommands: synth, train, enhance, eval, bench-rtf, selftest.
// Exit codes: 0 ok, 1 usage, 2 config, 3 data, 4 numerical failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <sbm/sbm.hpp>

namespace fs = std::filesystem;
using sbm::Tensor;

namespace {

sbm::ExperimentConfig load_or_default_config(const std::string& path) {
  if (path.empty()) {
    sbm::ExperimentConfig c;
    c.validate();
    return c;
  }
  return sbm::load_config(path);
}

void echo_config(const sbm::ExperimentConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream os(fs::path(out_dir) / "config_echo.ini");
  os << sbm::config_to_ini(cfg);
}

void write_wav_atomic(const std::string& path, const sbm::WavData& w) {
  const std::string tmp = path + ".tmp";
  sbm::write_wav(tmp, w);
  fs::rename(tmp, path);
}

// ------------------------------------------------------------------ synth

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
  auto cfg = load_or_default_config(config_path);
  echo_config(cfg, out_dir);
  auto manifests = sbm::build_corpus(out_dir, cfg.data);
  for (const auto& m : manifests)
    std::cout << "split " << m.split << ": " << m.entries.size() << " pairs\n";
  std::cout << "manifests written to " << out_dir << "\n";
  return 0;
}

// ------------------------------------------------------------------ train

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& mode, const std::string& out_dir, long steps_override,
              const std::string& resume_path) {
  auto cfg = load_or_default_config(config_path);
  if (steps_override >= 0) {
    cfg.train.steps = static_cast<std::size_t>(steps_override);
    if (cfg.optim.total_steps < cfg.train.steps || config_path.empty())
      cfg.optim.total_steps = std::max<std::size_t>(cfg.train.steps, 1);
  }
  echo_config(cfg, out_dir);
  auto manifest = sbm::read_manifest(manifest_path);
  sbm::Trainer<float> trainer(cfg, mode, manifest, out_dir);
  if (!resume_path.empty()) trainer.resume(resume_path);
  std::cout << "mode " << mode << ", parameters: " << trainer.model().param_count() << "\n";
  try {
    const std::string last = trainer.run();
    std::cout << "final checkpoint: " << last << "\n";
  } catch (const sbm::NumericalError& e) {
    std::cerr << "training aborted: " << e.what() << " (last-good checkpoint retained in "
              << out_dir << ")\n";
    throw;
  }
  return 0;
}

// ---------------------------------------------------------------- enhance

struct LoadedModel {
  sbm::CheckpointMeta meta;
  std::unique_ptr<sbm::Backbone<float>> model;
};

LoadedModel load_model(const std::string& checkpoint_path) {
  auto ck = sbm::load_checkpoint<float>(checkpoint_path);
  LoadedModel lm;
  lm.meta = ck.meta;
  sbm::RandomStream dummy(0);
  lm.model = std::make_unique<sbm::Backbone<float>>(ck.meta.backbone, dummy);
  sbm::apply_checkpoint(ck, *lm.model);
  return lm;
}

sbm::EnhanceMode parse_enhance_mode(const std::string& s) {
  if (s == "one-step") return sbm::EnhanceMode::one_step;
  if (s == "sde") return sbm::EnhanceMode::sde;
  if (s == "ode") return sbm::EnhanceMode::ode;
  throw sbm::ConfigError("enhance mode must be one-step, sde or ode, got '" + s + "'");
}

int cmd_enhance(const std::string& checkpoint_path, const std::string& in_wav,
                const std::string& out_wav, const std::string& manifest_path,
                const std::string& out_dir, const std::string& mode_s, std::size_t steps,
                std::uint64_t seed) {
  auto lm = load_model(checkpoint_path);
  const auto mode = parse_enhance_mode(mode_s);
  if (lm.meta.mode == "mamba-base" && (steps > 1 || mode != sbm::EnhanceMode::one_step))
    throw sbm::ContractError(
        "mamba-base checkpoints have no timestep conditioning; only --mode one-step --steps 1");

  auto enhance_one = [&](const std::string& in_path, const std::string& out_path) {
    sbm::WavData w = sbm::read_wav(in_path);
    if (w.sample_rate != lm.meta.sample_rate)
      throw sbm::InputError("sample rate mismatch: input " + std::to_string(w.sample_rate) +
                            " Hz, model " + std::to_string(lm.meta.sample_rate) + " Hz");
    sbm::RandomStream rng(seed);
    auto res = sbm::enhance_waveform(*lm.model, w.samples, lm.meta.n_fft, lm.meta.hop,
                                     lm.meta.sample_rate, lm.meta.schedule, mode, steps, rng,
                                     lm.meta.complex_conv, lm.meta.spec_transform);
    write_wav_atomic(out_path, {lm.meta.sample_rate, res.wav});
    std::cout << "NFE: " << res.nfe << "\n";
  };

  if (!in_wav.empty()) {
    enhance_one(in_wav, out_wav);
  } else {
    auto manifest = sbm::read_manifest(manifest_path);
    fs::create_directories(out_dir);
    for (const auto& e : manifest.entries) {
      const std::string out_path =
          (fs::path(out_dir) / fs::path(e.degraded_path).filename()).string();
      enhance_one(e.degraded_path, out_path);
    }
  }
  return 0;
}

// ------------------------------------------------------------------- eval

int cmd_eval(const std::string& manifest_path, const std::string& enhanced_dir,
             const std::string& report_path) {
  auto manifest = sbm::read_manifest(manifest_path);
  std::vector<std::string> missing;
  struct Row {
    std::string name;
    double si_sdr, si_sdr_in, lsd;
  };
  std::vector<Row> rows;
  for (const auto& e : manifest.entries) {
    const std::string name = fs::path(e.degraded_path).filename().string();
    const std::string enhanced_path = (fs::path(enhanced_dir) / name).string();
    if (!fs::exists(enhanced_path)) {
      missing.push_back(enhanced_path);
      continue;
    }
    auto clean = sbm::read_wav(e.clean_path).samples;
    auto degraded = sbm::read_wav(e.degraded_path).samples;
    auto enhanced = sbm::read_wav(enhanced_path).samples;
    const std::size_t n = std::min({clean.size(), degraded.size(), enhanced.size()});
    clean.resize(n);
    degraded.resize(n);
    enhanced.resize(n);
    rows.push_back({name, sbm::si_sdr(clean, enhanced), sbm::si_sdr(clean, degraded),
                    sbm::log_spectral_distance(clean, enhanced)});
  }

  std::ostringstream rep;
  rep << "file\tsi_sdr_enhanced_db\tsi_sdr_degraded_db\tsi_sdr_improvement_db\tlsd_db\n";
  double sum_e = 0, sum_i = 0, sum_l = 0;
  for (const auto& r : rows) {
    rep << r.name << '\t' << r.si_sdr << '\t' << r.si_sdr_in << '\t' << (r.si_sdr - r.si_sdr_in)
        << '\t' << r.lsd << '\n';
    sum_e += r.si_sdr;
    sum_i += r.si_sdr_in;
    sum_l += r.lsd;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    rep << "MEAN\t" << sum_e / n << '\t' << sum_i / n << '\t' << (sum_e - sum_i) / n << '\t'
        << sum_l / n << '\n';
  }
  std::cout << rep.str();
  for (const auto& m : missing) std::cout << "missing: " << m << "\n";
  if (!report_path.empty()) {
    std::ofstream os(report_path);
    os << rep.str();
    for (const auto& m : missing) os << "# missing: " << m << "\n";
  }
  return 0;
}

// -------------------------------------------------------------- bench-rtf

int cmd_bench_rtf(const std::string& checkpoint_path, std::size_t n_clips, double clip_s,
                  std::size_t steps, std::uint64_t seed) {
  auto lm = load_model(checkpoint_path);
  const auto mode = steps <= 1 ? sbm::EnhanceMode::one_step : sbm::EnhanceMode::ode;
  if (lm.meta.mode == "mamba-base" && steps > 1)
    throw sbm::ContractError("mamba-base checkpoints support only steps = 1");
  sbm::RandomStream rng(seed);
  std::vector<double> rtfs;
  std::size_t nfe = 0;
  const std::size_t warmup = 2;
  for (std::size_t i = 0; i < n_clips + warmup; ++i) {
    auto clip = sbm::synth_clean(sbm::CleanKind::noise_burst_sentence, clip_s, rng.raw());
    sbm::RandomStream erng(rng.raw());
    const auto t0 = std::chrono::steady_clock::now();
    auto res = sbm::enhance_waveform(*lm.model, clip, lm.meta.n_fft, lm.meta.hop,
                                     lm.meta.sample_rate, lm.meta.schedule, mode, steps, erng,
                                     lm.meta.complex_conv, lm.meta.spec_transform);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nfe = res.nfe;
    if (i >= warmup) rtfs.push_back(wall / clip_s);
  }
  const double mean = std::accumulate(rtfs.begin(), rtfs.end(), 0.0) / rtfs.size();
  double var = 0;
  for (double r : rtfs) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / rtfs.size());
  std::cout << "NFE: " << nfe << "\n";
  std::cout << "RTF: " << mean << " +/- " << sd << " (n=" << rtfs.size() << ", clip=" << clip_s
            << "s)\n";
  return 0;
}

// --------------------------------------------------------------- selftest

int cmd_selftest() {
  int failures = 0;
  auto check = [&](bool ok, const std::string& name) {
    std::cout << (ok ? "ok" : "FAIL") << " - " << name << "\n";
    if (!ok) ++failures;
  };

  sbm::BridgeSchedule sched;
  {
    auto m0 = sbm::marginal_coeffs(sched, 0.0);
    auto mT = sbm::marginal_coeffs(sched, sched.T);
    check(m0.w_x == 1.0 && m0.w_y == 0.0 && m0.sigma_x == 0.0, "bridge boundary at t=0");
    check(mT.w_x == 0.0 && mT.w_y == 1.0 && mT.sigma_x == 0.0, "bridge boundary at t=T");
    bool sum_ok = true;
    for (int i = 0; i <= 64; ++i) {
      auto m = sbm::marginal_coeffs(sched, sched.T * i / 64.0);
      if (std::abs(m.w_x + m.w_y - 1.0) > 1e-12) sum_ok = false;
    }
    check(sum_ok, "marginal weights sum to 1");
  }
  {
    sbm::RandomStream rng(7);
    bool ok = true;
    for (int rep = 0; rep < 5 && ok; ++rep) {
      const std::size_t lanes = 2, L = 37, D = 3, N = 4;
      sbm::SSMParams<double> p;
      p.a = sbm::Tensor64::uniform({N}, rng, -1.0, -0.1);
      p.delta = sbm::Tensor64::uniform({lanes, L, D}, rng, 0.05, 0.5);
      p.b = sbm::Tensor64::randn({lanes, L, N}, rng);
      p.c_out = sbm::Tensor64::randn({lanes, L, N}, rng);
      p.d_skip = sbm::Tensor64::randn({D}, rng);
      auto u = sbm::Tensor64::randn({lanes, L, D}, rng);
      auto ys = sbm::scan_sequential(u, p);
      auto yp = sbm::scan_parallel(u, p);
      for (std::size_t i = 0; i < ys.size(); ++i)
        if (std::abs(ys.value()[i] - yp.value()[i]) >
            1e-10 * std::max(1.0, std::abs(ys.value()[i])))
          ok = false;
    }
    check(ok, "parallel scan equals sequential scan");
  }
  {
    sbm::RandomStream rng(11);
    sbm::StftTransform<double> tf(256, 64);
    auto w = sbm::Tensor64::randn({2, 1000}, rng);
    auto rec = tf.istft(tf.stft(w), 1000);
    double err = 0, ref = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      err += (rec.value()[i] - w.value()[i]) * (rec.value()[i] - w.value()[i]);
      ref += w.value()[i] * w.value()[i];
    }
    check(std::sqrt(err / ref) < 1e-6, "stft/istft round-trip");
  }
  {
    sbm::RandomStream rng(13);
    auto a = sbm::Tensor64::randn({3, 4}, rng).set_requires_grad(true);
    std::vector<sbm::Tensor64> params = {a};
    auto rep = sbm::check_gradients<double>(
        [](const std::vector<sbm::Tensor64>& p) {
          return sbm::sum_all(sbm::silu(p[0] * p[0]) + sbm::exp(p[0] * 0.1));
        },
        params, 1e-6);
    check(rep.ok, "gradient check on composite op");
  }
  {
    auto run_once = []() {
      sbm::RandomStream rng(99);
      sbm::BackboneConfig bc;
      bc.n_blocks = 1;
      bc.d_model = 8;
      bc.d_state = 4;
      bc.fourier_dim = 8;
      bc.freq_factor = 2;
      bc.time_factor = 2;
      sbm::Backbone<float> model(bc, rng);
      sbm::StftTransform<float> tf(64, 16);
      auto w = Tensor::randn({1, 400}, rng);
      auto out = model.forward(tf.stft(w), 0.5);
      double h = 0;
      for (float v : out.planes.value()) h += static_cast<double>(v);
      return h;
    };
    check(run_once() == run_once(), "deterministic forward under fixed seed");
  }

  std::cout << (failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
  if (failures) throw sbm::NumericalError("selftest failures: " + std::to_string(failures));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Schrodinger Bridge Mamba speech enhancement"};
  app.require_subcommand(1);

  std::string config_path, out_dir, manifest_path, mode = "sbm", checkpoint_path;
  std::string in_wav, out_wav, enhanced_dir, report_path, enhance_mode = "one-step", resume_path;
  long steps_override = -1;
  std::size_t steps = 1, n_clips = 10;
  double clip_s = 10.0;
  std::uint64_t seed = 0;

  auto* synth = app.add_subcommand("synth", "Synthesize the paired toy corpus");
  synth->add_option("--config", config_path, "Config file (INI)");
  synth->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Config file (INI)");
  train->add_option("--manifest", manifest_path, "Training manifest")->required();
  train->add_option("--mode", mode, "sbm | mamba-base")->check(CLI::IsMember({"sbm", "mamba-base"}));
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--steps", steps_override, "Override training step count");
  train->add_option("--resume", resume_path, "Resume from checkpoint");

  auto* enhance = app.add_subcommand("enhance", "Enhance degraded audio");
  enhance->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  enhance->add_option("--in", in_wav, "Input WAV (single-file mode)");
  enhance->add_option("--out", out_wav, "Output WAV (single-file mode)");
  enhance->add_option("--manifest", manifest_path, "Manifest (batch mode)");
  enhance->add_option("--out-dir", enhanced_dir, "Output directory (batch mode)");
  enhance->add_option("--mode", enhance_mode, "one-step | sde | ode");
  enhance->add_option("--steps", steps, "Sampling steps");
  enhance->add_option("--seed", seed, "Random seed");

  auto* eval = app.add_subcommand("eval", "Evaluate enhanced files against a manifest");
  eval->add_option("--manifest", manifest_path, "Manifest")->required();
  eval->add_option("--enhanced-dir", enhanced_dir, "Directory of enhanced WAVs")->required();
  eval->add_option("--report", report_path, "Write the report to this file");

  auto* bench = app.add_subcommand("bench-rtf", "Benchmark the real-time factor");
  bench->add_option("--checkpoint", checkpoint_path, "Model checkpoint")->required();
  bench->add_option("--clips", n_clips, "Number of clips");
  bench->add_option("--clip-seconds", clip_s, "Clip duration");
  bench->add_option("--steps", steps, "Sampling steps");
  bench->add_option("--seed", seed, "Random seed");

  app.add_subcommand("selftest", "Run built-in oracle checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("synth")) return cmd_synth(config_path, out_dir);
    if (app.got_subcommand("train"))
      return cmd_train(config_path, manifest_path, mode, out_dir, steps_override, resume_path);
    if (app.got_subcommand("enhance")) {
      if (in_wav.empty() == manifest_path.empty())
        throw sbm::ConfigError("enhance needs either --in/--out or --manifest/--out-dir");
      if (!in_wav.empty() && out_wav.empty())
        throw sbm::ConfigError("enhance --in requires --out");
      if (!manifest_path.empty() && enhanced_dir.empty())
        throw sbm::ConfigError("enhance --manifest requires --out-dir");
      return cmd_enhance(checkpoint_path, in_wav, out_wav, manifest_path, enhanced_dir,
                         enhance_mode, steps, seed);
    }
    if (app.got_subcommand("eval")) return cmd_eval(manifest_path, enhanced_dir, report_path);
    if (app.got_subcommand("bench-rtf"))
      return cmd_bench_rtf(checkpoint_path, n_clips, clip_s, steps, seed);
    if (app.got_subcommand("selftest")) return cmd_selftest();
  } catch (const sbm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const sbm::ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const sbm::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const sbm::InputError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
