#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include <sbm/random.hpp>
#include <sbm/data.hpp>
#include <sbm/metrics.hpp>
#include <sbm/signal.hpp>
#include <sbm/wav.hpp>

using namespace sbm;

TEST_CASE("synth_clean is deterministic and peak-normalized to 0.5") {
  for (auto kind : {CleanKind::harmonic_voice_surrogate, CleanKind::chirp,
                    CleanKind::noise_burst_sentence}) {
    auto w1 = synth_clean(kind, 1.0, 42);
    auto w2 = synth_clean(kind, 1.0, 42);
    CHECK(w1 == w2);
    float peak = 0.0f;
    for (float v : w1) peak = std::max(peak, std::abs(v));
    CHECK(std::abs(peak - 0.5f) < 1e-6f);
  }
  CHECK_THROWS_AS(synth_clean(CleanKind::chirp, 0.1, 1), ConfigError);
  CHECK_THROWS_AS(synth_clean(CleanKind::chirp, 11.0, 1), ConfigError);
}

TEST_CASE("harmonic surrogate has a speech-like spectral centroid below 2 kHz") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto w = synth_clean(CleanKind::harmonic_voice_surrogate, 2.0, seed);
    StftTransform<double> tf(512, 128);
    std::vector<double> x(w.begin(), w.end());
    const std::size_t n = x.size();
    auto s = tf.stft(Tensor64::from({1, n}, std::move(x)));
    auto m = magnitude(s);
    const std::size_t F = s.bins(), L = s.frames();
    double num = 0.0, den = 0.0;
    for (std::size_t b = 0; b < F; ++b) {
      const double freq = static_cast<double>(b) * 16000.0 / 512.0;
      for (std::size_t l = 0; l < L; ++l) {
        const double e = m.value()[b * L + l] * m.value()[b * L + l];
        num += freq * e;
        den += e;
      }
    }
    CHECK(num / den < 2000.0);
  }
}

TEST_CASE("synth_rir direct path, decay limit and schroeder t60 calibration") {
  auto h = synth_rir(0.3, 4096, 7);
  CHECK(h[0] == 1.0f);

  // t60 -> 0: energy concentrated at the very start.
  auto h0 = synth_rir(1e-3, 64, 7);
  double head = 0.0, total = 0.0;
  for (std::size_t i = 0; i < h0.size(); ++i) {
    const double e = static_cast<double>(h0[i]) * h0[i];
    total += e;
    if (i < 16) head += e;  // first millisecond at 16 kHz
  }
  CHECK(head / total >= 0.99);

  double mean_t60 = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    mean_t60 += schroeder_t60(synth_rir(0.3, 8192, seed), 16000.0);
  mean_t60 /= 20.0;
  CHECK(mean_t60 > 0.27);
  CHECK(mean_t60 < 0.33);

  CHECK_THROWS_AS(synth_rir(0.0, 64, 1), ConfigError);
}

TEST_CASE("degrade calibrates the snr exactly and is deterministic") {
  auto clean = synth_clean(CleanKind::harmonic_voice_surrogate, 1.0, 11);
  DegradationSpec spec;
  spec.snr_db_min = spec.snr_db_max = 0.0;
  spec.seed = 99;
  auto r1 = degrade(clean, spec);
  auto r2 = degrade(clean, spec);
  CHECK(r1.degraded == r2.degraded);
  CHECK(r1.snr_db == 0.0);

  // Measure P_sig / P_noise directly from the decomposition the generator used.
  spec.use_rir = true;
  auto rr = degrade(clean, spec);
  std::vector<float> noise(rr.degraded.size());
  // reconstruct reverberant part by re-running with a noise-free twin
  DegradationSpec silent = spec;
  silent.snr_db_min = silent.snr_db_max = 200.0;  // vanishing noise
  auto reverb_only = degrade(clean, silent);
  double p_sig = 0.0, p_noise = 0.0;
  for (std::size_t i = 0; i < noise.size(); ++i) {
    const double s = reverb_only.degraded[i] / reverb_only.scale;
    const double nz = rr.degraded[i] / rr.scale - s;
    p_sig += s * s;
    p_noise += nz * nz;
  }
  const double measured = 10.0 * std::log10(p_sig / p_noise);
  CHECK(std::abs(measured - 0.0) < 0.01);
}

TEST_CASE("vanishing noise: snr=100 with no rir leaves the signal intact") {
  auto clean = synth_clean(CleanKind::chirp, 1.0, 5);
  DegradationSpec spec;
  spec.use_rir = false;
  spec.snr_db_min = spec.snr_db_max = 100.0;
  spec.seed = 3;
  auto r = degrade(clean, spec);
  CHECK(si_sdr(clean, r.degraded) > 60.0);
}

TEST_CASE("si_sdr definition checks") {
  std::vector<float> ref = {0.3f, -0.1f, 0.7f, 0.2f, -0.5f, 0.05f};
  CHECK(si_sdr(ref, ref) == 100.0);
  std::vector<float> twice(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) twice[i] = 2.0f * ref[i];
  CHECK(si_sdr(ref, twice) == 100.0);  // scale invariance

  // orthogonal equal-power perturbation -> 0 dB
  std::vector<double> r = {1.0, 1.0, 1.0, 1.0};
  std::vector<double> est = {2.0, 0.0, 2.0, 0.0};  // r + (1,-1,1,-1), orthogonal, equal power
  CHECK(std::abs(si_sdr(r, est) - 0.0) < 0.01);

  CHECK_THROWS_AS(si_sdr(std::vector<float>{0, 0}, std::vector<float>{1, 1}), MetricError);
  CHECK_THROWS_AS(si_sdr(std::vector<float>{1}, std::vector<float>{1, 1}), DimensionError);
  CHECK_THROWS_AS(si_sdr(std::vector<float>{}, std::vector<float>{}), MetricError);
}

TEST_CASE("log_spectral_distance: zero, constant offset and 64-bit oracle") {
  auto w = synth_clean(CleanKind::harmonic_voice_surrogate, 1.0, 21);
  CHECK(log_spectral_distance(w, w) == 0.0);

  // Constant-offset example needs magnitudes well above the epsilon floor, so
  // use broadband noise rather than the sparse harmonic spectrum.
  RandomStream rng(77);
  std::vector<float> wn(16000);
  for (auto& v : wn) v = static_cast<float>(rng.normal());
  std::vector<float> twice(wn.size());
  for (std::size_t i = 0; i < wn.size(); ++i) twice[i] = 2.0f * wn[i];
  const double lsd2 = log_spectral_distance(wn, twice);
  CHECK(std::abs(lsd2 - 20.0 * std::log10(2.0)) < 0.05);

  // independent recomputation at 64-bit from the same spectra
  auto est = synth_clean(CleanKind::chirp, 1.0, 22);
  const double got = log_spectral_distance(w, est, 256, 64);
  StftTransform<double> tf(256, 64);
  auto to_t = [](const std::vector<float>& v) {
    std::vector<double> d(v.begin(), v.end());
    const std::size_t n = d.size();
    return Tensor64::from({1, n}, std::move(d));
  };
  auto mr = magnitude(tf.stft(to_t(w)));
  auto me = magnitude(tf.stft(to_t(est)));
  double acc = 0.0;
  for (std::size_t i = 0; i < mr.size(); ++i) {
    const double d = 20.0 * (std::log10(mr.value()[i] + 1e-8) - std::log10(me.value()[i] + 1e-8));
    acc += d * d;
  }
  const double want = std::sqrt(acc / static_cast<double>(mr.size()));
  CHECK(std::abs(got - want) / want < 1e-6);
}

TEST_CASE("metric ordering on a degraded pair") {
  auto clean = synth_clean(CleanKind::harmonic_voice_surrogate, 1.0, 31);
  DegradationSpec spec;
  spec.snr_db_min = spec.snr_db_max = 5.0;
  spec.seed = 8;
  auto r = degrade(clean, spec);
  CHECK(si_sdr(r.clean, r.degraded) < si_sdr(r.clean, r.clean));
  CHECK(log_spectral_distance(r.clean, r.degraded) > 0.0);
}

TEST_CASE("manifest round trip and missing-path detection") {
  namespace fs = std::filesystem;
  const fs::path dir = "/tmp/sbm_manifest_test";
  fs::create_directories(dir);
  WavData w;
  w.samples.assign(100, 0.25f);
  write_wav((dir / "c0.wav").string(), w);
  write_wav((dir / "d0.wav").string(), w);

  CorpusManifest m;
  m.split = "train";
  m.entries.push_back({(dir / "c0.wav").string(), (dir / "d0.wav").string(), 77, 3.25, 0.21});
  const std::string path = (dir / "manifest.tsv").string();
  write_manifest(path, m);
  auto back = read_manifest(path);
  REQUIRE(back.entries.size() == 1);
  CHECK(back.split == "train");
  CHECK(back.sample_rate == 16000);
  CHECK(back.entries[0].clean_path == m.entries[0].clean_path);
  CHECK(back.entries[0].seed == 77);
  CHECK(back.entries[0].snr_db == 3.25);
  CHECK(back.entries[0].t60 == 0.21);

  m.entries[0].degraded_path = (dir / "missing.wav").string();
  write_manifest(path, m);
  CHECK_THROWS_AS(read_manifest(path), DataError);
  CHECK_NOTHROW(read_manifest(path, false));
  fs::remove_all(dir);
}

TEST_CASE("build_corpus writes disjoint deterministic splits") {
  namespace fs = std::filesystem;
  const fs::path dir = "/tmp/sbm_corpus_test";
  fs::remove_all(dir);
  CorpusConfig cfg;
  cfg.n_train = 3;
  cfg.n_val = 2;
  cfg.n_test = 2;
  cfg.clip_seconds = 0.5;
  cfg.seed = 5;
  build_corpus(dir.string(), cfg);
  auto train = read_manifest((dir / "manifest_train.tsv").string());
  auto val = read_manifest((dir / "manifest_val.tsv").string());
  auto test = read_manifest((dir / "manifest_test.tsv").string());
  CHECK(train.entries.size() == 3);
  CHECK(val.entries.size() == 2);
  CHECK(test.entries.size() == 2);
  for (const auto& e : train.entries)
    for (const auto& f : test.entries) CHECK(e.clean_path != f.clean_path);

  // regeneration is byte-identical
  auto before = read_wav(train.entries[0].degraded_path);
  build_corpus(dir.string(), cfg);
  auto after = read_wav(train.entries[0].degraded_path);
  CHECK(before.samples == after.samples);
  fs::remove_all(dir);
}
