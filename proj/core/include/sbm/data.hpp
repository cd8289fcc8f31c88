#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sbm/common.hpp"
#include "sbm/metrics.hpp"
#include "sbm/random.hpp"
#include "sbm/wav.hpp"

namespace sbm {

constexpr std::size_t kSampleRate = 16000;

enum class CleanKind { harmonic_voice_surrogate, chirp, noise_burst_sentence };
enum class NoiseKind { white, pink, babble_surrogate };

inline std::string to_string(CleanKind k) {
  switch (k) {
    case CleanKind::harmonic_voice_surrogate: return "harmonic-voice-surrogate";
    case CleanKind::chirp: return "chirp";
    default: return "noise-burst-sentence";
  }
}

inline CleanKind clean_kind_from_string(const std::string& s) {
  if (s == "harmonic-voice-surrogate") return CleanKind::harmonic_voice_surrogate;
  if (s == "chirp") return CleanKind::chirp;
  if (s == "noise-burst-sentence") return CleanKind::noise_burst_sentence;
  throw ConfigError("unknown clean kind: " + s);
}

inline std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::white: return "white";
    case NoiseKind::pink: return "pink";
    default: return "babble-surrogate";
  }
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "white") return NoiseKind::white;
  if (s == "pink") return NoiseKind::pink;
  if (s == "babble-surrogate") return NoiseKind::babble_surrogate;
  throw ConfigError("unknown noise kind: " + s);
}

namespace detail {

inline void peak_normalize(std::vector<float>& w, float peak) {
  float mx = 0.0f;
  for (float v : w) mx = std::max(mx, std::abs(v));
  if (mx > 0.0f)
    for (float& v : w) v *= peak / mx;
}

// Smooth syllable-like amplitude envelope: sum of raised-cosine bursts.
inline std::vector<float> syllable_envelope(std::size_t n, RandomStream& rng) {
  std::vector<float> env(n, 0.0f);
  const double rate = rng.uniform(2.5, 4.0);  // bursts per second
  double t0 = rng.uniform(0.0, 0.1);
  while (t0 * kSampleRate < static_cast<double>(n)) {
    const double dur = rng.uniform(0.12, 0.3);
    const double amp = rng.uniform(0.4, 1.0);
    const std::size_t a = static_cast<std::size_t>(t0 * kSampleRate);
    const std::size_t b = std::min(n, a + static_cast<std::size_t>(dur * kSampleRate));
    for (std::size_t i = a; i < b; ++i) {
      const double ph = static_cast<double>(i - a) / static_cast<double>(b - a);
      env[i] += static_cast<float>(amp * 0.5 * (1.0 - std::cos(2.0 * 3.14159265358979 * ph)));
    }
    t0 += 1.0 / rate + rng.uniform(-0.05, 0.05);
  }
  return env;
}

}  // namespace detail

// Deterministic clean-signal surrogate at 16 kHz, peak-normalized to 0.5.
inline std::vector<float> synth_clean(CleanKind kind, double dur_s, std::uint64_t seed) {
  if (dur_s < 0.5 || dur_s > 10.0) throw ConfigError("synth_clean: dur_s must be in [0.5, 10]");
  RandomStream rng(seed);
  const std::size_t n = static_cast<std::size_t>(dur_s * kSampleRate);
  std::vector<float> w(n, 0.0f);
  const double two_pi = 6.28318530717958647692;
  if (kind == CleanKind::harmonic_voice_surrogate) {
    // Pitch-modulated harmonic stack with -6 dB/oct amplitude slope and a
    // syllable-like envelope; spectral centroid stays well below 2 kHz.
    const double f0_base = rng.uniform(90.0, 200.0);
    const double vib_rate = rng.uniform(4.0, 7.0);
    const double vib_depth = rng.uniform(0.01, 0.04);
    const double drift = rng.uniform(-0.2, 0.2);
    auto env = detail::syllable_envelope(n, rng);
    double phase_f0 = rng.uniform(0.0, two_pi);
    const std::size_t n_harm = static_cast<std::size_t>(4000.0 / f0_base);
    std::vector<double> hphase(n_harm);
    for (auto& p : hphase) p = rng.uniform(0.0, two_pi);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / kSampleRate;
      const double f0 = f0_base * (1.0 + drift * t / dur_s) *
                        (1.0 + vib_depth * std::sin(two_pi * vib_rate * t));
      phase_f0 += two_pi * f0 / kSampleRate;
      double s = 0.0;
      for (std::size_t h = 1; h <= n_harm; ++h)
        s += std::sin(static_cast<double>(h) * phase_f0 + hphase[h - 1]) /
             static_cast<double>(h);
      w[i] = static_cast<float>(s) * env[i];
    }
  } else if (kind == CleanKind::chirp) {
    // Logarithmic sweep 100 -> 4000 Hz with a slow tremolo envelope.
    const double f_lo = rng.uniform(80.0, 150.0), f_hi = rng.uniform(2500.0, 4000.0);
    const double trem = rng.uniform(1.0, 3.0);
    const double ph0 = rng.uniform(0.0, two_pi);
    double phase = ph0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / kSampleRate;
      const double f = f_lo * std::pow(f_hi / f_lo, t / dur_s);
      phase += two_pi * f / kSampleRate;
      const double env = 0.6 + 0.4 * std::sin(two_pi * trem * t);
      w[i] = static_cast<float>(std::sin(phase) * env);
    }
  } else {
    // Sequence of lowpassed noise bursts separated by gaps.
    auto env = detail::syllable_envelope(n, rng);
    double state = 0.0;
    const double a = 0.92;  // one-pole lowpass, cutoff ~ a few hundred Hz
    for (std::size_t i = 0; i < n; ++i) {
      state = a * state + (1.0 - a) * rng.normal();
      w[i] = static_cast<float>(state * 8.0) * env[i];
    }
  }
  detail::peak_normalize(w, 0.5f);
  return w;
}

// Exponentially decaying noise tail with a unit direct path at index 0; the
// tail's energy-decay slope reaches -60 dB at t60. The direct-to-reverberant
// energy ratio is fixed at +8 dB (close-microphone conditions).
inline std::vector<float> synth_rir(double t60_s, std::size_t length, std::uint64_t seed) {
  if (t60_s <= 0.0) throw ConfigError("synth_rir: t60 must be positive");
  if (length < 2) throw ConfigError("synth_rir: length must be >= 2");
  RandomStream rng(seed);
  std::vector<float> h(length, 0.0f);
  h[0] = 1.0f;
  const double decay = 3.0 * std::log(10.0) / t60_s;  // amplitude e-folding for -60 dB at t60
  double tail_energy = 0.0;
  for (std::size_t i = 1; i < length; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    h[i] = static_cast<float>(rng.normal() * std::exp(-decay * t));
    tail_energy += static_cast<double>(h[i]) * static_cast<double>(h[i]);
  }
  if (tail_energy > 0.0) {
    const float g = static_cast<float>(std::sqrt(0.16 / tail_energy));
    for (std::size_t i = 1; i < length; ++i) h[i] *= g;
  }
  return h;
}

inline std::vector<float> synth_noise(NoiseKind kind, std::size_t n, RandomStream& rng) {
  std::vector<float> w(n, 0.0f);
  const double two_pi = 6.28318530717958647692;
  if (kind == NoiseKind::white) {
    for (auto& v : w) v = static_cast<float>(rng.normal());
  } else if (kind == NoiseKind::pink) {
    // Paul Kellet's economy pink-noise filter.
    double b0 = 0, b1 = 0, b2 = 0;
    for (auto& v : w) {
      const double white = rng.normal();
      b0 = 0.99765 * b0 + white * 0.0990460;
      b1 = 0.96300 * b1 + white * 0.2965164;
      b2 = 0.57000 * b2 + white * 1.0526913;
      v = static_cast<float>(b0 + b1 + b2 + white * 0.1848);
    }
  } else {
    // Babble surrogate: sum of tonal voices with drifting pitch plus
    // modulated noise floors.
    const std::size_t k = 6;
    for (std::size_t s = 0; s < k; ++s) {
      double f = rng.uniform(120.0, 400.0);
      const double drate = rng.uniform(0.5, 2.0);
      const double ddepth = rng.uniform(0.05, 0.2);
      const double mrate = rng.uniform(2.0, 6.0);
      const double ph0 = rng.uniform(0.0, two_pi);
      const double mph = rng.uniform(0.0, two_pi);
      double phase = ph0;
      double lp = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / kSampleRate;
        const double fi = f * (1.0 + ddepth * std::sin(two_pi * drate * t));
        phase += two_pi * fi / kSampleRate;
        const double mod = 0.5 * (1.0 + std::sin(two_pi * mrate * t + mph));
        lp = 0.9 * lp + 0.1 * rng.normal();
        w[i] += static_cast<float>(mod * (std::sin(phase) + 1.5 * lp));
      }
    }
  }
  return w;
}

struct DegradationSpec {
  double snr_db_min = -10.0;
  double snr_db_max = 20.0;
  bool use_rir = true;
  double t60_min = 0.1;
  double t60_max = 0.6;
  std::size_t rir_length = 4096;
  NoiseKind noise = NoiseKind::white;
  std::uint64_t seed = 0;

  void validate() const {
    if (snr_db_min > snr_db_max) throw ConfigError("degrade: snr range inverted");
    if (use_rir && (t60_min <= 0 || t60_min > t60_max))
      throw ConfigError("degrade: invalid t60 range");
  }
};

struct DegradeResult {
  std::vector<float> clean;  // possibly jointly rescaled with degraded
  std::vector<float> degraded;
  double snr_db = 0.0;
  double t60 = 0.0;
  double scale = 1.0;  // joint rescale factor applied to both signals
};

// degraded = conv(clean, rir) + noise scaled to the drawn SNR (measured
// against the reverberant signal). If the mixture clips, the clean/degraded
// pair is rescaled jointly so their relationship is preserved.
inline DegradeResult degrade(const std::vector<float>& clean, const DegradationSpec& spec) {
  spec.validate();
  RandomStream rng(spec.seed);
  DegradeResult out;
  out.clean = clean;
  out.snr_db = rng.uniform(spec.snr_db_min, spec.snr_db_max);

  std::vector<float> reverb = clean;
  if (spec.use_rir) {
    out.t60 = rng.uniform(spec.t60_min, spec.t60_max);
    auto rir = synth_rir(out.t60, spec.rir_length, rng.raw());
    reverb.assign(clean.size(), 0.0f);
    for (std::size_t i = 0; i < clean.size(); ++i) {
      double acc = 0.0;
      const std::size_t kmax = std::min(i + 1, rir.size());
      for (std::size_t k = 0; k < kmax; ++k)
        acc += static_cast<double>(clean[i - k]) * static_cast<double>(rir[k]);
      reverb[i] = static_cast<float>(acc);
    }
  }

  auto noise = synth_noise(spec.noise, clean.size(), rng);
  double p_sig = 0.0, p_noise = 0.0;
  for (float v : reverb) p_sig += static_cast<double>(v) * static_cast<double>(v);
  for (float v : noise) p_noise += static_cast<double>(v) * static_cast<double>(v);
  double g = 0.0;
  if (p_noise > 0.0 && p_sig > 0.0)
    g = std::sqrt(p_sig / (p_noise * std::pow(10.0, out.snr_db / 10.0)));
  out.degraded.resize(clean.size());
  float peak = 0.0f;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    out.degraded[i] = reverb[i] + static_cast<float>(g) * noise[i];
    peak = std::max(peak, std::abs(out.degraded[i]));
  }
  if (peak > 1.0f) {
    out.scale = 1.0 / static_cast<double>(peak);
    for (auto& v : out.degraded) v = static_cast<float>(v * out.scale);
    for (auto& v : out.clean) v = static_cast<float>(v * out.scale);
  }
  return out;
}

struct ManifestEntry {
  std::string clean_path;
  std::string degraded_path;
  std::uint64_t seed = 0;
  double snr_db = 0.0;
  double t60 = 0.0;
};

struct CorpusManifest {
  std::size_t sample_rate = kSampleRate;
  std::string split;  // train | val | test
  std::vector<ManifestEntry> entries;
};

inline void write_manifest(const std::string& path, const CorpusManifest& m) {
  std::ofstream os(path);
  if (!os) throw DataError("manifest: cannot write " + path);
  os << "# corpus manifest: clean_path<TAB>degraded_path<TAB>seed<TAB>snr_db<TAB>t60\n";
  os << "# sample_rate=" << m.sample_rate << " split=" << m.split << "\n";
  os.precision(17);
  for (const auto& e : m.entries)
    os << e.clean_path << '\t' << e.degraded_path << '\t' << e.seed << '\t' << e.snr_db << '\t'
       << e.t60 << '\n';
  if (!os) throw DataError("manifest: write failed: " + path);
}

inline CorpusManifest read_manifest(const std::string& path, bool check_paths = true) {
  std::ifstream is(path);
  if (!is) throw DataError("manifest: cannot open " + path);
  CorpusManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string tok;
      while (hs >> tok) {
        if (tok.rfind("sample_rate=", 0) == 0) m.sample_rate = std::stoul(tok.substr(12));
        if (tok.rfind("split=", 0) == 0) m.split = tok.substr(6);
      }
      continue;
    }
    std::istringstream ls(line);
    ManifestEntry e;
    std::string seed_s, snr_s, t60_s;
    if (!std::getline(ls, e.clean_path, '\t') || !std::getline(ls, e.degraded_path, '\t') ||
        !std::getline(ls, seed_s, '\t') || !std::getline(ls, snr_s, '\t') ||
        !std::getline(ls, t60_s))
      throw DataError("manifest: malformed line " + std::to_string(lineno) + " in " + path);
    e.seed = std::stoull(seed_s);
    e.snr_db = std::stod(snr_s);
    e.t60 = std::stod(t60_s);
    if (check_paths) {
      if (!std::filesystem::exists(e.clean_path))
        throw DataError("manifest: missing file " + e.clean_path);
      if (!std::filesystem::exists(e.degraded_path))
        throw DataError("manifest: missing file " + e.degraded_path);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

struct CorpusConfig {
  std::size_t n_train = 200;
  std::size_t n_val = 10;
  std::size_t n_test = 20;
  double clip_seconds = 2.0;
  DegradationSpec degradation;
  std::uint64_t seed = 1234;
};

// Deterministic paired corpus: WAVs plus one manifest per split. Entry seeds
// derive from (corpus seed, split, index), so any entry regenerates
// bit-exactly in isolation.
inline std::vector<CorpusManifest> build_corpus(const std::string& out_dir,
                                                const CorpusConfig& cfg) {
  cfg.degradation.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::vector<std::pair<std::string, std::size_t>> splits = {
      {"train", cfg.n_train}, {"val", cfg.n_val}, {"test", cfg.n_test}};
  const CleanKind kinds[] = {CleanKind::harmonic_voice_surrogate, CleanKind::chirp,
                             CleanKind::noise_burst_sentence};
  std::vector<CorpusManifest> manifests;
  for (std::size_t si = 0; si < splits.size(); ++si) {
    const auto& [split, count] = splits[si];
    fs::create_directories(fs::path(out_dir) / split);
    CorpusManifest m;
    m.split = split;
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t seed =
          RandomStream::derive(cfg.seed, (si + 1) * 1000003ULL + i);
      auto clean = synth_clean(kinds[seed % 3], cfg.clip_seconds, seed);
      DegradationSpec dspec = cfg.degradation;
      dspec.seed = RandomStream::derive(seed, 1);
      auto res = degrade(clean, dspec);
      ManifestEntry e;
      e.seed = seed;
      e.snr_db = res.snr_db;
      e.t60 = res.t60;
      e.clean_path = (fs::path(out_dir) / split / ("clean_" + std::to_string(i) + ".wav")).string();
      e.degraded_path =
          (fs::path(out_dir) / split / ("degraded_" + std::to_string(i) + ".wav")).string();
      write_wav(e.clean_path, {kSampleRate, res.clean});
      write_wav(e.degraded_path, {kSampleRate, res.degraded});
      m.entries.push_back(std::move(e));
    }
    write_manifest((fs::path(out_dir) / ("manifest_" + split + ".tsv")).string(), m);
    manifests.push_back(std::move(m));
  }
  return manifests;
}

}  // namespace sbm
