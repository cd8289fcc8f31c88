#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sbm/backbone.hpp"
#include "sbm/bridge.hpp"
#include "sbm/data.hpp"
#include "sbm/loss.hpp"
#include "sbm/optim.hpp"
#include "sbm/signal.hpp"
#include "sbm/ssm.hpp"

namespace sbm {

// Minimal "[section] / key = value" file with exact line diagnostics.
class IniFile {
 public:
  struct Item {
    std::string value;
    std::size_t line = 0;
    mutable bool consumed = false;
  };

  static IniFile parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path);
  }

  static IniFile parse(const std::string& text, const std::string& origin = "<string>") {
    IniFile f;
    f.origin_ = origin;
    std::istringstream is(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (f.items_.count(full))
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + full +
                          "' (first at line " + std::to_string(f.items_[full].line) + ")");
      f.items_[full] = Item{value, lineno, false};
    }
    return f;
  }

  bool has(const std::string& key) const { return items_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = items_.find(key);
    if (it == items_.end()) return fallback;
    it->second.consumed = true;
    return it->second.value;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = items_.find(key);
    if (it == items_.end()) return fallback;
    it->second.consumed = true;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(it) + ": '" + key + "' expects a number, got '" + it->second.value +
                        "'");
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto it = items_.find(key);
    if (it == items_.end()) return fallback;
    it->second.consumed = true;
    try {
      std::size_t pos = 0;
      const std::int64_t v = std::stoll(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(where(it) + ": '" + key + "' expects an integer, got '" + it->second.value +
                        "'");
    }
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
    auto it = items_.find(key);
    if (v < 0) throw ConfigError(where(it) + ": '" + key + "' must be nonnegative");
    return static_cast<std::size_t>(v);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = items_.find(key);
    if (it == items_.end()) return fallback;
    it->second.consumed = true;
    const std::string& v = it->second.value;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(where(it) + ": '" + key + "' expects true/false, got '" + v + "'");
  }

  // After all known keys are read, any untouched key is a schema error.
  void check_fully_consumed() const {
    for (const auto& [key, item] : items_)
      if (!item.consumed)
        throw ConfigError(origin_ + ":" + std::to_string(item.line) + ": unknown key '" + key +
                          "'");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
  std::string where(std::map<std::string, Item>::const_iterator it) const {
    return origin_ + ":" + std::to_string(it->second.line);
  }

  std::string origin_;
  std::map<std::string, Item> items_;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 4;
  std::size_t checkpoint_every = 200;
  std::size_t log_every = 10;
  double grad_clip = 5.0;
  std::uint64_t seed = 1234;
};

// Full declarative experiment description: schedule, backbone, loss,
// optimizer, data synthesis, signal geometry, sampler and training loop.
struct ExperimentConfig {
  BridgeSchedule schedule;
  BackboneConfig backbone;
  LossWeights loss;
  OptimConfig optim;
  CorpusConfig data;
  TrainConfig train;

  std::size_t n_fft = 512;
  std::size_t hop = 128;
  std::size_t sample_rate = 16000;
  ComplexConvention complex_conv = ComplexConvention::split;
  SpecTransformMode spec_transform = SpecTransformMode::none;

  SampleMode sample_mode = SampleMode::sde;
  std::size_t sample_steps = 1;

  void validate() const {
    schedule.validate();
    backbone.validate();
    loss.validate();
    optim.validate();
    data.degradation.validate();
    if (hop != n_fft / 2 && hop != n_fft / 4)
      throw ConfigError("signal: hop must be n_fft/2 or n_fft/4 (COLA)");
    if (sample_rate == 0) throw ConfigError("signal: sample_rate must be positive");
    if (train.batch == 0) throw ConfigError("train: batch must be positive");
    if (sample_steps == 0) throw ConfigError("sampler: steps must be >= 1");
  }
};

inline ExperimentConfig config_from_ini(const IniFile& f) {
  ExperimentConfig c;
  c.schedule.kind = f.get_string("schedule.kind", c.schedule.kind);
  c.schedule.c = f.get_double("schedule.c", c.schedule.c);
  c.schedule.k = f.get_double("schedule.k", c.schedule.k);
  c.schedule.T = f.get_double("schedule.T", c.schedule.T);
  c.schedule.t_eps = f.get_double("schedule.t_eps", c.schedule.t_eps);

  c.backbone.n_blocks = f.get_size("backbone.n_blocks", c.backbone.n_blocks);
  c.backbone.d_model = f.get_size("backbone.d_model", c.backbone.d_model);
  c.backbone.d_state = f.get_size("backbone.d_state", c.backbone.d_state);
  c.backbone.freq_factor = f.get_size("backbone.freq_factor", c.backbone.freq_factor);
  c.backbone.time_factor = f.get_size("backbone.time_factor", c.backbone.time_factor);
  c.backbone.time_causal = f.get_bool("backbone.time_causal", c.backbone.time_causal);
  c.backbone.fourier_dim = f.get_size("backbone.fourier_dim", c.backbone.fourier_dim);
  c.backbone.fourier_scale = f.get_double("backbone.fourier_scale", c.backbone.fourier_scale);
  c.backbone.expand = f.get_size("backbone.expand", c.backbone.expand);
  c.backbone.conv_kernel = f.get_size("backbone.conv_kernel", c.backbone.conv_kernel);
  c.backbone.zero_init_out_proj =
      f.get_bool("backbone.zero_init_out_proj", c.backbone.zero_init_out_proj);
  c.backbone.train_fourier_freqs =
      f.get_bool("backbone.train_fourier_freqs", c.backbone.train_fourier_freqs);
  {
    const std::string s = f.get_string("backbone.scan_impl", "sequential");
    if (s == "sequential")
      c.backbone.scan_impl = ScanImpl::sequential;
    else if (s == "parallel")
      c.backbone.scan_impl = ScanImpl::parallel;
    else
      throw ConfigError("backbone.scan_impl must be 'sequential' or 'parallel', got '" + s + "'");
  }

  c.loss.lambda1 = f.get_double("loss.lambda1", c.loss.lambda1);
  c.loss.lambda2 = f.get_double("loss.lambda2", c.loss.lambda2);
  c.loss.lambda3 = f.get_double("loss.lambda3", c.loss.lambda3);
  c.loss.lambda4 = f.get_double("loss.lambda4", c.loss.lambda4);
  {
    // e.g. mr_resolutions = 128:32, 256:64, 512:128
    std::string s = f.get_string("loss.mr_resolutions", "");
    if (!s.empty()) {
      c.loss.mr_resolutions.clear();
      std::istringstream is(s);
      std::string tok;
      while (std::getline(is, tok, ',')) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos)
          throw ConfigError("loss.mr_resolutions entries must be n_fft:hop, got '" + tok + "'");
        c.loss.mr_resolutions.emplace_back(std::stoul(tok.substr(0, colon)),
                                           std::stoul(tok.substr(colon + 1)));
      }
    }
  }

  c.optim.lr_base = f.get_double("optim.lr_base", c.optim.lr_base);
  c.optim.beta1 = f.get_double("optim.beta1", c.optim.beta1);
  c.optim.beta2 = f.get_double("optim.beta2", c.optim.beta2);
  c.optim.eps = f.get_double("optim.eps", c.optim.eps);
  c.optim.weight_decay = f.get_double("optim.weight_decay", c.optim.weight_decay);
  c.optim.warmup_steps = f.get_size("optim.warmup_steps", c.optim.warmup_steps);

  c.data.n_train = f.get_size("data.n_train", c.data.n_train);
  c.data.n_val = f.get_size("data.n_val", c.data.n_val);
  c.data.n_test = f.get_size("data.n_test", c.data.n_test);
  c.data.clip_seconds = f.get_double("data.clip_seconds", c.data.clip_seconds);
  c.data.seed = static_cast<std::uint64_t>(f.get_int("data.seed", static_cast<std::int64_t>(c.data.seed)));
  c.data.degradation.snr_db_min = f.get_double("data.snr_db_min", c.data.degradation.snr_db_min);
  c.data.degradation.snr_db_max = f.get_double("data.snr_db_max", c.data.degradation.snr_db_max);
  c.data.degradation.use_rir = f.get_bool("data.use_rir", c.data.degradation.use_rir);
  c.data.degradation.t60_min = f.get_double("data.t60_min", c.data.degradation.t60_min);
  c.data.degradation.t60_max = f.get_double("data.t60_max", c.data.degradation.t60_max);
  c.data.degradation.rir_length = f.get_size("data.rir_length", c.data.degradation.rir_length);
  c.data.degradation.noise =
      noise_kind_from_string(f.get_string("data.noise", to_string(c.data.degradation.noise)));

  c.train.steps = f.get_size("train.steps", c.train.steps);
  c.train.batch = f.get_size("train.batch", c.train.batch);
  c.train.checkpoint_every = f.get_size("train.checkpoint_every", c.train.checkpoint_every);
  c.train.log_every = f.get_size("train.log_every", c.train.log_every);
  c.train.grad_clip = f.get_double("train.grad_clip", c.train.grad_clip);
  c.train.seed = static_cast<std::uint64_t>(
      f.get_int("train.seed", static_cast<std::int64_t>(c.train.seed)));
  c.optim.total_steps = f.get_size("optim.total_steps", c.train.steps);

  c.n_fft = f.get_size("signal.n_fft", c.n_fft);
  c.hop = f.get_size("signal.hop", c.hop);
  c.sample_rate = f.get_size("signal.sample_rate", c.sample_rate);
  {
    const std::string s = f.get_string("signal.complex_convention", "split");
    if (s == "split")
      c.complex_conv = ComplexConvention::split;
    else if (s == "full")
      c.complex_conv = ComplexConvention::full;
    else
      throw ConfigError("signal.complex_convention must be 'split' or 'full', got '" + s + "'");
  }
  {
    const std::string s = f.get_string("signal.spec_transform", "none");
    if (s == "none")
      c.spec_transform = SpecTransformMode::none;
    else if (s == "compress")
      c.spec_transform = SpecTransformMode::compress;
    else
      throw ConfigError("signal.spec_transform must be 'none' or 'compress', got '" + s + "'");
  }

  {
    const std::string s = f.get_string("sampler.mode", "sde");
    if (s == "sde")
      c.sample_mode = SampleMode::sde;
    else if (s == "ode")
      c.sample_mode = SampleMode::ode;
    else
      throw ConfigError("sampler.mode must be 'sde' or 'ode', got '" + s + "'");
  }
  c.sample_steps = f.get_size("sampler.steps", c.sample_steps);

  f.check_fully_consumed();
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  return config_from_ini(IniFile::parse_file(path));
}

// Effective config (defaults merged) in the same format load_config reads, so
// a run can be reproduced from its echo.
inline std::string config_to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "[schedule]\n"
     << "kind = " << c.schedule.kind << "\nc = " << c.schedule.c << "\nk = " << c.schedule.k
     << "\nT = " << c.schedule.T << "\nt_eps = " << c.schedule.t_eps << "\n\n";
  os << "[backbone]\n"
     << "n_blocks = " << c.backbone.n_blocks << "\nd_model = " << c.backbone.d_model
     << "\nd_state = " << c.backbone.d_state << "\nfreq_factor = " << c.backbone.freq_factor
     << "\ntime_factor = " << c.backbone.time_factor
     << "\ntime_causal = " << (c.backbone.time_causal ? "true" : "false")
     << "\nfourier_dim = " << c.backbone.fourier_dim
     << "\nfourier_scale = " << c.backbone.fourier_scale << "\nexpand = " << c.backbone.expand
     << "\nconv_kernel = " << c.backbone.conv_kernel
     << "\nzero_init_out_proj = " << (c.backbone.zero_init_out_proj ? "true" : "false")
     << "\ntrain_fourier_freqs = " << (c.backbone.train_fourier_freqs ? "true" : "false")
     << "\nscan_impl = "
     << (c.backbone.scan_impl == ScanImpl::sequential ? "sequential" : "parallel") << "\n\n";
  os << "[loss]\n"
     << "lambda1 = " << c.loss.lambda1 << "\nlambda2 = " << c.loss.lambda2
     << "\nlambda3 = " << c.loss.lambda3 << "\nlambda4 = " << c.loss.lambda4
     << "\nmr_resolutions = ";
  for (std::size_t i = 0; i < c.loss.mr_resolutions.size(); ++i)
    os << (i ? ", " : "") << c.loss.mr_resolutions[i].first << ":"
       << c.loss.mr_resolutions[i].second;
  os << "\n\n";
  os << "[optim]\n"
     << "lr_base = " << c.optim.lr_base << "\nbeta1 = " << c.optim.beta1
     << "\nbeta2 = " << c.optim.beta2 << "\neps = " << c.optim.eps
     << "\nweight_decay = " << c.optim.weight_decay
     << "\nwarmup_steps = " << c.optim.warmup_steps << "\ntotal_steps = " << c.optim.total_steps
     << "\n\n";
  os << "[data]\n"
     << "n_train = " << c.data.n_train << "\nn_val = " << c.data.n_val
     << "\nn_test = " << c.data.n_test << "\nclip_seconds = " << c.data.clip_seconds
     << "\nseed = " << c.data.seed << "\nsnr_db_min = " << c.data.degradation.snr_db_min
     << "\nsnr_db_max = " << c.data.degradation.snr_db_max
     << "\nuse_rir = " << (c.data.degradation.use_rir ? "true" : "false")
     << "\nt60_min = " << c.data.degradation.t60_min
     << "\nt60_max = " << c.data.degradation.t60_max
     << "\nrir_length = " << c.data.degradation.rir_length
     << "\nnoise = " << to_string(c.data.degradation.noise) << "\n\n";
  os << "[signal]\n"
     << "n_fft = " << c.n_fft << "\nhop = " << c.hop << "\nsample_rate = " << c.sample_rate
     << "\ncomplex_convention = "
     << (c.complex_conv == ComplexConvention::split ? "split" : "full") << "\nspec_transform = "
     << (c.spec_transform == SpecTransformMode::none ? "none" : "compress") << "\n\n";
  os << "[sampler]\n"
     << "mode = " << (c.sample_mode == SampleMode::sde ? "sde" : "ode")
     << "\nsteps = " << c.sample_steps << "\n\n";
  os << "[train]\n"
     << "steps = " << c.train.steps << "\nbatch = " << c.train.batch
     << "\ncheckpoint_every = " << c.train.checkpoint_every
     << "\nlog_every = " << c.train.log_every << "\ngrad_clip = " << c.train.grad_clip
     << "\nseed = " << c.train.seed << "\n";
  return os.str();
}

}  // namespace sbm
