#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbm/backbone.hpp"
#include "sbm/bridge.hpp"
#include "sbm/common.hpp"
#include "sbm/config.hpp"
#include "sbm/optim.hpp"
#include "sbm/tensor_io.hpp"

namespace sbm {

// Model checkpoint: "SBMC" magic, version, JSON metadata (mode, backbone
// geometry, schedule, signal geometry, step, RNG state), named tensor
// snapshots, optional optimizer state.

constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string mode;  // "sbm" | "mamba-base"
  BackboneConfig backbone;
  BridgeSchedule schedule;
  std::size_t n_fft = 512;
  std::size_t hop = 128;
  std::size_t sample_rate = 16000;
  ComplexConvention complex_conv = ComplexConvention::split;
  SpecTransformMode spec_transform = SpecTransformMode::none;
  std::size_t step = 0;
  std::string rng_state;
};

inline nlohmann::json meta_to_json(const CheckpointMeta& m) {
  nlohmann::json j;
  j["mode"] = m.mode;
  j["backbone"] = {{"n_blocks", m.backbone.n_blocks},
                   {"d_model", m.backbone.d_model},
                   {"d_state", m.backbone.d_state},
                   {"freq_factor", m.backbone.freq_factor},
                   {"time_factor", m.backbone.time_factor},
                   {"time_causal", m.backbone.time_causal},
                   {"fourier_dim", m.backbone.fourier_dim},
                   {"fourier_scale", m.backbone.fourier_scale},
                   {"expand", m.backbone.expand},
                   {"conv_kernel", m.backbone.conv_kernel},
                   {"use_timestep", m.backbone.use_timestep},
                   {"zero_init_out_proj", m.backbone.zero_init_out_proj},
                   {"train_fourier_freqs", m.backbone.train_fourier_freqs},
                   {"scan_impl", m.backbone.scan_impl == ScanImpl::parallel ? "parallel"
                                                                            : "sequential"}};
  j["schedule"] = {{"kind", m.schedule.kind},
                   {"c", m.schedule.c},
                   {"k", m.schedule.k},
                   {"T", m.schedule.T},
                   {"t_eps", m.schedule.t_eps}};
  j["signal"] = {{"n_fft", m.n_fft},
                 {"hop", m.hop},
                 {"sample_rate", m.sample_rate},
                 {"complex_conv",
                  m.complex_conv == ComplexConvention::split ? "split" : "full"},
                 {"spec_transform",
                  m.spec_transform == SpecTransformMode::none ? "none" : "compress"}};
  j["step"] = m.step;
  j["rng_state"] = m.rng_state;
  return j;
}

inline CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.mode = j.at("mode").get<std::string>();
  const auto& b = j.at("backbone");
  m.backbone.n_blocks = b.at("n_blocks").get<std::size_t>();
  m.backbone.d_model = b.at("d_model").get<std::size_t>();
  m.backbone.d_state = b.at("d_state").get<std::size_t>();
  m.backbone.freq_factor = b.at("freq_factor").get<std::size_t>();
  m.backbone.time_factor = b.at("time_factor").get<std::size_t>();
  m.backbone.time_causal = b.at("time_causal").get<bool>();
  m.backbone.fourier_dim = b.at("fourier_dim").get<std::size_t>();
  m.backbone.fourier_scale = b.at("fourier_scale").get<double>();
  m.backbone.expand = b.at("expand").get<std::size_t>();
  m.backbone.conv_kernel = b.at("conv_kernel").get<std::size_t>();
  m.backbone.use_timestep = b.at("use_timestep").get<bool>();
  m.backbone.zero_init_out_proj = b.at("zero_init_out_proj").get<bool>();
  m.backbone.train_fourier_freqs = b.at("train_fourier_freqs").get<bool>();
  m.backbone.scan_impl = b.at("scan_impl").get<std::string>() == "parallel"
                             ? ScanImpl::parallel
                             : ScanImpl::sequential;
  const auto& s = j.at("schedule");
  m.schedule.kind = s.at("kind").get<std::string>();
  m.schedule.c = s.at("c").get<double>();
  m.schedule.k = s.at("k").get<double>();
  m.schedule.T = s.at("T").get<double>();
  m.schedule.t_eps = s.at("t_eps").get<double>();
  const auto& g = j.at("signal");
  m.n_fft = g.at("n_fft").get<std::size_t>();
  m.hop = g.at("hop").get<std::size_t>();
  m.sample_rate = g.at("sample_rate").get<std::size_t>();
  m.complex_conv = g.at("complex_conv").get<std::string>() == "full" ? ComplexConvention::full
                                                                     : ComplexConvention::split;
  m.spec_transform = g.at("spec_transform").get<std::string>() == "compress"
                         ? SpecTransformMode::compress
                         : SpecTransformMode::none;
  m.step = j.at("step").get<std::size_t>();
  m.rng_state = j.at("rng_state").get<std::string>();
  return m;
}

template <class T>
struct Checkpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, TensorT<T>>> tensors;
  std::string optimizer_blob;  // raw AdamW state, empty if not saved
};

namespace detail {
inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string read_string(std::istream& is) {
  const auto len = read_pod<std::uint64_t>(is);
  std::string s(static_cast<std::size_t>(len), '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  if (!is) throw DataError("checkpoint: truncated string");
  return s;
}
}  // namespace detail

template <class T>
void write_checkpoint(std::ostream& os, const Checkpoint<T>& ck) {
  os.write("SBMC", 4);
  detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
  detail::write_string(os, meta_to_json(ck.meta).dump());
  detail::write_pod<std::uint64_t>(os, ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    detail::write_string(os, name);
    write_snapshot(os, t);
  }
  detail::write_string(os, ck.optimizer_blob);
}

template <class T>
Checkpoint<T> read_checkpoint(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SBMC", 4) != 0) throw DataError("checkpoint: bad magic");
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint<T> ck;
  ck.meta = meta_from_json(nlohmann::json::parse(detail::read_string(is)));
  const auto n = detail::read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = detail::read_string(is);
    ck.tensors.emplace_back(std::move(name), read_snapshot<T>(is));
  }
  ck.optimizer_blob = detail::read_string(is);
  return ck;
}

// Atomic write: temp file in the same directory, then rename.
template <class T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  namespace fs = std::filesystem;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open for writing: " + tmp);
    write_checkpoint(os, ck);
    if (!os) throw DataError("checkpoint: write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open: " + path);
  return read_checkpoint<T>(is);
}

template <class T>
Checkpoint<T> make_checkpoint(const std::string& mode, const Backbone<T>& model,
                              const BridgeSchedule& sched, std::size_t n_fft, std::size_t hop,
                              std::size_t sample_rate, std::size_t step,
                              const std::string& rng_state, const AdamW<T>* opt = nullptr,
                              ComplexConvention conv = ComplexConvention::split,
                              SpecTransformMode st = SpecTransformMode::none) {
  Checkpoint<T> ck;
  ck.meta.mode = mode;
  ck.meta.backbone = model.config();
  ck.meta.schedule = sched;
  ck.meta.n_fft = n_fft;
  ck.meta.hop = hop;
  ck.meta.sample_rate = sample_rate;
  ck.meta.complex_conv = conv;
  ck.meta.spec_transform = st;
  ck.meta.step = step;
  ck.meta.rng_state = rng_state;
  for (const auto& it : model.params().items())
    ck.tensors.emplace_back(it.first, it.second.detach());
  if (opt) {
    std::ostringstream os(std::ios::binary);
    opt->save_state(os);
    ck.optimizer_blob = os.str();
  }
  return ck;
}

inline bool is_timestep_param(const std::string& name) {
  return name.rfind("t_embed.", 0) == 0 || name.find(".t_affine.") != std::string::npos;
}

// Loads checkpoint tensors into a constructed backbone. Cross-mode loading
// (a timestep-conditioned checkpoint into a predictive model) only happens
// with allow_drop_timestep, which drops the timestep-embedding parameters;
// it is never silent.
template <class T>
void apply_checkpoint(const Checkpoint<T>& ck, Backbone<T>& model,
                      bool allow_drop_timestep = false) {
  auto& store = model.params();
  std::map<std::string, bool> filled;
  for (const auto& it : store.items()) filled[it.first] = false;
  for (const auto& [name, t] : ck.tensors) {
    if (!store.has(name)) {
      if (is_timestep_param(name) && !model.config().use_timestep) {
        if (!allow_drop_timestep)
          throw ContractError(
              "checkpoint holds timestep parameters absent from this model (" + name +
              "); pass the compatibility flag to drop them explicitly");
        continue;
      }
      throw DataError("checkpoint parameter has no destination: " + name);
    }
    auto& dst = store.get(name);
    if (dst.shape() != t.shape())
      throw DataError("checkpoint shape mismatch for " + name + ": " + shape_str(t.shape()) +
                      " vs " + shape_str(dst.shape()));
    dst.mutable_value() = t.value();
    filled[name] = true;
  }
  for (const auto& [name, ok] : filled)
    if (!ok) throw DataError("checkpoint missing parameter: " + name);
}

}  // namespace sbm
