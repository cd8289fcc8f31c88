#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sbm/common.hpp"

namespace sbm {

struct WavData {
  std::size_t sample_rate = 16000;
  std::vector<float> samples;  // mono
};

namespace detail {
template <class U>
U read_le(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw DataError("wav: truncated file");
  return v;
}
template <class U>
void write_le(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}
}  // namespace detail

// Reads mono PCM16 or IEEE float32 WAV.
inline WavData read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("wav: cannot open " + path);
  char tag[4];
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "RIFF", 4) != 0) throw DataError("wav: not a RIFF file: " + path);
  detail::read_le<std::uint32_t>(is);  // riff size
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "WAVE", 4) != 0) throw DataError("wav: not a WAVE file: " + path);

  WavData out;
  std::uint16_t format = 0, channels = 0, bits = 0;
  bool got_fmt = false;
  while (is.read(tag, 4)) {
    const auto chunk_size = detail::read_le<std::uint32_t>(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = detail::read_le<std::uint16_t>(is);
      channels = detail::read_le<std::uint16_t>(is);
      out.sample_rate = detail::read_le<std::uint32_t>(is);
      detail::read_le<std::uint32_t>(is);  // byte rate
      detail::read_le<std::uint16_t>(is);  // block align
      bits = detail::read_le<std::uint16_t>(is);
      if (chunk_size > 16) is.seekg(chunk_size - 16, std::ios::cur);
      got_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!got_fmt) throw DataError("wav: data before fmt chunk: " + path);
      if (channels != 1) throw DataError("wav: only mono supported: " + path);
      if (format == 1 && bits == 16) {
        const std::size_t n = chunk_size / 2;
        out.samples.resize(n);
        std::vector<std::int16_t> raw(n);
        is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(chunk_size));
        if (!is) throw DataError("wav: truncated data: " + path);
        for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(raw[i]) / 32768.0f;
      } else if (format == 3 && bits == 32) {
        const std::size_t n = chunk_size / 4;
        out.samples.resize(n);
        is.read(reinterpret_cast<char*>(out.samples.data()),
                static_cast<std::streamsize>(chunk_size));
        if (!is) throw DataError("wav: truncated data: " + path);
      } else {
        throw DataError("wav: unsupported encoding (need PCM16 or float32): " + path);
      }
      return out;
    } else {
      is.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  throw DataError("wav: no data chunk: " + path);
}

// Writes mono IEEE float32 WAV.
inline void write_wav(const std::string& path, const WavData& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("wav: cannot open for writing: " + path);
  const std::uint32_t data_size = static_cast<std::uint32_t>(w.samples.size() * 4);
  os.write("RIFF", 4);
  detail::write_le<std::uint32_t>(os, 36 + data_size);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  detail::write_le<std::uint32_t>(os, 16);
  detail::write_le<std::uint16_t>(os, 3);  // IEEE float
  detail::write_le<std::uint16_t>(os, 1);  // mono
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate * 4));
  detail::write_le<std::uint16_t>(os, 4);
  detail::write_le<std::uint16_t>(os, 32);
  os.write("data", 4);
  detail::write_le<std::uint32_t>(os, data_size);
  os.write(reinterpret_cast<const char*>(w.samples.data()), data_size);
  if (!os) throw DataError("wav: write failed: " + path);
}

}  // namespace sbm
