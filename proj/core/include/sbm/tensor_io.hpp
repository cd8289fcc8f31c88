#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "sbm/common.hpp"
#include "sbm/tensor.hpp"

namespace sbm {

// Binary tensor snapshot: "SBMT" magic, version u32, dtype tag u32
// (0 = f32, 1 = f64), rank u32, dims u64[], then raw little-endian scalars.
// Writers/readers assume a little-endian host.

namespace detail {
constexpr std::uint32_t kSnapshotVersion = 1;

template <class T>
constexpr std::uint32_t dtype_tag() {
  if constexpr (std::is_same_v<T, float>) return 0;
  else return 1;
}

template <class U>
void write_pod(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U read_pod(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw DataError("tensor snapshot: truncated stream");
  return v;
}
}  // namespace detail

template <class T>
void write_snapshot(std::ostream& os, const TensorT<T>& t) {
  os.write("SBMT", 4);
  detail::write_pod<std::uint32_t>(os, detail::kSnapshotVersion);
  detail::write_pod<std::uint32_t>(os, detail::dtype_tag<T>());
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) detail::write_pod<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.value().data()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <class T>
TensorT<T> read_snapshot(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "SBMT", 4) != 0)
    throw DataError("tensor snapshot: bad magic");
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != detail::kSnapshotVersion)
    throw DataError("tensor snapshot: unsupported version " + std::to_string(version));
  const auto tag = detail::read_pod<std::uint32_t>(is);
  if (tag != detail::dtype_tag<T>())
    throw DataError("tensor snapshot: dtype tag mismatch");
  const auto rank = detail::read_pod<std::uint32_t>(is);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is));
  std::vector<T> data(numel(shape));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!is) throw DataError("tensor snapshot: truncated payload");
  return TensorT<T>::from(std::move(shape), std::move(data));
}

template <class T>
void save_snapshot(const std::string& path, const TensorT<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  write_snapshot(os, t);
}

template <class T>
TensorT<T> load_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  return read_snapshot<T>(is);
}

}  // namespace sbm
