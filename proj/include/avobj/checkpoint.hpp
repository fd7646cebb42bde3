#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "avobj/layers.hpp"

namespace avobj {

// Checkpoint container: a little-endian binary tensor table prefixed by a
// free-form JSON manifest (architecture, normalization constants, anything
// the loader needs to rebuild the model).
//
//   bytes 0..7   magic "AVOBJCKP"
//   u32          format version (1)
//   u64          manifest byte length, then manifest (UTF-8 JSON)
//   u64          trainable tensor count, then entries
//   u64          state tensor count, then entries
// entry:
//   u32 name length, name bytes
//   u8  scalar size (4 = float, 8 = double)
//   u32 rank, u64 dims[rank]
//   payload (product(dims) * scalar size bytes)

namespace detail {

constexpr char kCkptMagic[8] = {'A', 'V', 'O', 'B', 'J', 'C', 'K', 'P'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

template <typename S>
void write_tensor_entry(std::ostream& os, const std::string& name,
                        const Tensor<S>& t) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(S)));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (Index i = 0; i < t.rank(); ++i)
    write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * static_cast<Index>(sizeof(S))));
}

template <typename S>
std::pair<std::string, Tensor<S>> read_tensor_entry(std::istream& is) {
  const std::uint32_t name_len = read_pod<std::uint32_t>(is);
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  const std::uint8_t ssize = read_pod<std::uint8_t>(is);
  const std::uint32_t rank = read_pod<std::uint32_t>(is);
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i)
    shape[i] = static_cast<Index>(read_pod<std::uint64_t>(is));
  const Index n = shape_size(shape);
  if (ssize == sizeof(S)) {
    Tensor<S> t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(n * static_cast<Index>(sizeof(S))));
    return {name, std::move(t)};
  }
  if (ssize == 4) {
    Tensor<float> t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(n * 4));
    return {name, t.template cast<S>()};
  }
  if (ssize == 8) {
    Tensor<double> t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(n * 8));
    return {name, t.template cast<S>()};
  }
  throw data_error("checkpoint: unsupported scalar size " +
                   std::to_string(ssize));
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const std::string& manifest,
                     const ParamStore<S>& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw data_error("cannot open checkpoint for writing: " + path);
  os.write(detail::kCkptMagic, 8);
  detail::write_pod<std::uint32_t>(os, detail::kCkptVersion);
  detail::write_pod<std::uint64_t>(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  detail::write_pod<std::uint64_t>(os, store.params.size());
  for (const auto& [name, t] : store.params)
    detail::write_tensor_entry(os, name, t);
  detail::write_pod<std::uint64_t>(os, store.state.size());
  for (const auto& [name, t] : store.state)
    detail::write_tensor_entry(os, name, t);
  if (!os) throw data_error("short write to checkpoint: " + path);
}

template <typename S>
std::string load_checkpoint(const std::string& path, ParamStore<S>& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw data_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw data_error("not a checkpoint file: " + path);
  const std::uint32_t version = detail::read_pod<std::uint32_t>(is);
  if (version != detail::kCkptVersion)
    throw data_error("unsupported checkpoint version " +
                     std::to_string(version));
  const std::uint64_t mlen = detail::read_pod<std::uint64_t>(is);
  std::string manifest(mlen, '\0');
  is.read(manifest.data(), static_cast<std::streamsize>(mlen));
  store.params.clear();
  store.state.clear();
  const std::uint64_t np = detail::read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < np; ++i) {
    auto [name, t] = detail::read_tensor_entry<S>(is);
    store.params.emplace(std::move(name), std::move(t));
  }
  const std::uint64_t ns = detail::read_pod<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < ns; ++i) {
    auto [name, t] = detail::read_tensor_entry<S>(is);
    store.state.emplace(std::move(name), std::move(t));
  }
  if (!is) throw data_error("truncated checkpoint: " + path);
  return manifest;
}

}  // namespace avobj
