#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "irconv/common.hpp"
#include "irconv/tensor.hpp"

namespace irconv {

// Checkpoint container: a flat list of named f64 tensors.
//
//   magic "IRC1" | u64 tensor_count |
//   per tensor: u32 name_len | name bytes | u32 rank | u64 extents[rank]
//               | f64 data[prod extents]
//
// All integers and floats little-endian.  Tensors are stored and restored in
// list order, so a save/load round trip is bitwise faithful.
namespace detail {

template <class T> void write_pod(std::ostream &os, T v) {
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <class T> T read_pod(std::istream &is, const std::string &path) {
  T v{};
  is.read(reinterpret_cast<char *>(&v), sizeof(T));
  if (!is)
    throw config_error("checkpoint: truncated data in '" + path + "'");
  return v;
}

} // namespace detail

inline constexpr char checkpoint_magic[4] = {'I', 'R', 'C', '1'};

using NamedTensors = std::vector<std::pair<std::string, Tensor<double>>>;

inline void save_checkpoint(const std::string &path, const NamedTensors &tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw config_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(checkpoint_magic, 4);
  detail::write_pod<std::uint64_t>(os, tensors.size());
  for (const auto &[name, t] : tensors) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape)
      detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    os.write(reinterpret_cast<const char *>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!os) throw config_error("checkpoint: write failed for '" + path + "'");
}

inline NamedTensors load_checkpoint(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw config_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, checkpoint_magic, 4) != 0)
    throw config_error("checkpoint: bad magic in '" + path +
                       "' (not an IRC1 container)");
  auto count = detail::read_pod<std::uint64_t>(is, path);
  NamedTensors out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name_len = detail::read_pod<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw config_error("checkpoint: truncated data in '" + path + "'");
    auto rank = detail::read_pod<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto &e : shape)
      e = static_cast<std::int64_t>(detail::read_pod<std::uint64_t>(is, path));
    Tensor<double> t(shape);
    is.read(reinterpret_cast<char *>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!is) throw config_error("checkpoint: truncated data in '" + path + "'");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

// Find a tensor by name; throws naming the file when missing.
inline const Tensor<double> &checkpoint_get(const NamedTensors &ts,
                                            const std::string &name,
                                            const std::string &path) {
  for (const auto &[n, t] : ts)
    if (n == name) return t;
  throw config_error("checkpoint: tensor '" + name + "' missing from '" + path + "'");
}

} // namespace irconv
