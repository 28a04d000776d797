#pragma once

// Named-tensor binary container.
//
//   magic    "HGCK"
//   version  u32
//   count    u64
//   count × { name_len u32, name bytes (UTF-8), rank u32, dims u64 × rank,
//             data f32 × numel }
//
// All integers and floats are little-endian; data is row-major.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "hypogen/autodiff.hpp"
#include "hypogen/errors.hpp"

namespace hypogen {

inline constexpr char kCheckpointMagic[4] = {'H', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  bool operator==(const NamedTensor&) const = default;
};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace detail {
template <typename U>
void write_pod(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& is, const std::string& what) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U)))
    throw FormatError("truncated checkpoint while reading " + what);
  return v;
}
}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write(kCheckpointMagic, 4);
  detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
  detail::write_pod<std::uint64_t>(os, tensors.size());
  for (const auto& t : tensors) {
    if (t.data.size() != numel(t.shape))
      throw DimensionError("tensor " + t.name + " has " + std::to_string(t.data.size()) +
                           " values for shape " + shape_str(t.shape));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[4] = {};
  if (!is.read(magic, 4)) throw FormatError("truncated checkpoint header");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic");
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::read_pod<std::uint64_t>(is, "tensor count");
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = detail::read_pod<std::uint32_t>(is, "name length");
    if (name_len > (1u << 16)) throw FormatError("implausible tensor name length");
    t.name.resize(name_len);
    if (!is.read(t.name.data(), name_len)) throw FormatError("truncated tensor name");
    const auto rank = detail::read_pod<std::uint32_t>(is, t.name + " rank");
    if (rank > 8) throw FormatError("implausible rank for " + t.name);
    for (std::uint32_t r = 0; r < rank; ++r)
      t.shape.push_back(static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is, t.name + " dims")));
    const std::size_t n = numel(t.shape);
    if (n > (std::size_t{1} << 32)) throw FormatError("implausible size for " + t.name);
    t.data.resize(n);
    if (!is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(float))))
      throw FormatError("truncated data for " + t.name);
    out.push_back(std::move(t));
  }
  return out;
}

inline void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_checkpoint(os, tensors);
  if (!os) throw IoError("failed writing " + path);
}

inline std::vector<NamedTensor> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  return read_checkpoint(is);
}

}  // namespace hypogen
