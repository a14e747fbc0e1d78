// Parameter checkpoint file. Flat little-endian binary:
//   magic "NNCP" (4 bytes) | version u16 | parameter count u32
// then per parameter:
//   name length u16 | name bytes | rank u8 | dims u32[rank] | values f64[prod(dims)]
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "rawsim/errors.hpp"
#include "rawsim/tensor.hpp"

namespace rawsim::nn {

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
inline void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
inline T read_pod(std::istream& is, std::size_t& offset, const char* what) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw FormatError(std::string("checkpoint: truncated ") + what, offset);
  offset += sizeof(T);
  return value;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'N', 'N', 'C', 'P'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, std::span<Parameter* const> params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open for writing: " + path, 0);
  os.write(kCheckpointMagic, 4);
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    detail::write_pod(os, static_cast<std::uint16_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    const std::uint32_t dims[4] = {static_cast<std::uint32_t>(p->value.n),
                                   static_cast<std::uint32_t>(p->value.h),
                                   static_cast<std::uint32_t>(p->value.w),
                                   static_cast<std::uint32_t>(p->value.c)};
    detail::write_pod(os, static_cast<std::uint8_t>(4));
    for (std::uint32_t d : dims) detail::write_pod(os, d);
    os.write(reinterpret_cast<const char*>(p->value.v.data()),
             static_cast<std::streamsize>(p->value.v.size() * sizeof(double)));
  }
  if (!os) throw FormatError("checkpoint: write failed: " + path, 0);
}

// Loads values into an existing parameter set; names and shapes must match
// the file exactly (same construction order).
inline void load_checkpoint(const std::string& path, std::span<Parameter* const> params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open: " + path, 0);
  std::size_t offset = 0;
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic", 0);
  }
  offset += 4;
  const auto version = detail::read_pod<std::uint16_t>(is, offset, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
  }
  const auto count = detail::read_pod<std::uint32_t>(is, offset, "parameter count");
  if (count != params.size()) {
    throw FormatError("checkpoint: parameter count mismatch (file has " +
                          std::to_string(count) + ", model has " +
                          std::to_string(params.size()) + ")",
                      6);
  }
  for (Parameter* p : params) {
    const std::size_t entry_offset = offset;
    const auto name_len = detail::read_pod<std::uint16_t>(is, offset, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw FormatError("checkpoint: truncated name", offset);
    offset += name_len;
    if (name != p->name) {
      throw FormatError("checkpoint: expected parameter '" + p->name + "', found '" + name +
                            "'",
                        entry_offset);
    }
    const auto rank = detail::read_pod<std::uint8_t>(is, offset, "rank");
    if (rank != 4) throw FormatError("checkpoint: unsupported rank", offset - 1);
    std::uint32_t dims[4];
    for (auto& d : dims) d = detail::read_pod<std::uint32_t>(is, offset, "dims");
    const Tensor& t = p->value;
    if (dims[0] != static_cast<std::uint32_t>(t.n) ||
        dims[1] != static_cast<std::uint32_t>(t.h) ||
        dims[2] != static_cast<std::uint32_t>(t.w) ||
        dims[3] != static_cast<std::uint32_t>(t.c)) {
      throw FormatError("checkpoint: shape mismatch for '" + name + "'", entry_offset);
    }
    is.read(reinterpret_cast<char*>(p->value.v.data()),
            static_cast<std::streamsize>(p->value.v.size() * sizeof(double)));
    if (!is) throw FormatError("checkpoint: truncated values for '" + name + "'", offset);
    offset += p->value.v.size() * sizeof(double);
  }
}

}  // namespace rawsim::nn
