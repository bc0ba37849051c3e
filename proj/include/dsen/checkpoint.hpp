#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsen/tensor.hpp"

namespace dsen::ad {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const NamedArray&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "DSENCKPT", u32 version, u32 manifest length, JSON manifest
/// [{name, shape, offset}], float64 payload. Offsets are in bytes from the
/// start of the payload.
std::string encode_checkpoint(const std::vector<NamedArray>& arrays);
std::vector<NamedArray> decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint");

void write_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays);
/// Missing file -> ConfigError; bad magic, version, manifest or payload -> FormatError.
std::vector<NamedArray> read_checkpoint(const std::string& path);

}  // namespace dsen::ad
