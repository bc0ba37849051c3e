#include "dsen/checkpoint.hpp"

#include <json.hpp>

#include "dsen/binio.hpp"
#include "dsen/error.hpp"

namespace dsen::ad {
namespace {
constexpr char kMagic[] = "DSENCKPT";
}

std::string encode_checkpoint(const std::vector<NamedArray>& arrays) {
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : arrays) {
    if (numel(a.shape) != a.values.size()) throw ShapeError("checkpoint entry " + a.name + " has inconsistent shape");
    manifest.push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
    offset += a.values.size() * sizeof(double);
  }
  const std::string text = manifest.dump();
  std::string out(kMagic, 8);
  binio::put_u32(out, kCheckpointVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& a : arrays) binio::put_array(out, a.values.data(), a.values.size());
  return out;
}

std::vector<NamedArray> decode_checkpoint(const std::string& bytes, const std::string& what) {
  binio::Reader rd(bytes, what);
  if (rd.bytes(8, "magic") != std::string(kMagic, 8)) throw FormatError(what + ": bad magic, not a DSENCKPT file");
  const auto version = rd.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  }
  const auto len = rd.u32("manifest length");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(rd.bytes(len, "manifest"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": unreadable manifest (" + e.what() + ")");
  }
  const std::size_t payload_start = rd.offset();
  std::vector<NamedArray> arrays;
  try {
    std::size_t expected = 0;
    for (const auto& entry : manifest) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<Shape>();
      if (entry.at("offset").get<std::size_t>() != expected) {
        throw FormatError(what + ": entry " + a.name + " has offset out of sequence");
      }
      a.values.resize(numel(a.shape));
      rd.array(a.values.data(), a.values.size(), "payload");
      expected = rd.offset() - payload_start;
      arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(what + ": malformed manifest entry (" + e.what() + ")");
  }
  if (rd.remaining() != 0) {
    throw FormatError(what + ": " + std::to_string(rd.remaining()) + " trailing bytes at byte offset " +
                      std::to_string(rd.offset()));
  }
  return arrays;
}

void write_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays) {
  binio::write_file(path, encode_checkpoint(arrays));
}

std::vector<NamedArray> read_checkpoint(const std::string& path) {
  return decode_checkpoint(binio::read_file(path), path);
}

}  // namespace dsen::ad
