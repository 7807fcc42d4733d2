#pragma once

// Binary checkpoint container. Byte layout (all integers little-endian):
//
//   magic        8 bytes  "DIMACKPT"
//   version      u32      currently 1
//   kind         str      e.g. "extractor", "abstractor", "dimac"
//   config_hash  u64
//   config       str      canonical configuration text
//   meta_count   u32      followed by meta_count (key str, value str) pairs
//   vocab_count  u32      followed by vocab_count token strs
//   array_count  u32      followed by array_count arrays:
//       name str, rows u32, cols u32, rows*cols f64 in column-major order
//
// where `str` is a u32 byte length followed by UTF-8 bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dimac/nn/graph.hpp"

namespace dimac::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  std::uint64_t config_hash = 0;
  std::string config_text;
  std::map<std::string, std::string> meta;
  std::vector<std::string> vocabulary;
  ParamStore params;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace dimac::nn
