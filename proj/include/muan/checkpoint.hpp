#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "muan/params.hpp"

namespace muan {

// Binary layout, all integers little-endian:
//
//   "MUAN"                      4-byte magic
//   u16  format version         kCheckpointVersion
//   u32  header length, then    UTF-8 JSON model description
//   u32  tensor count
//   per tensor:
//     u16 name length, UTF-8 name
//     u8  rank, then u32 per extent
//     row-major IEEE-754 binary32 payload
//
// Values are narrowed to float on write; a loaded model therefore carries
// float-representable parameters.
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint16_t version = kCheckpointVersion;
  std::string header_json;
  ParameterSet tensors;
};

void write_checkpoint(std::ostream& out, const ParameterSet& params, const std::string& header_json);
Checkpoint read_checkpoint(std::istream& in);

// File variants. save_checkpoint writes to a sibling temp file and renames it
// into place.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const std::string& header_json);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rounds every parameter to the nearest float, matching what a checkpoint
// round trip produces.
void round_to_float(ParameterSet& params);

}  // namespace muan
