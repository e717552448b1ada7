#pragma once

// TIDM checkpoint container:
//   "TIDM" | u32 version | u64 manifest bytes | manifest text
//   | u64 payload bytes | payload (little-endian float32) | u64 FNV-1a of payload
// Manifest: "step_count N" then one "name d0xd1x... offset length" line per
// array, offsets in bytes from the payload start.

#include <cstdint>
#include <span>
#include <string>

#include "tidm/error.hpp"
#include "tidm/param_store.hpp"

namespace tidm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointErrc {
  io = 10,
  bad_magic = 11,
  unsupported_version = 12,
  truncated = 13,
  checksum_mismatch = 14,
  malformed_manifest = 15,
};

const char* to_string(CheckpointErrc code);

class CheckpointError : public ValueError {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what)
      : ValueError(std::string("checkpoint ") + to_string(code) + ": " + what), code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

std::string encode_checkpoint(const ParamStore<float>& params);
ParamStore<float> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const ParamStore<float>& params);
ParamStore<float> load_checkpoint(const std::string& path);

/// FNV-1a over the encoded container; used as a parameter checksum.
std::uint64_t params_checksum(const ParamStore<float>& params);
/// Checksum of a file's bytes.
std::uint64_t file_checksum(const std::string& path);

}  // namespace tidm
