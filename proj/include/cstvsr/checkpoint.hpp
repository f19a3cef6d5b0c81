#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "cstvsr/model.hpp"

namespace cstvsr {

inline constexpr int kCheckpointVersion = 1;

// Single-file archive:
//   8-byte magic "CSTVSRCK", uint64 little-endian manifest length, JSON
//   manifest, then raw little-endian float32 blobs (C order).
// The manifest lists every tensor per segment (propagation, temporal,
// upsampler, optional flow) with name, shape, byte offset and byte count.
struct Checkpoint {
  ModelConfig config;
  int64_t iteration = 0;
  nlohmann::json extra = nlohmann::json::object();  // e.g. training config snapshot, flow estimator settings
  CstvsrNet net{nullptr};
};

// Segment a parameter belongs to, derived from its top-level submodule.
std::string checkpoint_segment(const std::string& parameter_name);

void save_checkpoint(const std::filesystem::path& path, const CstvsrNet& net, int64_t iteration,
                     const nlohmann::json& extra = nlohmann::json::object());

// Rebuilds the network from the stored config and verifies every tensor's
// shape against the manifest. Throws std::runtime_error on any mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cstvsr
