#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "graspstn/tensor.hpp"

namespace graspstn {

/// Checkpoint container: 8-byte magic, u64 little-endian JSON length, JSON
/// manifest, then one float32 little-endian blob per parameter (manifest
/// order = sorted by name). Round-trips are bit-exact, and identical
/// parameter values always produce identical bytes.
struct CheckpointManifest {
  int format_version = 1;
  std::string model_config_hash;
  std::string model_config_json;  // embedded so tools can rebuild the model
  std::string precision;          // "float32" or "float64" (storage is float32)
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct LoadedCheckpoint {
  CheckpointManifest manifest;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path,
                     const ParameterSet<T>& params,
                     const CheckpointManifest& manifest);

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Copy checkpoint values into a parameter set; every parameter must be
/// present with a matching shape (ArtifactMismatchError otherwise).
template <typename T>
void apply_checkpoint(const LoadedCheckpoint& ckpt, ParameterSet<T>& params);

/// FNV-1a 64-bit hex digest, used for config/dataset identity hashes.
std::string fnv1a_hex(const void* data, std::size_t size);
std::string fnv1a_hex(const std::string& text);

}  // namespace graspstn
