#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "foresee/array.hpp"
#include "foresee/error.hpp"

namespace fse {

// Load failures are distinguishable by type so callers can tell an
// incompatible file from a damaged one.

struct CheckpointVersionError : IoError {
    using IoError::IoError;
};
struct CheckpointHashError : IoError {
    using IoError::IoError;
};
struct CheckpointCorruptError : IoError {
    using IoError::IoError;
};
struct CheckpointKindError : IoError {
    using IoError::IoError;
};

struct CheckpointManifest {
    std::string model_kind; // "bbox" or "odometry"
    nlohmann::json config;
    std::string config_hash; // filled from config on save
    int stage = 0;
    nlohmann::json metrics;
};

struct Checkpoint {
    CheckpointManifest manifest;
    std::vector<std::pair<std::string, Array>> arrays;

    const Array& find(const std::string& name) const;
};

/// Binary weight file: magic "FSE1", format version, JSON manifest, named
/// array directory, little-endian payload, trailing content hash. Doubles
/// round-trip bitwise; as_f32 stores a lossy single-precision payload that
/// widens back to double on load.
void save_checkpoint(const std::string& path, const CheckpointManifest& manifest,
                     const std::vector<std::pair<std::string, const Array*>>& arrays,
                     bool as_f32 = false);

Checkpoint load_checkpoint(const std::string& path);

/// Throws CheckpointKindError unless the manifest names this model kind.
void require_kind(const Checkpoint& ckpt, const std::string& kind);

/// Throws CheckpointHashError unless the stored config hash matches the
/// expected config's serialization.
void require_config(const Checkpoint& ckpt, const nlohmann::json& expected_config);

/// Copies checkpoint arrays into the destination slots by name; every slot
/// must be present with an identical shape.
void assign_arrays(const Checkpoint& ckpt,
                   const std::vector<std::pair<std::string, Array*>>& named);

} // namespace fse
