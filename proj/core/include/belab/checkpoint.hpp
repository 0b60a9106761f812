#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "belab/nn.hpp"

namespace belab {

// On-disk model format: manifest.json describing named f32 arrays plus
// weights.bin holding them back to back, little-endian, in manifest order.

inline constexpr int kCheckpointFormatVersion = 1;

struct ArrayRecord {
    std::string name;
    std::vector<std::size_t> shape;
    std::uint64_t offset = 0;  // bytes into weights.bin
    std::uint64_t length = 0;  // bytes
};

struct Checkpoint {
    std::string model_kind;
    nlohmann::json config;
    std::vector<ArrayRecord> arrays;
    std::vector<std::vector<float>> values;  // parallel to arrays
};

void checkpoint_save(const std::string& dir, const std::string& model_kind,
                     const nlohmann::json& config, const std::vector<Param<float>*>& params);

Checkpoint checkpoint_load(const std::string& dir);

// Copies loaded arrays into params, matching by name and shape; the kind
// must match so an encoder blob cannot silently feed the feature classifier.
void checkpoint_restore(const Checkpoint& ckpt, const std::string& expected_kind,
                        const std::vector<Param<float>*>& params);

}  // namespace belab
