#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpmusic/model.hpp"

namespace dpmusic {

// Checkpoint container, little-endian:
//   8 bytes   magic "DPCKPT01"
//   u64       header length H
//   H bytes   JSON {"config": {...}, "dtype": "f32le",
//                   "tensors": [{"name", "shape": [rows, cols], "offset"}]}
//   payload   f32 values, row-major, at the listed byte offsets
// Parameters are held in double and rounded to f32 on save, so
// save(load(save(m))) is byte-identical to save(m).
std::vector<std::uint8_t> checkpoint_to_bytes(const Model& model);
Model checkpoint_from_bytes(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view text);

}  // namespace dpmusic
