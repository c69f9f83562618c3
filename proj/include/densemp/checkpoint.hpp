#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "densemp/encoder.hpp"

namespace densemp {

// Checkpoint layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "DMPCKPT1"
//   offset 8   uint64    header length L
//   offset 16  L bytes   UTF-8 JSON header:
//                          {"format": "densemp-checkpoint", "version": 1,
//                           "encoder_config": {...EncoderConfig...},
//                           "tensors": [{"name", "shape", "offset", "count"}, ...],
//                           "metadata": {...}}
//   offset 16+L          float32 payload; tensor t occupies bytes
//                        [offset, offset + 4*count) of the payload, row-major.
//
// Tensors are listed in lexicographic name order and the JSON is emitted with sorted keys, so
// equal parameters and metadata produce byte-identical files.

inline constexpr char kCheckpointMagic[8] = {'D', 'M', 'P', 'C', 'K', 'P', 'T', '1'};

struct Checkpoint {
  EncoderConfig config;
  ParameterSet params;
  nlohmann::json metadata = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Encoder& encoder,
                     const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);
Encoder load_encoder(const std::filesystem::path& path);

/// Parameters after a float32 round trip, i.e. what a saved checkpoint would reload as.
ParameterSet round_to_float32(const ParameterSet& params);

}  // namespace densemp
