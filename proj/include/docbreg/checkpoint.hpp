#pragma once

// Checkpoint file layout:
//   line 1  "DOCBRGCK"
//   line 2  JSON header (configs, counters, loss history, tensor table, checksum)
//   rest    little-endian float64 payload, tensors in table order

#include <string>
#include <string_view>

#include "json.hpp"

#include "docbreg/training.hpp"

namespace docbreg {

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EnsembleConfig& c);
EnsembleConfig ensemble_config_from_json(const nlohmann::json& j);

std::string serialize_checkpoint(const Checkpoint& ck);
/// Throws CheckpointError naming the offending field on version mismatch,
/// shape mismatch, truncation or checksum failure.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace docbreg
