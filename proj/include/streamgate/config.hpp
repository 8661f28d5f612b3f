#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>

#include <json.hpp>

#include "streamgate/backbone.hpp"
#include "streamgate/stream_sim.hpp"
#include "streamgate/trainer.hpp"
#include "streamgate/trigger_engine.hpp"

// JSON configuration documents. Every section is optional and partial: keys
// that are present override the defaults, unknown keys are rejected.

namespace streamgate {

std::uint64_t fnv1a(std::string_view bytes);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

nlohmann::json to_json(const TriggerPolicy& p);
TriggerPolicy policy_from_json(const nlohmann::json& j, TriggerPolicy base = {});

nlohmann::json to_json(const FeatureDims& d);
FeatureDims dims_from_json(const nlohmann::json& j, FeatureDims base = {});

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TriggerPolicy policy;
  FeatureDims dims;
  std::uint64_t seed = 0;

  // Model dims must agree with the stream dims; throws ConfigError.
  void validate() const;
};

// {"model": {...}, "train": {...}, "policy": {...}, "dims": {...}, "seed": n}
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
nlohmann::json to_json(const RunConfig& c);
// Throws ConfigError on unreadable or invalid documents.
nlohmann::json read_json_file(const std::filesystem::path& path);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace streamgate
