#pragma once

#include <filesystem>

#include "deca/model.hpp"
#include "deca/training.hpp"
#include "json.hpp"

namespace deca {

/// Everything needed to rebuild a model and rerun its training.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const;
};

/// One flat JSON object with the ModelConfig and TrainConfig field names;
/// routing settings nest under "routing".
nlohmann::json to_json(const RunConfig& config);

/// Missing keys keep their defaults; unknown keys and wrong types are config errors.
RunConfig run_config_from_json(const nlohmann::json& doc);

RunConfig load_run_config(const std::filesystem::path& path);

/// DECA_SEED, when set, replaces train.seed.
void apply_env_overrides(RunConfig& config);

}  // namespace deca
