#pragma once

#include <filesystem>
#include <memory>

#include "deca/config.hpp"
#include "deca/training.hpp"
#include "json.hpp"

namespace deca {

inline constexpr int kCheckpointFormatVersion = 1;

/// Writes `manifest.json` and `params.f32` into `dir`. The blob holds every
/// parameter (model, then loss weights) followed by the Adam moments when the
/// optimizer has stepped. `metadata` is stored verbatim.
void save_checkpoint(const Trainer<float>& trainer, const std::filesystem::path& dir,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  RunConfig config;
  std::unique_ptr<Trainer<float>> trainer;
  nlohmann::json metadata;
};

/// Validates the format version, the parameter table and the blob length
/// before constructing anything.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace deca
