#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "alm/core/params.hpp"
#include "alm/model/config.hpp"

namespace alm::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On-disk layout: "AQCP", u32 version, u32 tensor count, then per tensor
/// u32 name length, UTF-8 name, u32 rank, u32 dims, f32 payload; finally
/// u32 trailer length and the JSON trailer. All integers little-endian.
struct Checkpoint {
  std::map<std::string, core::ArrayF> tensors;
  nlohmann::json trailer = nlohmann::json::object();
};

/// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws IoError if the file cannot be opened, CheckpointError if malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Model weights plus the trailer they were saved with.
struct Model {
  ModelConfig config;
  core::ParameterStore<float> params;
  nlohmann::json trailer = nlohmann::json::object();
};

/// Splits a checkpoint into model parameters (tensors without an "opt." or
/// "ref." prefix) and the model configuration stored under trailer["model"].
Model model_from_checkpoint(const Checkpoint& ckpt);
Model load_model(const std::filesystem::path& path);

/// Total scalar parameter count of a configuration.
std::size_t parameter_count(const ModelConfig& cfg);

}  // namespace alm::model
