#pragma once

// JSON forms of configurations, checkpoints and simulator sidecars. Doubles
// are written in shortest round-trip form, so save/load is exact.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hadnet/model.hpp"
#include "hadnet/physio.hpp"
#include "hadnet/training.hpp"
#include "json.hpp"

namespace hadnet::io {

using nlohmann::ordered_json;

inline constexpr int kCheckpointVersion = 1;

ordered_json to_json(const model::ModelConfig& config);
model::ModelConfig model_config_from_json(const ordered_json& j);

/// Missing keys keep their defaults; unknown keys are a Parse error.
ordered_json to_json(const training::TrainConfig& config);
training::TrainConfig train_config_from_json(const ordered_json& j);
training::TrainConfig load_train_config(const std::filesystem::path& path);

struct Checkpoint {
  model::ModelConfig config;
  model::ModelParams params;
  std::uint64_t seed = 0;
};

ordered_json to_json(const model::ModelParams& params);
model::ModelParams model_params_from_json(const ordered_json& j);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Throws Io, Parse or InvalidArgument (version or shape mismatch).
Checkpoint load_checkpoint(const std::filesystem::path& path);

ordered_json to_json(const physio::PhysioParams& params);
physio::PhysioParams physio_params_from_json(const ordered_json& j);

/// Ground-truth sidecar written next to every simulated episode.
struct PatientTruth {
  std::string patient_id;
  physio::PatientProfile profile;
};

void save_patient_truth(const PatientTruth& truth, const std::filesystem::path& path);
PatientTruth load_patient_truth(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);
ordered_json read_json(const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t x);

}  // namespace hadnet::io
