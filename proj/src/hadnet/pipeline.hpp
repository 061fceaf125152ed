#pragma once

// simulate -> train -> evaluate -> inspect, each writing into one output
// directory together with a manifest listing every artifact and its hash.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hadnet/evaluation.hpp"
#include "hadnet/training.hpp"

namespace hadnet::pipeline {

std::string version();

struct SimulateOptions {
  std::size_t patients = 17;
  std::size_t days = 14;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

struct SimulateResult {
  std::vector<std::filesystem::path> episodes;
  std::size_t rows_per_episode = 0;
};

SimulateResult run_simulate(const SimulateOptions& options);

struct TrainOptions {
  std::filesystem::path data;
  std::optional<std::filesystem::path> config;  // defaults when absent
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

struct TrainSummary {
  std::size_t parameter_count = 0;
  std::size_t windows = 0;
  std::vector<training::EpochRecord> history;
  std::vector<std::string> warnings;
  std::filesystem::path checkpoint;
};

TrainSummary run_train(const TrainOptions& options);

struct EvaluateOptions {
  std::filesystem::path data;
  std::string checkpoints;  // glob pattern
  std::vector<std::string> baselines{"persistence", "ar", "ridge", "physio"};
  std::filesystem::path out;
  double split_ratio = 0.8;
};

struct EvaluateSummary {
  eval::MetricsTable table;
  std::vector<std::filesystem::path> checkpoints;
  std::size_t windows = 0;
  std::vector<std::string> warnings;
};

EvaluateSummary run_evaluate(const EvaluateOptions& options);

struct InspectOptions {
  std::filesystem::path checkpoint;
  std::string window;  // "patient_id@YYYY-MM-DDTHH:MM:SS", first input step
  std::filesystem::path data;
  std::filesystem::path out;
};

struct InspectSummary {
  std::size_t steps = 0;
  std::vector<std::string> impact_nodes;
};

InspectSummary run_inspect(const InspectOptions& options);

/// Sorted matches of a shell glob. Empty when nothing matches.
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

struct WindowSpec {
  std::string patient;
  std::int64_t start = 0;
};
/// Throws InvalidArgument.
WindowSpec parse_window_spec(const std::string& spec);

struct ManifestEntry {
  std::string command;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> inputs;
};

/// Writes manifest.json under `out`, hashing every regular file below it.
void write_manifest(const std::filesystem::path& out, const ManifestEntry& entry);

}  // namespace hadnet::pipeline
