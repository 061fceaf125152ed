#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hadnet/episode.hpp"
#include "hadnet/training.hpp"

namespace hadnet::eval {

struct Metrics {
  double rmse = 0.0;
  double mard = 0.0;  // percent
  double mae = 0.0;
};

/// Throws LengthMismatch on unequal or empty inputs, NonPositiveTruth when a
/// true value is <= 0.
Metrics metrics(std::span<const double> pred, std::span<const double> truth);

// A step may carry several labels; no bit set means unlabeled.
using ContextMask = std::uint8_t;
enum ContextBit : ContextMask {
  kPostprandial = 1,
  kPostBreakfast = 2,
  kPostBolus = 4,
  kOvernight = 8,
};
inline constexpr std::size_t kContextCount = 5;
inline constexpr std::array<std::string_view, kContextCount> kContextNames = {
    "postprandial", "post_breakfast", "post_bolus", "overnight", "unlabeled"};
bool in_context(ContextMask mask, std::size_t context);

struct ContextOptions {
  int window_minutes = 120;
  int breakfast_from = 6 * 60;  // minute of day, inclusive
  int breakfast_to = 10 * 60;   // exclusive
  int overnight_to = 6 * 60;
};

/// Per-step labels from the bolus / carbs channels and the wall clock.
/// An event at time t covers [t, t + window).
std::vector<ContextMask> context_segment(const EpisodeFrame& episode, const ContextOptions& options = {});

/// Test windows (stride 1) plus the context of each forecast origin, i.e.
/// the last observed step, labelled on the full episode so that events
/// before the split still count.
struct EvalSet {
  std::vector<training::WindowSample> windows;
  std::vector<ContextMask> contexts;
  double dt_minutes = 5.0;
};

EvalSet make_eval_set(std::span<const EpisodeFrame> episodes, double split_ratio, std::size_t w,
                      std::size_t h);

using Forecaster = std::function<std::vector<double>(const training::WindowSample&)>;

struct ModelRuns {
  std::string name;
  std::vector<Forecaster> repetitions;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population std over repetitions
};

struct MetricsRow {
  std::string model;
  std::size_t horizon_steps = 0;
  double horizon_minutes = 0.0;
  std::string context;  // "all" or a context name
  std::size_t repetitions = 0;
  std::size_t windows = 0;
  Summary rmse;
  Summary mard;
  Summary mae;
};

/// Per-window absolute error at the first horizon, averaged over repetitions.
struct ContextMae {
  std::string model;
  std::string context;
  std::size_t windows = 0;
  double mae = 0.0;
  double ci50_lo = 0.0;  // 25% quantile
  double ci50_hi = 0.0;  // 75% quantile
};

struct MetricsTable {
  std::vector<MetricsRow> rows;
  std::vector<ContextMae> context_mae;

  const MetricsRow* find(std::string_view model, std::size_t horizon_steps,
                         std::string_view context = "all") const;
  const ContextMae* find_context(std::string_view model, std::string_view context) const;
};

/// Errors are taken at exactly each horizon step. Throws NoTestWindows.
MetricsTable evaluate(const EvalSet& set, std::span<const ModelRuns> models,
                      std::span<const std::size_t> horizon_steps);
MetricsTable evaluate(const EvalSet& set, std::span<const ModelRuns> models);

/// Linear-interpolated quantile, q in [0, 1].
double quantile(std::vector<double> values, double q);

void write_metrics_csv(const MetricsTable& table, const std::filesystem::path& path);
void write_metrics_json(const MetricsTable& table, const std::filesystem::path& path);
void write_context_csv(const MetricsTable& table, const std::filesystem::path& path);

}  // namespace hadnet::eval
