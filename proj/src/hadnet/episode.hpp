#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace hadnet {

/// Measured channels of an episode, in file column order.
enum Channel : std::size_t { kGlucose = 0, kBolus = 1, kBasal = 2, kCarbs = 3 };
inline constexpr std::size_t kChannelCount = 4;
inline constexpr std::array<std::string_view, kChannelCount> kChannelNames = {"glucose", "bolus",
                                                                             "basal", "carbs"};

/// glucose in mg/dL (NaN marks a missing sample), bolus in U, basal in U per
/// step, carbs in g.
using Measurement = std::array<double, kChannelCount>;

struct EpisodeFrame {
  std::string patient_id;
  double dt_minutes = 5.0;
  std::vector<std::int64_t> timestamps;  // seconds since 1970-01-01T00:00:00 (UTC)
  std::vector<Measurement> rows;

  std::size_t size() const noexcept { return rows.size(); }
  /// Copy of rows [first, first + count).
  EpisodeFrame slice(std::size_t first, std::size_t count) const;
};

std::string format_timestamp(std::int64_t seconds);
/// Parses "YYYY-MM-DDTHH:MM:SS" (an optional trailing 'Z' is accepted).
std::int64_t parse_timestamp(std::string_view text);
/// Minutes since local midnight, 0..1439.
int minute_of_day(std::int64_t seconds);

void write_episode_csv(const EpisodeFrame& episode, const std::filesystem::path& path);
EpisodeFrame read_episode_csv(const std::filesystem::path& path, double dt_minutes = 5.0);
/// All *.csv episodes of a directory, sorted by file name; patient id is the file stem.
std::vector<EpisodeFrame> read_episode_dir(const std::filesystem::path& dir, double dt_minutes = 5.0);

}  // namespace hadnet
