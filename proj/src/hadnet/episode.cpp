#include "hadnet/episode.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "hadnet/errors.hpp"

namespace hadnet {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

int parse_int(std::string_view s, std::string_view context) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw Error(ErrorCode::Parse, "bad number in " + std::string(context));
  return v;
}

double parse_double(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size()) throw Error(ErrorCode::Parse, "bad value '" + tmp + "'");
  return v;
}

std::string format_value(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

EpisodeFrame EpisodeFrame::slice(std::size_t first, std::size_t count) const {
  if (first + count > rows.size()) throw Error(ErrorCode::InvalidArgument, "episode slice out of range");
  EpisodeFrame out;
  out.patient_id = patient_id;
  out.dt_minutes = dt_minutes;
  out.timestamps.assign(timestamps.begin() + first, timestamps.begin() + first + count);
  out.rows.assign(rows.begin() + first, rows.begin() + first + count);
  return out;
}

std::string format_timestamp(std::int64_t seconds) {
  using namespace std::chrono;
  const sys_seconds tp{std::chrono::seconds{seconds}};
  const auto day = floor<days>(tp);
  const year_month_day ymd{day};
  const hh_mm_ss hms{tp - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

std::int64_t parse_timestamp(std::string_view text) {
  while (!text.empty() && (text.back() == '\r' || text.back() == ' ' || text.back() == 'Z'))
    text.remove_suffix(1);
  if (text.size() != 19 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':' || text[16] != ':')
    throw Error(ErrorCode::Parse, "timestamp must look like YYYY-MM-DDTHH:MM:SS, got '" +
                                      std::string(text) + "'");
  using namespace std::chrono;
  const year_month_day ymd{year{parse_int(text.substr(0, 4), text)},
                           month{static_cast<unsigned>(parse_int(text.substr(5, 2), text))},
                           day{static_cast<unsigned>(parse_int(text.substr(8, 2), text))}};
  if (!ymd.ok()) throw Error(ErrorCode::Parse, "invalid date " + std::string(text));
  const int hh = parse_int(text.substr(11, 2), text);
  const int mm = parse_int(text.substr(14, 2), text);
  const int ss = parse_int(text.substr(17, 2), text);
  if (hh > 23 || mm > 59 || ss > 59) throw Error(ErrorCode::Parse, "invalid time " + std::string(text));
  const auto base = sys_days{ymd}.time_since_epoch();
  return duration_cast<std::chrono::seconds>(base).count() + hh * 3600 + mm * 60 + ss;
}

int minute_of_day(std::int64_t seconds) {
  const std::int64_t s = ((seconds % 86400) + 86400) % 86400;
  return static_cast<int>(s / 60);
}

void write_episode_csv(const EpisodeFrame& episode, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "timestamp,glucose,bolus,basal,carbs\n";
  for (std::size_t i = 0; i < episode.size(); ++i) {
    out << format_timestamp(episode.timestamps[i]);
    for (double v : episode.rows[i]) out << ',' << format_value(v);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
}

EpisodeFrame read_episode_csv(const std::filesystem::path& path, double dt_minutes) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  EpisodeFrame ep;
  ep.patient_id = path.stem().string();
  ep.dt_minutes = dt_minutes;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Parse, path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "timestamp,glucose,bolus,basal,carbs")
    throw Error(ErrorCode::Parse, path.string() + ": unexpected header '" + line + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (fields.size() != 1 + kChannelCount)
      throw Error(ErrorCode::Parse, path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    ep.timestamps.push_back(parse_timestamp(fields[0]));
    Measurement m{};
    for (std::size_t c = 0; c < kChannelCount; ++c) {
      m[c] = parse_double(fields[c + 1]);
      if (c != kGlucose && std::isnan(m[c])) m[c] = 0.0;
    }
    ep.rows.push_back(m);
  }
  return ep;
}

std::vector<EpisodeFrame> read_episode_dir(const std::filesystem::path& dir, double dt_minutes) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::Io, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<EpisodeFrame> out;
  for (const auto& f : files) out.push_back(read_episode_csv(f, dt_minutes));
  return out;
}

}  // namespace hadnet
