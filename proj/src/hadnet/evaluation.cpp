#include "hadnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "hadnet/errors.hpp"
#include "json.hpp"

namespace hadnet::eval {

Metrics metrics(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw Error(ErrorCode::LengthMismatch, "prediction and truth differ in length");
  Metrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!(truth[i] > 0.0)) throw Error(ErrorCode::NonPositiveTruth, "MARD needs positive truth");
    const double e = pred[i] - truth[i];
    m.rmse += e * e;
    m.mae += std::abs(e);
    m.mard += std::abs(e) / truth[i];
  }
  const double n = static_cast<double>(pred.size());
  m.rmse = std::sqrt(m.rmse / n);
  m.mae /= n;
  m.mard = 100.0 * m.mard / n;
  return m;
}

bool in_context(ContextMask mask, std::size_t context) {
  if (context == kContextCount - 1) return mask == 0;
  return (mask >> context) & 1U;
}

std::vector<ContextMask> context_segment(const EpisodeFrame& episode, const ContextOptions& options) {
  constexpr auto none = std::numeric_limits<std::int64_t>::min() / 2;
  const std::int64_t span = static_cast<std::int64_t>(options.window_minutes) * 60;
  std::int64_t last_meal = none, last_bolus = none, last_breakfast = none;
  std::int64_t breakfast_day = none;

  std::vector<ContextMask> out(episode.size(), 0);
  for (std::size_t t = 0; t < episode.size(); ++t) {
    const std::int64_t ts = episode.timestamps[t];
    const int minute = minute_of_day(ts);
    const auto& x = episode.rows[t];
    if (x[kCarbs] > 0.0) {
      last_meal = ts;
      const std::int64_t day = (ts - minute * 60) / 86400;
      if (day != breakfast_day && minute >= options.breakfast_from && minute < options.breakfast_to) {
        breakfast_day = day;
        last_breakfast = ts;
      }
    }
    if (x[kBolus] > 0.0) last_bolus = ts;

    ContextMask m = 0;
    if (ts - last_breakfast < span) m |= kPostBreakfast;
    else if (ts - last_meal < span) m |= kPostprandial;
    if (ts - last_bolus < span) m |= kPostBolus;
    const std::int64_t last_event = std::max(last_meal, last_bolus);
    if (minute < options.overnight_to && ts - last_event >= span) m |= kOvernight;
    out[t] = m;
  }
  return out;
}

EvalSet make_eval_set(std::span<const EpisodeFrame> episodes, double split_ratio, std::size_t w,
                      std::size_t h) {
  const auto split = training::split_train_test(episodes, split_ratio);
  EvalSet set;
  if (!episodes.empty()) set.dt_minutes = episodes[0].dt_minutes;
  set.windows = training::window_dataset(split.test, w, h, 1);
  std::vector<std::vector<ContextMask>> labels;
  for (const auto& ep : episodes) labels.push_back(context_segment(ep));
  for (const auto& s : set.windows) {
    const std::size_t cut = episodes[s.episode].size() - split.test[s.episode].size();
    set.contexts.push_back(labels[s.episode].at(cut + s.start + w - 1));
  }
  return set;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::EmptyDataset, "quantile of nothing");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

Summary summarize(const std::vector<double>& xs) {
  Summary s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(xs.size()));
  return s;
}

}  // namespace

MetricsTable evaluate(const EvalSet& set, std::span<const ModelRuns> models,
                      std::span<const std::size_t> horizon_steps) {
  const std::size_t n = set.windows.size();
  if (n == 0) throw Error(ErrorCode::NoTestWindows, "no gap-free test windows");
  if (set.contexts.size() != n) throw Error(ErrorCode::LengthMismatch, "one context per window");
  if (horizon_steps.empty()) throw Error(ErrorCode::InvalidArgument, "no horizons");
  for (std::size_t s : horizon_steps)
    if (s == 0 || s > set.windows[0].target.size())
      throw Error(ErrorCode::InvalidArgument, "horizon step outside the forecast");

  MetricsTable table;
  for (const auto& model : models) {
    const std::size_t reps = model.repetitions.size();
    if (reps == 0) throw Error(ErrorCode::InvalidArgument, "model " + model.name + " has no runs");
    // pred[rep][horizon][window]
    std::vector<std::vector<std::vector<double>>> pred(
        reps, std::vector<std::vector<double>>(horizon_steps.size(), std::vector<double>(n)));
    for (std::size_t r = 0; r < reps; ++r)
      for (std::size_t i = 0; i < n; ++i) {
        const auto f = model.repetitions[r](set.windows[i]);
        if (f.size() != set.windows[i].target.size())
          throw Error(ErrorCode::LengthMismatch, model.name + " returned a forecast of the wrong length");
        for (std::size_t k = 0; k < horizon_steps.size(); ++k) pred[r][k][i] = f[horizon_steps[k] - 1];
      }

    for (std::size_t k = 0; k < horizon_steps.size(); ++k) {
      const std::size_t step = horizon_steps[k];
      for (std::size_t c = 0; c <= kContextCount; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n; ++i)
          if (c == 0 || in_context(set.contexts[i], c - 1)) idx.push_back(i);
        if (idx.empty()) continue;
        std::vector<double> truth;
        for (std::size_t i : idx) truth.push_back(set.windows[i].target[step - 1]);
        std::vector<double> rmse, mard, mae;
        for (std::size_t r = 0; r < reps; ++r) {
          std::vector<double> p;
          for (std::size_t i : idx) p.push_back(pred[r][k][i]);
          const auto m = metrics(p, truth);
          rmse.push_back(m.rmse);
          mard.push_back(m.mard);
          mae.push_back(m.mae);
        }
        MetricsRow row;
        row.model = model.name;
        row.horizon_steps = step;
        row.horizon_minutes = static_cast<double>(step) * set.dt_minutes;
        row.context = c == 0 ? "all" : std::string(kContextNames[c - 1]);
        row.repetitions = reps;
        row.windows = idx.size();
        row.rmse = summarize(rmse);
        row.mard = summarize(mard);
        row.mae = summarize(mae);
        table.rows.push_back(std::move(row));
      }
    }

    const std::size_t first = horizon_steps[0];
    for (std::size_t c = 0; c < kContextCount; ++c) {
      std::vector<double> errs;
      for (std::size_t i = 0; i < n; ++i) {
        if (!in_context(set.contexts[i], c)) continue;
        double e = 0.0;
        for (std::size_t r = 0; r < reps; ++r) e += std::abs(pred[r][0][i] - set.windows[i].target[first - 1]);
        errs.push_back(e / static_cast<double>(reps));
      }
      if (errs.empty()) continue;
      ContextMae cm{model.name, std::string(kContextNames[c]), errs.size(), 0.0, 0.0, 0.0};
      for (double e : errs) cm.mae += e;
      cm.mae /= static_cast<double>(errs.size());
      cm.ci50_lo = quantile(errs, 0.25);
      cm.ci50_hi = quantile(errs, 0.75);
      table.context_mae.push_back(std::move(cm));
    }
  }
  return table;
}

MetricsTable evaluate(const EvalSet& set, std::span<const ModelRuns> models) {
  const std::size_t horizons[] = {6, 12};
  return evaluate(set, models, horizons);
}

const MetricsRow* MetricsTable::find(std::string_view model, std::size_t horizon_steps,
                                     std::string_view context) const {
  for (const auto& r : rows)
    if (r.model == model && r.horizon_steps == horizon_steps && r.context == context) return &r;
  return nullptr;
}

const ContextMae* MetricsTable::find_context(std::string_view model, std::string_view context) const {
  for (const auto& c : context_mae)
    if (c.model == model && c.context == context) return &c;
  return nullptr;
}

namespace {

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

}  // namespace

void write_metrics_csv(const MetricsTable& table, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "model,horizon_min,context,repetitions,windows,rmse_mean,rmse_std,mard_mean,mard_std,"
         "mae_mean,mae_std\n";
  for (const auto& r : table.rows)
    out << r.model << ',' << num(r.horizon_minutes) << ',' << r.context << ',' << r.repetitions << ','
        << r.windows << ',' << num(r.rmse.mean) << ',' << num(r.rmse.std) << ',' << num(r.mard.mean)
        << ',' << num(r.mard.std) << ',' << num(r.mae.mean) << ',' << num(r.mae.std) << '\n';
}

void write_metrics_json(const MetricsTable& table, const std::filesystem::path& path) {
  nlohmann::ordered_json doc;
  doc["horizon_error"] = "error at exactly the horizon step, not averaged over earlier steps";
  doc["std"] = "population standard deviation over repetitions";
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : table.rows) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["horizon_min"] = r.horizon_minutes;
    j["context"] = r.context;
    j["repetitions"] = r.repetitions;
    j["windows"] = r.windows;
    j["rmse"] = {{"mean", r.rmse.mean}, {"std", r.rmse.std}};
    j["mard"] = {{"mean", r.mard.mean}, {"std", r.mard.std}};
    j["mae"] = {{"mean", r.mae.mean}, {"std", r.mae.std}};
    rows.push_back(std::move(j));
  }
  doc["rows"] = std::move(rows);
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
}

void write_context_csv(const MetricsTable& table, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "model,context,windows,mae,ci50_lo,ci50_hi\n";
  for (const auto& c : table.context_mae)
    out << c.model << ',' << c.context << ',' << c.windows << ',' << num(c.mae) << ','
        << num(c.ci50_lo) << ',' << num(c.ci50_hi) << '\n';
}

}  // namespace hadnet::eval
