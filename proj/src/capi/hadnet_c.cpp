#include "hadnet/hadnet.h"

#include <cstdio>
#include <exception>
#include <sstream>
#include <string>

#include "hadnet/errors.hpp"
#include "hadnet/model.hpp"
#include "hadnet/pipeline.hpp"
#include "hadnet/serialize.hpp"

struct hadnet_model {
  hadnet::io::Checkpoint checkpoint;
};

namespace {

thread_local std::string g_last_error;

hadnet_status status_of(hadnet::ErrorCode code) {
  // Codes share declaration order with the enum, starting at 1.
  return static_cast<hadnet_status>(static_cast<int>(code) + 1);
}

template <typename F>
hadnet_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return HADNET_OK;
  } catch (const hadnet::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return HADNET_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return HADNET_E_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) throw hadnet::Error(hadnet::ErrorCode::InvalidArgument, std::string(what) + " is NULL");
}

void emit(hadnet_log_fn log, void* user, const std::string& line) {
  if (log) log(line.c_str(), user);
}

std::vector<std::string> split_list(const char* text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

extern "C" {

const char* hadnet_last_error(void) { return g_last_error.c_str(); }

const char* hadnet_status_name(hadnet_status status) {
  if (status == HADNET_OK) return "Ok";
  if (status == HADNET_E_INTERNAL) return "Internal";
  if (status < HADNET_E_INVALID_ARGUMENT || status > HADNET_E_PARSE) return "Unknown";
  return hadnet::to_string(static_cast<hadnet::ErrorCode>(static_cast<int>(status) - 1));
}

const char* hadnet_version(void) {
  static const std::string v = hadnet::pipeline::version();
  return v.c_str();
}

hadnet_status hadnet_simulate(const char* out_dir, size_t patients, size_t days, uint64_t seed,
                              size_t* rows_per_episode) {
  return guarded([&] {
    need(out_dir, "out_dir");
    const auto r = hadnet::pipeline::run_simulate({patients, days, seed, out_dir});
    if (rows_per_episode) *rows_per_episode = r.rows_per_episode;
  });
}

hadnet_status hadnet_train(const char* data_dir, const char* config_path, uint64_t seed, const char* out_dir,
                           hadnet_train_report* report, hadnet_log_fn log, void* user) {
  return guarded([&] {
    need(data_dir, "data_dir");
    need(out_dir, "out_dir");
    hadnet::pipeline::TrainOptions o;
    o.data = data_dir;
    if (config_path) o.config = std::filesystem::path(config_path);
    o.seed = seed;
    o.out = out_dir;
    const auto s = hadnet::pipeline::run_train(o);
    emit(log, user, "parameters: " + std::to_string(s.parameter_count));
    emit(log, user, "training windows: " + std::to_string(s.windows));
    for (const auto& w : s.warnings) emit(log, user, "warning: " + w);
    for (const auto& e : s.history) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %zu loss %.4f mse %.4f eps %.4f nr %.4f", e.epoch, e.mean.total,
                    e.mean.mse, e.mean.eps, e.mean.nr);
      emit(log, user, buf);
    }
    emit(log, user, "checkpoint: " + s.checkpoint.string());
    if (report) {
      *report = {};
      report->parameter_count = s.parameter_count;
      report->windows = s.windows;
      report->epochs = s.history.size();
      report->first_loss = s.history.empty() ? 0.0 : s.history.front().mean.total;
      report->final_loss = s.history.empty() ? 0.0 : s.history.back().mean.total;
      report->warnings = s.warnings.size();
    }
  });
}

hadnet_status hadnet_evaluate(const char* data_dir, const char* checkpoint_glob, const char* baselines,
                              const char* out_dir, hadnet_log_fn log, void* user) {
  return guarded([&] {
    need(data_dir, "data_dir");
    need(checkpoint_glob, "checkpoint_glob");
    need(baselines, "baselines");
    need(out_dir, "out_dir");
    hadnet::pipeline::EvaluateOptions o;
    o.data = data_dir;
    o.checkpoints = checkpoint_glob;
    o.baselines = split_list(baselines);
    o.out = out_dir;
    const auto s = hadnet::pipeline::run_evaluate(o);
    emit(log, user, "checkpoints: " + std::to_string(s.checkpoints.size()) +
                        ", test windows: " + std::to_string(s.windows));
    for (const auto& w : s.warnings) emit(log, user, "warning: " + w);
    for (const auto& r : s.table.rows) {
      if (r.context != "all") continue;
      char buf[200];
      std::snprintf(buf, sizeof buf, "%-12s %3.0f min  RMSE %7.3f +- %.3f  MARD %6.3f%%  MAE %7.3f", r.model.c_str(),
                    r.horizon_minutes, r.rmse.mean, r.rmse.std, r.mard.mean, r.mae.mean);
      emit(log, user, buf);
    }
  });
}

hadnet_status hadnet_inspect(const char* checkpoint_path, const char* window, const char* data_dir,
                             const char* out_dir, hadnet_log_fn log, void* user) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    need(window, "window");
    need(data_dir, "data_dir");
    need(out_dir, "out_dir");
    const auto s = hadnet::pipeline::run_inspect({checkpoint_path, window, data_dir, out_dir});
    std::string nodes;
    for (const auto& n : s.impact_nodes) nodes += (nodes.empty() ? "" : ", ") + n;
    emit(log, user, "steps: " + std::to_string(s.steps) + ", impact curves: " + nodes);
  });
}

hadnet_status hadnet_model_load(const char* checkpoint_path, hadnet_model** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    *out = nullptr;
    auto m = std::make_unique<hadnet_model>();
    m->checkpoint = hadnet::io::load_checkpoint(checkpoint_path);
    *out = m.release();
  });
}

void hadnet_model_free(hadnet_model* model) { delete model; }

size_t hadnet_model_param_count(const hadnet_model* model) {
  return model ? model->checkpoint.params.learned_count() : 0;
}

hadnet_status hadnet_model_dims(const hadnet_model* model, size_t* nodes, size_t* d, size_t* w, size_t* h) {
  return guarded([&] {
    need(model, "model");
    const auto& c = model->checkpoint.config;
    if (nodes) *nodes = c.node_count();
    if (d) *d = c.d;
    if (w) *w = c.w;
    if (h) *h = c.h;
  });
}

hadnet_status hadnet_model_predict(const hadnet_model* model, const double* window, size_t rows, double* forecast,
                                   size_t forecast_len) {
  return guarded([&] {
    need(model, "model");
    need(window, "window");
    need(forecast, "forecast");
    const auto& c = model->checkpoint.config;
    if (forecast_len != c.h)
      throw hadnet::Error(hadnet::ErrorCode::LengthMismatch, "forecast buffer must hold h values");
    std::vector<hadnet::Measurement> xs(rows);
    for (size_t t = 0; t < rows; ++t)
      for (size_t ch = 0; ch < hadnet::kChannelCount; ++ch) xs[t][ch] = window[t * hadnet::kChannelCount + ch];
    const auto p = hadnet::model::predict(xs, model->checkpoint.params, c);
    std::copy(p.forecast.begin(), p.forecast.end(), forecast);
  });
}

}  // extern "C"
