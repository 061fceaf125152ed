#include "hadnet/pipeline.hpp"

#include <glob.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "hadnet/baselines.hpp"
#include "hadnet/errors.hpp"
#include "hadnet/physio.hpp"
#include "hadnet/serialize.hpp"

namespace hadnet::pipeline {

namespace fs = std::filesystem;
using io::ordered_json;

std::string version() { return "0.1.0"; }

namespace {

std::string num(double x) {
  if (std::isnan(x)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  return out;
}

std::vector<EpisodeFrame> load_data(const fs::path& dir) {
  if (dir.empty() || !fs::is_directory(dir))
    throw Error(ErrorCode::InvalidArgument, "data directory not found: " + dir.string());
  auto episodes = read_episode_dir(dir);
  if (episodes.empty()) throw Error(ErrorCode::InvalidArgument, "no episode files in " + dir.string());
  return episodes;
}

void make_out(const fs::path& out) {
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "no output directory");
  fs::create_directories(out);
}

}  // namespace

SimulateResult run_simulate(const SimulateOptions& o) {
  if (o.patients == 0) throw Error(ErrorCode::InvalidArgument, "--patients must be at least 1");
  if (o.days == 0) throw Error(ErrorCode::InvalidArgument, "--days must be at least 1");
  make_out(o.out);
  physio::CohortConfig cfg;
  cfg.patients = o.patients;
  cfg.days = o.days;
  cfg.seed = o.seed;

  SimulateResult r;
  for (const auto& m : physio::generate_cohort(cfg)) {
    const auto& id = m.simulation.frame.patient_id;
    const fs::path csv = o.out / (id + ".csv");
    write_episode_csv(m.simulation.frame, csv);
    io::save_patient_truth({id, m.profile}, o.out / (id + ".truth.json"));
    r.episodes.push_back(csv);
    r.rows_per_episode = m.simulation.frame.size();
  }

  const ordered_json config = {{"patients", o.patients},
                               {"days", o.days},
                               {"seed", o.seed},
                               {"start_timestamp", cfg.start_timestamp}};
  write_manifest(o.out, {"simulate", io::hex64(io::fnv1a(config.dump())), {o.seed}, {}});
  return r;
}

TrainSummary run_train(const TrainOptions& o) {
  const auto episodes = load_data(o.data);
  const auto config = o.config ? io::load_train_config(*o.config) : training::TrainConfig{};
  config.validate();
  make_out(o.out);

  const auto split = training::split_train_test(episodes, config.split_ratio);
  const auto windows =
      training::window_dataset(split.train, config.model.w, config.model.h, config.train_stride);
  auto result = training::train(windows, config, o.seed);

  TrainSummary s;
  s.parameter_count = result.params.learned_count();
  s.windows = windows.size();
  s.history = result.history;
  s.warnings = result.warnings;
  s.checkpoint = o.out / "checkpoint.json";
  io::save_checkpoint({config.model, result.params, o.seed}, s.checkpoint);

  auto hist = open_csv(o.out / "history.csv");
  hist << "epoch,loss,l_mse,l_eps,l_nr\n";
  for (const auto& e : result.history)
    hist << e.epoch << ',' << num(e.mean.total) << ',' << num(e.mean.mse) << ',' << num(e.mean.eps) << ','
         << num(e.mean.nr) << '\n';
  hist.close();

  const auto resolved = io::to_json(config);
  io::write_text(o.out / "train_config.json", resolved.dump(2) + "\n");
  std::vector<std::string> inputs{o.data.string()};
  if (o.config) inputs.push_back(o.config->string());
  write_manifest(o.out, {"train", io::hex64(io::fnv1a(resolved.dump())), {o.seed}, inputs});
  return s;
}

EvaluateSummary run_evaluate(const EvaluateOptions& o) {
  const auto episodes = load_data(o.data);
  EvaluateSummary s;
  s.checkpoints = expand_glob(o.checkpoints);
  if (s.checkpoints.empty()) throw Error(ErrorCode::InvalidArgument, "no checkpoint matches " + o.checkpoints);
  for (const auto& b : o.baselines)
    if (b != "persistence" && b != "ar" && b != "ridge" && b != "physio")
      throw Error(ErrorCode::InvalidArgument, "unknown baseline '" + b + "'");

  std::vector<io::Checkpoint> cks;
  for (const auto& p : s.checkpoints) cks.push_back(io::load_checkpoint(p));
  const auto& mc = cks.front().config;
  for (const auto& ck : cks)
    if (ck.config.w != mc.w || ck.config.h != mc.h || ck.config.dt_minutes != mc.dt_minutes)
      throw Error(ErrorCode::InvalidArgument, "checkpoints disagree on window, horizon or step");
  make_out(o.out);

  const auto set = eval::make_eval_set(episodes, o.split_ratio, mc.w, mc.h);
  s.windows = set.windows.size();
  const auto split = training::split_train_test(episodes, o.split_ratio);
  const std::size_t h = mc.h;

  // Fitted baselines live here so the forecasters can reference them.
  baselines::ArModel ar;
  baselines::RidgeModel ridge;
  std::map<std::string, physio::PhysioParams> gamma;

  std::vector<eval::ModelRuns> models;
  for (const auto& b : o.baselines) {
    if (b == "persistence") {
      models.push_back({b, {[h](const training::WindowSample& w) {
                          return baselines::persistence_forecast(w.input, h);
                        }}});
    } else if (b == "ar") {
      ar = baselines::ar_fit(split.train, 5);
      if (!ar.warning.empty()) s.warnings.push_back(ar.warning);
      models.push_back({b, {[&ar, h](const training::WindowSample& w) {
                          return baselines::ar_forecast(ar, w.input, h);
                        }}});
    } else if (b == "ridge") {
      ridge = baselines::ridge_fit(training::window_dataset(split.train, mc.w, h, 1), 1.0);
      models.push_back({b, {[&ridge](const training::WindowSample& w) {
                          return baselines::ridge_forecast(ridge, w.input);
                        }}});
    } else {
      for (const auto& ep : split.train) {
        const std::vector<EpisodeFrame> one{ep};
        const auto windows = training::window_dataset(one, mc.w, h, 1);
        auto fit = physio::fit_physio_baseline(windows, physio::default_param_box(), mc.dt_minutes);
        if (!fit.warning.empty()) s.warnings.push_back(ep.patient_id + ": " + fit.warning);
        gamma[ep.patient_id] = fit.gamma;
      }
      const double dt = mc.dt_minutes;
      models.push_back({b, {[&gamma, h, dt](const training::WindowSample& w) {
                          return physio::forecast_physio(gamma.at(w.patient), w.input, h, dt);
                        }}});
    }
  }
  eval::ModelRuns hadnet{"hadnet", {}};
  for (const auto& ck : cks)
    hadnet.repetitions.push_back([&ck](const training::WindowSample& w) {
      return model::predict(w.input, ck.params, ck.config).forecast;
    });
  models.push_back(std::move(hadnet));

  // 30 and 60 minutes ahead, limited to what the checkpoints forecast.
  std::vector<std::size_t> horizons;
  for (double minutes : {30.0, 60.0}) {
    const auto steps = static_cast<std::size_t>(std::llround(minutes / mc.dt_minutes));
    if (steps >= 1 && steps <= h) horizons.push_back(steps);
  }
  if (horizons.empty()) horizons.push_back(h);
  s.table = eval::evaluate(set, models, horizons);
  eval::write_metrics_csv(s.table, o.out / "metrics.csv");
  eval::write_metrics_json(s.table, o.out / "metrics.json");
  eval::write_context_csv(s.table, o.out / "context_mae.csv");

  ManifestEntry m{"evaluate", "", {}, {o.data.string()}};
  ordered_json config = {{"split_ratio", o.split_ratio}, {"baselines", o.baselines}};
  for (std::size_t i = 0; i < cks.size(); ++i) {
    m.seeds.push_back(cks[i].seed);
    m.inputs.push_back(s.checkpoints[i].string());
  }
  m.config_hash = io::hex64(io::fnv1a(config.dump()));
  write_manifest(o.out, m);
  return s;
}

InspectSummary run_inspect(const InspectOptions& o) {
  const auto spec = parse_window_spec(o.window);
  const auto ck = io::load_checkpoint(o.checkpoint);
  const auto episodes = load_data(o.data);
  const auto& cfg = ck.config;

  const EpisodeFrame* ep = nullptr;
  for (const auto& e : episodes)
    if (e.patient_id == spec.patient) ep = &e;
  if (!ep) throw Error(ErrorCode::InvalidArgument, "no episode for patient " + spec.patient);
  const auto it = std::find(ep->timestamps.begin(), ep->timestamps.end(), spec.start);
  if (it == ep->timestamps.end())
    throw Error(ErrorCode::InvalidArgument, "no sample at " + format_timestamp(spec.start));
  const auto first = static_cast<std::size_t>(it - ep->timestamps.begin());
  if (first + cfg.w > ep->size()) throw Error(ErrorCode::LengthMismatch, "window runs past the episode end");
  const std::span<const Measurement> window(ep->rows.data() + first, cfg.w);

  make_out(o.out);
  const auto pred = model::predict(window, ck.params, cfg);
  const auto& traj = pred.trajectory;
  const auto& names = cfg.graph.node_names();
  const std::size_t g = cfg.graph.glucose_index();
  const std::size_t steps = traj.steps.size();
  auto stamp = [&](std::size_t t) {
    return format_timestamp(spec.start + static_cast<std::int64_t>(std::llround(t * cfg.dt_minutes * 60)));
  };

  auto gl = open_csv(o.out / "glucose.csv");
  gl << "step,timestamp,phase,measured,model\n";
  for (std::size_t t = 0; t < steps; ++t) {
    const bool inference = t < cfg.w;
    const double measured = first + t < ep->size() ? ep->rows[first + t][kGlucose] : std::nan("");
    double modelled = traj.steps[t].v[g];
    if (inference && !traj.inference_errors.empty()) modelled = measured - traj.inference_errors[t];
    gl << t << ',' << stamp(t) << ',' << (inference ? "inference" : "forecast") << ',' << num(measured) << ','
       << num(modelled) << '\n';
  }
  gl.close();

  auto pv = open_csv(o.out / "pvs.csv");
  pv << "step,timestamp,node,value\n";
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t n = 0; n < names.size(); ++n)
      pv << t << ',' << stamp(t) << ',' << names[n] << ',' << num(traj.steps[t].v[n]) << '\n';
  pv.close();

  InspectSummary s;
  s.steps = steps;
  auto im = open_csv(o.out / "impact.csv");
  im << "step,timestamp,node,impact\n";
  const auto curves = model::impact_curves(traj, cfg);
  for (const auto& c : curves) s.impact_nodes.push_back(c.name);
  for (std::size_t t = 0; t < steps; ++t)
    for (const auto& c : curves) im << t << ',' << stamp(t) << ',' << c.name << ',' << num(c.values[t]) << '\n';
  im.close();

  write_manifest(o.out, {"inspect", io::hex64(io::fnv1a(o.window)), {ck.seed},
                         {o.checkpoint.string(), o.data.string()}});
  return s;
}

std::vector<fs::path> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<fs::path> out;
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  if (rc == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw Error(ErrorCode::Io, "glob failed for " + pattern);
  std::sort(out.begin(), out.end());
  return out;
}

WindowSpec parse_window_spec(const std::string& spec) {
  const auto at = spec.rfind('@');
  if (at == std::string::npos || at == 0 || at + 1 == spec.size())
    throw Error(ErrorCode::InvalidArgument, "window must look like patient_id@YYYY-MM-DDTHH:MM:SS");
  try {
    return {spec.substr(0, at), parse_timestamp(spec.substr(at + 1))};
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad window timestamp: ") + e.what());
  }
}

void write_manifest(const fs::path& out, const ManifestEntry& e) {
  std::vector<std::string> files;
  for (const auto& f : fs::recursive_directory_iterator(out))
    if (f.is_regular_file()) {
      auto rel = fs::relative(f.path(), out).generic_string();
      if (rel != "manifest.json") files.push_back(std::move(rel));
    }
  std::sort(files.begin(), files.end());

  ordered_json j;
  j["tool"] = "hadnet";
  j["version"] = version();
  j["command"] = e.command;
  j["config_hash"] = e.config_hash;
  j["seeds"] = e.seeds;
  j["inputs"] = e.inputs;
  j["output_dir"] = out.string();
  auto arts = ordered_json::array();
  for (const auto& f : files) {
    const auto text = io::read_text(out / f);
    arts.push_back({{"path", f}, {"bytes", text.size()}, {"fnv1a", io::hex64(io::fnv1a(text))}});
  }
  j["artifacts"] = std::move(arts);
  io::write_text(out / "manifest.json", j.dump(2) + "\n");
}

}  // namespace hadnet::pipeline
