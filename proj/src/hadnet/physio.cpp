#include "hadnet/physio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "hadnet/errors.hpp"

namespace hadnet::physio {

std::array<double, PhysioParams::kCount> PhysioParams::to_array() const {
  return {p1, p2, p3, k_i, k_emp, k_abs, f_carb, g_basal};
}

PhysioParams PhysioParams::from_array(const std::array<double, kCount>& a) {
  return {a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]};
}

void PhysioParams::validate() const {
  const auto a = to_array();
  for (std::size_t i = 0; i + 1 < kCount; ++i)
    if (!(a[i] > 0.0) || !std::isfinite(a[i]))
      throw Error(ErrorCode::InvalidArgument, std::string("rate must be positive: ") + kParamNames[i]);
  if (!(g_basal >= 70.0 && g_basal <= 180.0))
    throw Error(ErrorCode::InvalidArgument, "basal glucose must lie in [70, 180]");
}

bool ParamBox::contains(const PhysioParams& p) const {
  const auto x = p.to_array(), l = lo.to_array(), u = hi.to_array();
  for (std::size_t i = 0; i < PhysioParams::kCount; ++i)
    if (x[i] < l[i] || x[i] > u[i]) return false;
  return true;
}

PhysioParams ParamBox::center() const {
  const auto l = lo.to_array(), u = hi.to_array();
  std::array<double, PhysioParams::kCount> c{};
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.5 * (l[i] + u[i]);
  return PhysioParams::from_array(c);
}

ParamBox default_param_box() {
  return {{0.01, 0.008, 2e-5, 0.01, 0.03, 0.02, 2.0, 120.0},
          {0.03, 0.02, 6e-5, 0.02, 0.06, 0.05, 5.0, 180.0}};
}

State derivative(const PhysioParams& p, const State& x) {
  return {
      -p.p1 * (x[kG] - p.g_basal) - x[kR] * x[kG] + p.f_carb * p.k_abs * x[kQgut],
      -p.k_i * x[kI],
      -p.p2 * x[kR] + p.p3 * x[kI],
      -p.k_emp * x[kQsto],
      p.k_emp * x[kQsto] - p.k_abs * x[kQgut],
  };
}

State basal_steady_state(const PhysioParams& p, double basal_per_minute) {
  State x{};
  x[kI] = basal_per_minute / p.k_i;
  x[kR] = p.p3 * x[kI] / p.p2;
  x[kG] = p.p1 * p.g_basal / (p.p1 + x[kR]);
  return x;
}

namespace {

State axpy(const State& x, double a, const State& y) {
  State out;
  for (std::size_t i = 0; i < kStateCount; ++i) out[i] = x[i] + a * y[i];
  return out;
}

}  // namespace

State advance(const PhysioParams& p, State x, const Measurement& inputs, double dt_minutes,
              std::size_t substeps) {
  x[kI] += inputs[kBolus] + inputs[kBasal];
  x[kQsto] += inputs[kCarbs];
  const double h = dt_minutes / static_cast<double>(substeps);
  for (std::size_t s = 0; s < substeps; ++s) {
    const State k1 = derivative(p, x);
    const State k2 = derivative(p, axpy(x, 0.5 * h, k1));
    const State k3 = derivative(p, axpy(x, 0.5 * h, k2));
    const State k4 = derivative(p, axpy(x, h, k3));
    for (std::size_t i = 0; i < kStateCount; ++i) x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  for (double v : x)
    if (!std::isfinite(v)) throw Error(ErrorCode::UnstableIntegration, "non-finite simulator state");
  return x;
}

std::vector<Measurement> EventSchedule::inputs() const {
  std::vector<Measurement> out(steps, Measurement{0.0, 0.0, 0.0, 0.0});
  for (const auto& e : events) {
    if (e.step >= steps) throw Error(ErrorCode::InvalidArgument, "event after the end of the schedule");
    if (!(e.amount >= 0.0)) throw Error(ErrorCode::InvalidArgument, "negative dose");
    const std::size_t channel = e.kind == EventKind::Meal ? kCarbs : e.kind == EventKind::Bolus ? kBolus : kBasal;
    out[e.step][channel] += e.amount;
  }
  return out;
}

Simulation simulate_patient(const PhysioParams& params, const EventSchedule& schedule,
                            const SimulationOptions& options, std::uint64_t noise_seed,
                            std::string patient_id, std::int64_t start_timestamp,
                            std::optional<State> initial) {
  params.validate();
  if (options.substeps == 0 || options.dt_minutes / static_cast<double>(options.substeps) > 1.0)
    throw Error(ErrorCode::InvalidArgument, "integration substep must be at most one minute");
  const auto inputs = schedule.inputs();

  Simulation sim;
  auto& f = sim.frame;
  f.patient_id = std::move(patient_id);
  f.dt_minutes = options.dt_minutes;
  const auto dt_seconds = static_cast<std::int64_t>(std::llround(options.dt_minutes * 60.0));

  State x = initial ? *initial
                    : basal_steady_state(params, inputs.empty() ? 0.0 : inputs[0][kBasal] / options.dt_minutes);
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, options.noise_sd);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    sim.states.push_back(x);
    Measurement row = inputs[t];
    const double eps = options.noise_sd > 0.0 ? noise(rng) : 0.0;
    row[kGlucose] = std::clamp(x[kG] + eps, options.sensor_lo, options.sensor_hi);
    f.rows.push_back(row);
    f.timestamps.push_back(start_timestamp + static_cast<std::int64_t>(t) * dt_seconds);
    x = advance(params, x, inputs[t], options.dt_minutes, options.substeps);
  }
  return sim;
}

EventSchedule make_schedule(const PatientProfile& profile, std::size_t days, double dt_minutes,
                            const ScheduleOptions& o, std::mt19937_64& rng) {
  const auto per_day = static_cast<std::size_t>(std::llround(24.0 * 60.0 / dt_minutes));
  EventSchedule s;
  s.steps = per_day * days;
  const double basal_step = profile.basal_u_per_hour * dt_minutes / 60.0;
  for (std::size_t t = 0; t < s.steps; ++t) s.events.push_back({t, EventKind::Basal, basal_step});

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const std::array<std::pair<double, double>, 3> windows{{{6.5, 9.0}, {11.5, 13.5}, {18.0, 20.0}}};
  for (std::size_t day = 0; day < days; ++day) {
    for (const auto& [from, to] : windows) {
      const double minute = 60.0 * uniform(from, to);
      const auto meal = day * per_day + static_cast<std::size_t>(minute / dt_minutes);
      const double carbs = std::round(uniform(o.carbs_lo, o.carbs_hi));
      s.events.push_back({meal, EventKind::Meal, carbs});
      if (unit(rng) < o.missed_bolus) continue;
      const double lead = uniform(o.bolus_lead_min, o.bolus_lead_max);
      const auto shift = static_cast<long long>(std::llround(lead / dt_minutes));
      const long long at = std::clamp<long long>(static_cast<long long>(meal) + shift, 0,
                                                 static_cast<long long>(s.steps) - 1);
      const double dose = std::round(10.0 * carbs / profile.icr) / 10.0;
      s.events.push_back({static_cast<std::size_t>(at), EventKind::Bolus, dose});
    }
  }
  std::stable_sort(s.events.begin(), s.events.end(), [](const Event& a, const Event& b) { return a.step < b.step; });
  return s;
}

std::vector<CohortMember> generate_cohort(const CohortConfig& config) {
  if (config.patients == 0) throw Error(ErrorCode::InvalidArgument, "cohort needs at least one patient");
  if (config.days == 0) throw Error(ErrorCode::InvalidArgument, "cohort needs at least one day");
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto lo = config.box.lo.to_array(), hi = config.box.hi.to_array();
  const auto& so = config.schedule;

  std::vector<CohortMember> cohort;
  for (std::size_t n = 0; n < config.patients; ++n) {
    CohortMember m;
    std::array<double, PhysioParams::kCount> g{};
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = lo[i] + (hi[i] - lo[i]) * unit(rng);
    m.profile.gamma = PhysioParams::from_array(g);
    m.profile.basal_u_per_hour = so.basal_lo + (so.basal_hi - so.basal_lo) * unit(rng);
    m.profile.icr = so.icr_lo + (so.icr_hi - so.icr_lo) * unit(rng);
    const std::uint64_t schedule_seed = rng();
    const std::uint64_t noise_seed = rng();
    std::mt19937_64 schedule_rng(schedule_seed);
    m.schedule = make_schedule(m.profile, config.days, config.simulation.dt_minutes, so, schedule_rng);
    char id[32];
    std::snprintf(id, sizeof id, "patient_%02zu", n);
    m.simulation = simulate_patient(m.profile.gamma, m.schedule, config.simulation, noise_seed, id,
                                    config.start_timestamp);
    cohort.push_back(std::move(m));
  }
  return cohort;
}

gdpm::PhysioModelSpec gdpm_spec(const PhysioParams& p, double dt_minutes) {
  using gdpm::Sign;
  gdpm::PhysioModelSpec spec;
  spec.nodes.assign(kStateNames.begin(), kStateNames.end());
  auto term = [&](std::size_t target, std::size_t source, Sign sign, auto rate, const char* label) {
    spec.terms.push_back({target, source, sign,
                          [rate](std::span<const double> v, double) { return rate(v); }, label});
  };
  term(kG, kG, Sign::Negative, [p](std::span<const double> v) { return -p.p1 * v[kG]; }, "glucose effectiveness");
  term(kG, kR, Sign::Negative, [](std::span<const double> v) { return -v[kR] * v[kG]; }, "insulin action");
  term(kG, kQgut, Sign::Positive, [p](std::span<const double> v) { return p.f_carb * p.k_abs * v[kQgut]; },
       "carb appearance");
  term(kR, kR, Sign::Negative, [p](std::span<const double> v) { return -p.p2 * v[kR]; }, "remote decay");
  term(kR, kI, Sign::Positive, [p](std::span<const double> v) { return p.p3 * v[kI]; }, "remote uptake");
  term(kI, kI, Sign::Negative, [p](std::span<const double> v) { return -p.k_i * v[kI]; }, "insulin clearance");
  term(kQsto, kQsto, Sign::Negative, [p](std::span<const double> v) { return -p.k_emp * v[kQsto]; },
       "gastric emptying");
  term(kQgut, kQsto, Sign::Positive, [p](std::span<const double> v) { return p.k_emp * v[kQsto]; },
       "gut inflow");
  term(kQgut, kQgut, Sign::Negative, [p](std::span<const double> v) { return -p.k_abs * v[kQgut]; },
       "gut absorption");

  // R in 1/min multiplies G; bounding G by 1000 mg/dL keeps insulin action below one.
  // I and the gut compartments get a factor 2 margin over their outflow rates.
  const double s_r = 1000.0 * dt_minutes;
  const double s_i = std::max(1.0, 2.0 * s_r * p.p3 * dt_minutes);
  const double s_q = std::max(1.0, 2.0 * p.f_carb * p.k_abs * dt_minutes);
  spec.scale = {1.0, s_i, s_r, s_q, s_q};
  return spec;
}

gdpm::PvTrajectory pv_trajectory(std::span<const State> states, double dt_minutes) {
  gdpm::PvTrajectory t{dt_minutes, {}};
  for (const auto& s : states) t.states.emplace_back(s.begin(), s.end());
  return t;
}

namespace {

// Replays the window with G reset to every measurement. Returns the state
// after the last step; `residuals` gets predicted - measured glucose for
// steps 1..w-1 when given.
State replay(const PhysioParams& params, State x, std::span<const Measurement> window, double dt_minutes,
             std::size_t substeps, std::vector<double>* residuals) {
  for (std::size_t t = 0; t < window.size(); ++t) {
    if (residuals && t > 0) residuals->push_back(x[kG] - window[t][kGlucose]);
    x[kG] = window[t][kGlucose];
    x = advance(params, x, window[t], dt_minutes, substeps);
  }
  return x;
}

}  // namespace

std::vector<double> forecast_physio(const PhysioParams& params, std::span<const Measurement> window,
                                    std::size_t h, double dt_minutes, std::size_t substeps) {
  if (window.empty()) throw Error(ErrorCode::LengthMismatch, "empty window");
  State start = basal_steady_state(params, window.front()[kBasal] / dt_minutes);

  // Insulin given before the window is invisible to the replay. Estimate an
  // offset of the initial remote insulin from the one-step residuals: to first
  // order an offset d lowers the step-t prediction by d exp(-p2 t dt) G dt.
  std::vector<double> residuals;
  replay(params, start, window, dt_minutes, substeps, &residuals);
  double num = 0.0, den = 0.0;
  for (std::size_t t = 1; t < window.size(); ++t) {
    const double a = std::exp(-params.p2 * dt_minutes * static_cast<double>(t - 1)) *
                     window[t - 1][kGlucose] * dt_minutes;
    num += a * residuals[t - 1];
    den += a * a;
  }
  if (den > 0.0) start[kR] = std::max(0.0, start[kR] + num / den);

  State x = replay(params, start, window, dt_minutes, substeps, nullptr);
  const Measurement basal_only{0.0, 0.0, window.back()[kBasal], 0.0};
  std::vector<double> out;
  out.reserve(h);
  out.push_back(x[kG]);
  for (std::size_t t = 1; t < h; ++t) {
    x = advance(params, x, basal_only, dt_minutes, substeps);
    out.push_back(x[kG]);
  }
  return out;
}

namespace {

using Point = std::array<double, PhysioParams::kCount>;

PhysioParams from_unit(const ParamBox& box, const Point& u) {
  const auto lo = box.lo.to_array(), hi = box.hi.to_array();
  Point x{};
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = lo[i] + (hi[i] - lo[i]) * std::clamp(u[i], 0.0, 1.0);
  return PhysioParams::from_array(x);
}

}  // namespace

FitResult fit_physio_baseline(std::span<const training::WindowSample> windows, const ParamBox& box,
                              double dt_minutes, const FitOptions& options) {
  FitResult result;
  result.gamma = box.center();
  if (windows.empty()) {
    result.diverged = true;
    result.warning = "no fitting windows; using the box centre";
    return result;
  }
  // Evenly spaced subsample keeps the cost per evaluation bounded.
  std::vector<std::size_t> pick;
  const std::size_t n = std::min(options.max_windows, windows.size());
  for (std::size_t i = 0; i < n; ++i) pick.push_back(i * windows.size() / n);

  auto objective = [&](const Point& u) {
    const PhysioParams p = from_unit(box, u);
    double sse = 0.0;
    std::size_t count = 0;
    try {
      for (std::size_t i : pick) {
        const auto& w = windows[i];
        const auto f = forecast_physio(p, w.input, w.target.size(), dt_minutes, options.substeps);
        for (std::size_t t = 0; t < f.size(); ++t) {
          const double e = f[t] - w.target[t];
          sse += e * e;
        }
        count += f.size();
      }
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
    // Soft wall keeps the simplex inside the unit cube.
    double outside = 0.0;
    for (double v : u) outside += std::pow(std::max(0.0, v - 1.0), 2) + std::pow(std::max(0.0, -v), 2);
    return sse / static_cast<double>(count) + 1e4 * outside;
  };

  // Nelder-Mead, standard coefficients.
  constexpr std::size_t dim = PhysioParams::kCount;
  std::vector<Point> simplex(dim + 1);
  std::vector<double> values(dim + 1);
  simplex[0].fill(0.5);
  for (std::size_t i = 0; i < dim; ++i) {
    simplex[i + 1] = simplex[0];
    simplex[i + 1][i] += 0.25;
  }
  for (std::size_t i = 0; i <= dim; ++i) values[i] = objective(simplex[i]);
  const double center_value = values[0];
  std::size_t evals = dim + 1;

  std::vector<std::size_t> order(dim + 1);
  while (evals < options.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[dim - 1];
    if (std::abs(values[worst] - values[best]) <= options.tolerance * (std::abs(values[best]) + 1e-12)) break;

    Point centroid{};
    for (std::size_t i : order)
      if (i != worst)
        for (std::size_t d = 0; d < dim; ++d) centroid[d] += simplex[i][d] / static_cast<double>(dim);
    auto along = [&](double coef) {
      Point p;
      for (std::size_t d = 0; d < dim; ++d) p[d] = centroid[d] + coef * (simplex[worst][d] - centroid[d]);
      return p;
    };

    const Point reflected = along(-1.0);
    const double fr = objective(reflected);
    ++evals;
    if (fr < values[best]) {
      const Point expanded = along(-2.0);
      const double fe = objective(expanded);
      ++evals;
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const Point contracted = along(outside ? -0.5 : 0.5);
    const double fc = objective(contracted);
    ++evals;
    if (fc < (outside ? fr : values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (std::size_t i : order) {
      if (i == best) continue;
      for (std::size_t d = 0; d < dim; ++d) simplex[i][d] = simplex[best][d] + 0.5 * (simplex[i][d] - simplex[best][d]);
      values[i] = objective(simplex[i]);
      ++evals;
    }
  }

  const auto best = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
  result.evaluations = evals;
  if (!std::isfinite(values[best]) || values[best] > center_value) {
    result.diverged = true;
    result.objective = center_value;
    result.warning = "physiological fit diverged; using the box centre";
    return result;
  }
  result.gamma = from_unit(box, simplex[best]);
  result.objective = values[best];
  return result;
}

}  // namespace hadnet::physio
