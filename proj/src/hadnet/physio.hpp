#pragma once

// Five-compartment glucose/insulin/carbs simulator (minimal-model lineage):
//   dG/dt     = -p1 (G - Gb) - R G + f_carb k_abs q_gut
//   dR/dt     = -p2 R + p3 I
//   dI/dt     = -k_I I                    (+ bolus/basal impulses)
//   dq_sto/dt = -k_emp q_sto              (+ carbs impulses)
//   dq_gut/dt =  k_emp q_sto - k_abs q_gut
// Units: G mg/dL, I U, R 1/min, q g, time in minutes.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hadnet/episode.hpp"
#include "hadnet/gdpm.hpp"
#include "hadnet/training.hpp"

namespace hadnet::physio {

struct PhysioParams {
  double p1 = 0.02;
  double p2 = 0.012;
  double p3 = 3.5e-5;
  double k_i = 0.015;
  double k_emp = 0.045;
  double k_abs = 0.035;
  double f_carb = 3.5;
  double g_basal = 150.0;

  static constexpr std::size_t kCount = 8;
  std::array<double, kCount> to_array() const;
  static PhysioParams from_array(const std::array<double, kCount>& a);
  /// Throws InvalidArgument unless every rate is positive and Gb lies in [70, 180].
  void validate() const;

  friend bool operator==(const PhysioParams&, const PhysioParams&) = default;
};

inline constexpr std::array<const char*, PhysioParams::kCount> kParamNames{
    "p1", "p2", "p3", "k_i", "k_emp", "k_abs", "f_carb", "g_basal"};

struct ParamBox {
  PhysioParams lo;
  PhysioParams hi;

  bool contains(const PhysioParams& p) const;
  PhysioParams center() const;
};

ParamBox default_param_box();

enum StateIndex : std::size_t { kG = 0, kI, kR, kQsto, kQgut };
inline constexpr std::size_t kStateCount = 5;
using State = std::array<double, kStateCount>;
inline constexpr std::array<const char*, kStateCount> kStateNames{"G", "I", "R", "q_sto", "q_gut"};

State derivative(const PhysioParams& p, const State& x);

/// Equilibrium under a constant basal infusion (U/min) with empty gut.
State basal_steady_state(const PhysioParams& p, double basal_per_minute);

/// Applies the step's impulses (bolus + basal into I, carbs into q_sto), then
/// integrates dt minutes with `substeps` RK4 steps. Throws UnstableIntegration.
State advance(const PhysioParams& p, State x, const Measurement& inputs, double dt_minutes,
              std::size_t substeps);

struct SimulationOptions {
  double dt_minutes = 5.0;
  std::size_t substeps = 5;  // RK4 substep = dt / substeps, kept <= 1 min
  double noise_sd = 2.0;
  double sensor_lo = 40.0;
  double sensor_hi = 400.0;
};

enum class EventKind { Meal, Bolus, Basal };

struct Event {
  std::size_t step = 0;
  EventKind kind = EventKind::Meal;
  double amount = 0.0;  // g, U, or U per step
};

struct EventSchedule {
  std::size_t steps = 0;
  std::vector<Event> events;

  /// Per-step channel values (glucose left at 0). Throws InvalidArgument for
  /// negative doses or events past the end.
  std::vector<Measurement> inputs() const;
};

struct Simulation {
  EpisodeFrame frame;
  std::vector<State> states;  // deterministic state at the start of every step
};

/// Deterministic states plus noisy clamped CGM readings. The initial state
/// defaults to the basal steady state of the first step's basal dose.
Simulation simulate_patient(const PhysioParams& params, const EventSchedule& schedule,
                            const SimulationOptions& options, std::uint64_t noise_seed,
                            std::string patient_id = "patient", std::int64_t start_timestamp = 0,
                            std::optional<State> initial = std::nullopt);

struct ScheduleOptions {
  double carbs_lo = 30.0;
  double carbs_hi = 80.0;
  double icr_lo = 8.0;  // g per U
  double icr_hi = 15.0;
  double basal_lo = 0.5;  // U per hour
  double basal_hi = 1.2;
  double bolus_lead_min = -15.0;  // bolus time relative to the meal, minutes
  double bolus_lead_max = 10.0;
  double missed_bolus = 0.1;
};

struct PatientProfile {
  PhysioParams gamma;
  double basal_u_per_hour = 0.8;
  double icr = 10.0;
};

/// Three meals a day (breakfast 06:30-09:00, lunch 11:30-13:30, dinner
/// 18:00-20:00), boluses sized by the carb ratio, constant basal.
EventSchedule make_schedule(const PatientProfile& profile, std::size_t days, double dt_minutes,
                            const ScheduleOptions& options, std::mt19937_64& rng);

struct CohortConfig {
  std::size_t patients = 17;
  std::size_t days = 14;
  std::uint64_t seed = 0;
  std::int64_t start_timestamp = 1704067200;  // 2024-01-01T00:00:00
  ParamBox box = default_param_box();
  ScheduleOptions schedule;
  SimulationOptions simulation;
};

struct CohortMember {
  PatientProfile profile;
  EventSchedule schedule;
  Simulation simulation;
};

std::vector<CohortMember> generate_cohort(const CohortConfig& config);

/// The simulator written as GDPM terms (external inputs and p1 Gb excluded),
/// with per-node scales that express the per-step magnitudes in units where
/// the requirement bound applies.
gdpm::PhysioModelSpec gdpm_spec(const PhysioParams& params, double dt_minutes);
gdpm::PvTrajectory pv_trajectory(std::span<const State> states, double dt_minutes);

// Physiological forecasting baseline.

/// Replays the window from the basal steady state, resetting G to every
/// measurement, with the initial remote insulin corrected by least squares on
/// the replay residuals; then integrates h steps with basal continued and no
/// new events. Element t is the glucose t + 1 steps after the window.
std::vector<double> forecast_physio(const PhysioParams& params, std::span<const Measurement> window,
                                    std::size_t h, double dt_minutes, std::size_t substeps = 5);

struct FitOptions {
  std::size_t max_windows = 96;
  std::size_t max_evaluations = 1500;
  double tolerance = 1e-6;
  std::size_t substeps = 2;
};

struct FitResult {
  PhysioParams gamma;
  double objective = 0.0;  // mean squared forecast error on the fitting windows
  std::size_t evaluations = 0;
  bool diverged = false;
  std::string warning;
};

/// Least squares over the box by Nelder-Mead in normalised coordinates.
/// On failure returns the box centre with `diverged` set.
FitResult fit_physio_baseline(std::span<const training::WindowSample> windows, const ParamBox& box,
                              double dt_minutes, const FitOptions& options = {});

}  // namespace hadnet::physio
