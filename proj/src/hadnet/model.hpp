#pragma once

// HAD-Net: hybrid attention-diffusion forecaster. The physiological variables
// v (K nodes, natural units) diffuse along the signed graph with per-step
// magnitudes F produced by a sigmoid attention over the embedding
// E = [v | H], where H holds K hidden feature rows of width d - 1.
//
// This header holds the single-window (non-differentiable) inference path;
// the batched differentiable graph used for training lives in
// model_graph.hpp and must stay numerically identical to it.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hadnet/autodiff.hpp"
#include "hadnet/episode.hpp"
#include "hadnet/gdpm.hpp"
#include "hadnet/matrix.hpp"

namespace hadnet::model {

/// a0 such that sigmoid(a0) = 1/12, i.e. ln(1/11).
double default_attention_logit();

struct ExogenousLink {
  std::size_t channel = kBolus;
  std::string node;

  friend bool operator==(const ExogenousLink&, const ExogenousLink&) = default;
};

/// bolus -> I, basal -> I, carbs -> q_sto.
std::vector<ExogenousLink> default_exogenous_map();

struct ModelConfig {
  gdpm::Graph graph = gdpm::default_graph();
  std::size_t d = 32;
  std::size_t w = 32;
  std::size_t h = 12;
  double dt_minutes = 5.0;
  double a0 = default_attention_logit();
  std::vector<ExogenousLink> exogenous = default_exogenous_map();
  bool clamping = true;
  gdpm::DrainMode drain = gdpm::DrainMode::Literal;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t node_count() const noexcept { return graph.size(); }
  std::size_t hidden_width() const noexcept { return d - 1; }

  /// Throws InvalidArgument, UnknownNode or MapTargetsGlucose.
  void validate() const;
  /// (channel, node index) pairs.
  std::vector<std::pair<std::size_t, std::size_t>> exogenous_indices() const;
};

/// One affine map per node: row k of the output is e_k W_k + b_k, where W_k
/// is rows [k d, (k + 1) d) of `weight`.
struct AffineMaps {
  Matrix weight;  // (K d) x d
  Matrix bias;    // K x d
};

/// Fixed input scaling of the PV column of the embedding. Not learned.
struct Normalization {
  std::vector<double> offset;
  std::vector<double> scale;
};

struct ModelParams {
  Matrix h0;  // K x (d - 1)
  AffineMaps query;
  AffineMaps key;
  AffineMaps value;
  Matrix bn_gamma;  // 1 x K(d - 1)
  Matrix bn_beta;   // 1 x K(d - 1)
  // Running statistics per time step (w + h entries): the hidden state
  // distribution drifts along the window, so one shared set would not
  // match the batch statistics seen in training at any single step.
  std::vector<ad::BatchNormState> bn_stats;
  Normalization norm;

  /// Learned parameters excluding batch-norm: 3K(d^2 + d) + K(d - 1).
  std::size_t learned_count() const noexcept;
};

std::size_t parameter_count(std::size_t k, std::size_t d) noexcept;

/// Uniform(-1/sqrt(d), 1/sqrt(d)) weights, zero biases, zero H0, identity
/// batch-norm and normalization. Deterministic in the seed.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

Matrix k_linear(const Matrix& embedding, const AffineMaps& maps);
Matrix attention_magnitudes(const Matrix& queries, const Matrix& keys, std::size_t d, double a0);

struct StepState {
  std::vector<double> v;
  Matrix h;  // K x (d - 1)
};

struct DiffusionResult {
  std::vector<double> dv;
  Matrix dh;          // K x (d - 1)
  Matrix magnitudes;  // F
  Matrix dynamics;    // M
};

DiffusionResult diffusion_step(const StepState& state, const ModelParams& params,
                               const ModelConfig& config);

std::vector<double> add_exogenous(std::span<const double> v, const Measurement& x,
                                  const ModelConfig& config);

enum class Phase { Inference, Forecast };

/// Overwrites the glucose PV with the measurement. Only legal during
/// inference; throws ContractViolation otherwise.
std::vector<double> set_glucose(std::span<const double> v, const Measurement& x,
                                const ModelConfig& config, Phase phase = Phase::Inference);

struct ErrorUpdate {
  std::vector<double> v;
  double error = 0.0;  // measured - predicted glucose
};

/// Routes the glucose residual into eps_pos / eps_neg. Throws MissingErrorNodes.
ErrorUpdate add_error(std::span<const double> v, const Measurement& x, const ModelConfig& config);

struct TrajectoryStep {
  std::vector<double> v_in;  // state the diffusion step acted on
  std::vector<double> v;     // state after every operation of the step
  std::vector<double> dv;
  Matrix magnitudes;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;     // w + h entries
  std::vector<double> inference_errors;  // w entries (empty without error nodes)
  // Running sums of the residuals routed into eps_pos / eps_neg. The PV
  // compartments themselves also drain through the graph; these do not.
  std::vector<double> eps_pos_cumulative;
  std::vector<double> eps_neg_cumulative;
  double eps_pos_final = 0.0;
  double eps_neg_final = 0.0;
};

struct Prediction {
  std::vector<double> forecast;  // h glucose values
  Trajectory trajectory;
};

/// Runs inference over the w measured steps then rolls out h forecast steps.
/// Batch-norm uses running statistics. Throws GapInWindow, NonPositiveGlucose
/// or LengthMismatch.
Prediction predict(std::span<const Measurement> window, const ModelParams& params,
                   const ModelConfig& config);

struct ImpactCurve {
  std::size_t node = 0;
  std::string name;
  std::vector<double> values;  // one per trajectory step, nondecreasing
};

/// |cumulative sum of F(G, p) v_in(p)| for every node p with A(G, p) != 0.
std::vector<ImpactCurve> impact_curves(const Trajectory& trajectory, const ModelConfig& config);

}  // namespace hadnet::model
