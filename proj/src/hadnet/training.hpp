#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hadnet/episode.hpp"
#include "hadnet/model.hpp"
#include "hadnet/model_graph.hpp"

namespace hadnet::training {

struct WindowSample {
  std::vector<Measurement> input;  // w steps
  std::vector<double> target;      // next h glucose values
  std::string patient;
  std::int64_t start_timestamp = 0;
  std::size_t episode = 0;  // index into the episode list the window came from
  std::size_t start = 0;    // row of the first input step within that episode
};

/// Every gap-free window of w + h consecutive steps, stepping by `stride`
/// inside each gap-free segment. A gap is a missing glucose value or a
/// timestamp jump different from dt.
std::vector<WindowSample> window_dataset(std::span<const EpisodeFrame> episodes, std::size_t w,
                                         std::size_t h, std::size_t stride = 1);

struct Split {
  std::vector<EpisodeFrame> train;
  std::vector<EpisodeFrame> test;
};

/// Chronological split of every episode: the first floor(ratio T) steps train.
Split split_train_test(std::span<const EpisodeFrame> episodes, double ratio = 0.8);

/// Quadratic hinge on the trajectory-mean gain of edge target <- source
/// (target change per unit of source drained).
struct RealismBound {
  std::string target;
  std::string source;
  double lo = 0.0;
  double hi = 1.0;

  friend bool operator==(const RealismBound&, const RealismBound&) = default;
};

/// Insulin sensitivity: remote insulin -> glucose in [10, 50] mg/dL per U.
std::vector<RealismBound> default_realism_bounds();

struct LossConfig {
  double alpha_eps = 0.01;
  double alpha_nr = 0.1;
  std::vector<RealismBound> bounds = default_realism_bounds();

  void validate(const gdpm::Graph& graph) const;
};

struct LossTerms {
  double total = 0.0;
  double mse = 0.0;
  double eps = 0.0;
  double nr = 0.0;
};

/// Single-window loss. Throws LengthMismatch.
LossTerms compute_loss(std::span<const double> forecast, std::span<const double> target,
                       const model::Trajectory& trajectory, const model::ModelConfig& config,
                       const LossConfig& loss);

struct LossTensors {
  ad::Tensor total;
  ad::Tensor mse;
  ad::Tensor eps;
  ad::Tensor nr;
};

/// Batch-mean loss on the differentiable graph; targets is B x h.
LossTensors loss_graph(ad::Tape& tape, const model::GraphOutputs& outputs, const Matrix& targets,
                       const model::ModelConfig& config, const LossConfig& loss);

struct AdamWOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay: p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps).
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamWOptions options_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  model::ModelConfig model;
  LossConfig loss;
  AdamWOptions optimizer;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::size_t train_stride = 4;
  double split_ratio = 0.8;
  bool recalibrate_batch_norm = true;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  LossTerms mean;
};

struct TrainResult {
  model::ModelParams params;
  std::vector<EpochRecord> history;
  std::vector<std::string> warnings;
};

/// Embedding normalization fitted on the training windows: glucose is
/// standardized; compartments fed by exogenous channels use the mean nonzero
/// dose; other nodes inherit from constructive sources, else the glucose spread.
model::Normalization fit_normalization(std::span<const WindowSample> samples,
                                       const model::ModelConfig& config);

/// Mini-batch AdamW over shuffled windows. Deterministic given the seed.
/// Throws EmptyDataset or NonFiniteLoss.
TrainResult train(std::span<const WindowSample> samples, const TrainConfig& config,
                  std::uint64_t seed);

/// Replaces the running batch-norm statistics by the average of the batch
/// statistics over one training-mode pass with frozen parameters.
void recalibrate_batch_norm(model::ModelParams& params, const model::ModelConfig& config,
                            std::span<const WindowSample> samples, std::span<const std::size_t> order,
                            std::size_t batch_size);

/// Stacks windows [first, first + count) of `order` into batched inputs.
model::BatchInputs make_batch(std::span<const WindowSample> samples,
                              std::span<const std::size_t> order, std::size_t w, Matrix* targets);

}  // namespace hadnet::training
