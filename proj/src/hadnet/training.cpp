#include "hadnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <queue>
#include <random>
#include <sstream>

#include "hadnet/errors.hpp"

namespace hadnet::training {

std::vector<WindowSample> window_dataset(std::span<const EpisodeFrame> episodes, std::size_t w,
                                         std::size_t h, std::size_t stride) {
  if (w == 0 || h == 0 || stride == 0) throw Error(ErrorCode::InvalidArgument, "w, h and stride must be >= 1");
  std::vector<WindowSample> out;
  const std::size_t span_len = w + h;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& ep = episodes[e];
    const auto dt = static_cast<std::int64_t>(std::llround(ep.dt_minutes * 60.0));
    std::size_t seg_start = 0;
    auto emit_segment = [&](std::size_t begin, std::size_t end) {
      for (std::size_t s = begin; s + span_len <= end; s += stride) {
        WindowSample ws;
        ws.input.assign(ep.rows.begin() + s, ep.rows.begin() + s + w);
        for (std::size_t i = 0; i < h; ++i) ws.target.push_back(ep.rows[s + w + i][kGlucose]);
        ws.patient = ep.patient_id;
        ws.start_timestamp = ep.timestamps.empty() ? 0 : ep.timestamps[s];
        ws.episode = e;
        ws.start = s;
        out.push_back(std::move(ws));
      }
    };
    for (std::size_t i = 0; i < ep.size(); ++i) {
      const bool missing = std::isnan(ep.rows[i][kGlucose]);
      const bool jump = i > 0 && !ep.timestamps.empty() && ep.timestamps[i] - ep.timestamps[i - 1] != dt;
      if (jump) {
        emit_segment(seg_start, i);
        seg_start = i;
      }
      if (missing) {
        emit_segment(seg_start, i);
        seg_start = i + 1;
      }
    }
    emit_segment(seg_start, ep.size());
  }
  return out;
}

Split split_train_test(std::span<const EpisodeFrame> episodes, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorCode::InvalidArgument, "split ratio must lie in (0, 1)");
  Split s;
  for (const auto& ep : episodes) {
    const auto cut = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(ep.size())));
    s.train.push_back(ep.slice(0, cut));
    s.test.push_back(ep.slice(cut, ep.size() - cut));
  }
  return s;
}

std::vector<RealismBound> default_realism_bounds() { return {{"G", "R", 10.0, 50.0}}; }

void LossConfig::validate(const gdpm::Graph& graph) const {
  if (!(alpha_eps >= 0.0) || !(alpha_nr >= 0.0)) throw Error(ErrorCode::InvalidArgument, "loss weights must be >= 0");
  for (const auto& b : bounds) {
    if (!(b.lo < b.hi)) throw Error(ErrorCode::InvalidArgument, "realism bound needs lo < hi");
    if (graph.sign(graph.index_of(b.target), graph.index_of(b.source)) == 0)
      throw Error(ErrorCode::InvalidArgument, "realism bound on a missing edge " + b.source + " -> " + b.target);
  }
}

namespace {

double hinge(double x, double lo, double hi) {
  if (x < lo) return (lo - x) * (lo - x);
  if (x > hi) return (x - hi) * (x - hi);
  return 0.0;
}

}  // namespace

LossTerms compute_loss(std::span<const double> forecast, std::span<const double> target,
                       const model::Trajectory& trajectory, const model::ModelConfig& config,
                       const LossConfig& loss) {
  if (forecast.size() != target.size() || forecast.empty())
    throw Error(ErrorCode::LengthMismatch, "forecast and target lengths differ");
  LossTerms terms;
  for (std::size_t i = 0; i < forecast.size(); ++i) {
    const double e = forecast[i] - target[i];
    terms.mse += e * e;
  }
  terms.mse /= static_cast<double>(forecast.size());
  terms.eps = trajectory.eps_pos_final * trajectory.eps_pos_final +
              trajectory.eps_neg_final * trajectory.eps_neg_final;

  const std::size_t k = config.node_count();
  for (const auto& b : loss.bounds) {
    if (trajectory.steps.empty()) break;
    const std::size_t t = config.graph.index_of(b.target);
    const std::size_t s = config.graph.index_of(b.source);
    double mean_gain = 0.0;
    for (const auto& step : trajectory.steps) {
      const Matrix m = gdpm::assemble_dynamics(config.graph.adjacency(), step.magnitudes, config.drain);
      mean_gain += std::abs(m(t, s)) / -m(s, s);
    }
    mean_gain /= static_cast<double>(trajectory.steps.size());
    terms.nr += hinge(mean_gain, b.lo, b.hi);
  }
  (void)k;
  terms.total = terms.mse + loss.alpha_eps * terms.eps + loss.alpha_nr * terms.nr;
  return terms;
}

LossTensors loss_graph(ad::Tape& tape, const model::GraphOutputs& outputs, const Matrix& targets,
                       const model::ModelConfig& config, const LossConfig& loss) {
  const Matrix& fv = outputs.forecast.value();
  if (!fv.same_shape(targets)) throw Error(ErrorCode::LengthMismatch, "targets must be B x h");
  const auto batch = static_cast<double>(targets.rows());
  LossTensors out;
  const ad::Tensor diff = ad::sub(outputs.forecast, tape.constant(targets));
  out.mse = ad::scale(ad::sum_sq(diff), 1.0 / (batch * static_cast<double>(targets.cols())));

  if (outputs.eps_pos.valid()) {
    out.eps = ad::scale(ad::add(ad::sum_sq(outputs.eps_pos), ad::sum_sq(outputs.eps_neg)), 1.0 / batch);
  } else {
    out.eps = tape.constant(Matrix(1, 1));
  }

  const std::size_t k = config.node_count();
  ad::Tensor nr = tape.constant(Matrix(1, 1));
  for (const auto& b : loss.bounds) {
    const std::size_t t = config.graph.index_of(b.target);
    const std::size_t s = config.graph.index_of(b.source);
    std::vector<ad::Tensor> gains;
    for (const auto& m : outputs.dynamics) gains.push_back(model::edge_gain(m, k, t, s));
    const ad::Tensor mean = ad::scale(ad::row_sum(ad::concat_cols(gains)),
                                      1.0 / static_cast<double>(gains.size()));
    nr = ad::add(nr, ad::scale(ad::sum(ad::relu_hinge(mean, b.lo, b.hi)), 1.0 / batch));
  }
  out.nr = nr;
  out.total = ad::add(ad::add(out.mse, ad::scale(out.eps, loss.alpha_eps)), ad::scale(out.nr, loss.alpha_nr));
  return out;
}

void AdamW::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw Error(ErrorCode::ShapeMismatch, "one gradient per parameter");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  ++t_;
  const auto& o = options_;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = grads[k];
    if (g.size() != p.size()) throw Error(ErrorCode::ShapeMismatch, "gradient size differs from parameter");
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= 1.0 - o.lr * o.weight_decay;
      m_[k][i] = o.beta1 * m_[k][i] + (1.0 - o.beta1) * g[i];
      v_[k][i] = o.beta2 * v_[k][i] + (1.0 - o.beta2) * g[i] * g[i];
      const double mhat = m_[k][i] / bc1;
      const double vhat = v_[k][i] / bc2;
      p[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

void TrainConfig::validate() const {
  model.validate();
  loss.validate(model.graph);
  if (batch_size < 2) throw Error(ErrorCode::InvalidArgument, "batch size must be >= 2");
  if (epochs == 0) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
  if (train_stride == 0) throw Error(ErrorCode::InvalidArgument, "train stride must be >= 1");
  if (!(optimizer.lr >= 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be >= 0");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw Error(ErrorCode::InvalidArgument, "split ratio in (0,1)");
}

model::Normalization fit_normalization(std::span<const WindowSample> samples,
                                       const model::ModelConfig& config) {
  const std::size_t k = config.node_count();
  const std::size_t g = config.graph.glucose_index();
  model::Normalization norm{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0)};

  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  std::array<double, kChannelCount> dose_sum{};
  std::array<std::size_t, kChannelCount> dose_n{};
  for (const auto& s : samples)
    for (const auto& x : s.input) {
      sum += x[kGlucose];
      sum_sq += x[kGlucose] * x[kGlucose];
      ++n;
      for (std::size_t c = 0; c < kChannelCount; ++c)
        if (c != kGlucose && x[c] > 0.0) {
          dose_sum[c] += x[c];
          ++dose_n[c];
        }
    }
  double mean = 100.0, spread = 1.0;
  if (n > 1) {
    mean = sum / static_cast<double>(n);
    spread = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean));
  }
  spread = std::max(spread, 1.0);
  norm.offset[g] = mean;
  norm.scale[g] = spread;

  for (const auto& [channel, node] : config.exogenous_indices())
    if (dose_n[channel] > 0)
      norm.scale[node] = std::max(norm.scale[node], dose_sum[channel] / static_cast<double>(dose_n[channel]));

  // Breadth-first along constructive edges from already scaled nodes.
  std::queue<std::size_t> frontier;
  for (std::size_t i = 0; i < k; ++i)
    if (norm.scale[i] > 0.0) frontier.push(i);
  while (!frontier.empty()) {
    const std::size_t src = frontier.front();
    frontier.pop();
    for (std::size_t tgt = 0; tgt < k; ++tgt)
      if (tgt != g && norm.scale[tgt] == 0.0 && config.graph.sign(tgt, src) > 0) {
        norm.scale[tgt] = norm.scale[src];
        frontier.push(tgt);
      }
  }
  for (auto& s : norm.scale)
    if (s == 0.0) s = spread;
  return norm;
}

model::BatchInputs make_batch(std::span<const WindowSample> samples, std::span<const std::size_t> order,
                              std::size_t w, Matrix* targets) {
  model::BatchInputs in;
  const std::size_t batch = order.size();
  in.steps.assign(w, Matrix(batch, kChannelCount));
  const std::size_t h = samples[order[0]].target.size();
  if (targets) *targets = Matrix(batch, h);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& s = samples[order[b]];
    if (s.input.size() != w) throw Error(ErrorCode::LengthMismatch, "window length differs from w");
    for (std::size_t t = 0; t < w; ++t)
      for (std::size_t c = 0; c < kChannelCount; ++c) in.steps[t](b, c) = s.input[t][c];
    if (targets)
      for (std::size_t i = 0; i < h; ++i) (*targets)(b, i) = s.target.at(i);
  }
  return in;
}

TrainResult train(std::span<const WindowSample> samples, const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  if (samples.size() < 2) throw Error(ErrorCode::EmptyDataset, "need at least two training windows");
  const auto& mc = config.model;

  TrainResult result;
  result.params = model::init_params(mc, seed);
  result.params.norm = fit_normalization(samples, mc);
  if (config.optimizer.lr == 0.0) result.warnings.push_back("learning rate is zero; parameters stay unchanged");

  AdamW optimizer(config.optimizer);
  std::mt19937_64 shuffle_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  auto slots = model::parameter_slots(result.params);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    LossTerms sums;
    std::size_t seen = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      if (count < 2) continue;  // batch statistics need two rows
      const std::span<const std::size_t> idx(order.data() + first, count);
      Matrix targets;
      const auto inputs = make_batch(samples, idx, mc.w, &targets);

      ad::Tape tape;
      const auto bound = model::bind_params(tape, result.params, true);
      const auto outputs = model::forward_batch(tape, bound, result.params, mc, inputs, true);
      const auto loss = loss_graph(tape, outputs, targets, mc, config.loss);
      const double total = loss.total.value()[0];
      if (!std::isfinite(total)) {
        std::ostringstream os;
        os << "epoch " << epoch << ", batch starting at " << first << ": mse=" << loss.mse.value()[0]
           << " eps=" << loss.eps.value()[0] << " nr=" << loss.nr.value()[0];
        throw Error(ErrorCode::NonFiniteLoss, os.str());
      }
      tape.backward(loss.total);

      std::vector<Matrix> grads;
      for (const auto& t : bound.all()) grads.push_back(tape.grad(t));
      optimizer.step(slots, grads);

      const auto c = static_cast<double>(count);
      sums.total += total * c;
      sums.mse += loss.mse.value()[0] * c;
      sums.eps += loss.eps.value()[0] * c;
      sums.nr += loss.nr.value()[0] * c;
      seen += count;
    }
    const auto n = static_cast<double>(std::max<std::size_t>(seen, 1));
    result.history.push_back({epoch, {sums.total / n, sums.mse / n, sums.eps / n, sums.nr / n}});
  }
  if (config.recalibrate_batch_norm && config.epochs > 0) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    recalibrate_batch_norm(result.params, mc, samples, order, config.batch_size);
  }
  return result;
}

void recalibrate_batch_norm(model::ModelParams& params, const model::ModelConfig& config,
                            std::span<const WindowSample> samples, std::span<const std::size_t> order,
                            std::size_t batch_size) {
  if (batch_size < 2) throw Error(ErrorCode::BatchTooSmall, "recalibration needs batches of two or more");
  model::ModelConfig cumulative = config;
  std::size_t batches = 0;
  for (std::size_t first = 0; first + 2 <= order.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, order.size() - first);
    if (count < 2) break;
    const std::span<const std::size_t> idx(order.data() + first, count);
    const auto inputs = make_batch(samples, idx, config.w, nullptr);
    // Momentum 1/n turns the exponential average into a plain mean.
    cumulative.bn_momentum = 1.0 / static_cast<double>(++batches);
    ad::Tape tape;
    const auto bound = model::bind_params(tape, params, false);
    model::forward_batch(tape, bound, params, cumulative, inputs, true);
  }
}

}  // namespace hadnet::training
