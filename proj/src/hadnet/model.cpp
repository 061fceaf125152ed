#include "hadnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "hadnet/errors.hpp"

namespace hadnet::model {

double default_attention_logit() { return std::log(1.0 / 11.0); }

std::vector<ExogenousLink> default_exogenous_map() {
  return {{kBolus, "I"}, {kBasal, "I"}, {kCarbs, "q_sto"}};
}

void ModelConfig::validate() const {
  if (graph.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty graph");
  if (d < 2) throw Error(ErrorCode::InvalidArgument, "model size d must be >= 2");
  if (w < 1 || h < 1) throw Error(ErrorCode::InvalidArgument, "window and horizon must be >= 1");
  if (!std::isfinite(a0)) throw Error(ErrorCode::InvalidArgument, "a0 must be finite");
  if (!(dt_minutes > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
  if (!(bn_eps >= 0.0) || !(bn_momentum >= 0.0 && bn_momentum <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "batch-norm eps/momentum out of range");
  exogenous_indices();
}

std::vector<std::pair<std::size_t, std::size_t>> ModelConfig::exogenous_indices() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& link : exogenous) {
    if (link.channel >= kChannelCount)
      throw Error(ErrorCode::InvalidArgument, "exogenous channel out of range");
    if (link.channel == kGlucose)
      throw Error(ErrorCode::MapTargetsGlucose, "the glucose channel is corrected, not added");
    const std::size_t node = graph.index_of(link.node);
    if (node == graph.glucose_index())
      throw Error(ErrorCode::MapTargetsGlucose, "exogenous input mapped onto the glucose node");
    out.emplace_back(link.channel, node);
  }
  return out;
}

std::size_t parameter_count(std::size_t k, std::size_t d) noexcept {
  return 3 * k * (d * d + d) + k * (d - 1);
}

std::size_t ModelParams::learned_count() const noexcept {
  return h0.size() + query.weight.size() + query.bias.size() + key.weight.size() +
         key.bias.size() + value.weight.size() + value.bias.size();
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t k = config.node_count();
  const std::size_t d = config.d;
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  std::uniform_real_distribution<double> dist(-bound, bound);

  auto maps = [&] {
    AffineMaps m{Matrix(k * d, d), Matrix(k, d)};
    for (auto& x : m.weight.values()) x = dist(rng);
    return m;
  };

  ModelParams p;
  p.h0 = Matrix(k, d - 1);
  p.query = maps();
  p.key = maps();
  p.value = maps();
  p.bn_gamma = Matrix(1, k * (d - 1), 1.0);
  p.bn_beta = Matrix(1, k * (d - 1), 0.0);
  p.bn_stats.assign(config.w + config.h, {Matrix(1, k * (d - 1), 0.0), Matrix(1, k * (d - 1), 1.0)});
  p.norm = {std::vector<double>(k, 0.0), std::vector<double>(k, 1.0)};
  return p;
}

Matrix k_linear(const Matrix& embedding, const AffineMaps& maps) {
  const std::size_t k = embedding.rows();
  const std::size_t d = embedding.cols();
  if (maps.weight.rows() != k * d || maps.weight.cols() != d || maps.bias.rows() != k ||
      maps.bias.cols() != d)
    throw Error(ErrorCode::ShapeMismatch, "k_linear needs one d x d map per embedding row");
  Matrix out(k, d);
  for (std::size_t n = 0; n < k; ++n) {
    for (std::size_t o = 0; o < d; ++o) out(n, o) = maps.bias(n, o);
    for (std::size_t i = 0; i < d; ++i) {
      const double e = embedding(n, i);
      const double* wr = maps.weight.row(n * d + i).data();
      for (std::size_t o = 0; o < d; ++o) out(n, o) += e * wr[o];
    }
  }
  return out;
}

Matrix attention_magnitudes(const Matrix& queries, const Matrix& keys, std::size_t d, double a0) {
  if (!queries.same_shape(keys) || queries.cols() != d)
    throw Error(ErrorCode::ShapeMismatch, "queries and keys must both be K x d");
  const std::size_t k = queries.rows();
  Matrix f(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += queries(i, c) * keys(j, c);
      const double z = a0 + s / static_cast<double>(d);
      f(i, j) = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
  return f;
}

namespace {

Matrix embed(const StepState& state, const Normalization& norm, std::size_t d) {
  const std::size_t k = state.v.size();
  Matrix e(k, d);
  for (std::size_t n = 0; n < k; ++n) {
    e(n, 0) = (state.v[n] - norm.offset[n]) / norm.scale[n];
    for (std::size_t c = 0; c + 1 < d; ++c) e(n, c + 1) = state.h(n, c);
  }
  return e;
}

void check_window(std::span<const Measurement> window, std::size_t w) {
  if (window.size() != w)
    throw Error(ErrorCode::LengthMismatch, "window must have exactly w steps");
  for (const auto& x : window) {
    for (double v : x)
      if (std::isnan(v)) throw Error(ErrorCode::GapInWindow, "missing sample inside window");
    if (!(x[kGlucose] > 0.0)) throw Error(ErrorCode::NonPositiveGlucose, "glucose must be positive");
  }
}

}  // namespace

DiffusionResult diffusion_step(const StepState& state, const ModelParams& params,
                               const ModelConfig& config) {
  const std::size_t k = config.node_count();
  const std::size_t d = config.d;
  if (state.v.size() != k || state.h.rows() != k || state.h.cols() != d - 1)
    throw Error(ErrorCode::ShapeMismatch, "state does not match the model configuration");

  const Matrix e = embed(state, params.norm, d);
  const Matrix q = k_linear(e, params.query);
  const Matrix keys = k_linear(e, params.key);
  const Matrix vals = k_linear(e, params.value);

  DiffusionResult r;
  r.magnitudes = attention_magnitudes(q, keys, d, config.a0);
  r.dynamics = gdpm::assemble_dynamics(config.graph.adjacency(), r.magnitudes, config.drain);
  r.dv = matvec(r.dynamics, state.v);
  // Only the first d - 1 value columns are carried into the hidden state.
  r.dh = Matrix(k, d - 1);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double m = r.dynamics(i, j);
      if (m == 0.0) continue;
      for (std::size_t c = 0; c + 1 < d; ++c) r.dh(i, c) += m * vals(j, c);
    }
  return r;
}

std::vector<double> add_exogenous(std::span<const double> v, const Measurement& x,
                                  const ModelConfig& config) {
  std::vector<double> out(v.begin(), v.end());
  for (const auto& [channel, node] : config.exogenous_indices()) out.at(node) += x[channel];
  return out;
}

std::vector<double> set_glucose(std::span<const double> v, const Measurement& x,
                                const ModelConfig& config, Phase phase) {
  if (phase != Phase::Inference)
    throw Error(ErrorCode::ContractViolation, "set_glucose is only defined during inference");
  std::vector<double> out(v.begin(), v.end());
  out.at(config.graph.glucose_index()) = x[kGlucose];
  return out;
}

ErrorUpdate add_error(std::span<const double> v, const Measurement& x, const ModelConfig& config) {
  const auto pos = config.graph.error_pos_index();
  const auto neg = config.graph.error_neg_index();
  if (!pos || !neg) throw Error(ErrorCode::MissingErrorNodes, "graph has no error compartments");
  ErrorUpdate u{std::vector<double>(v.begin(), v.end()), 0.0};
  u.error = x[kGlucose] - u.v.at(config.graph.glucose_index());
  if (u.error >= 0.0) u.v[*pos] += u.error;
  else u.v[*neg] -= u.error;
  return u;
}

namespace {

Matrix batch_norm_eval(const Matrix& x, const ModelParams& p, const ad::BatchNormState& stats,
                       double eps) {
  Matrix out(x.rows(), x.cols());
  const std::size_t width = x.cols();
  for (std::size_t n = 0; n < x.rows(); ++n)
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t ch = n * width + c;
      const double xhat =
          (x(n, c) - stats.running_mean[ch]) / std::sqrt(stats.running_var[ch] + eps);
      out(n, c) = p.bn_gamma[ch] * xhat + p.bn_beta[ch];
    }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

}  // namespace

Prediction predict(std::span<const Measurement> window, const ModelParams& params,
                   const ModelConfig& config) {
  config.validate();
  check_window(window, config.w);
  if (params.bn_stats.size() != config.w + config.h)
    throw Error(ErrorCode::ShapeMismatch, "need one set of batch-norm statistics per step");
  const std::size_t k = config.node_count();
  const std::size_t g = config.graph.glucose_index();
  const bool with_errors = config.graph.error_pos_index() && config.graph.error_neg_index();

  StepState state{std::vector<double>(k, 0.0), params.h0};
  state.v[g] = window[0][kGlucose];

  Prediction out;
  auto& traj = out.trajectory;
  traj.steps.reserve(config.w + config.h);

  auto advance = [&](std::vector<double> v_in) {
    state.v = v_in;
    auto step = diffusion_step(state, params, config);
    state.h = batch_norm_eval(add(state.h, step.dh), params, params.bn_stats[traj.steps.size()],
                              config.bn_eps);
    std::vector<double> v(k);
    for (std::size_t i = 0; i < k; ++i) {
      v[i] = v_in[i] + step.dv[i];
      if (config.clamping) v[i] = std::max(v[i], 0.0);
    }
    traj.steps.push_back({std::move(v_in), v, std::move(step.dv), std::move(step.magnitudes)});
    return v;
  };

  for (std::size_t t = 0; t < config.w; ++t) {
    const Measurement& x = window[t];
    auto v = advance(add_exogenous(state.v, x, config));
    if (with_errors) {
      auto u = add_error(v, x, config);
      v = std::move(u.v);
      traj.inference_errors.push_back(u.error);
      traj.eps_pos_final += std::max(u.error, 0.0);
      traj.eps_neg_final += std::max(-u.error, 0.0);
      traj.eps_pos_cumulative.push_back(traj.eps_pos_final);
      traj.eps_neg_cumulative.push_back(traj.eps_neg_final);
    }
    v = set_glucose(v, x, config, Phase::Inference);
    state.v = v;
    traj.steps.back().v = std::move(v);
  }
  for (std::size_t t = 0; t < config.h; ++t) {
    state.v = advance(state.v);
    out.forecast.push_back(state.v[g]);
  }
  return out;
}

std::vector<ImpactCurve> impact_curves(const Trajectory& trajectory, const ModelConfig& config) {
  const std::size_t g = config.graph.glucose_index();
  std::vector<ImpactCurve> curves;
  for (std::size_t p = 0; p < config.node_count(); ++p) {
    if (config.graph.sign(g, p) == 0) continue;
    ImpactCurve c{p, config.graph.node_names()[p], {}};
    double acc = 0.0;
    for (const auto& step : trajectory.steps) {
      acc += step.magnitudes(g, p) * step.v_in[p];
      c.values.push_back(std::abs(acc));
    }
    curves.push_back(std::move(c));
  }
  return curves;
}

}  // namespace hadnet::model
