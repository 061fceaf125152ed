#include "hadnet/model_graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "hadnet/errors.hpp"

namespace hadnet::model {

using ad::Tape;
using ad::Tensor;

std::vector<Tensor> ParamTensors::all() const {
  return {h0, query_weight, query_bias, key_weight, key_bias, value_weight, value_bias, bn_gamma, bn_beta};
}

std::vector<Matrix*> parameter_slots(ModelParams& p) {
  return {&p.h0,         &p.query.weight, &p.query.bias, &p.key.weight, &p.key.bias,
          &p.value.weight, &p.value.bias, &p.bn_gamma,   &p.bn_beta};
}

ParamTensors bind_params(Tape& tape, const ModelParams& p, bool requires_grad) {
  Matrix h0(1, p.h0.size());
  std::copy(p.h0.data(), p.h0.data() + p.h0.size(), h0.data());
  return {tape.leaf(std::move(h0), requires_grad),
          tape.leaf(p.query.weight, requires_grad), tape.leaf(p.query.bias, requires_grad),
          tape.leaf(p.key.weight, requires_grad),   tape.leaf(p.key.bias, requires_grad),
          tape.leaf(p.value.weight, requires_grad), tape.leaf(p.value.bias, requires_grad),
          tape.leaf(p.bn_gamma, requires_grad),     tape.leaf(p.bn_beta, requires_grad)};
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::Map<RowMajor, Eigen::Unaligned, Eigen::OuterStride<>>;
using ConstStrided = Eigen::Map<const RowMajor, Eigen::Unaligned, Eigen::OuterStride<>>;

// Node n's B x d block of a B x (K d) tensor.
ConstStrided block(const Matrix& m, std::size_t n, std::size_t d) {
  return {m.data() + n * d, static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(d),
          Eigen::OuterStride<>(static_cast<Eigen::Index>(m.cols()))};
}
Strided block(Matrix& m, std::size_t n, std::size_t d) {
  return {m.data() + n * d, static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(d),
          Eigen::OuterStride<>(static_cast<Eigen::Index>(m.cols()))};
}
// Rows [n d, (n + 1) d) of a (K d) x d weight.
ConstStrided map_of(const Matrix& w, std::size_t n, std::size_t d) {
  return {w.data() + n * d * d, static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d),
          Eigen::OuterStride<>(static_cast<Eigen::Index>(d))};
}
Strided map_of(Matrix& w, std::size_t n, std::size_t d) {
  return {w.data() + n * d * d, static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d),
          Eigen::OuterStride<>(static_cast<Eigen::Index>(d))};
}

}  // namespace

Tensor k_linear(const Tensor& e, const Tensor& weight, const Tensor& bias, std::size_t k,
                std::size_t d) {
  const Matrix& ev = e.value();
  const Matrix& wv = weight.value();
  const Matrix& bv = bias.value();
  if (ev.cols() != k * d || wv.rows() != k * d || wv.cols() != d || bv.rows() != k || bv.cols() != d)
    throw Error(ErrorCode::ShapeMismatch, "k_linear shapes");
  const std::size_t batch = ev.rows();
  Matrix out(batch, k * d);
  for (std::size_t b = 0; b < batch; ++b) std::copy(bv.data(), bv.data() + k * d, out.data() + b * k * d);
  for (std::size_t n = 0; n < k; ++n) block(out, n, d).noalias() += block(ev, n, d) * map_of(wv, n, d);

  return e.tape()->record(std::move(out), {e, weight, bias},
                          [e, weight, bias, k, d](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& ev = t.value(e);
    const Matrix& wv = t.value(weight);
    if (t.requires_grad(e)) {
      Matrix& ge = t.grad(e);
      for (std::size_t n = 0; n < k; ++n)
        block(ge, n, d).noalias() += block(g, n, d) * map_of(wv, n, d).transpose();
    }
    if (t.requires_grad(weight)) {
      Matrix& gw = t.grad(weight);
      for (std::size_t n = 0; n < k; ++n)
        map_of(gw, n, d).noalias() += block(ev, n, d).transpose() * block(g, n, d);
    }
    if (t.requires_grad(bias)) {
      Matrix& gb = t.grad(bias);
      for (std::size_t b = 0; b < g.rows(); ++b)
        for (std::size_t i = 0; i < k * d; ++i) gb[i] += g[b * k * d + i];
    }
  });
}

Tensor attention_magnitudes(const Tensor& q, const Tensor& keys, std::size_t k, std::size_t d,
                            double a0) {
  const Matrix& qv = q.value();
  const Matrix& kv = keys.value();
  if (!qv.same_shape(kv) || qv.cols() != k * d) throw Error(ErrorCode::ShapeMismatch, "attention shapes");
  const std::size_t batch = qv.rows();
  const double inv_d = 1.0 / static_cast<double>(d);
  Matrix out(batch, k * k);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < k; ++i) {
      const double* qi = qv.data() + b * k * d + i * d;
      for (std::size_t j = 0; j < k; ++j) {
        const double* kj = kv.data() + b * k * d + j * d;
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
        const double z = a0 + s * inv_d;
        out(b, i * k + j) = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      }
    }
  return q.tape()->record(std::move(out), {q, keys},
                          [q, keys, k, d, inv_d](Tape& t, const Matrix& f, const Matrix& g) {
    const Matrix& qv = t.value(q);
    const Matrix& kv = t.value(keys);
    const bool need_q = t.requires_grad(q);
    const bool need_k = t.requires_grad(keys);
    Matrix* gq = need_q ? &t.grad(q) : nullptr;
    Matrix* gk = need_k ? &t.grad(keys) : nullptr;
    for (std::size_t b = 0; b < f.rows(); ++b)
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const double fij = f(b, i * k + j);
          const double ds = g(b, i * k + j) * fij * (1.0 - fij) * inv_d;
          if (ds == 0.0) continue;
          const std::size_t qi = b * k * d + i * d;
          const std::size_t kj = b * k * d + j * d;
          if (gq)
            for (std::size_t c = 0; c < d; ++c) (*gq)[qi + c] += ds * kv[kj + c];
          if (gk)
            for (std::size_t c = 0; c < d; ++c) (*gk)[kj + c] += ds * qv[qi + c];
        }
  });
}

Tensor assemble_dynamics(const Tensor& f, const Matrix& adjacency, gdpm::DrainMode mode) {
  const Matrix& fv = f.value();
  const std::size_t k = adjacency.rows();
  if (fv.cols() != k * k) throw Error(ErrorCode::ShapeMismatch, "magnitudes must be B x K^2");
  const bool literal = mode == gdpm::DrainMode::Literal;
  Matrix out(fv.rows(), k * k);
  for (std::size_t b = 0; b < fv.rows(); ++b) {
    const double* fr = fv.data() + b * k * k;
    double* m = out.data() + b * k * k;
    for (std::size_t i = 0; i < k; ++i) {
      double drain = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        m[i * k + j] = adjacency(i, j) * fr[i * k + j];
        drain += std::abs(adjacency(j, i)) * (literal ? fr[i * k + j] : fr[j * k + i]);
      }
      m[i * k + i] -= drain;
    }
  }
  return f.tape()->record(std::move(out), {f}, [f, adjacency, k, literal](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& gf = t.grad(f);
    for (std::size_t b = 0; b < g.rows(); ++b) {
      const double* gr = g.data() + b * k * k;
      double* out = gf.data() + b * k * k;
      for (std::size_t i = 0; i < k; ++i) {
        const double gdiag = gr[i * k + i];
        for (std::size_t j = 0; j < k; ++j) {
          out[i * k + j] += adjacency(i, j) * gr[i * k + j];
          const double a = std::abs(adjacency(j, i));
          if (a == 0.0) continue;
          if (literal) out[i * k + j] -= a * gdiag;
          else out[j * k + i] -= a * gdiag;
        }
      }
    }
  });
}

Tensor mix(const Tensor& m, const Tensor& x, std::size_t k, std::size_t width) {
  const Matrix& mv = m.value();
  const Matrix& xv = x.value();
  if (mv.cols() != k * k || xv.cols() != k * width || mv.rows() != xv.rows())
    throw Error(ErrorCode::ShapeMismatch, "mix shapes");
  Matrix out(xv.rows(), k * width);
  for (std::size_t b = 0; b < xv.rows(); ++b)
    for (std::size_t i = 0; i < k; ++i) {
      double* o = out.data() + b * k * width + i * width;
      for (std::size_t j = 0; j < k; ++j) {
        const double mij = mv(b, i * k + j);
        if (mij == 0.0) continue;
        const double* xr = xv.data() + b * k * width + j * width;
        for (std::size_t c = 0; c < width; ++c) o[c] += mij * xr[c];
      }
    }
  return m.tape()->record(std::move(out), {m, x}, [m, x, k, width](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& mv = t.value(m);
    const Matrix& xv = t.value(x);
    Matrix* gm = t.requires_grad(m) ? &t.grad(m) : nullptr;
    Matrix* gx = t.requires_grad(x) ? &t.grad(x) : nullptr;
    for (std::size_t b = 0; b < g.rows(); ++b)
      for (std::size_t i = 0; i < k; ++i) {
        const double* gr = g.data() + b * k * width + i * width;
        for (std::size_t j = 0; j < k; ++j) {
          const double* xr = xv.data() + b * k * width + j * width;
          if (gm) {
            double s = 0.0;
            for (std::size_t c = 0; c < width; ++c) s += gr[c] * xr[c];
            (*gm)(b, i * k + j) += s;
          }
          if (gx) {
            const double mij = mv(b, i * k + j);
            if (mij == 0.0) continue;
            double* out = gx->data() + b * k * width + j * width;
            for (std::size_t c = 0; c < width; ++c) out[c] += mij * gr[c];
          }
        }
      }
  });
}

Tensor embed(const Tensor& v, const Tensor& h, const Normalization& norm, std::size_t d) {
  const Matrix& vv = v.value();
  const Matrix& hv = h.value();
  const std::size_t k = vv.cols();
  if (hv.rows() != vv.rows() || hv.cols() != k * (d - 1) || norm.scale.size() != k ||
      norm.offset.size() != k)
    throw Error(ErrorCode::ShapeMismatch, "embed shapes");
  Matrix out(vv.rows(), k * d);
  for (std::size_t b = 0; b < vv.rows(); ++b)
    for (std::size_t n = 0; n < k; ++n) {
      out(b, n * d) = (vv(b, n) - norm.offset[n]) / norm.scale[n];
      for (std::size_t c = 0; c + 1 < d; ++c) out(b, n * d + 1 + c) = hv(b, n * (d - 1) + c);
    }
  std::vector<double> scale = norm.scale;
  return v.tape()->record(std::move(out), {v, h}, [v, h, d, scale](Tape& t, const Matrix&, const Matrix& g) {
    const std::size_t k = scale.size();
    if (t.requires_grad(v)) {
      Matrix& gv = t.grad(v);
      for (std::size_t b = 0; b < g.rows(); ++b)
        for (std::size_t n = 0; n < k; ++n) gv(b, n) += g(b, n * d) / scale[n];
    }
    if (t.requires_grad(h)) {
      Matrix& gh = t.grad(h);
      for (std::size_t b = 0; b < g.rows(); ++b)
        for (std::size_t n = 0; n < k; ++n)
          for (std::size_t c = 0; c + 1 < d; ++c) gh(b, n * (d - 1) + c) += g(b, n * d + 1 + c);
    }
  });
}

Tensor take_blocks(const Tensor& x, std::size_t k, std::size_t d, std::size_t keep) {
  const Matrix& xv = x.value();
  if (xv.cols() != k * d || keep > d) throw Error(ErrorCode::ShapeMismatch, "take_blocks shapes");
  Matrix out(xv.rows(), k * keep);
  for (std::size_t b = 0; b < xv.rows(); ++b)
    for (std::size_t n = 0; n < k; ++n)
      for (std::size_t c = 0; c < keep; ++c) out(b, n * keep + c) = xv(b, n * d + c);
  return x.tape()->record(std::move(out), {x}, [x, k, d, keep](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& gx = t.grad(x);
    for (std::size_t b = 0; b < g.rows(); ++b)
      for (std::size_t n = 0; n < k; ++n)
        for (std::size_t c = 0; c < keep; ++c) gx(b, n * d + c) += g(b, n * keep + c);
  });
}

Tensor edge_gain(const Tensor& m, std::size_t k, std::size_t target, std::size_t source) {
  const Matrix& mv = m.value();
  if (mv.cols() != k * k || target >= k || source >= k) throw Error(ErrorCode::ShapeMismatch, "edge_gain shapes");
  Matrix out(mv.rows(), 1);
  for (std::size_t b = 0; b < mv.rows(); ++b) {
    const double drain = -mv(b, source * k + source);
    // Saturated attention can switch the drain off; the gain is then undefined.
    out(b, 0) = drain > 0.0 ? std::abs(mv(b, target * k + source)) / drain : std::nan("");
  }
  return m.tape()->record(std::move(out), {m}, [m, k, target, source](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& mv = t.value(m);
    Matrix& gm = t.grad(m);
    for (std::size_t b = 0; b < g.rows(); ++b) {
      const double a = mv(b, target * k + source);
      const double ms = mv(b, source * k + source);
      const double sign = a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
      gm(b, target * k + source) += g(b, 0) * sign / -ms;
      gm(b, source * k + source) += g(b, 0) * std::abs(a) / (ms * ms);
    }
  });
}

namespace {

struct StepTensors {
  Tensor dv;
  Tensor dh;
  Tensor dynamics;
};

StepTensors diffusion(const Tensor& v, const Tensor& h, const ParamTensors& p, const ModelParams& params,
                      const ModelConfig& config) {
  const std::size_t k = config.node_count();
  const std::size_t d = config.d;
  const Tensor e = embed(v, h, params.norm, d);
  const Tensor q = k_linear(e, p.query_weight, p.query_bias, k, d);
  const Tensor keys = k_linear(e, p.key_weight, p.key_bias, k, d);
  const Tensor vals = k_linear(e, p.value_weight, p.value_bias, k, d);
  const Tensor f = attention_magnitudes(q, keys, k, d, config.a0);
  const Tensor m = assemble_dynamics(f, config.graph.adjacency(), config.drain);
  return {mix(m, v, k, 1), mix(m, take_blocks(vals, k, d, d - 1), k, d - 1), m};
}

Matrix column(const Matrix& x, std::size_t c) {
  Matrix out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) out(r, 0) = x(r, c);
  return out;
}

}  // namespace

GraphOutputs forward_batch(Tape& tape, const ParamTensors& p, ModelParams& params,
                           const ModelConfig& config, const BatchInputs& inputs, bool training) {
  config.validate();
  if (inputs.steps.size() != config.w)
    throw Error(ErrorCode::LengthMismatch, "batch inputs must hold exactly w steps");
  const std::size_t batch = inputs.steps.front().rows();
  const std::size_t k = config.node_count();
  const std::size_t g = config.graph.glucose_index();
  const auto exo = config.exogenous_indices();
  const auto ep = config.graph.error_pos_index();
  const auto en = config.graph.error_neg_index();
  const bool with_errors = ep && en;
  const ad::BatchNormOptions bn{training, config.bn_eps, config.bn_momentum};

  Matrix v0(batch, k);
  for (std::size_t b = 0; b < batch; ++b) v0(b, g) = inputs.steps.front()(b, kGlucose);
  Tensor v = tape.constant(std::move(v0));
  Tensor h = ad::repeat_rows(p.h0, batch);

  GraphOutputs out;
  std::vector<Tensor> pos_parts;
  std::vector<Tensor> neg_parts;

  if (params.bn_stats.size() != config.w + config.h)
    throw Error(ErrorCode::ShapeMismatch, "need one set of batch-norm statistics per step");
  auto update = [&](const Tensor& v_in) {
    auto step = diffusion(v_in, h, p, params, config);
    auto& stats = params.bn_stats[out.dynamics.size()];
    h = ad::batch_norm(ad::add(h, step.dh), p.bn_gamma, p.bn_beta, &stats, bn);
    Tensor next = ad::add(v_in, step.dv);
    if (config.clamping) next = ad::relu(next);
    out.dynamics.push_back(step.dynamics);
    return next;
  };

  for (std::size_t t = 0; t < config.w; ++t) {
    const Matrix& x = inputs.steps[t];
    if (x.rows() != batch || x.cols() != kChannelCount)
      throw Error(ErrorCode::ShapeMismatch, "batch step must be B x channels");
    Matrix added(batch, k);
    for (std::size_t b = 0; b < batch; ++b)
      for (const auto& [channel, node] : exo) added(b, node) += x(b, channel);
    v = update(ad::add(v, tape.constant(std::move(added))));

    const Tensor measured = tape.constant(column(x, kGlucose));
    if (with_errors) {
      const Tensor err = ad::sub(measured, ad::slice_cols(v, g, 1));
      const Tensor pos = ad::relu(err);
      const Tensor neg = ad::relu(ad::scale(err, -1.0));
      v = ad::assign_cols(v, *ep, ad::add(ad::slice_cols(v, *ep, 1), pos));
      v = ad::assign_cols(v, *en, ad::add(ad::slice_cols(v, *en, 1), neg));
      pos_parts.push_back(pos);
      neg_parts.push_back(neg);
    }
    v = ad::assign_cols(v, g, measured);
    out.states.push_back(v);
  }

  std::vector<Tensor> glucose;
  for (std::size_t t = 0; t < config.h; ++t) {
    v = update(v);
    out.states.push_back(v);
    glucose.push_back(ad::slice_cols(v, g, 1));
  }
  out.forecast = ad::concat_cols(glucose);
  if (with_errors) {
    out.eps_pos = ad::row_sum(ad::concat_cols(pos_parts));
    out.eps_neg = ad::row_sum(ad::concat_cols(neg_parts));
  }
  return out;
}

}  // namespace hadnet::model
