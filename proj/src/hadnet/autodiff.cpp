#include "hadnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hadnet/errors.hpp"

namespace hadnet::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

Tape& tape_of(const Tensor& t) {
  if (!t.valid()) throw Error(ErrorCode::InvalidArgument, "tensor is not attached to a tape");
  return *t.tape();
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Matrix& Tensor::value() const { return tape_of(*this).value(*this); }

Tensor Tape::leaf(Matrix value, bool requires_grad) {
  nodes_.push_back({std::move(value), Matrix{}, requires_grad, nullptr});
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::record(Matrix value, std::initializer_list<Tensor> parents, Backward backward) {
  return record(std::move(value), std::span<const Tensor>(parents.begin(), parents.size()),
                std::move(backward));
}

Tensor Tape::record(Matrix value, std::span<const Tensor> parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (p.tape() != this) throw Error(ErrorCode::InvalidArgument, "parent recorded on another tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back({std::move(value), Matrix{}, needs, needs ? std::move(backward) : nullptr});
  return Tensor(this, nodes_.size() - 1);
}

Matrix& Tape::grad(const Tensor& t) {
  auto& node = nodes_.at(t.id());
  if (node.grad.empty() && !node.value.empty())
    node.grad = Matrix(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(const Tensor& loss) {
  auto& root = nodes_.at(loss.id());
  if (root.value.rows() != 1 || root.value.cols() != 1)
    throw Error(ErrorCode::NonScalarLoss, "loss must be 1x1");
  grad(loss)[0] += 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.backward && !node.grad.empty()) node.backward(*this, node.value, node.grad);
  }
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  const Matrix& bv = bias.value();
  require(xv.cols() == wv.rows() && bv.rows() == 1 && bv.cols() == wv.cols(), "affine shapes");
  Matrix out(xv.rows(), wv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double* o = out.row(r).data();
    std::copy(bv.data(), bv.data() + bv.cols(), o);
    for (std::size_t i = 0; i < xv.cols(); ++i) {
      const double xi = xv(r, i);
      const double* wr = wv.row(i).data();
      for (std::size_t c = 0; c < wv.cols(); ++c) o[c] += xi * wr[c];
    }
  }
  return tape_of(x).record(std::move(out), {x, weight, bias},
                           [x, weight, bias](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& xv = t.value(x);
    const Matrix& wv = t.value(weight);
    if (t.requires_grad(x)) {
      Matrix& gx = t.grad(x);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t i = 0; i < wv.rows(); ++i) {
          double s = 0.0;
          const double* wr = wv.row(i).data();
          const double* gr = g.row(r).data();
          for (std::size_t c = 0; c < g.cols(); ++c) s += gr[c] * wr[c];
          gx(r, i) += s;
        }
    }
    if (t.requires_grad(weight)) {
      Matrix& gw = t.grad(weight);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t i = 0; i < wv.rows(); ++i) {
          const double xi = xv(r, i);
          double* gwr = gw.row(i).data();
          const double* gr = g.row(r).data();
          for (std::size_t c = 0; c < g.cols(); ++c) gwr[c] += xi * gr[c];
        }
    }
    if (t.requires_grad(bias)) {
      Matrix& gb = t.grad(bias);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Matrix out = hadnet::matmul(a.value(), b.value());
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad(a);
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t k = 0; k < av.cols(); ++k) {
          double s = 0.0;
          for (std::size_t j = 0; j < bv.cols(); ++j) s += g(i, j) * bv(k, j);
          ga(i, k) += s;
        }
    }
    if (t.requires_grad(b)) {
      Matrix& gb = t.grad(b);
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t k = 0; k < av.cols(); ++k) {
          const double aik = av(i, k);
          for (std::size_t j = 0; j < bv.cols(); ++j) gb(k, j) += aik * g(i, j);
        }
    }
  });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.same_shape(bv), "hadamard shapes");
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad(a);
      const Matrix& bv = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      Matrix& gb = t.grad(b);
      const Matrix& av = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

namespace {

Tensor add_signed(const Tensor& a, const Tensor& b, double sign) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.same_shape(bv), "add shapes");
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + sign * bv[i];
  return tape_of(a).record(std::move(out), {a, b},
                           [a, b, sign](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Matrix& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_signed(a, b, 1.0); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_signed(a, b, -1.0); }

Tensor scale(const Tensor& a, double c) {
  Matrix out = a.value();
  for (auto& x : out.values()) x *= c;
  return tape_of(a).record(std::move(out), {a}, [a, c](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  Matrix out = a.value();
  for (auto& x : out.values()) x += c;
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  Matrix out = a.value();
  for (auto& x : out.values()) x = stable_sigmoid(x);
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix& s, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i] * (1.0 - s[i]);
  });
}

Tensor relu(const Tensor& a) {
  Matrix out = a.value();
  for (auto& x : out.values()) x = std::max(x, 0.0);
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    const Matrix& av = t.value(a);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) ga[i] += g[i];
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat of nothing");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat row counts");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + offset);
    offset += pv.cols();
  }
  std::vector<Tensor> owned(parts.begin(), parts.end());
  return tape_of(parts.front()).record(std::move(out), parts,
                                       [owned](Tape& t, const Matrix&, const Matrix& g) {
    std::size_t offset = 0;
    for (const auto& p : owned) {
      const std::size_t pc = t.value(p).cols();
      if (t.requires_grad(p)) {
        Matrix& gp = t.grad(p);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < pc; ++c) gp(r, c) += g(r, offset + c);
      }
      offset += pc;
    }
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_cols(std::span<const Tensor>(parts));
}

Tensor slice_row(const Tensor& a, std::size_t row) {
  const Matrix& av = a.value();
  require(row < av.rows(), "slice_row index");
  Matrix out = Matrix::row_vector(av.row(row));
  return tape_of(a).record(std::move(out), {a}, [a, row](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t c = 0; c < g.cols(); ++c) ga(row, c) += g[c];
  });
}

Tensor assign_row(const Tensor& a, std::size_t row, const Tensor& replacement) {
  const Matrix& av = a.value();
  const Matrix& rv = replacement.value();
  require(row < av.rows() && rv.rows() == 1 && rv.cols() == av.cols(), "assign_row shapes");
  Matrix out = av;
  std::copy(rv.data(), rv.data() + rv.cols(), out.row(row).begin());
  return tape_of(a).record(std::move(out), {a, replacement},
                           [a, row, replacement](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad(a);
      for (std::size_t r = 0; r < g.rows(); ++r)
        if (r != row)
          for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c);
    }
    if (t.requires_grad(replacement)) {
      Matrix& gr = t.grad(replacement);
      for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(row, c);
    }
  });
}

Tensor slice_cols(const Tensor& a, std::size_t first, std::size_t count) {
  const Matrix& av = a.value();
  require(first + count <= av.cols(), "slice_cols range");
  Matrix out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, first + c);
  return tape_of(a).record(std::move(out), {a}, [a, first](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, first + c) += g(r, c);
  });
}

Tensor assign_cols(const Tensor& a, std::size_t first, const Tensor& replacement) {
  const Matrix& av = a.value();
  const Matrix& rv = replacement.value();
  require(rv.rows() == av.rows() && first + rv.cols() <= av.cols(), "assign_cols shapes");
  Matrix out = av;
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < rv.cols(); ++c) out(r, first + c) = rv(r, c);
  const std::size_t count = rv.cols();
  return tape_of(a).record(std::move(out), {a, replacement},
                           [a, first, count, replacement](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(a)) {
      Matrix& ga = t.grad(a);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c)
          if (c < first || c >= first + count) ga(r, c) += g(r, c);
    }
    if (t.requires_grad(replacement)) {
      Matrix& gr = t.grad(replacement);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) gr(r, c) += g(r, first + c);
    }
  });
}

Tensor repeat_rows(const Tensor& row, std::size_t count) {
  const Matrix& rv = row.value();
  require(rv.rows() == 1, "repeat_rows expects a single row");
  Matrix out(count, rv.cols());
  for (std::size_t r = 0; r < count; ++r) std::copy(rv.data(), rv.data() + rv.cols(), out.row(r).begin());
  return tape_of(row).record(std::move(out), {row}, [row](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& gr = t.grad(row);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(r, c);
  });
}

Tensor row_sum(const Tensor& a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double x : av.row(r)) s += x;
    out(r, 0) = s;
  }
  return tape_of(a).record(std::move(out), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(r, 0);
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return tape_of(a).record(Matrix(1, 1, s), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (auto& x : ga.values()) x += g[0];
  });
}

Tensor sum_sq(const Tensor& a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x * x;
  return tape_of(a).record(Matrix(1, 1, s), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    const Matrix& av = t.value(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * av[i] * g[0];
  });
}

Tensor relu_hinge(const Tensor& a, double lo, double hi) {
  if (!(lo < hi)) throw Error(ErrorCode::InvalidArgument, "relu_hinge needs lo < hi");
  Matrix out = a.value();
  for (auto& x : out.values()) {
    if (x < lo) x = (lo - x) * (lo - x);
    else if (x > hi) x = (x - hi) * (x - hi);
    else x = 0.0;
  }
  return tape_of(a).record(std::move(out), {a}, [a, lo, hi](Tape& t, const Matrix&, const Matrix& g) {
    Matrix& ga = t.grad(a);
    const Matrix& av = t.value(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[i];
      if (x < lo) ga[i] += -2.0 * (lo - x) * g[i];
      else if (x > hi) ga[i] += 2.0 * (x - hi) * g[i];
    }
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState* state,
                  const BatchNormOptions& options) {
  const Matrix& xv = x.value();
  const Matrix& gv = gamma.value();
  const Matrix& bv = beta.value();
  const std::size_t n = xv.rows();
  const std::size_t c = xv.cols();
  require(gv.rows() == 1 && gv.cols() == c && bv.same_shape(gv), "batch_norm parameter shapes");
  if (state) {
    if (state->running_mean.empty()) state->running_mean = Matrix(1, c, 0.0);
    if (state->running_var.empty()) state->running_var = Matrix(1, c, 1.0);
    require(state->running_mean.cols() == c && state->running_var.cols() == c,
            "batch_norm running statistics shape");
  }

  std::vector<double> mean(c, 0.0);
  std::vector<double> inv_std(c, 0.0);
  if (options.training) {
    if (n < 2) throw Error(ErrorCode::BatchTooSmall, "batch_norm needs at least two rows");
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) mean[j] += xv(r, j);
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const double dlt = xv(r, j) - mean[j];
        var[j] += dlt * dlt;
      }
    for (std::size_t j = 0; j < c; ++j) {
      const double biased = var[j] / static_cast<double>(n);
      inv_std[j] = 1.0 / std::sqrt(biased + options.eps);
      if (state) {
        const double unbiased = var[j] / static_cast<double>(n - 1);
        state->running_mean[j] = (1.0 - options.momentum) * state->running_mean[j] + options.momentum * mean[j];
        state->running_var[j] = (1.0 - options.momentum) * state->running_var[j] + options.momentum * unbiased;
      }
    }
  } else {
    if (!state) throw Error(ErrorCode::InvalidArgument, "evaluation-mode batch_norm needs running statistics");
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = state->running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(state->running_var[j] + options.eps);
    }
  }

  Matrix xhat(n, c);
  Matrix out(n, c);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      xhat(r, j) = (xv(r, j) - mean[j]) * inv_std[j];
      out(r, j) = gv[j] * xhat(r, j) + bv[j];
    }

  const bool training = options.training;
  return tape_of(x).record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), training](
          Tape& t, const Matrix&, const Matrix& g) {
        const std::size_t n = g.rows();
        const std::size_t c = g.cols();
        const Matrix& gv = t.value(gamma);
        if (t.requires_grad(gamma)) {
          Matrix& gg = t.grad(gamma);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gg[j] += g(r, j) * xhat(r, j);
        }
        if (t.requires_grad(beta)) {
          Matrix& gb = t.grad(beta);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g(r, j);
        }
        if (!t.requires_grad(x)) return;
        Matrix& gx = t.grad(x);
        if (!training) {
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < c; ++j) gx(r, j) += g(r, j) * gv[j] * inv_std[j];
          return;
        }
        const double nn = static_cast<double>(n);
        for (std::size_t j = 0; j < c; ++j) {
          double sum_d = 0.0;
          double sum_dx = 0.0;
          for (std::size_t r = 0; r < n; ++r) {
            const double d = g(r, j) * gv[j];
            sum_d += d;
            sum_dx += d * xhat(r, j);
          }
          for (std::size_t r = 0; r < n; ++r) {
            const double d = g(r, j) * gv[j];
            gx(r, j) += inv_std[j] / nn * (nn * d - sum_d - xhat(r, j) * sum_dx);
          }
        }
      });
}

double grad_check(const MultiInputFn& f, const std::vector<Matrix>& inputs, double eps,
                  DifferenceScheme scheme) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& m : inputs) leaves.push_back(tape.leaf(m, true));
    const Tensor loss = f(tape, leaves);
    tape.backward(loss);
    for (const auto& l : leaves) analytic.push_back(tape.grad(l));
  }

  auto evaluate = [&](const std::vector<Matrix>& xs) {
    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& m : xs) leaves.push_back(tape.constant(m));
    const Tensor loss = f(tape, leaves);
    if (loss.rows() != 1 || loss.cols() != 1) throw Error(ErrorCode::NonScalarLoss, "loss must be 1x1");
    return loss.value()[0];
  };

  double worst = 0.0;
  std::vector<Matrix> probe = inputs;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double saved = probe[k][i];
      auto central = [&](double step) {
        probe[k][i] = saved + step;
        const double up = evaluate(probe);
        probe[k][i] = saved - step;
        const double down = evaluate(probe);
        probe[k][i] = saved;
        return (up - down) / (2.0 * step);
      };
      double numeric = central(eps);
      if (scheme == DifferenceScheme::Richardson) numeric = (4.0 * numeric - central(2.0 * eps)) / 3.0;
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

double grad_check(const SingleInputFn& f, const Matrix& x, double eps, DifferenceScheme scheme) {
  return grad_check([&f](Tape& t, std::span<const Tensor> xs) { return f(t, xs[0]); },
                    std::vector<Matrix>{x}, eps, scheme);
}

}  // namespace hadnet::ad
