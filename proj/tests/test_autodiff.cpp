#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "hadnet/autodiff.hpp"
#include "hadnet/errors.hpp"

using namespace hadnet;
using namespace hadnet::ad;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (auto& x : m.values()) x = u(rng);
  return m;
}

}  // namespace

TEST_CASE("sigmoid value and derivative at zero") {
  Tape tape;
  const Tensor x = tape.leaf(Matrix(1, 1));
  const Tensor y = sigmoid(x);
  CHECK(y.value()[0] == 0.5);
  tape.backward(sum(y));
  CHECK(tape.grad(x)[0] == 0.25);
}

TEST_CASE("identity matmul and gradient of the sum") {
  Tape tape;
  const Matrix a{{1, 2}, {3, 4}};
  const Tensor i = tape.constant(Matrix::identity(2));
  const Tensor at = tape.leaf(a);
  const Tensor p = matmul(i, at);
  CHECK(p.value() == a);
  tape.backward(sum(p));
  CHECK(tape.grad(at) == Matrix(2, 2, 1.0));
}

TEST_CASE("sum of squares gradient and unused leaves") {
  Tape tape;
  const Tensor x = tape.leaf(Matrix{{1, 2}});
  const Tensor unused = tape.leaf(Matrix{{5, 5, 5}});
  tape.backward(sum_sq(x));
  CHECK(tape.grad(x) == Matrix{{2, 4}});
  CHECK(tape.grad(unused) == Matrix(1, 3));
}

TEST_CASE("backward needs a scalar") {
  Tape tape;
  const Tensor x = tape.leaf(Matrix(2, 2, 1.0));
  try {
    tape.backward(x);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonScalarLoss);
  }
}

TEST_CASE("grad_check on primitives") {
  std::mt19937_64 rng(3);
  // Integer inputs and a power-of-two step keep the differences exact.
  CHECK(grad_check([](Tape&, const Tensor& x) { return sum(x); }, Matrix{{1, -2}, {3, 4}, {0, 7}},
                   std::ldexp(1.0, -16)) == 0.0);
  CHECK(grad_check([](Tape&, const Tensor& x) { return sum(sigmoid(scale(sigmoid(x), 3.0))); },
                   random_matrix(rng, 4, 3)) < 1e-6);

  const std::vector<Matrix> in{random_matrix(rng, 5, 3), random_matrix(rng, 3, 4), random_matrix(rng, 1, 4)};
  CHECK(grad_check([](Tape&, std::span<const Tensor> t) { return sum_sq(affine(t[0], t[1], t[2])); }, in) < 1e-6);

  CHECK(grad_check(
            [](Tape& tape, const Tensor& x) {
              const Tensor y = concat_cols(slice_cols(x, 1, 2), repeat_rows(slice_row(x, 0), x.rows()));
              const Tensor z = assign_cols(y, 0, row_sum(x));
              return sum_sq(hadamard(assign_row(z, 1, slice_row(z, 2)), tape.constant(Matrix(3, 5, 0.7))));
            },
            random_matrix(rng, 3, 3)) < 1e-6);

  CHECK(grad_check([](Tape&, const Tensor& x) { return sum(relu_hinge(scale(x, 4.0), -1.0, 1.0)); },
                   random_matrix(rng, 4, 4)) < 1e-6);
}

TEST_CASE("batch_norm forward statistics and gradient") {
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(rng, 8, 6, -3.0, 5.0);

  SUBCASE("normalised columns have zero mean, unit variance") {
    Tape tape;
    BatchNormState state{Matrix(1, 6), Matrix(1, 6, 1.0)};
    const Tensor y = batch_norm(tape.leaf(x), tape.leaf(Matrix(1, 6, 1.0)), tape.leaf(Matrix(1, 6)), &state,
                                {true, 0.0, 0.1});
    for (std::size_t c = 0; c < 6; ++c) {
      double mean = 0.0, var = 0.0;
      for (std::size_t r = 0; r < 8; ++r) mean += y.value()(r, c) / 8.0;
      for (std::size_t r = 0; r < 8; ++r) var += std::pow(y.value()(r, c) - mean, 2) / 8.0;
      CHECK(std::abs(mean) < 1e-12);
      CHECK(std::abs(var - 1.0) < 1e-8);

      // Running statistics: unbiased variance, momentum 0.1.
      double xm = 0.0, xv = 0.0;
      for (std::size_t r = 0; r < 8; ++r) xm += x(r, c) / 8.0;
      for (std::size_t r = 0; r < 8; ++r) xv += std::pow(x(r, c) - xm, 2) / 7.0;
      CHECK(state.running_mean[c] == doctest::Approx(0.1 * xm).epsilon(1e-12));
      CHECK(state.running_var[c] == doctest::Approx(0.9 + 0.1 * xv).epsilon(1e-12));
    }
  }

  SUBCASE("finite differences") {
    const std::vector<Matrix> in{x, random_matrix(rng, 1, 6, 0.5, 1.5), random_matrix(rng, 1, 6)};
    const Matrix weights = random_matrix(rng, 8, 6);
    const double err = grad_check(
        [&](Tape& tape, std::span<const Tensor> t) {
          return sum(hadamard(batch_norm(t[0], t[1], t[2], nullptr), tape.constant(weights)));
        },
        in);
    CHECK(err < 1e-5);
  }

  SUBCASE("evaluation mode reads running statistics") {
    Tape tape;
    BatchNormState state{Matrix(1, 6, 2.0), Matrix(1, 6, 4.0)};
    const Tensor y = batch_norm(tape.leaf(x), tape.leaf(Matrix(1, 6, 1.0)), tape.leaf(Matrix(1, 6)), &state,
                                {false, 0.0, 0.1});
    CHECK(y.value()(3, 2) == doctest::Approx((x(3, 2) - 2.0) / 2.0));
  }

  SUBCASE("one row in training mode") {
    Tape tape;
    try {
      batch_norm(tape.leaf(Matrix(1, 6)), tape.leaf(Matrix(1, 6, 1.0)), tape.leaf(Matrix(1, 6)), nullptr);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BatchTooSmall);
    }
  }
}

namespace {

// Keeps relu inputs away from the kink so the differences stay one-sided-free.
Matrix off_kink(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  Matrix m = random_matrix(rng, r, c, 0.05, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (auto& x : m.values())
    if (flip(rng)) x = -x;
  return m;
}

}  // namespace

TEST_CASE("every primitive passes grad_check on 50 random inputs") {
  using Fn = std::function<Tensor(Tape&, std::span<const Tensor>)>;
  struct Case {
    const char* name;
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    Fn f;
  };
  // Each output is contracted with fixed weights so every element matters.
  auto weighted = [](Tape& tape, const Tensor& y) {
    Matrix w(y.rows(), y.cols());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
    return sum(hadamard(y, tape.constant(w)));
  };
  const std::vector<Case> cases{
      {"affine", {{3, 4}, {4, 2}, {1, 2}}, [&](Tape& tp, auto t) { return weighted(tp, affine(t[0], t[1], t[2])); }},
      {"matmul", {{3, 4}, {4, 5}}, [&](Tape& tp, auto t) { return weighted(tp, matmul(t[0], t[1])); }},
      {"hadamard", {{3, 4}, {3, 4}}, [&](Tape& tp, auto t) { return weighted(tp, hadamard(t[0], t[1])); }},
      {"add", {{2, 3}, {2, 3}}, [&](Tape& tp, auto t) { return weighted(tp, add(t[0], t[1])); }},
      {"sub", {{2, 3}, {2, 3}}, [&](Tape& tp, auto t) { return weighted(tp, sub(t[0], t[1])); }},
      {"scale", {{2, 3}}, [&](Tape& tp, auto t) { return weighted(tp, scale(t[0], -1.7)); }},
      {"add_scalar", {{2, 3}}, [&](Tape& tp, auto t) { return weighted(tp, add_scalar(t[0], 2.5)); }},
      {"sigmoid", {{3, 3}}, [&](Tape& tp, auto t) { return weighted(tp, sigmoid(scale(t[0], 3.0))); }},
      {"relu", {{3, 3}}, [&](Tape& tp, auto t) { return weighted(tp, relu(t[0])); }},
      {"concat_cols", {{2, 3}, {2, 1}}, [&](Tape& tp, auto t) { return weighted(tp, concat_cols(t[0], t[1])); }},
      {"slice_row", {{3, 4}}, [&](Tape& tp, auto t) { return weighted(tp, slice_row(t[0], 1)); }},
      {"assign_row", {{3, 4}, {1, 4}}, [&](Tape& tp, auto t) { return weighted(tp, assign_row(t[0], 2, t[1])); }},
      {"slice_cols", {{3, 5}}, [&](Tape& tp, auto t) { return weighted(tp, slice_cols(t[0], 1, 3)); }},
      {"assign_cols", {{3, 5}, {3, 2}}, [&](Tape& tp, auto t) { return weighted(tp, assign_cols(t[0], 3, t[1])); }},
      {"repeat_rows", {{1, 4}}, [&](Tape& tp, auto t) { return weighted(tp, repeat_rows(t[0], 3)); }},
      {"row_sum", {{3, 4}}, [&](Tape& tp, auto t) { return weighted(tp, row_sum(t[0])); }},
      {"sum", {{3, 4}}, [&](Tape&, auto t) { return sum(t[0]); }},
      {"sum_sq", {{3, 4}}, [&](Tape&, auto t) { return sum_sq(t[0]); }},
      {"relu_hinge", {{3, 4}}, [&](Tape& tp, auto t) { return weighted(tp, relu_hinge(scale(t[0], 3.0), -1.0, 1.0)); }},
      {"batch_norm", {{6, 3}, {1, 3}, {1, 3}},
       [&](Tape& tp, auto t) { return weighted(tp, batch_norm(t[0], t[1], t[2], nullptr)); }},
  };
  std::mt19937_64 rng(50);
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Matrix> in;
      for (const auto& [r, k] : c.shapes) in.push_back(off_kink(rng, r, k));
      worst = std::max(worst, grad_check(c.f, in));
    }
    INFO(c.name);
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("reused tensors accumulate and replays are bitwise identical") {
  std::mt19937_64 rng(8);
  const Matrix x0 = random_matrix(rng, 4, 3);
  const Matrix w0 = random_matrix(rng, 3, 3);
  auto run = [&] {
    Tape tape;
    const Tensor x = tape.leaf(x0);
    const Tensor w = tape.leaf(w0);
    const Tensor h = sigmoid(matmul(x, w));
    const Tensor loss = add(sum_sq(hadamard(h, x)), sum(matmul(h, w)));
    tape.backward(loss);
    return std::make_pair(tape.grad(x), tape.grad(w));
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);

  Tape tape;
  const Tensor x = tape.leaf(x0);
  tape.backward(sum(hadamard(x, x)));
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(tape.grad(x)[i] == doctest::Approx(2.0 * x0[i]));
}
