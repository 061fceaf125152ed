#include <doctest.h>

#include <cmath>
#include <random>

#include "hadnet/baselines.hpp"
#include "hadnet/errors.hpp"
#include "hadnet/evaluation.hpp"
#include "hadnet/physio.hpp"

using namespace hadnet;
using namespace hadnet::baselines;
using namespace hadnet::eval;

namespace {

constexpr std::int64_t kMidnight = 1704067200;  // 2024-01-01T00:00:00

EpisodeFrame flat_day(std::size_t steps, double glucose = 120.0) {
  EpisodeFrame ep;
  ep.patient_id = "p";
  for (std::size_t t = 0; t < steps; ++t) {
    ep.timestamps.push_back(kMidnight + static_cast<std::int64_t>(t) * 300);
    ep.rows.push_back({glucose, 0.0, 0.0, 0.0});
  }
  return ep;
}

std::size_t at(int hour, int minute) { return static_cast<std::size_t>(hour * 12 + minute / 5); }

// Gauss-Jordan with partial pivoting on a dense augmented system.
std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    std::swap(a[c], a[p]);
    std::swap(b[c], b[p]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= a[i][i];
  return b;
}

}  // namespace

TEST_CASE("persistence") {
  std::vector<Measurement> w(4, Measurement{100.0, 0, 0, 0});
  w.back()[kGlucose] = 120.0;
  const auto f = persistence_forecast(w, 12);
  CHECK(f.size() == 12);
  for (double x : f) CHECK(x == 120.0);

  std::vector<double> truth(12, 120.0);
  CHECK(metrics(f, truth).rmse == 0.0);
}

TEST_CASE("AR(5) recovers a known process") {
  const std::vector<double> truth{0.5, -0.2, 0.15, 0.1, -0.05};
  const double c = 10.0;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> s(5, 50.0);
  for (int t = 0; t < 10'000; ++t) {
    double y = c + noise(rng);
    for (std::size_t i = 0; i < 5; ++i) y += truth[i] * s[s.size() - 1 - i];
    s.push_back(y);
  }
  const std::vector<std::vector<double>> series{s};
  const auto m = ar_fit(series, 5);
  REQUIRE_FALSE(m.persistence);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(m.coefficients[i] - truth[i]) < 0.05);
}

TEST_CASE("AR edge cases") {
  SUBCASE("constant series falls back to a constant forecast") {
    const std::vector<std::vector<double>> series{std::vector<double>(200, 130.0)};
    const auto m = ar_fit(series, 5);
    CHECK(m.persistence);
    CHECK_FALSE(m.warning.empty());
    std::vector<Measurement> w(8, Measurement{130.0, 0, 0, 0});
    for (double x : ar_forecast(m, w, 12)) CHECK(x == 130.0);
  }
  SUBCASE("order 0 is persistence") {
    const std::vector<std::vector<double>> series{{1.0, 2.0, 3.0}};
    const auto m = ar_fit(series, 0);
    std::vector<Measurement> w{{90, 0, 0, 0}, {95, 0, 0, 0}};
    CHECK(ar_forecast(m, w, 3) == persistence_forecast(w, 3));
  }
  SUBCASE("too little data") {
    const std::vector<std::vector<double>> series{std::vector<double>(40, 1.0)};
    CHECK_THROWS_AS(ar_fit(series, 5), Error);
  }
  SUBCASE("gaps split the lag rows") {
    std::vector<double> s;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 1);
    for (int i = 0; i < 300; ++i) s.push_back(i % 50 == 25 ? std::nan("") : 100 + n(rng));
    const std::vector<std::vector<double>> series{s};
    const auto m = ar_fit(series, 2);
    CHECK(std::isfinite(m.intercept));
  }
}

TEST_CASE("ridge against a brute-force normal-equation solve") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t rows = 10, f = 3, h = 2;
  const double lambda = 0.7;
  Matrix x(rows, f), y(rows, h);
  for (auto& v : x.values()) v = n(rng);
  for (auto& v : y.values()) v = 5.0 + n(rng);
  const auto m = ridge_fit(x, y, lambda);

  for (std::size_t out = 0; out < h; ++out) {
    // Unknowns: f slopes then an unpenalised intercept.
    std::vector<std::vector<double>> a(f + 1, std::vector<double>(f + 1, 0.0));
    std::vector<double> b(f + 1, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> z(f + 1, 1.0);
      for (std::size_t j = 0; j < f; ++j) z[j] = x(r, j);
      for (std::size_t i = 0; i <= f; ++i) {
        for (std::size_t j = 0; j <= f; ++j) a[i][j] += z[i] * z[j];
        b[i] += z[i] * y(r, out);
      }
    }
    for (std::size_t j = 0; j < f; ++j) a[j][j] += lambda;
    const auto beta = solve_dense(a, b);
    for (std::size_t r = 0; r < rows; ++r) {
      double expect = beta[f];
      for (std::size_t j = 0; j < f; ++j) expect += beta[j] * x(r, j);
      const auto got = ridge_predict(m, x.row(r));
      CHECK(std::abs(got[out] - expect) < 1e-10);
    }
  }
}

TEST_CASE("ridge limits") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix x(50, 4), y(50, 2);
  for (auto& v : x.values()) v = n(rng);
  for (std::size_t r = 0; r < 50; ++r) {
    y(r, 0) = 3.0 + 2.0 * x(r, 0) - x(r, 3);
    y(r, 1) = -1.0 + 0.5 * x(r, 1) + x(r, 2);
  }
  SUBCASE("exact linear data") {
    const auto m = ridge_fit(x, y, 1e-8);
    for (std::size_t r = 0; r < 50; ++r) {
      const auto p = ridge_predict(m, x.row(r));
      CHECK(std::abs(p[0] - y(r, 0)) < 1e-6);
      CHECK(std::abs(p[1] - y(r, 1)) < 1e-6);
    }
  }
  SUBCASE("huge penalty collapses to the target means") {
    const auto m = ridge_fit(x, y, 1e14);
    double mean0 = 0.0, mean1 = 0.0;
    for (std::size_t r = 0; r < 50; ++r) {
      mean0 += y(r, 0) / 50.0;
      mean1 += y(r, 1) / 50.0;
    }
    const auto p = ridge_predict(m, x.row(7));
    CHECK(p[0] == doctest::Approx(mean0).epsilon(1e-9));
    CHECK(p[1] == doctest::Approx(mean1).epsilon(1e-9));
  }
  CHECK_THROWS_AS(ridge_fit(x, y, 0.0), Error);
}

TEST_CASE("metrics") {
  auto m = metrics(std::vector<double>{110}, std::vector<double>{100});
  CHECK(m.mae == doctest::Approx(10));
  CHECK(m.mard == doctest::Approx(10));
  CHECK(m.rmse == doctest::Approx(10));

  m = metrics(std::vector<double>{100, 80}, std::vector<double>{100, 80});
  CHECK(m.rmse == 0.0);
  CHECK(m.mard == 0.0);
  CHECK(m.mae == 0.0);

  m = metrics(std::vector<double>{90, 110}, std::vector<double>{100, 100});
  CHECK(m.rmse == doctest::Approx(10));
  CHECK(m.mard == doctest::Approx(10));

  CHECK_THROWS_AS(metrics(std::vector<double>{1}, std::vector<double>{0}), Error);
  CHECK_THROWS_AS(metrics(std::vector<double>{1, 2}, std::vector<double>{1}), Error);
}

TEST_CASE("rmse is never below mae") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(40.0, 400.0);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> p, t;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      p.push_back(u(rng));
      t.push_back(u(rng));
    }
    const auto m = metrics(p, t);
    CHECK(m.rmse >= m.mae - 1e-12);
  }
}

TEST_CASE("context labels") {
  auto ep = flat_day(288);
  ep.rows[at(8, 0)][kCarbs] = 60.0;
  ep.rows[at(12, 0)][kBolus] = 5.0;
  ep.rows[at(12, 10)][kCarbs] = 70.0;
  const auto c = context_segment(ep);

  CHECK(c[at(3, 0)] == kOvernight);
  CHECK(c[at(7, 55)] == 0);
  for (std::size_t t = at(8, 0); t < at(10, 0); ++t) CHECK(c[t] == kPostBreakfast);
  CHECK(c[at(10, 0)] == 0);

  CHECK(c[at(12, 5)] == kPostBolus);
  for (std::size_t t = at(12, 10); t < at(14, 0); ++t) CHECK(c[t] == (kPostprandial | kPostBolus));
  CHECK(c[at(14, 0)] == kPostprandial);
  CHECK(c[at(14, 5)] == kPostprandial);
  CHECK(c[at(14, 10)] == 0);

  SUBCASE("a later snack in the breakfast band is plain postprandial") {
    auto e2 = flat_day(288);
    e2.rows[at(6, 30)][kCarbs] = 40.0;
    e2.rows[at(9, 30)][kCarbs] = 20.0;
    const auto c2 = context_segment(e2);
    CHECK(c2[at(7, 0)] == kPostBreakfast);
    CHECK(c2[at(9, 30)] == kPostprandial);
  }
  SUBCASE("events late at night block the overnight label") {
    auto e2 = flat_day(288);
    e2.rows[at(1, 0)][kBolus] = 1.0;
    const auto c2 = context_segment(e2);
    CHECK(c2[at(0, 30)] == kOvernight);
    CHECK(c2[at(2, 55)] == kPostBolus);
    CHECK(c2[at(3, 0)] == kOvernight);
  }
  SUBCASE("pure and idempotent") {
    CHECK(context_segment(ep) == c);
    auto shifted = ep;
    for (auto& r : shifted.rows) r[kGlucose] += 37.0;
    CHECK(context_segment(shifted) == c);
  }
}

TEST_CASE("evaluation tables") {
  std::vector<EpisodeFrame> eps{flat_day(288, 100.0), flat_day(288, 150.0)};
  eps[0].patient_id = "a";
  eps[1].patient_id = "b";
  for (auto& ep : eps)
    for (std::size_t t = 0; t < ep.size(); ++t) ep.rows[t][kGlucose] += static_cast<double>(t % 7);
  eps[0].rows[at(21, 0)][kCarbs] = 50.0;
  const auto set = make_eval_set(eps, 0.8, 32, 12);
  // 288 - floor(0.8 * 288) = 58 test rows, 58 - 44 + 1 windows each.
  CHECK(set.windows.size() == 2 * 15);
  REQUIRE(set.contexts.size() == set.windows.size());
  // Origin of the first test window of episode 0 sits at row 230 + 31 = 261 (21:45).
  CHECK(set.contexts[0] == kPostprandial);

  ModelRuns pers{"persistence", {[](const training::WindowSample& s) {
                   return persistence_forecast(s.input, s.target.size());
                 }}};
  ModelRuns shifted{"shifted", {}};
  for (double off : {10.0, 20.0})
    shifted.repetitions.push_back([off](const training::WindowSample& s) {
      auto f = s.target;
      for (auto& x : f) x += off;
      return f;
    });
  const std::vector<ModelRuns> models{pers, shifted};
  const auto table = evaluate(set, models);

  const auto* p30 = table.find("persistence", 6);
  REQUIRE(p30);
  CHECK(p30->repetitions == 1);
  CHECK(p30->rmse.std == 0.0);
  CHECK(p30->mae.std == 0.0);
  CHECK(p30->horizon_minutes == 30.0);
  CHECK(table.find("persistence", 12));

  const auto* s30 = table.find("shifted", 6);
  REQUIRE(s30);
  CHECK(s30->rmse.mean == doctest::Approx(15.0));
  CHECK(s30->rmse.std == doctest::Approx(5.0));
  CHECK(s30->mae.mean == doctest::Approx(15.0));

  const auto* ctx = table.find_context("shifted", "postprandial");
  REQUIRE(ctx);
  CHECK(ctx->mae == doctest::Approx(15.0));
  CHECK(ctx->ci50_lo == doctest::Approx(15.0));
  CHECK(ctx->ci50_hi == doctest::Approx(15.0));

  EvalSet empty;
  CHECK_THROWS_AS(evaluate(empty, models), Error);
}

TEST_CASE("quantile interpolation") {
  CHECK(quantile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
  CHECK(quantile({1, 2, 3, 4}, 0.75) == doctest::Approx(3.25));
  CHECK(quantile({5}, 0.5) == 5.0);
}

TEST_CASE("baselines give finite forecasts on simulated windows") {
  physio::CohortConfig cfg;
  cfg.patients = 2;
  cfg.days = 3;
  cfg.seed = 4;
  std::vector<EpisodeFrame> eps;
  for (auto& m : physio::generate_cohort(cfg)) eps.push_back(m.simulation.frame);
  const auto split = training::split_train_test(eps, 0.8);
  const auto train = training::window_dataset(split.train, 32, 12, 1);
  const auto ar = ar_fit(split.train, 5);
  const auto ridge = ridge_fit(train, 1.0);
  const auto set = make_eval_set(eps, 0.8, 32, 12);
  REQUIRE_FALSE(set.windows.empty());
  for (const auto& s : set.windows) {
    for (double x : ar_forecast(ar, s.input, 12)) CHECK(std::isfinite(x));
    for (double x : ridge_forecast(ridge, s.input)) CHECK(std::isfinite(x));
  }
}
