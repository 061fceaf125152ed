#include <doctest.h>

#include <cmath>
#include <random>

#include "hadnet/errors.hpp"
#include "hadnet/model.hpp"
#include "hadnet/model_graph.hpp"

using namespace hadnet;
using namespace hadnet::model;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::InvalidArgument;
}

void randomize(ModelParams& p, std::uint64_t seed, double spread = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-spread, spread);
  for (Matrix* m : parameter_slots(p))
    for (auto& x : m->values()) x += u(rng);
  for (auto& s : p.bn_stats) {
    for (auto& x : s.running_mean.values()) x = u(rng);
    for (auto& x : s.running_var.values()) x = 0.5 + std::abs(u(rng));
  }
}

std::vector<Measurement> random_window(std::mt19937_64& rng, std::size_t w) {
  std::uniform_real_distribution<double> glucose(60.0, 300.0);
  std::uniform_real_distribution<double> event(0.0, 1.0);
  std::vector<Measurement> out(w);
  for (auto& x : out) {
    x = {glucose(rng), 0.0, 0.08, 0.0};
    if (event(rng) < 0.1) x[kBolus] = 6.0 * event(rng);
    if (event(rng) < 0.1) x[kCarbs] = 80.0 * event(rng);
  }
  return out;
}

// Straight-line transcription of the windowed forward algorithm with plain
// arrays: inference steps then forecast steps, eval-mode batch norm.
std::vector<double> reference_forecast(std::span<const Measurement> window, const ModelParams& p,
                                       const ModelConfig& c) {
  const std::size_t k = c.node_count(), d = c.d, hw = d - 1;
  const Matrix& a = c.graph.adjacency();
  std::vector<double> v(k, 0.0);
  v[0] = window[0][kGlucose];
  std::vector<std::vector<double>> hid(k, std::vector<double>(hw));
  for (std::size_t n = 0; n < k; ++n)
    for (std::size_t f = 0; f < hw; ++f) hid[n][f] = p.h0(n, f);

  auto apply_map = [&](const AffineMaps& m, const std::vector<std::vector<double>>& e) {
    std::vector<std::vector<double>> out(k, std::vector<double>(d));
    for (std::size_t n = 0; n < k; ++n)
      for (std::size_t o = 0; o < d; ++o) {
        double s = m.bias(n, o);
        for (std::size_t i = 0; i < d; ++i) s += e[n][i] * m.weight(n * d + i, o);
        out[n][o] = s;
      }
    return out;
  };

  std::size_t t_step = 0;
  auto step = [&] {
    const auto& stats = p.bn_stats.at(t_step++);
    std::vector<std::vector<double>> e(k, std::vector<double>(d));
    for (std::size_t n = 0; n < k; ++n) {
      e[n][0] = (v[n] - p.norm.offset[n]) / p.norm.scale[n];
      for (std::size_t f = 0; f < hw; ++f) e[n][f + 1] = hid[n][f];
    }
    const auto q = apply_map(p.query, e), kk = apply_map(p.key, e), vals = apply_map(p.value, e);
    std::vector<std::vector<double>> f(k, std::vector<double>(k));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        double dot = 0.0;
        for (std::size_t x = 0; x < d; ++x) dot += q[i][x] * kk[j][x];
        f[i][j] = 1.0 / (1.0 + std::exp(-(c.a0 + dot / static_cast<double>(d))));
      }
    std::vector<std::vector<double>> m(k, std::vector<double>(k));
    for (std::size_t i = 0; i < k; ++i) {
      double drain = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        m[i][j] = a(i, j) * f[i][j];
        drain += std::abs(a(j, i)) * f[i][j];
      }
      m[i][i] -= drain;
    }
    std::vector<double> nv(k);
    auto nh = hid;
    for (std::size_t i = 0; i < k; ++i) {
      double dv = 0.0;
      for (std::size_t j = 0; j < k; ++j) dv += m[i][j] * v[j];
      nv[i] = std::max(v[i] + dv, 0.0);
      for (std::size_t x = 0; x < hw; ++x) {
        double dh = 0.0;
        for (std::size_t j = 0; j < k; ++j) dh += m[i][j] * vals[j][x];
        const std::size_t ch = i * hw + x;
        const double z = hid[i][x] + dh;
        nh[i][x] = p.bn_gamma[ch] * (z - stats.running_mean[ch]) /
                       std::sqrt(stats.running_var[ch] + c.bn_eps) +
                   p.bn_beta[ch];
      }
    }
    v = nv;
    hid = nh;
  };

  const std::size_t i_node = c.graph.index_of("I"), q_node = c.graph.index_of("q_sto");
  const std::size_t ep = *c.graph.error_pos_index(), en = *c.graph.error_neg_index();
  for (const auto& x : window) {
    v[i_node] += x[kBolus] + x[kBasal];
    v[q_node] += x[kCarbs];
    step();
    const double err = x[kGlucose] - v[0];
    if (err > 0) v[ep] += err;
    if (err < 0) v[en] += -err;
    v[0] = x[kGlucose];
  }
  std::vector<double> out;
  for (std::size_t t = 0; t < c.h; ++t) {
    step();
    out.push_back(v[0]);
  }
  return out;
}

}  // namespace

TEST_CASE("parameter inventory") {
  CHECK(parameter_count(7, 32) == 22393);
  CHECK(parameter_count(3, 4) == 189);
  const ModelConfig c;
  CHECK(init_params(c, 1).learned_count() == 22393);
}

TEST_CASE("init is deterministic in the seed") {
  const ModelConfig c;
  const auto a = init_params(c, 42), b = init_params(c, 42), other = init_params(c, 43);
  CHECK(a.query.weight == b.query.weight);
  CHECK(a.value.weight == b.value.weight);
  CHECK_FALSE(a.key.weight == other.key.weight);
}

TEST_CASE("k_linear") {
  const std::size_t k = 3, d = 4;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  Matrix e(k, d);
  for (auto& x : e.values()) x = u(rng);

  SUBCASE("identity maps") {
    AffineMaps m{Matrix(k * d, d), Matrix(k, d)};
    for (std::size_t n = 0; n < k; ++n)
      for (std::size_t i = 0; i < d; ++i) m.weight(n * d + i, i) = 1.0;
    CHECK(k_linear(e, m) == e);
    SUBCASE("map n multiplies by n") {
      for (std::size_t n = 0; n < k; ++n)
        for (std::size_t i = 0; i < d; ++i) m.weight(n * d + i, i) = static_cast<double>(n);
      const Matrix out = k_linear(e, m);
      for (std::size_t n = 0; n < k; ++n)
        for (std::size_t i = 0; i < d; ++i) CHECK(out(n, i) == static_cast<double>(n) * e(n, i));
    }
  }
  SUBCASE("rows are independent") {
    AffineMaps m{Matrix(k * d, d), Matrix(k, d)};
    for (auto& x : m.weight.values()) x = u(rng);
    for (auto& x : m.bias.values()) x = u(rng);
    const Matrix out = k_linear(e, m);
    for (std::size_t n = 0; n < k; ++n)
      for (std::size_t o = 0; o < d; ++o) {
        double s = m.bias(n, o);
        for (std::size_t i = 0; i < d; ++i) s += e(n, i) * m.weight(n * d + i, o);
        CHECK(out(n, o) == doctest::Approx(s).epsilon(1e-14));
      }
  }
}

TEST_CASE("attention prior") {
  const Matrix zeros(7, 32);
  const Matrix f = attention_magnitudes(zeros, zeros, 32, default_attention_logit());
  for (double x : f.values()) CHECK(std::abs(x - 1.0 / 12.0) < 1e-12);
  const Matrix half = attention_magnitudes(zeros, zeros, 32, 0.0);
  for (double x : half.values()) CHECK(x == 0.5);
}

TEST_CASE("diffusion step") {
  SUBCASE("empty graph does nothing") {
    ModelConfig c;
    c.graph = gdpm::Graph::build({"G", "I", "q_sto"}, {});
    c.d = 4;
    auto p = init_params(c, 3);
    randomize(p, 4);
    const auto r = diffusion_step({{120.0, 3.0, 20.0}, p.h0}, p, c);
    CHECK(r.dv == std::vector<double>(3, 0.0));
    CHECK(r.dh == Matrix(3, 3));
  }
  SUBCASE("single edge with frozen magnitudes 0.5") {
    ModelConfig c;
    const std::vector<gdpm::Edge> e{{"x", "G", gdpm::Sign::Positive}};
    c.graph = gdpm::Graph::build({"G", "x"}, e);
    c.exogenous.clear();
    c.d = 4;
    c.a0 = 0.0;
    ModelParams p = init_params(c, 1);
    p.query.weight.fill(0.0);
    p.key.weight.fill(0.0);
    const auto r = diffusion_step({{1.0, 0.0}, p.h0}, p, c);
    CHECK(r.dv == std::vector<double>{-0.5, 0.5});
    CHECK(gdpm::euler_update(std::vector<double>{1.0, 0.0}, r.dynamics) == std::vector<double>{0.5, 0.5});
  }
}

TEST_CASE("measurement operations") {
  const ModelConfig c;
  const std::size_t i = c.graph.index_of("I"), q = c.graph.index_of("q_sto");
  std::vector<double> v{100, 0.5, 0, 10, 0, 0, 0};

  auto after = add_exogenous(v, {0.0, 2.0, 0.0, 0.0}, c);
  CHECK(after[i] == 2.5);
  CHECK(add_exogenous(v, {0.0, 0.0, 0.0, 0.0}, c) == v);
  after = add_exogenous(v, {0.0, 0.0, 0.0, 40.0}, c);
  CHECK(after[q] == 50.0);
  after[q] = 10.0;
  CHECK(after == v);

  std::vector<double> g{95, 0, 0, 0, 0, 0, 0};
  CHECK(set_glucose(g, {100.0, 0, 0, 0}, c)[0] == 100.0);
  CHECK(set_glucose(g, {95.0, 0, 0, 0}, c) == g);
  CHECK(code_of([&] { set_glucose(g, {100.0, 0, 0, 0}, c, Phase::Forecast); }) == ErrorCode::ContractViolation);

  v[0] = 100.0;
  auto u = add_error(v, {110.0, 0, 0, 0}, c);
  CHECK(u.v[5] == 10.0);
  CHECK(u.v[6] == 0.0);
  u = add_error(v, {90.0, 0, 0, 0}, c);
  CHECK(u.v[5] == 0.0);
  CHECK(u.v[6] == 10.0);
  CHECK(add_error(v, {100.0, 0, 0, 0}, c).v == v);

  ModelConfig bare;
  bare.graph = gdpm::Graph::build({"G", "I", "q_sto"}, {});
  CHECK(code_of([&] { add_error(std::vector<double>{1, 2, 3}, {1.0, 0, 0, 0}, bare); }) == ErrorCode::MissingErrorNodes);
}

TEST_CASE("exogenous map validation") {
  ModelConfig c;
  c.exogenous.push_back({kCarbs, "G"});
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::MapTargetsGlucose);
  c.exogenous.back() = {kCarbs, "nope"};
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::UnknownNode);
}

TEST_CASE("predict matches the straight-line reference") {
  ModelConfig c;
  c.d = 8;
  std::mt19937_64 rng(17);

  SUBCASE("zero weights on constant glucose") {
    ModelParams p = init_params(c, 0);
    for (Matrix* m : parameter_slots(p))
      if (m != &p.bn_gamma) m->fill(0.0);
    std::vector<Measurement> flat(c.w, Measurement{100.0, 0.0, 0.0, 0.0});
    const auto got = predict(flat, p, c).forecast;
    const auto want = reference_forecast(flat, p, c);
    REQUIRE(got.size() == c.h);
    for (std::size_t t = 0; t < c.h; ++t) CHECK(got[t] == doctest::Approx(want[t]).epsilon(1e-12));
    // Glucose is never a source, and every other compartment stays empty.
    for (double g : got) CHECK(g == 100.0);
  }
  SUBCASE("random parameters and windows") {
    for (int trial = 0; trial < 20; ++trial) {
      ModelParams p = init_params(c, trial);
      randomize(p, 100 + trial);
      for (auto& s : p.norm.scale) s = 50.0;
      p.norm.offset[0] = 150.0;
      const auto window = random_window(rng, c.w);
      const auto got = predict(window, p, c).forecast;
      const auto want = reference_forecast(window, p, c);
      for (std::size_t t = 0; t < c.h; ++t) CHECK(got[t] == doctest::Approx(want[t]).epsilon(1e-10));
    }
  }
}

TEST_CASE("predict input errors") {
  const ModelConfig c;
  const auto p = init_params(c, 1);
  std::vector<Measurement> w(c.w, Measurement{100.0, 0.0, 0.0, 0.0});
  CHECK(code_of([&] { predict(std::span(w).first(5), p, c); }) == ErrorCode::LengthMismatch);
  w[4][kGlucose] = std::nan("");
  CHECK(code_of([&] { predict(w, p, c); }) == ErrorCode::GapInWindow);
  w[4][kGlucose] = 0.0;
  CHECK(code_of([&] { predict(w, p, c); }) == ErrorCode::NonPositiveGlucose);
}

TEST_CASE("inference contract over random windows") {
  const ModelConfig c;
  std::mt19937_64 rng(99);
  ModelParams p = init_params(c, 5);
  randomize(p, 6, 0.05);
  for (auto& s : p.norm.scale) s = 40.0;
  p.norm.offset[0] = 150.0;
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto window = random_window(rng, c.w);
    const auto pred = predict(window, p, c);
    const auto& tr = pred.trajectory;
    if (tr.steps.size() != c.w + c.h) ++violations;
    for (std::size_t t = 0; t < c.w; ++t)
      if (tr.steps[t].v[0] != window[t][kGlucose]) ++violations;
    for (std::size_t t = 1; t < tr.eps_pos_cumulative.size(); ++t)
      if (tr.eps_pos_cumulative[t] < tr.eps_pos_cumulative[t - 1] ||
          tr.eps_neg_cumulative[t] < tr.eps_neg_cumulative[t - 1])
        ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("batched graph forward equals predict") {
  ModelConfig c;
  c.d = 6;
  ModelParams p = init_params(c, 8);
  randomize(p, 9);
  for (auto& s : p.norm.scale) s = 60.0;
  p.norm.offset[0] = 140.0;
  std::mt19937_64 rng(10);
  std::vector<std::vector<Measurement>> windows;
  for (int b = 0; b < 3; ++b) windows.push_back(random_window(rng, c.w));

  BatchInputs in;
  in.steps.assign(c.w, Matrix(windows.size(), kChannelCount));
  for (std::size_t b = 0; b < windows.size(); ++b)
    for (std::size_t t = 0; t < c.w; ++t)
      for (std::size_t ch = 0; ch < kChannelCount; ++ch) in.steps[t](b, ch) = windows[b][t][ch];

  ad::Tape tape;
  const auto bound = bind_params(tape, p, false);
  ModelParams copy = p;
  const auto out = forward_batch(tape, bound, copy, c, in, false);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const auto pred = predict(windows[b], p, c);
    for (std::size_t t = 0; t < c.h; ++t)
      CHECK(out.forecast.value()(b, t) == doctest::Approx(pred.forecast[t]).epsilon(1e-11));
    CHECK(out.eps_pos.value()(b, 0) == doctest::Approx(pred.trajectory.eps_pos_final).epsilon(1e-11));
    CHECK(out.eps_neg.value()(b, 0) == doctest::Approx(pred.trajectory.eps_neg_final).epsilon(1e-11));
  }
}

TEST_CASE("impact curves") {
  const ModelConfig c;
  const std::size_t k = c.node_count();
  Trajectory zero;
  Trajectory flow;
  const std::size_t r = c.graph.index_of("R");
  for (std::size_t t = 0; t < 10; ++t) {
    zero.steps.push_back({std::vector<double>(k, 0.0), {}, {}, Matrix(k, k, 0.3)});
    std::vector<double> v(k, 0.0);
    v[r] = 10.0;
    flow.steps.push_back({v, {}, {}, Matrix(k, k, 0.1)});
  }
  const auto zc = impact_curves(zero, c);
  CHECK(zc.size() == 4);  // R, q_gut, eps_pos, eps_neg feed glucose
  for (const auto& curve : zc)
    for (double x : curve.values) CHECK(x == 0.0);
  for (const auto& curve : impact_curves(flow, c)) {
    if (curve.node != r) continue;
    for (std::size_t t = 0; t < 10; ++t) CHECK(curve.values[t] == doctest::Approx(static_cast<double>(t + 1)));
  }
}

TEST_CASE("fused model primitives pass grad_check on 50 random inputs") {
  const std::size_t k = 3, d = 4, b = 2;
  const std::vector<std::string> nodes{"G", "I", "q"};
  const std::vector<gdpm::Edge> edges{{"G", "I", gdpm::Sign::Negative}, {"G", "q", gdpm::Sign::Positive},
                                      {"I", "q", gdpm::Sign::Positive}};
  const Matrix a = gdpm::Graph::build(nodes, edges).adjacency();
  const Normalization norm{{100.0, 2.0, 10.0}, {30.0, 1.5, 20.0}};
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto rand = [&](std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (auto& x : m.values()) x = lo + (hi - lo) * (u(rng) + 1.0) / 2.0;
    return m;
  };
  auto weighted = [](ad::Tape& tape, const ad::Tensor& y) {
    Matrix w(y.rows(), y.cols());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.2 + 0.15 * static_cast<double>(i % 5);
    return ad::sum(ad::hadamard(y, tape.constant(w)));
  };
  using Fn = std::function<ad::Tensor(ad::Tape&, std::span<const ad::Tensor>)>;
  auto dyn = [&](const ad::Tensor& logits, gdpm::DrainMode mode) {
    return assemble_dynamics(ad::sigmoid(logits), a, mode);
  };
  const std::vector<std::pair<const char*, std::pair<Fn, std::function<std::vector<Matrix>()>>>> cases{
      {"k_linear",
       {[&](ad::Tape& t, auto x) { return weighted(t, k_linear(x[0], x[1], x[2], k, d)); },
        [&] { return std::vector<Matrix>{rand(b, k * d), rand(k * d, d), rand(k, d)}; }}},
      {"attention_magnitudes",
       {[&](ad::Tape& t, auto x) { return weighted(t, attention_magnitudes(x[0], x[1], k, d, -2.0)); },
        [&] { return std::vector<Matrix>{rand(b, k * d, -3, 3), rand(b, k * d, -3, 3)}; }}},
      {"assemble_dynamics literal",
       {[&](ad::Tape& t, auto x) { return weighted(t, dyn(x[0], gdpm::DrainMode::Literal)); },
        [&] { return std::vector<Matrix>{rand(b, k * k, -2, 2)}; }}},
      {"assemble_dynamics conserving",
       {[&](ad::Tape& t, auto x) { return weighted(t, dyn(x[0], gdpm::DrainMode::Conserving)); },
        [&] { return std::vector<Matrix>{rand(b, k * k, -2, 2)}; }}},
      {"mix",
       {[&](ad::Tape& t, auto x) { return weighted(t, mix(x[0], x[1], k, d - 1)); },
        [&] { return std::vector<Matrix>{rand(b, k * k), rand(b, k * (d - 1))}; }}},
      {"embed",
       {[&](ad::Tape& t, auto x) { return weighted(t, embed(x[0], x[1], norm, d)); },
        [&] { return std::vector<Matrix>{rand(b, k, 0, 150), rand(b, k * (d - 1))}; }}},
      {"take_blocks",
       {[&](ad::Tape& t, auto x) { return weighted(t, take_blocks(x[0], k, d, d - 1)); },
        [&] { return std::vector<Matrix>{rand(b, k * d)}; }}},
      {"edge_gain",
       {[&](ad::Tape& t, auto x) {
          return weighted(t, edge_gain(dyn(x[0], gdpm::DrainMode::Literal), k, 0, 1));
        },
        [&] { return std::vector<Matrix>{rand(b, k * k, -2, 2)}; }}},
  };
  for (const auto& [name, c] : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) worst = std::max(worst, ad::grad_check(c.first, c.second()));
    INFO(name);
    CHECK(worst < 1e-6);
  }
}
