#include "hadnet/baselines.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "hadnet/errors.hpp"

namespace hadnet::baselines {

std::vector<double> persistence_forecast(std::span<const Measurement> window, std::size_t h) {
  if (window.empty()) throw Error(ErrorCode::LengthMismatch, "empty window");
  return std::vector<double>(h, window.back()[kGlucose]);
}

ArModel ar_fit(std::span<const std::vector<double>> series, std::size_t order) {
  ArModel m;
  m.order = order;
  if (order == 0) {
    m.persistence = true;
    return m;
  }
  // Collect lagged rows from every finite run.
  std::vector<double> rows;
  std::vector<double> ys;
  for (const auto& s : series) {
    std::size_t run = 0;
    for (std::size_t t = 0; t < s.size(); ++t) {
      if (!std::isfinite(s[t])) {
        run = 0;
        continue;
      }
      if (run >= order) {
        rows.push_back(1.0);
        for (std::size_t i = 1; i <= order; ++i) rows.push_back(s[t - i]);
        ys.push_back(s[t]);
      }
      ++run;
    }
  }
  const std::size_t n = ys.size();
  if (n < 10 * order) throw Error(ErrorCode::InvalidArgument, "AR fit needs at least 10 * order points");
  const auto p = static_cast<Eigen::Index>(order + 1);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      rows.data(), static_cast<Eigen::Index>(n), p);
  const Eigen::Map<const Eigen::VectorXd> y(ys.data(), static_cast<Eigen::Index>(n));
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < p) {
    m.persistence = true;
    m.warning = "AR normal equations are singular; falling back to persistence";
    return m;
  }
  const Eigen::VectorXd beta = qr.solve(y);
  m.intercept = beta[0];
  m.coefficients.assign(beta.data() + 1, beta.data() + p);
  return m;
}

ArModel ar_fit(std::span<const EpisodeFrame> episodes, std::size_t order) {
  std::vector<std::vector<double>> series;
  for (const auto& ep : episodes) {
    std::vector<double> g;
    for (const auto& r : ep.rows) g.push_back(r[kGlucose]);
    series.push_back(std::move(g));
  }
  return ar_fit(series, order);
}

std::vector<double> ar_forecast(const ArModel& model, std::span<const Measurement> window, std::size_t h) {
  if (model.persistence) return persistence_forecast(window, h);
  if (window.size() < model.order) throw Error(ErrorCode::LengthMismatch, "window shorter than the AR order");
  std::vector<double> history;
  for (const auto& x : window.last(model.order)) history.push_back(x[kGlucose]);
  std::vector<double> out;
  for (std::size_t t = 0; t < h; ++t) {
    double y = model.intercept;
    for (std::size_t i = 0; i < model.order; ++i) y += model.coefficients[i] * history[history.size() - 1 - i];
    out.push_back(y);
    history.push_back(y);
  }
  return out;
}

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<double> flatten(std::span<const Measurement> window) {
  std::vector<double> f;
  f.reserve(window.size() * kChannelCount);
  for (const auto& x : window) f.insert(f.end(), x.begin(), x.end());
  return f;
}

}  // namespace

RidgeModel ridge_fit(const Matrix& x, const Matrix& y, double lambda) {
  if (x.rows() != y.rows() || x.rows() == 0) throw Error(ErrorCode::ShapeMismatch, "ridge needs matching rows");
  if (!(lambda > 0.0)) throw Error(ErrorCode::InvalidArgument, "ridge penalty must be positive");
  const auto n = static_cast<Eigen::Index>(x.rows());
  const auto f = static_cast<Eigen::Index>(x.cols());
  const auto h = static_cast<Eigen::Index>(y.cols());
  const Eigen::Map<const RowMajor> xm(x.data(), n, f);
  const Eigen::Map<const RowMajor> ym(y.data(), n, h);

  const Eigen::RowVectorXd xmean = xm.colwise().mean();
  const Eigen::RowVectorXd ymean = ym.colwise().mean();
  const Eigen::MatrixXd xc = xm.rowwise() - xmean;
  const Eigen::MatrixXd yc = ym.rowwise() - ymean;
  Eigen::MatrixXd gram = xc.transpose() * xc;
  gram.diagonal().array() += lambda;
  const Eigen::MatrixXd beta = gram.ldlt().solve(xc.transpose() * yc);

  RidgeModel m;
  m.lambda = lambda;
  m.feature_mean.assign(xmean.data(), xmean.data() + f);
  m.target_mean.assign(ymean.data(), ymean.data() + h);
  m.coef = Matrix(static_cast<std::size_t>(f), static_cast<std::size_t>(h));
  Eigen::Map<RowMajor>(m.coef.data(), f, h) = beta;
  return m;
}

RidgeModel ridge_fit(std::span<const training::WindowSample> windows, double lambda) {
  if (windows.empty()) throw Error(ErrorCode::EmptyDataset, "no windows to fit");
  const std::size_t features = windows[0].input.size() * kChannelCount;
  const std::size_t h = windows[0].target.size();
  Matrix x(windows.size(), features), y(windows.size(), h);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto f = flatten(windows[i].input);
    if (f.size() != features || windows[i].target.size() != h)
      throw Error(ErrorCode::LengthMismatch, "windows differ in shape");
    std::copy(f.begin(), f.end(), x.row(i).begin());
    std::copy(windows[i].target.begin(), windows[i].target.end(), y.row(i).begin());
  }
  return ridge_fit(x, y, lambda);
}

std::vector<double> ridge_predict(const RidgeModel& model, std::span<const double> features) {
  if (features.size() != model.coef.rows()) throw Error(ErrorCode::LengthMismatch, "feature count differs");
  std::vector<double> out = model.target_mean;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const double c = features[i] - model.feature_mean[i];
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += c * model.coef(i, j);
  }
  return out;
}

std::vector<double> ridge_forecast(const RidgeModel& model, std::span<const Measurement> window) {
  return ridge_predict(model, flatten(window));
}

}  // namespace hadnet::baselines
