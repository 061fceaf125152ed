#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hadnet/episode.hpp"
#include "hadnet/matrix.hpp"
#include "hadnet/training.hpp"

namespace hadnet::baselines {

/// Last observed glucose repeated h times.
std::vector<double> persistence_forecast(std::span<const Measurement> window, std::size_t h);

/// y_t = c + sum_i a_i y_{t-i}; coefficients[0] multiplies the latest value.
/// Order 0, or a singular fit, forecasts by persistence.
struct ArModel {
  std::size_t order = 5;
  double intercept = 0.0;
  std::vector<double> coefficients;
  bool persistence = false;
  std::string warning;
};

/// Ordinary least squares on lagged glucose inside gap-free runs of every
/// series. Throws InvalidArgument with fewer than 10 * order usable points.
ArModel ar_fit(std::span<const std::vector<double>> series, std::size_t order = 5);
ArModel ar_fit(std::span<const EpisodeFrame> episodes, std::size_t order = 5);
std::vector<double> ar_forecast(const ArModel& model, std::span<const Measurement> window, std::size_t h);

/// Ridge regression from the flattened window (w x channels) to the h targets,
/// intercept fitted on centred data and left unpenalised.
struct RidgeModel {
  double lambda = 1.0;
  std::vector<double> feature_mean;
  std::vector<double> target_mean;
  Matrix coef;  // features x h
};

RidgeModel ridge_fit(std::span<const training::WindowSample> windows, double lambda = 1.0);
/// Raw design-matrix form; rows of x are samples.
RidgeModel ridge_fit(const Matrix& x, const Matrix& y, double lambda);
std::vector<double> ridge_forecast(const RidgeModel& model, std::span<const Measurement> window);
std::vector<double> ridge_predict(const RidgeModel& model, std::span<const double> features);

}  // namespace hadnet::baselines
