#pragma once

#include <utility>
#include <vector>

#include "mmca/tensor.hpp"

namespace mmca {

// Student-t negative log-likelihood, averaged over all elements. All four
// tensors share a shape; gradients flow to mean, scale2, and df.
Tensor t_nll(const Tensor& mean, const Tensor& scale2, const Tensor& df,
             const Tensor& target);

struct PointMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  double mape_pct = 0.0;
  int64_t count = 0;
};

// MAPE denominator is max(|y|, epsilon); epsilon defaults to 1 mph.
PointMetrics point_metrics(const std::vector<double>& y,
                           const std::vector<double>& y_hat,
                           double epsilon = 1.0);

// Metrics grouped by observed-speed bin: [0,20), [20,40), [40,60), [60,inf).
std::vector<std::pair<const char*, PointMetrics>> binned_metrics(
    const std::vector<double>& y, const std::vector<double>& y_hat,
    double epsilon = 1.0);

struct IntervalBounds {
  std::vector<double> lower;
  std::vector<double> upper;
};

// Two-sided 1-alpha interval: mean +- t_quantile(1 - alpha/2, df) * sqrt(scale2).
IntervalBounds intervals(const std::vector<double>& mean,
                         const std::vector<double>& scale2,
                         const std::vector<double>& df, double alpha);

struct IntervalReport {
  double alpha = 0.0;
  std::vector<double> mpiw_per_horizon;
  std::vector<double> picp_per_horizon;
  double mpiw = 0.0;
  double picp = 0.0;
};

// Elements are laid out [sample][horizon]; horizons = values per sample.
IntervalReport interval_eval(const IntervalBounds& bounds,
                             const std::vector<double>& y, int horizons,
                             double alpha);

struct TFit {
  double df = 0.0;
  double location = 0.0;
  double scale = 0.0;
  double ks_statistic = 0.0;
  // (theoretical quantile, sample quantile) pairs for plotting
  std::vector<std::pair<double, double>> qq;
};

// Maximum-likelihood location-scale Student-t fit (Nelder-Mead on
// (location, log scale, log df)) plus a K-S distance against the fit.
TFit fit_t_errors(const std::vector<double>& errors);

}  // namespace mmca
