#include "mmca/objective.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "mmca/special.hpp"

namespace mmca {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Tensor t_nll(const Tensor& mean_t, const Tensor& scale2, const Tensor& df,
             const Tensor& target) {
  if (mean_t.shape() != target.shape() || scale2.shape() != target.shape() ||
      df.shape() != target.shape())
    throw std::invalid_argument("t_nll: shape mismatch, target " +
                                shape_str(target.shape()) + " vs mean " +
                                shape_str(mean_t.shape()));
  auto check_finite = [](const Tensor& t, const char* name) {
    const auto& d = t.data();
    for (size_t i = 0; i < d.size(); ++i)
      if (!std::isfinite(d[i]))
        throw std::runtime_error(std::string("t_nll: non-finite ") + name +
                                 " at flat index " + std::to_string(i));
  };
  check_finite(mean_t, "mean");
  check_finite(scale2, "scale2");
  check_finite(df, "df");
  check_finite(target, "target");

  Tensor resid2 = square(sub(target, mean_t));
  Tensor ratio = div(resid2, mul(df, scale2));
  Tensor term1 = mul(mul_scalar(add_scalar(df, 1.0), 0.5),
                     log_t(add_scalar(ratio, 1.0)));
  Tensor term2 = mul_scalar(log_t(mul_scalar(mul(df, scale2), kPi)), 0.5);
  Tensor term3 = lgamma_t(mul_scalar(df, 0.5));
  Tensor term4 = lgamma_t(mul_scalar(add_scalar(df, 1.0), 0.5));
  return mean(sub(add(add(term1, term2), term3), term4));
}

PointMetrics point_metrics(const std::vector<double>& y,
                           const std::vector<double>& y_hat, double epsilon) {
  if (y.size() != y_hat.size())
    throw std::invalid_argument("point_metrics: size mismatch " +
                                std::to_string(y.size()) + " vs " +
                                std::to_string(y_hat.size()));
  PointMetrics m;
  m.count = static_cast<int64_t>(y.size());
  if (y.empty()) return m;
  double se = 0.0, ae = 0.0, ape = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    double e = y[i] - y_hat[i];
    se += e * e;
    ae += std::abs(e);
    ape += std::abs(e) / std::max(std::abs(y[i]), epsilon);
  }
  m.rmse = std::sqrt(se / y.size());
  m.mae = ae / y.size();
  m.mape_pct = ape / y.size() * 100.0;
  return m;
}

std::vector<std::pair<const char*, PointMetrics>> binned_metrics(
    const std::vector<double>& y, const std::vector<double>& y_hat,
    double epsilon) {
  static const char* kLabels[4] = {"0-20", "20-40", "40-60", ">60"};
  std::array<std::vector<double>, 4> ys, yhs;
  for (size_t i = 0; i < y.size(); ++i) {
    int bin = y[i] < 20.0 ? 0 : y[i] < 40.0 ? 1 : y[i] < 60.0 ? 2 : 3;
    ys[bin].push_back(y[i]);
    yhs[bin].push_back(y_hat[i]);
  }
  std::vector<std::pair<const char*, PointMetrics>> out;
  for (int b = 0; b < 4; ++b)
    out.emplace_back(kLabels[b], point_metrics(ys[b], yhs[b], epsilon));
  return out;
}

IntervalBounds intervals(const std::vector<double>& mean,
                         const std::vector<double>& scale2,
                         const std::vector<double>& df, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("intervals: alpha must lie in (0,1)");
  if (mean.size() != scale2.size() || mean.size() != df.size())
    throw std::invalid_argument("intervals: size mismatch");
  IntervalBounds b;
  b.lower.resize(mean.size());
  b.upper.resize(mean.size());
  for (size_t i = 0; i < mean.size(); ++i) {
    double q = student_t_quantile(1.0 - alpha / 2.0, df[i]);
    double half = q * std::sqrt(scale2[i]);
    b.lower[i] = mean[i] - half;
    b.upper[i] = mean[i] + half;
    if (b.lower[i] > b.upper[i])
      throw std::runtime_error("intervals: inverted bounds at index " +
                               std::to_string(i));
  }
  return b;
}

IntervalReport interval_eval(const IntervalBounds& bounds,
                             const std::vector<double>& y, int horizons,
                             double alpha) {
  if (bounds.lower.size() != y.size() || bounds.upper.size() != y.size())
    throw std::invalid_argument("interval_eval: size mismatch");
  if (horizons <= 0 || y.size() % horizons != 0)
    throw std::invalid_argument("interval_eval: bad horizon count");
  IntervalReport r;
  r.alpha = alpha;
  r.mpiw_per_horizon.assign(horizons, 0.0);
  r.picp_per_horizon.assign(horizons, 0.0);
  std::vector<int64_t> counts(horizons, 0);
  for (size_t i = 0; i < y.size(); ++i) {
    int t = static_cast<int>(i % horizons);
    r.mpiw_per_horizon[t] += bounds.upper[i] - bounds.lower[i];
    if (y[i] >= bounds.lower[i] && y[i] <= bounds.upper[i])
      r.picp_per_horizon[t] += 1.0;
    ++counts[t];
  }
  double mpiw_sum = 0.0, picp_sum = 0.0;
  for (int t = 0; t < horizons; ++t) {
    mpiw_sum += r.mpiw_per_horizon[t];
    picp_sum += r.picp_per_horizon[t];
    r.mpiw_per_horizon[t] /= counts[t];
    r.picp_per_horizon[t] /= counts[t];
  }
  r.mpiw = mpiw_sum / y.size();
  r.picp = picp_sum / y.size();
  return r;
}

namespace {

// Minimal Nelder-Mead for small fixed dimension.
std::vector<double> nelder_mead(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x0, double step, int max_iter) {
  size_t n = x0.size();
  std::vector<std::vector<double>> simplex(n + 1, x0);
  for (size_t i = 0; i < n; ++i) simplex[i + 1][i] += step;
  std::vector<double> fv(n + 1);
  for (size_t i = 0; i <= n; ++i) fv[i] = f(simplex[i]);

  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<size_t> order(n + 1);
    for (size_t i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return fv[a] < fv[b]; });
    if (fv[order[n]] - fv[order[0]] < 1e-10 * (1.0 + std::abs(fv[order[0]])))
      break;
    std::vector<double> centroid(n, 0.0);
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j) centroid[j] += simplex[order[i]][j] / n;
    auto point = [&](double coef) {
      std::vector<double> p(n);
      for (size_t j = 0; j < n; ++j)
        p[j] = centroid[j] + coef * (simplex[order[n]][j] - centroid[j]);
      return p;
    };
    auto reflect = point(-1.0);
    double fr = f(reflect);
    if (fr < fv[order[0]]) {
      auto expand = point(-2.0);
      double fe = f(expand);
      if (fe < fr) {
        simplex[order[n]] = expand;
        fv[order[n]] = fe;
      } else {
        simplex[order[n]] = reflect;
        fv[order[n]] = fr;
      }
    } else if (fr < fv[order[n - 1]]) {
      simplex[order[n]] = reflect;
      fv[order[n]] = fr;
    } else {
      auto contract = point(0.5);
      double fc = f(contract);
      if (fc < fv[order[n]]) {
        simplex[order[n]] = contract;
        fv[order[n]] = fc;
      } else {
        for (size_t i = 1; i <= n; ++i) {
          for (size_t j = 0; j < n; ++j)
            simplex[order[i]][j] =
                0.5 * (simplex[order[i]][j] + simplex[order[0]][j]);
          fv[order[i]] = f(simplex[order[i]]);
        }
      }
    }
  }
  size_t best = 0;
  for (size_t i = 1; i <= n; ++i)
    if (fv[i] < fv[best]) best = i;
  return simplex[best];
}

}  // namespace

TFit fit_t_errors(const std::vector<double>& errors) {
  if (errors.size() < 100)
    throw std::invalid_argument("fit_t_errors: need at least 100 samples, got " +
                                std::to_string(errors.size()));
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  size_t n = sorted.size();
  double median = sorted[n / 2];
  std::vector<double> dev(n);
  for (size_t i = 0; i < n; ++i) dev[i] = std::abs(sorted[i] - median);
  std::sort(dev.begin(), dev.end());
  double mad_scale = std::max(1.4826 * dev[n / 2], 1e-6);

  auto nll = [&](const std::vector<double>& p) {
    double mu = p[0];
    double s = std::exp(p[1]);
    double df = std::exp(p[2]);
    if (df > 1e6) df = 1e6;
    double acc = 0.0;
    for (double e : errors)
      acc -= student_t_logpdf((e - mu) / s, df) - std::log(s);
    return acc / static_cast<double>(errors.size());
  };
  auto best = nelder_mead(nll, {median, std::log(mad_scale), std::log(5.0)},
                          0.5, 400);

  TFit fit;
  fit.location = best[0];
  fit.scale = std::exp(best[1]);
  fit.df = std::exp(best[2]);

  // K-S distance of the standardized sample against the fitted t CDF.
  double ks = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double c = student_t_cdf((sorted[i] - fit.location) / fit.scale, fit.df);
    ks = std::max(ks, std::abs(c - static_cast<double>(i + 1) / n));
    ks = std::max(ks, std::abs(c - static_cast<double>(i) / n));
  }
  fit.ks_statistic = ks;

  int qq_points = static_cast<int>(std::min<size_t>(n, 200));
  for (int i = 0; i < qq_points; ++i) {
    double p = (i + 0.5) / qq_points;
    double theo = fit.location +
                  fit.scale * student_t_quantile(p, fit.df);
    double sample = sorted[static_cast<size_t>(p * n)];
    fit.qq.emplace_back(theo, sample);
  }
  return fit;
}

}  // namespace mmca
