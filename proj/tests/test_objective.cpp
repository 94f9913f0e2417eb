#include <doctest.h>

#include <cmath>
#include <random>

#include "mmca/objective.hpp"
#include "mmca/special.hpp"
#include "test_util.hpp"

using namespace mmca;
using mmca::test::gradient_check;
using mmca::test::random_tensor;

namespace {

std::vector<double> sample_t(int n, double df, double loc, double scale,
                             uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(1e-12, 1.0 - 1e-12);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = loc + scale * student_t_quantile(u(rng), df);
  return out;
}

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("t-NLL at a perfect prediction with nu=2, scale2=1") {
  Tensor mean({2, 3}, std::vector<double>(6, 5.0));
  Tensor target({2, 3}, std::vector<double>(6, 5.0));
  Tensor scale2 = Tensor::full({2, 3}, 1.0);
  Tensor df = Tensor::full({2, 3}, 2.0);
  double nll = t_nll(mean, scale2, df, target).item();
  CHECK(std::abs(nll - 1.0397207) <= 1e-6);
}

TEST_CASE("t-NLL equals the negative t log-density") {
  for (double df : {2.0, 4.5, 30.0}) {
    for (double r : {-1.7, 0.3, 2.2}) {
      double s2 = 1.9;
      Tensor m = Tensor::scalar(0.0);
      Tensor tgt = Tensor::scalar(r);
      Tensor sc = Tensor::scalar(s2);
      Tensor nu = Tensor::scalar(df);
      double nll = t_nll(m, sc, nu, tgt).item();
      double ref =
          -(student_t_logpdf(r / std::sqrt(s2), df) - 0.5 * std::log(s2));
      CHECK(nll == doctest::Approx(ref).epsilon(1e-10));
    }
  }
}

TEST_CASE("t-NLL approaches the Gaussian NLL as nu grows") {
  double r = 1.3, s2 = 2.0;
  Tensor m = Tensor::scalar(0.0);
  Tensor tgt = Tensor::scalar(r);
  Tensor sc = Tensor::scalar(s2);
  Tensor nu = Tensor::scalar(1e7);
  double nll = t_nll(m, sc, nu, tgt).item();
  double gauss = 0.5 * std::log(2.0 * M_PI * s2) + r * r / (2.0 * s2);
  CHECK(nll == doctest::Approx(gauss).epsilon(1e-5));
}

TEST_CASE("t-NLL gradients match finite differences") {
  std::mt19937_64 rng(5);
  Tensor target = random_tensor({3, 4}, rng, -1.0, 1.0);
  target.impl()->requires_grad = false;
  std::vector<Tensor> inputs{random_tensor({3, 4}, rng, -1.0, 1.0),
                             random_tensor({3, 4}, rng, 0.5, 2.0),
                             random_tensor({3, 4}, rng, 2.1, 8.0)};
  auto fn = [&](const std::vector<Tensor>& in) {
    return t_nll(in[0], in[1], in[2], target);
  };
  CHECK(gradient_check(fn, inputs) < 1e-4);
}

TEST_CASE("t-NLL rejects non-finite inputs and shape mismatches") {
  Tensor tgt = Tensor::scalar(1.0);
  CHECK_THROWS_AS(
      t_nll(Tensor::scalar(std::nan("")), Tensor::scalar(1.0),
            Tensor::scalar(3.0), tgt)
          .item(),
      std::runtime_error);
  CHECK_THROWS_AS(t_nll(Tensor::zeros({2, 2}), Tensor::scalar(1.0),
                        Tensor::scalar(3.0), tgt),
                  std::invalid_argument);
}

TEST_CASE("point metrics hand values") {
  // errors: 2, -3, 4, -5 -> MAE 3.5, RMSE sqrt(13.5), MAPE with |y| denom
  std::vector<double> y{50, 60, 40, 50};
  std::vector<double> yhat{52, 57, 44, 45};
  auto m = point_metrics(y, yhat);
  CHECK(m.count == 4);
  CHECK(m.mae == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(m.rmse == doctest::Approx(std::sqrt((4.0 + 9 + 16 + 25) / 4)).epsilon(1e-12));
  double mape = (2.0 / 50 + 3.0 / 60 + 4.0 / 40 + 5.0 / 50) / 4 * 100.0;
  CHECK(m.mape_pct == doctest::Approx(mape).epsilon(1e-12));
}

TEST_CASE("MAPE denominator floors at epsilon") {
  std::vector<double> y{0.0};
  std::vector<double> yhat{2.0};
  auto m = point_metrics(y, yhat, 1.0);
  CHECK(m.mape_pct == doctest::Approx(200.0).epsilon(1e-12));
}

TEST_CASE("binned metrics partition by observed speed") {
  std::vector<double> y{10, 30, 50, 70, 15};
  std::vector<double> yhat{12, 33, 54, 75, 16};
  auto bins = binned_metrics(y, yhat);
  REQUIRE(bins.size() == 4);
  CHECK(bins[0].second.count == 2);  // 10, 15
  CHECK(bins[1].second.count == 1);
  CHECK(bins[2].second.count == 1);
  CHECK(bins[3].second.count == 1);
  CHECK(bins[0].second.mae == doctest::Approx(1.5));
}

TEST_CASE("interval width follows the t quantile exactly") {
  std::vector<double> mean{55.0};
  std::vector<double> scale2{4.0};
  std::vector<double> df{6.0};
  auto b = intervals(mean, scale2, df, 0.1);
  double q = student_t_quantile(0.95, 6.0);
  CHECK(b.upper[0] - b.lower[0] ==
        doctest::Approx(2.0 * q * 2.0).epsilon(1e-12));
  CHECK(0.5 * (b.upper[0] + b.lower[0]) == doctest::Approx(55.0).epsilon(1e-12));
}

TEST_CASE("interval eval hand example") {
  // two samples, two horizons; second horizon of sample 2 misses
  IntervalBounds b;
  b.lower = {40, 40, 40, 40};
  b.upper = {60, 60, 60, 60};
  std::vector<double> y{50, 55, 45, 75};
  auto rep = interval_eval(b, y, 2, 0.1);
  CHECK(rep.mpiw == doctest::Approx(20.0));
  CHECK(rep.picp == doctest::Approx(0.75));
  REQUIRE(rep.picp_per_horizon.size() == 2);
  CHECK(rep.picp_per_horizon[0] == doctest::Approx(1.0));
  CHECK(rep.picp_per_horizon[1] == doctest::Approx(0.5));
  CHECK(rep.mpiw_per_horizon[0] == doctest::Approx(20.0));
}

TEST_CASE("Monte Carlo calibration: PICP near 1 - alpha") {
  int n = 20000;
  double df = 4.0, s2 = 2.25, mu = 60.0;
  auto y = sample_t(n, df, mu, std::sqrt(s2), 123);
  std::vector<double> means(n, mu), scale2s(n, s2), dfs(n, df);
  auto b = intervals(means, scale2s, dfs, 0.1);
  auto rep = interval_eval(b, y, 1, 0.1);
  CHECK(rep.picp > 0.885);
  CHECK(rep.picp < 0.915);
}

TEST_CASE("t fit recovers the generating distribution") {
  auto errors = sample_t(10000, 2.5, 0.3, 1.2, 77);
  auto fit = fit_t_errors(errors);
  CHECK(fit.df > 2.0);
  CHECK(fit.df < 3.2);
  CHECK(fit.location == doctest::Approx(0.3).epsilon(0.15));
  CHECK(fit.scale == doctest::Approx(1.2).epsilon(0.15));
  CHECK(fit.ks_statistic < 0.05);
  REQUIRE(fit.qq.size() == 200);
  // Q-Q pairs are monotone in both coordinates
  for (size_t i = 1; i < fit.qq.size(); ++i) {
    CHECK(fit.qq[i].first >= fit.qq[i - 1].first);
    CHECK(fit.qq[i].second >= fit.qq[i - 1].second);
  }
}

TEST_CASE("t fit refuses tiny samples") {
  std::vector<double> few(50, 0.1);
  CHECK_THROWS_AS(fit_t_errors(few), std::invalid_argument);
}

}  // TEST_SUITE
