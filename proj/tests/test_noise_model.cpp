#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "gdiff/metrics.hpp"
#include "gdiff/noise_model.hpp"
#include "gdiff/oracle.hpp"

using namespace gdiff;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
const PowerSpectrum kPow = PowerSpectrum::power_law();
}

TEST_CASE("power-law spectrum values") {
  const std::vector<double> zero{0.0};
  for (double v : spectrum_eval(kPow, zero, {8, 8})) CHECK(v == 1.0);
  const std::vector<double> two{2.0};
  const auto s = spectrum_eval(kPow, two, {8, 8});
  CHECK_THAT(s[3 * 8 + 4], WithinRel(25.0, 1e-14));
  const std::vector<double> m1{-1.0};
  const auto t = spectrum_eval(kPow, m1, {8, 8});
  const ModeGrid g({8, 8});
  CHECK(t[0] == 1.0);
  for (std::size_t k = 1; k < g.size(); ++k) CHECK_THAT(t[k], WithinRel(1.0 / g.radius[k], 1e-14));
}

TEST_CASE("tabulated spectrum interpolates in log space") {
  const auto tab = PowerSpectrum::tabulated({1.0, 4.0}, {1.0, 16.0});
  CHECK(tab.n_spectral() == 0);
  CHECK_THAT(tab.value(2.5, {}), WithinRel(4.0, 1e-14));
  CHECK_THAT(tab.value(2.0, {}), WithinRel(std::cbrt(16.0), 1e-14));
  CHECK(tab.value(0.0, {}) == 1.0);
  CHECK_THAT(tab.value(10.0, {}), WithinRel(16.0, 1e-15));
  CHECK_THROWS_AS(PowerSpectrum::tabulated({1.0}, {0.0}), Error);
}

TEST_CASE("prior box") {
  const PriorBox box({0.1, -1.0}, {1.0, 1.0});
  CHECK(box.contains(NoiseParams{0.5, {0.0}}));
  CHECK_FALSE(box.contains(NoiseParams{1.5, {0.0}}));
  CHECK_THAT(std::exp(box.log_density()) * 0.9 * 2.0, WithinRel(1.0, 1e-14));
  RngStream rng(1, 1);
  for (int i = 0; i < 1000; ++i) CHECK(box.contains(box.sample(rng)));
  const auto p = box.project(std::vector<double>{5.0, -3.0});
  CHECK(p == std::vector<double>{1.0, -1.0});
  CHECK_THROWS_AS(PriorBox({1.0}, {0.5}), Error);
}

TEST_CASE("white unit noise sample moments") {
  RngStream rng(3, 1);
  double s = 0, ss = 0;
  std::size_t n = 0;
  const NoiseParams p{1.0, {0.0}};
  while (n < 1000000) {
    const Field f = sample_noise(kPow, p, {64, 64}, rng);
    for (double v : f.data()) {
      s += v;
      ss += v * v;
    }
    n += f.size();
  }
  const double mean = s / static_cast<double>(n);
  CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK_THAT(ss / static_cast<double>(n) - mean * mean, WithinRel(1.0, 0.01));
}

TEST_CASE("coloured noise has zero mean") {
  RngStream rng(3, 2);
  const NoiseParams p{0.7, {-1.0}};
  double s = 0, ss = 0;
  std::size_t n = 0;
  while (n < 1000000) {
    const Field f = sample_noise(kPow, p, {64, 64}, rng);
    for (double v : f.data()) {
      s += v;
      ss += v * v;
    }
    n += f.size();
  }
  // pixels within a field are correlated, so use a generous error bar from the DC variance
  const double mean = s / static_cast<double>(n);
  const double sd_of_mean = 0.7 / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(mean) < 4.0 * sd_of_mean);
}

TEST_CASE("index -1 periodogram follows sigma^2 / |k|") {
  RngStream rng(5, 1);
  const NoiseParams p{0.5, {-1.0}};
  const std::size_t n_bins = 8;
  std::vector<double> acc(n_bins, 0.0), kbar;
  for (int r = 0; r < 200; ++r) {
    const auto est = power_spectrum(sample_noise(kPow, p, {64, 64}, rng), n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) acc[b] += est.power[b] / 200.0;
    if (r == 0) kbar = est.k;
  }
  // expected bin mean is the average of sigma^2 / |k| over the bin's modes
  const ModeGrid g({64, 64});
  std::vector<double> expect(n_bins, 0.0), cnt(n_bins, 0.0);
  std::size_t max_shell = 0;
  for (std::size_t k = 1; k < g.size(); ++k) max_shell = std::max(max_shell, g.shell(k));
  for (std::size_t k = 1; k < g.size(); ++k) {
    const std::size_t b = std::min(n_bins - 1, (std::max<std::size_t>(g.shell(k), 1) - 1) * n_bins / max_shell);
    expect[b] += 0.25 / g.radius[k];
    cnt[b] += 1.0;
  }
  for (std::size_t b = 0; b < n_bins; ++b) CHECK_THAT(acc[b], WithinRel(expect[b] / cnt[b], 0.05));
}

TEST_CASE("likelihood special cases") {
  RngStream rng(7, 1);
  const Field eps = Field::white_noise({8, 8}, rng);
  const double d = 64.0;
  const double c = -0.5 * d * std::log(2.0 * std::numbers::pi);
  CHECK_THAT(log_likelihood(eps, kPow, {1.0, {0.0}}), WithinRel(c - 0.5 * eps.squared_norm(), 1e-12));
  const Field zero({8, 8});
  CHECK_THAT(log_likelihood(zero, kPow, {1.0, {0.0}}), WithinRel(c, 1e-14));
  const auto g = grad_log_likelihood(zero, kPow, {1.0, {0.0}});
  CHECK_THAT(g[0], WithinRel(-d, 1e-14));
}

TEST_CASE("fast likelihood equals the dense covariance oracle") {
  RngStream rng(7, 2);
  const Field eps = Field::white_noise({8, 8}, rng);
  const NoiseParams p{0.7, {-0.5}};
  const double dense = dense_gaussian_logpdf(eps, kPow, p);
  CHECK_THAT(log_likelihood(eps, kPow, p), WithinRel(dense, 1e-10));
}

TEST_CASE("likelihood gradient matches central differences") {
  RngStream rng(7, 3);
  const Field eps = sample_noise(kPow, {0.4, {0.6}}, {16, 16}, rng);
  const NoiseParams p{0.55, {0.3}};
  const auto g = grad_log_likelihood(eps, kPow, p);
  const double h = 1e-6;
  const double ds = (log_likelihood(eps, kPow, {p.sigma + h, p.spectral}) -
                     log_likelihood(eps, kPow, {p.sigma - h, p.spectral})) / (2 * h);
  const double di = (log_likelihood(eps, kPow, {p.sigma, {p.spectral[0] + h}}) -
                     log_likelihood(eps, kPow, {p.sigma, {p.spectral[0] - h}})) / (2 * h);
  CHECK_THAT(g[0], WithinRel(ds, 1e-6));
  CHECK_THAT(g[1], WithinRel(di, 1e-6));
}

TEST_CASE("covariance square root") {
  RngStream rng(9, 1);
  const Field f = Field::white_noise({8}, rng);
  const std::vector<double> zero{0.0};
  const Field same = normalized_covariance_sqrt_apply(kPow, zero, f);
  for (std::size_t i = 0; i < 8; ++i) CHECK_THAT(same[i], WithinAbs(f[i], 1e-14));

  Field imp({8});
  imp[0] = 1.0;
  const std::vector<double> two{2.0};
  const Field out = normalized_covariance_sqrt_apply(kPow, two, imp);
  const auto s = spectrum_eval(kPow, two, {8});
  auto sh = dft(imp);
  for (std::size_t k = 0; k < 8; ++k) sh.coeffs[k] *= std::sqrt(s[k]);
  const Field ref = idft(sh);
  for (std::size_t i = 0; i < 8; ++i) CHECK_THAT(out[i], WithinAbs(ref[i], 1e-14));

  const Field g = Field::white_noise({8}, rng);
  const Field lhs = normalized_covariance_sqrt_apply(kPow, two, f * 2.0 + g * -3.0);
  const Field rhs = normalized_covariance_sqrt_apply(kPow, two, f) * 2.0 + normalized_covariance_sqrt_apply(kPow, two, g) * -3.0;
  for (std::size_t i = 0; i < 8; ++i) CHECK_THAT(lhs[i], WithinAbs(rhs[i], 1e-10));
  const Field back = normalized_covariance_inv_sqrt_apply(kPow, two, out);
  for (std::size_t i = 0; i < 8; ++i) CHECK_THAT(back[i], WithinAbs(imp[i], 1e-12));
}

TEST_CASE("box-checked likelihood refuses outside parameters") {
  const PriorBox box({0.1, -1.0}, {1.0, 1.0});
  const Field eps({4, 4});
  CHECK_THROWS_AS(log_likelihood(eps, kPow, {2.0, {0.0}}, box), Error);
  CHECK_THROWS_AS(log_likelihood(eps, kPow, {0.5, {}}), Error);
}
