#include <catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <vector>

#include "gdiff/noise_model.hpp"
#include "gdiff/oracle.hpp"

using namespace gdiff;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
const PowerSpectrum kPow = PowerSpectrum::power_law();

LinearGaussianProblem make(const Shape& dims, double amp, std::uint64_t seed, const NoiseParams& truth) {
  const ModeGrid g(dims);
  std::vector<double> p(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) p[k] = amp / (1.0 + g.radius_sq[k]);
  LinearGaussianProblem prob{Field::constant(dims, 0.3), p, kPow, {}};
  RngStream rng(seed, 0);
  prob.y = sample_gaussian_prior(prob, rng) + sample_noise(kPow, truth, dims, rng);
  return prob;
}
}  // namespace

TEST_CASE("Wiener posterior limits") {
  const auto prob = make({8, 8}, 1.0, 1, NoiseParams{0.5, {0.0}});
  const auto quiet = wiener_posterior(prob, NoiseParams{1e-8, {0.0}});
  for (std::size_t i = 0; i < prob.y.size(); ++i) CHECK_THAT(quiet.mean[i], WithinAbs(prob.y[i], 1e-10));
  const auto loud = wiener_posterior(prob, NoiseParams{1e8, {0.0}});
  for (std::size_t i = 0; i < prob.y.size(); ++i) CHECK_THAT(loud.mean[i], WithinAbs(0.3, 1e-10));
  const auto mid = wiener_posterior(prob, NoiseParams{0.5, {1.0}});
  const auto s = spectrum_eval(kPow, std::vector<double>{1.0}, prob.dims());
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double p = prob.prior_spectrum[k], n = 0.25 * s[k];
    CHECK_THAT(mid.variance[k], WithinRel(p * n / (p + n), 1e-14));
  }
}

TEST_CASE("Wiener mean agrees with the dense solve") {
  const auto prob = make({4, 4}, 2.0, 2, NoiseParams{0.4, {-1.0}});
  const NoiseParams at{0.4, {-1.0}};
  const auto post = wiener_posterior(prob, at);
  const auto s = spectrum_eval(kPow, at, prob.dims());
  const Eigen::MatrixXd cx = dense_covariance(prob.dims(), prob.prior_spectrum);
  const Eigen::MatrixXd cn = dense_covariance(prob.dims(), s, 0.16);
  Eigen::VectorXd r(16);
  for (int i = 0; i < 16; ++i) r(i) = prob.y[static_cast<std::size_t>(i)] - 0.3;
  const Eigen::VectorXd m = (cx * (cx + cn).ldlt().solve(r)).array() + 0.3;
  for (int i = 0; i < 16; ++i) CHECK_THAT(post.mean[static_cast<std::size_t>(i)], WithinAbs(m(i), 1e-12));
}

TEST_CASE("dense log density") {
  RngStream rng(3, 3);
  const Field eps = Field::white_noise({4, 4}, rng) * 0.5;
  const NoiseParams p{0.5, {-1.5}};
  CHECK_THAT(dense_gaussian_logpdf(eps, kPow, p), WithinAbs(log_likelihood(eps, kPow, p), 1e-10));
  // scaling x by c and the covariance by c^2 shifts by -d log c
  const NoiseParams p2{1.0, {-1.5}};
  CHECK_THAT(dense_gaussian_logpdf(eps * 2.0, kPow, p2),
             WithinAbs(dense_gaussian_logpdf(eps, kPow, p) - 16.0 * std::log(2.0), 1e-10));
  const std::vector<double> big(300 * 1, 1.0);
  CHECK_THROWS_AS(dense_covariance({300}, big), Error);
}

TEST_CASE("grid posterior is normalized and matches direct evaluation") {
  const auto prob = make({8, 8}, 1.0, 4, NoiseParams{0.6, {0.5}});
  const PriorBox box({0.1, -1.0}, {2.0, 1.0});
  const auto g = phi_grid_posterior(prob, box, 60);
  CHECK(g.n_cells() == 3600);
  CHECK_THAT(std::accumulate(g.probability.begin(), g.probability.end(), 0.0), WithinAbs(1.0, 1e-12));
  CHECK_THAT(g.cdf.back(), WithinAbs(1.0, 1e-12));
  for (const auto& m : g.marginals) CHECK_THAT(std::accumulate(m.begin(), m.end(), 0.0), WithinAbs(1.0, 1e-12));

  // grouped modes reproduce the per-mode sum up to the shared normalizer
  const auto yh = dft(prob.y), mh = dft(prob.prior_mean);
  std::vector<double> resid(yh.size());
  for (std::size_t k = 0; k < yh.size(); ++k) resid[k] = std::norm(yh.coeffs[k] - mh.coeffs[k]);
  auto direct = [&](std::size_t cell) {
    const auto v = g.cell(cell);
    const auto s = spectrum_eval(kPow, std::vector<double>{v[1]}, prob.dims());
    return marginal_log_likelihood(prob, resid, s, v[0]);
  };
  for (std::size_t c : {std::size_t{0}, std::size_t{777}, std::size_t{2500}}) {
    CHECK_THAT(g.log_density[c] - g.log_density[1234], WithinAbs(direct(c) - direct(1234), 1e-9));
  }
}

TEST_CASE("grid posterior concentrates near the truth and samples match it") {
  const auto prob = make({32, 32}, 1.0, 5, NoiseParams{0.6, {0.5}});
  const PriorBox box({0.1, -1.0}, {2.0, 1.0});
  const auto g = phi_grid_posterior(prob, box, 100);
  const auto m = g.mean();
  const auto sd = g.sd();
  CHECK(std::abs(m[0] - 0.6) < 4 * sd[0]);
  CHECK(std::abs(m[1] - 0.5) < 4 * sd[1]);
  CHECK(sd[0] < 0.1);
  RngStream rng(6, 6);
  double s0 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) s0 += g.sample(rng)[0];
  CHECK_THAT(s0 / n, WithinAbs(m[0], 4 * sd[0] / std::sqrt(double(n))));
}

TEST_CASE("grid posterior with a pinned axis and a zoom region") {
  const auto prob = make({8, 8}, 1.0, 7, NoiseParams{0.6, {0.0}});
  const PriorBox pinned({0.1, 0.0}, {2.0, 0.0});
  const auto g = phi_grid_posterior(prob, pinned, 80);
  CHECK(g.axes[1].size() == 1);
  CHECK(g.cell_width[1] == 0.0);
  CHECK(g.n_cells() == 80);
  const auto zoom = phi_grid_posterior(prob, pinned, 80, PriorBox({0.3, 0.0}, {5.0, 0.0}));
  CHECK(zoom.axes[0].front() > 0.3);
  CHECK(zoom.axes[0].back() < 2.0);
  CHECK_THROWS_AS(phi_grid_posterior(prob, pinned, 10), Error);
  auto no_y = prob;
  no_y.y = Field();
  CHECK_THROWS_AS(phi_grid_posterior(no_y, pinned, 80), Error);
}

TEST_CASE("stationary law of compatible tables is the joint") {
  Eigen::MatrixXd joint(3, 2);
  joint << 0.2, 0.1, 0.05, 0.3, 0.25, 0.1;
  const auto c = conditionals_of(joint);
  const auto st = discrete_gibbs_stationary(c.phi_given_x, c.x_given_phi);
  CHECK((st.joint - joint).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(st.residual < 1e-14);
  Eigen::MatrixXd zero = joint;
  zero(0, 0) = 0.0;
  CHECK_THROWS_AS(conditionals_of(zero), Error);
}

TEST_CASE("gaussian prior draws have the requested spectrum") {
  const auto prob = make({16, 16}, 1.0, 8, NoiseParams{0.5, {0.0}});
  RngStream rng(9, 9);
  std::vector<double> acc(prob.prior_spectrum.size(), 0.0);
  const int n = 3000;
  for (int i = 0; i < n; ++i) {
    const auto xh = dft(sample_gaussian_prior(prob, rng) - prob.prior_mean);
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += std::norm(xh.coeffs[k]) / n;
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < acc.size(); ++k) worst = std::max(worst, std::abs(acc[k] / prob.prior_spectrum[k] - 1.0));
  CHECK(worst < 0.2);
}
