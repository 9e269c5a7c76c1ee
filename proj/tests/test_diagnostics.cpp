#include <catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <vector>

#include "gdiff/diagnostics.hpp"
#include "support/oracles.hpp"

using namespace gdiff;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
std::vector<double> normals(std::size_t n, RngStream& rng, double shift = 0.0) {
  std::vector<double> v(n);
  for (auto& e : v) e = rng.normal() + shift;
  return v;
}

double normal_pdf(double x, double sd) { return std::exp(-0.5 * x * x / (sd * sd)) / (sd * std::sqrt(2 * std::numbers::pi)); }

// conjugate toy: theta ~ N(0, 1), y ~ N(theta, 1), posterior N(y / 2, 1 / 2)
SbcPipeline conjugate(double bias, bool from_prior = false) {
  return [=](std::size_t, RngStream& rng) {
    SbcDraws d;
    const double theta = rng.normal();
    const double y = theta + rng.normal();
    d.truth = {theta};
    for (int i = 0; i < 99; ++i) {
      const double draw = from_prior ? rng.normal() : 0.5 * y + std::sqrt(0.5) * rng.normal() + bias;
      d.draws.push_back({draw});
    }
    return d;
  };
}
}  // namespace

TEST_CASE("classic R-hat on a hand-worked pair of chains") {
  // W = 5/3, B/n = 8, n = 4
  const auto r = detail::classic_rhat({{1, 2, 3, 4}, {5, 6, 7, 8}});
  CHECK_THAT(r.value, WithinRel(std::sqrt(5.55), 1e-12));
}

TEST_CASE("rank-normalized split R-hat") {
  RngStream rng(1, 1);
  std::vector<std::vector<double>> good, shifted;
  for (int c = 0; c < 4; ++c) {
    good.push_back(normals(1000, rng));
    shifted.push_back(normals(1000, rng, c == 0 ? 3.0 : 0.0));
  }
  const auto rg = r_hat(good);
  CHECK(rg.value < 1.01);
  CHECK(rg.value > 0.99);
  CHECK(r_hat(shifted).value > 1.1);
  // a trend inside each chain is caught by splitting
  std::vector<std::vector<double>> trend(2, std::vector<double>(200));
  for (auto& c : trend) {
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.05 * static_cast<double>(i) + rng.normal();
  }
  CHECK(r_hat(trend).value > 1.1);
  // rank normalization makes the statistic invariant to monotone maps
  auto cubed = good;
  for (auto& c : cubed) {
    for (auto& v : c) v = v * v * v;
  }
  CHECK_THAT(r_hat(cubed).value, WithinAbs(rg.value, 1e-12));
}

TEST_CASE("R-hat edge cases") {
  const std::vector<std::vector<double>> flat(3, std::vector<double>(10, 2.0));
  const auto r = r_hat(flat);
  CHECK(r.degenerate);
  CHECK(std::isinf(r.value));
  CHECK_THROWS_AS(r_hat({{1, 2, 3, 4}}), Error);
  CHECK_THROWS_AS(r_hat({{1, 2, 3}, {1, 2, 3}}), Error);
  CHECK_THROWS_AS(r_hat({{1, 2, 3, 4}, {1, 2, 3, 4, 5}}), Error);
}

TEST_CASE("ESS of independent, AR(1) and alternating traces") {
  RngStream rng(2, 2);
  const auto iid = normals(4000, rng);
  CHECK_THAT(ess(iid).value, WithinRel(4000.0, 0.15));
  const auto ar = oracle::ar1(20000, 0.5, rng);
  CHECK_THAT(ess(ar).value, WithinRel(20000.0 / 3.0, 0.15));
  const auto ar9 = oracle::ar1(50000, 0.9, rng);
  CHECK_THAT(ess(ar9).value, WithinRel(50000.0 * 0.1 / 1.9, 0.2));
  std::vector<double> alt(100);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 ? 1.0 : -1.0;
  const auto ea = ess(alt);
  CHECK(ea.capped);
  CHECK(ea.value == 100.0);
  const auto ec = ess(std::vector<double>(20, 1.0));
  CHECK(ec.degenerate);
  CHECK_THROWS_AS(ess(std::vector<double>(7, 1.0)), Error);
}

TEST_CASE("convergence stats shape") {
  RngStream rng(3, 3);
  std::vector<std::vector<std::vector<double>>> draws(2, std::vector<std::vector<double>>(50));
  for (auto& c : draws) {
    for (auto& row : c) row = {rng.normal(), rng.normal()};
  }
  const auto st = convergence_stats(draws);
  CHECK(st.r_hat.size() == 2);
  CHECK(st.ess.size() == 2);
  CHECK(st.ess[0].size() == 2);
  const auto single = convergence_stats({draws[0]});
  CHECK(single.r_hat.empty());
  CHECK(single.ess.size() == 2);
}

TEST_CASE("chi-square uniformity") {
  const std::vector<std::size_t> even{10, 10, 10, 10};
  CHECK(chi2_uniformity(even).statistic == 0.0);
  CHECK(chi2_uniformity(even).p_value == 1.0);
  const std::vector<std::size_t> lopsided{20, 0};
  const auto c = chi2_uniformity(lopsided);
  CHECK(c.statistic == 20.0);
  CHECK_THAT(c.p_value, WithinRel(std::erfc(std::sqrt(10.0)), 1e-10));
  CHECK_THROWS_AS(chi2_uniformity(std::vector<std::size_t>{0, 0}), Error);
}

TEST_CASE("rank histogram binning and random tie breaking") {
  RankHistogram h(20);
  for (std::size_t r = 0; r <= 99; ++r) h.add(r, 99);
  for (auto c : h.counts) CHECK(c == 5);
  CHECK_THROWS_AS(h.add(100, 99), Error);

  RngStream rng(4, 4);
  const std::vector<double> same(9, 1.0);
  std::vector<int> seen(10, 0);
  for (int i = 0; i < 5000; ++i) ++seen[sbc_rank(1.0, same, rng)];
  for (int s : seen) CHECK(std::abs(s - 500) < 100);
  const std::vector<double> spread{0.0, 1.0, 2.0, 3.0};
  CHECK(sbc_rank(1.5, spread, rng) == 2);
}

TEST_CASE("SBC on exact, prior-only and biased posteriors") {
  SbcConfig cfg;
  cfg.n_runs = 400;
  cfg.thinning = 1;
  cfg.n_threads = 1;
  cfg.seed = 17;
  const auto exact = sbc(conjugate(0.0), cfg);
  REQUIRE(exact.completed == 400);
  CHECK(exact.tests[0].p_value > 0.01);
  // prior draws ignore the data but are still calibrated
  CHECK(sbc(conjugate(0.0, true), cfg).tests[0].p_value > 0.01);
  const auto biased = sbc(conjugate(std::sqrt(0.5)), cfg);
  CHECK(biased.tests[0].p_value < 1e-6);
}

TEST_CASE("SBC records failing runs and is reproducible") {
  SbcConfig cfg;
  cfg.n_runs = 30;
  cfg.thinning = 1;
  cfg.seed = 2;
  auto flaky = [](std::size_t run, RngStream& rng) {
    if (run % 10 == 3) fail(ErrorKind::Numeric, "run blew up");
    return conjugate(0.0)(run, rng);
  };
  const auto a = sbc(flaky, cfg);
  CHECK(a.failed == 3);
  CHECK(a.completed == 27);
  CHECK(a.failures.front().find("blew up") != std::string::npos);
  cfg.n_threads = 3;
  const auto b = sbc(flaky, cfg);
  CHECK(a.histograms[0].counts == b.histograms[0].counts);

  SbcConfig thin = cfg;
  thin.thinning = 2;  // 99 draws thin to 50 < L
  CHECK(sbc(conjugate(0.0), thin).failed == 30);
}

TEST_CASE("W1 against a piecewise-uniform grid") {
  const std::vector<double> centre{0.5}, one{1.0};
  CHECK_THAT(wasserstein1_vs_grid({0.5}, centre, one, 1.0), WithinAbs(0.25, 1e-15));
  CHECK_THAT(wasserstein1_vs_grid({2.0}, centre, one, 1.0), WithinAbs(1.5, 1e-15));
  // point masses when h = 0
  const std::vector<double> pts{0.0, 1.0}, half{0.5, 0.5};
  CHECK_THAT(wasserstein1_vs_grid({0.0, 1.0}, pts, half, 0.0), WithinAbs(0.0, 1e-15));
  CHECK_THAT(wasserstein1_vs_grid({0.0, 0.0}, pts, half, 0.0), WithinAbs(0.5, 1e-15));
  RngStream rng(6, 6);
  std::vector<double> u(20000);
  for (auto& v : u) v = rng.uniform();
  std::vector<double> c10(10), m10(10, 0.1);
  for (int i = 0; i < 10; ++i) c10[static_cast<std::size_t>(i)] = 0.05 + 0.1 * i;
  CHECK(wasserstein1_vs_grid(u, c10, m10, 0.1) < 0.01);
}

TEST_CASE("KL identity on a compatible toy") {
  // p(phi, x) on 3 x 4; q is the x | phi conditional of p(phi | x) g(x)
  Eigen::MatrixXd p(3, 4);
  p << 0.10, 0.05, 0.08, 0.02, 0.04, 0.12, 0.06, 0.10, 0.07, 0.03, 0.15, 0.18;
  const auto pc = conditionals_of(p);
  Eigen::VectorXd g(4);
  g << 0.4, 0.1, 0.3, 0.2;
  Eigen::MatrixXd pi = pc.phi_given_x * g.asDiagonal();
  const Eigen::MatrixXd q = pi.rowwise().sum().cwiseInverse().asDiagonal() * pi;
  const auto k = kl_at_stationarity_discrete(p, q);
  CHECK(k.compatibility_residual < 1e-12);
  CHECK_THAT(k.formula, WithinAbs(k.direct, 1e-10));
  CHECK(k.direct > 1e-3);
  CHECK(k.tv <= k.pinsker_bound + 1e-15);
  const Eigen::VectorXd pi_phi = pi.rowwise().sum();
  CHECK((k.pi_phi - pi_phi).lpNorm<Eigen::Infinity>() < 1e-12);

  // q equal to the true conditional: no bias
  const auto same = kl_at_stationarity_discrete(p, pc.x_given_phi);
  CHECK_THAT(same.direct, WithinAbs(0.0, 1e-12));
  CHECK_THAT(same.formula, WithinAbs(0.0, 1e-12));
}

TEST_CASE("incompatible conditionals are detected") {
  Eigen::MatrixXd p(2, 2);
  p << 0.4, 0.1, 0.1, 0.4;
  Eigen::MatrixXd q(2, 2);
  q << 0.2, 0.8, 0.9, 0.1;
  const auto k = kl_at_stationarity_discrete(p, q);
  CHECK(k.compatibility_residual > 0.1);
  CHECK(k.direct >= 0.0);
  CHECK(k.tv <= k.pinsker_bound + 1e-15);
}

TEST_CASE("finite Gibbs kernels") {
  // deterministic swap is periodic; the lazy chain still finds its law
  Eigen::MatrixXd p(2, 2), q(2, 2);
  p << 0, 1, 1, 0;
  q << 1, 0, 0, 1;
  const auto st = discrete_gibbs_stationary(p, q);
  CHECK_THAT(st.phi_marginal[0], WithinAbs(0.5, 1e-12));

  Eigen::MatrixXd pb(2, 2), qb(2, 2);
  pb << 1, 0, 0, 1;
  qb << 1, 0, 0, 1;
  try {
    discrete_gibbs_stationary(pb, qb);
    FAIL("expected a reducible-kernel error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Reducible);
  }
  Eigen::MatrixXd bad(2, 2);
  bad << 0.5, 0.5, 0.6, 0.4;
  CHECK_THROWS_AS(discrete_gibbs_stationary(bad, q), Error);

  Eigen::MatrixXd joint(2, 3);
  joint << 0.1, 0.2, 0.1, 0.3, 0.2, 0.1;
  const auto c = conditionals_of(joint);
  Eigen::VectorXd start(2);
  start << 1.0, 0.0;
  const auto after = gibbs_phi_marginal_after(c.phi_given_x, c.x_given_phi, start, 200);
  CHECK((after - c.phi_marginal).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("compatibility integral") {
  // q = N(0, 1), p = N(0, 4): integral 2 sqrt(8 pi / 3)
  const auto finite = compatibility_integral([](double x) { return normal_pdf(x, 1.0); },
                                             [](double x) { return normal_pdf(x, 2.0); });
  CHECK(finite.verdict == CompatibilityVerdict::Finite);
  CHECK_THAT(finite.value, WithinRel(2.0 * std::sqrt(8.0 * std::numbers::pi / 3.0), 1e-6));
  CHECK(finite.refinements.size() == 4);

  // Cauchy q over a Gaussian p: the ratio grows like exp(x^2 / 18) / x^2
  const auto div = compatibility_integral([](double x) { return 1.0 / (std::numbers::pi * (1.0 + x * x)); },
                                          [](double x) { return normal_pdf(x, 3.0); });
  CHECK(div.verdict == CompatibilityVerdict::LikelyDivergent);

  try {
    compatibility_integral([](double x) { return normal_pdf(x, 1.0); },
                           [](double x) { return x < 0 ? 0.0 : normal_pdf(x, 1.0); });
    FAIL("expected incompatible support");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::IncompatibleSupport);
  }
}
