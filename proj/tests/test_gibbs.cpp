#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gdiff/gibbs.hpp"
#include "gdiff/oracle.hpp"

using namespace gdiff;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
const PowerSpectrum kPow = PowerSpectrum::power_law();

// x ~ N(0, P) with P = 1 / (1 + |k|^2) (times amp), y = x + eps
struct Toy {
  LinearGaussianProblem prob;
  NoiseParams truth{0.6, {0.0}};
  Toy(const Shape& dims, std::uint64_t seed, double amp = 4.0) {
    const ModeGrid g(dims);
    std::vector<double> p(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) p[k] = amp / (1.0 + g.radius_sq[k]);
    prob = {Field(dims), p, kPow, {}};
    RngStream rng(seed, 1);
    prob.y = sample_gaussian_prior(prob, rng) + sample_noise(kPow, truth, dims, rng);
  }
};

class Throwing final : public ConditionalSampler {
 public:
  Field sample(const Field&, const NoiseParams&, RngStream&) const override {
    fail(ErrorKind::Numeric, "boom");
  }
};
}  // namespace

TEST_CASE("pinned box keeps phi fixed") {
  Toy toy({8, 8}, 1);
  const WienerConditionalSampler ws(toy.prob);
  GibbsComponents comp{&ws, kPow, PriorBox({0.6, 0.0}, {0.6, 0.0}), nullptr};
  GibbsConfig cfg;
  cfg.iterations = 10;
  cfg.n_chains = 2;
  const auto res = gibbs_run(toy.prob.y, cfg, comp);
  REQUIRE(res.n_failed == 0);
  for (const auto& c : res.chains) {
    for (const auto& p : c.params) CHECK(p == toy.truth);
    CHECK(c.n_retained == 5);
    CHECK(c.x_samples.size() == 2);
  }
}

TEST_CASE("chains are reproducible regardless of threading") {
  Toy toy({8, 8}, 2);
  const WienerConditionalSampler ws(toy.prob);
  GibbsComponents comp{&ws, kPow, PriorBox({0.1, -1.0}, {2.0, 1.0}), nullptr};
  GibbsConfig cfg;
  cfg.iterations = 12;
  cfg.n_chains = 3;
  cfg.hmc.warmup_iters = 40;
  cfg.seed = 99;
  cfg.n_threads = 1;
  const auto serial = gibbs_run(toy.prob.y, cfg, comp);
  cfg.n_threads = 3;
  const auto threaded = gibbs_run(toy.prob.y, cfg, comp);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(serial.chains[c].params == threaded.chains[c].params);
    CHECK(serial.chains[c].x_mean == threaded.chains[c].x_mean);
  }
  CHECK(serial.chains[0].params != serial.chains[1].params);
}

TEST_CASE("Gibbs with exact conditionals matches the grid posterior") {
  Toy toy({16, 16}, 3);
  const WienerConditionalSampler ws(toy.prob);
  const PriorBox box({0.1, -1.0}, {2.0, 1.0});
  GibbsComponents comp{&ws, kPow, box, nullptr};
  GibbsConfig cfg;
  cfg.iterations = 600;
  cfg.n_chains = 2;
  cfg.hmc.warmup_iters = 100;
  cfg.seed = 4;
  cfg.x_thin = 0;
  const auto res = gibbs_run(toy.prob.y, cfg, comp);
  REQUIRE(res.n_failed == 0);
  const auto rows = pooled_retained(res, cfg.discard());
  REQUIRE(rows.size() == 600);
  double s = 0.0, f = 0.0;
  for (const auto& r : rows) {
    s += r[0];
    f += r[1];
  }
  s /= static_cast<double>(rows.size());
  f /= static_cast<double>(rows.size());
  const auto grid = phi_grid_posterior(toy.prob, box, 120);
  const auto m = grid.mean();
  const auto sd = grid.sd();
  CHECK_THAT(s, WithinAbs(m[0], 0.5 * sd[0]));
  CHECK_THAT(f, WithinAbs(m[1], 0.5 * sd[1]));
}

TEST_CASE("failing x sampler marks the chain failed") {
  Toy toy({8, 8}, 5);
  const Throwing bad;
  GibbsComponents comp{&bad, kPow, PriorBox({0.1, -1.0}, {2.0, 1.0}), nullptr};
  GibbsConfig cfg;
  cfg.iterations = 4;
  cfg.n_chains = 2;
  const auto res = gibbs_run(toy.prob.y, cfg, comp);
  CHECK(res.n_failed == 2);
  CHECK(res.succeeded().empty());
  CHECK(res.chains[0].failure.find("boom") != std::string::npos);
  CHECK(pooled_retained(res, 2).empty());
}

TEST_CASE("configuration checks") {
  GibbsConfig cfg;
  cfg.iterations = 10;
  cfg.warmup_discard = 10;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.warmup_discard.reset();
  CHECK(cfg.discard() == 5);
  cfg.n_chains = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);

  Toy toy({8, 8}, 6);
  const WienerConditionalSampler ws(toy.prob);
  GibbsComponents wrong{&ws, kPow, PriorBox({0.1}, {2.0}), nullptr};
  CHECK_THROWS_AS(gibbs_run(toy.prob.y, GibbsConfig{}, wrong), Error);
  GibbsComponents no_reg{&ws, kPow, PriorBox({0.1, -1.0}, {2.0, 1.0}), nullptr};
  GibbsConfig reg_cfg;
  reg_cfg.init = InitStrategy::SigmaRegression;
  reg_cfg.iterations = 2;
  reg_cfg.n_chains = 1;
  CHECK(gibbs_run(toy.prob.y, reg_cfg, no_reg).n_failed == 1);
}

TEST_CASE("Haar details of smooth fields vanish") {
  const Field c = Field::constant({8, 8}, 3.0);
  for (double d : haar_finest_details(c)) CHECK(d == 0.0);
  Field ramp({8});
  for (std::size_t i = 0; i < 8; ++i) ramp[i] = static_cast<double>(i);
  const auto d = haar_finest_details(ramp);
  REQUIRE(d.size() == 4);
  for (double v : d) CHECK_THAT(v, WithinAbs(-1.0 / std::sqrt(2.0), 1e-15));
  // white noise: MAD / 0.6745 estimates the noise level
  RngStream rng(1, 1);
  const auto f = sigma_features(Field::white_noise({128, 128}, rng) * 0.3);
  CHECK_THAT(f[0] / 0.6745, WithinRel(0.3, 0.08));
  CHECK_THAT(f[1], WithinRel(0.3, 0.05));
}

TEST_CASE("sigma regression predicts within ten percent") {
  const Shape dims{32, 32};
  const PriorBox box({0.2, 0.0}, {1.0, 0.0});
  Toy shape_only(dims, 0, 1.0);
  auto simulate = [&](RngStream& rng, double& sigma) {
    sigma = rng.uniform(0.2, 1.0);
    return sample_gaussian_prior(shape_only.prob, rng) + sample_noise(kPow, NoiseParams{sigma, {0.0}}, dims, rng);
  };
  RngStream rng(12, 0);
  std::vector<Field> ys;
  std::vector<double> ss;
  for (int i = 0; i < 40; ++i) {
    double s;
    ys.push_back(simulate(rng, s));
    ss.push_back(s);
  }
  const auto reg = SigmaRegressor::fit(ys, ss);
  REQUIRE_FALSE(reg.fallback());
  double worst = 0.0;
  for (int i = 0; i < 30; ++i) {
    double s;
    const Field y = simulate(rng, s);
    worst = std::max(worst, std::abs(reg.predict(y, box, rng) - s) / s);
  }
  CHECK(worst < 0.10);
}

TEST_CASE("degenerate regression design falls back to prior draws") {
  const std::vector<Field> ys(25, Field::constant({8, 8}, 1.0));
  std::vector<double> ss(25);
  for (std::size_t i = 0; i < ss.size(); ++i) ss[i] = 0.1 * static_cast<double>(i);
  const auto reg = SigmaRegressor::fit(ys, ss);
  CHECK(reg.fallback());
  CHECK(reg.warning().find("rank") != std::string::npos);
  const PriorBox box({0.3, 0.0}, {0.4, 0.0});
  RngStream rng(1, 2);
  for (int i = 0; i < 20; ++i) {
    const double s = reg.predict(ys[0], box, rng);
    CHECK(s >= 0.3);
    CHECK(s <= 0.4);
  }
  CHECK_THROWS_AS(SigmaRegressor::fit(std::vector<Field>(5, ys[0]), std::vector<double>(5, 1.0)), Error);
}

TEST_CASE("regression output is clipped to the box") {
  RngStream rng(2, 2);
  std::vector<Field> ys;
  std::vector<double> ss;
  for (int i = 0; i < 30; ++i) {
    const double s = 0.5 + 0.05 * i;
    ys.push_back(Field::white_noise({16, 16}, rng) * s);
    ss.push_back(s);
  }
  const auto reg = SigmaRegressor::fit(ys, ss);
  const PriorBox narrow({0.9, 0.0}, {1.0, 0.0});
  const Field loud = Field::white_noise({16, 16}, rng) * 5.0;
  const Field quiet = Field::white_noise({16, 16}, rng) * 0.01;
  CHECK(reg.predict_raw(loud) > 1.0);
  CHECK(reg.predict(loud, narrow, rng) == 1.0);
  CHECK(reg.predict(quiet, narrow, rng) == 0.9);
}

TEST_CASE("spectral moment init reads the index off the top octave") {
  RngStream rng(3, 3);
  const PriorBox box({0.05, -3.0}, {3.0, 3.0});
  const Field eps = sample_noise(kPow, NoiseParams{0.8, {-1.0}}, {128, 128}, rng);
  // the slope is fitted over one octave only, so it is noisy
  const auto p = init_spectral_moment(eps, box);
  CHECK_THAT(p.spectral[0], WithinAbs(-1.0, 0.3));
  const PriorBox pinned({0.05, -1.0}, {3.0, -1.0});
  CHECK_THAT(init_spectral_moment(eps, pinned).sigma, WithinRel(0.8, 0.03));
  const PriorBox tight({0.05, 0.5}, {3.0, 1.0});
  CHECK(init_spectral_moment(eps, tight).spectral[0] == 0.5);
}
