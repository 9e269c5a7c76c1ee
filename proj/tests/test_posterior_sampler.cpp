#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gdiff/oracle.hpp"
#include "gdiff/posterior_sampler.hpp"

using namespace gdiff;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
const PowerSpectrum kPow = PowerSpectrum::power_law();

// x ~ N(0, I) on 8x8, white noise; posterior is N(y / (1 + s^2), s^2 / (1 + s^2))
struct WhiteProblem {
  DiffusionSchedule sched;
  Shape dims{8, 8};
  GaussianPriorPredictor pred{Field({8, 8}), std::vector<double>(64, 1.0), kPow, sched};
  Field y;
  WhiteProblem() {
    RngStream rng(4, 4);
    y = Field::white_noise(dims, rng) * 1.1;
  }
  ReverseRunConfig cfg(ReverseVariance v = ReverseVariance::Beta) const {
    ReverseRunConfig c;
    c.schedule = &sched;
    c.predictor = &pred;
    c.variance = v;
    return c;
  }
};

struct Moments {
  Field mean;
  double var = 0.0;
};

Moments draw_moments(const WhiteProblem& w, const ReverseRunConfig& cfg, const NoiseParams& p, int n) {
  RngStream rng(77, 3);
  std::vector<Field> xs;
  for (int i = 0; i < n; ++i) xs.push_back(sample_conditional(w.y, p, cfg, rng));
  Moments m{posterior_mean_estimate(xs), 0.0};
  for (const auto& x : xs) m.var += (x - m.mean).squared_norm();
  m.var /= static_cast<double>(n - 1) * static_cast<double>(w.y.size());
  return m;
}
}  // namespace

TEST_CASE("noise below sigma_min returns the observation") {
  WhiteProblem w;
  RngStream rng(1, 1);
  const auto d = sample_conditional_detailed(w.y, NoiseParams{1e-6, {0.0}}, w.cfg(), rng);
  CHECK(d.start_index == 0);
  CHECK(d.x == w.y);
}

TEST_CASE("start time snaps to the grid") {
  WhiteProblem w;
  RngStream rng(1, 1);
  const auto d = sample_conditional_detailed(w.y, NoiseParams{0.5, {0.0}}, w.cfg(), rng);
  CHECK(d.start_index == w.sched.nearest_index(w.sched.noise_to_time(0.5)));
  CHECK(d.snap_error < 0.01);
  CHECK(d.condition_number == 1.0);
}

TEST_CASE("white posterior moments from the exact predictor") {
  WhiteProblem w;
  const double s = 0.5, shrink = 1.0 / (1.0 + s * s), var = s * s / (1.0 + s * s);
  const int n = 400;
  const auto m = draw_moments(w, w.cfg(), NoiseParams{s, {0.0}}, n);
  CHECK_THAT(m.var, WithinRel(var, 0.05));
  const double se = std::sqrt(var / n);
  double worst = 0.0;
  for (std::size_t i = 0; i < w.y.size(); ++i) worst = std::max(worst, std::abs(m.mean[i] - shrink * w.y[i]) / se);
  CHECK(worst < 4.5);
}

TEST_CASE("reduced reverse variance keeps resolved modes calibrated") {
  WhiteProblem w;
  const double s = 0.5, var = s * s / (1.0 + s * s);
  const auto m = draw_moments(w, w.cfg(ReverseVariance::BetaTilde), NoiseParams{s, {0.0}}, 400);
  CHECK_THAT(m.var, WithinRel(var, 0.05));
}

TEST_CASE("deterministic update ignores the random stream") {
  WhiteProblem w;
  auto cfg = w.cfg();
  cfg.stochastic = false;
  RngStream r1(1, 1), r2(2, 2);
  const Field a = sample_conditional(w.y, NoiseParams{0.4, {0.0}}, cfg, r1);
  const Field b = sample_conditional(w.y, NoiseParams{0.4, {0.0}}, cfg, r2);
  CHECK(a == b);
  CHECK(a.all_finite());
}

TEST_CASE("stochastic runs are reproducible per stream") {
  WhiteProblem w;
  RngStream r1(5, 9), r2(5, 9);
  CHECK(sample_conditional(w.y, NoiseParams{0.3, {0.0}}, w.cfg(), r1) ==
        sample_conditional(w.y, NoiseParams{0.3, {0.0}}, w.cfg(), r2));
}

TEST_CASE("trajectory recording") {
  WhiteProblem w;
  auto cfg = w.cfg();
  cfg.record_trajectory = true;
  cfg.trajectory_stride = 10;
  RngStream rng(3, 3);
  const auto d = sample_conditional_detailed(w.y, NoiseParams{0.5, {0.0}}, cfg, rng);
  // initial state plus every step with (k - 1) divisible by the stride
  CHECK(d.trajectory.size() == 1 + (d.start_index - 1) / 10 + 1);
  CHECK(d.trajectory.front() == w.y * std::sqrt(w.sched.alpha_bar(d.start_index)));
  CHECK(d.trajectory.back() == d.x);
}

TEST_CASE("coloured noise reports its conditioning") {
  WhiteProblem w;
  RngStream rng(3, 3);
  const auto d = sample_conditional_detailed(w.y, NoiseParams{0.5, {-2.0}}, w.cfg(), rng);
  // S ranges from |k| = 1 to |k| = 4 sqrt 2 at exponent -2
  CHECK_THAT(d.condition_number, WithinRel(32.0, 1e-12));
}

TEST_CASE("sampler input validation") {
  WhiteProblem w;
  RngStream rng(3, 3);
  CHECK_THROWS_AS(sample_conditional(Field({4, 4}), NoiseParams{0.5, {0.0}}, w.cfg(), rng), Error);
  Field bad = w.y;
  bad[3] = std::nan("");
  CHECK_THROWS_AS(sample_conditional(bad, NoiseParams{0.5, {0.0}}, w.cfg(), rng), Error);
  ReverseRunConfig empty;
  CHECK_THROWS_AS(sample_conditional(w.y, NoiseParams{0.5, {0.0}}, empty, rng), Error);
  CHECK_THROWS_AS(sample_conditional(w.y, NoiseParams{1e6, {0.0}}, w.cfg(), rng), Error);
}

TEST_CASE("posterior mean estimate") {
  std::vector<Field> xs{Field::constant({2, 2}, 1.0), Field::constant({2, 2}, 3.0)};
  CHECK(posterior_mean_estimate(xs) == Field::constant({2, 2}, 2.0));
  CHECK_THROWS_AS(posterior_mean_estimate(std::vector<Field>{}), Error);
}

TEST_CASE("wiener sampler draws the exact conditional") {
  LinearGaussianProblem prob{Field({8, 8}), std::vector<double>(64, 1.0), kPow, {}};
  const WienerConditionalSampler ws(prob);
  WhiteProblem w;
  RngStream rng(6, 6);
  std::vector<Field> xs;
  for (int i = 0; i < 2000; ++i) xs.push_back(ws.sample(w.y, NoiseParams{0.5, {0.0}}, rng));
  const Field mean = posterior_mean_estimate(xs);
  double var = 0.0;
  for (const auto& x : xs) var += (x - mean).squared_norm();
  var /= 1999.0 * 64.0;
  CHECK_THAT(var, WithinRel(0.2, 0.03));
  for (std::size_t i = 0; i < 64; ++i) CHECK_THAT(mean[i], WithinAbs(0.8 * w.y[i], 0.05));
}
