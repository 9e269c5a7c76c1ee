#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "gdiff/metrics.hpp"
#include "support/oracles.hpp"

using namespace gdiff;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("PSNR of a uniform offset") {
  const Field ref({8, 8});
  const Field x = Field::constant({8, 8}, 0.1);
  CHECK_THAT(psnr(x, ref), WithinAbs(20.0, 1e-12));
  CHECK_THAT(psnr(x * 2.0, ref, 2.0), WithinAbs(20.0, 1e-12));
  CHECK(psnr(ref, ref) == std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(psnr(Field({4}), Field({5})), Error);
  CHECK_THROWS_AS(psnr(x, ref, 0.0), Error);
}

TEST_CASE("PSNR of additive noise with sd 0.1") {
  RngStream rng(1, 1);
  const Field ref = oracle::random_field({64, 64}, rng);
  const Field x = ref + Field::white_noise({64, 64}, rng) * 0.1;
  CHECK_THAT(psnr(x, ref), WithinAbs(20.0, 0.2));
}

TEST_CASE("SSIM of identical images is exactly one") {
  RngStream rng(2, 2);
  const Field f = oracle::random_field({16, 16}, rng);
  CHECK(ssim(f, f) == 1.0);
  const Field c = Field::constant({12, 12}, 0.4);
  CHECK(ssim(c, c) == 1.0);
}

TEST_CASE("separable SSIM agrees with the per-pixel window sum") {
  RngStream rng(3, 3);
  const Field a = oracle::random_field({16, 16}, rng);
  const Field b = a + Field::white_noise({16, 16}, rng) * 0.2;
  CHECK_THAT(ssim(a, b), WithinAbs(oracle::dense_ssim(a, b), 1e-10));
  const Field a1 = oracle::random_field({40}, rng);
  const Field b1 = oracle::random_field({40}, rng);
  CHECK_THAT(ssim(a1, b1), WithinAbs(oracle::dense_ssim(a1, b1), 1e-10));
  SsimConfig small{5, 1.0, 0.01, 0.03, 2.0};
  CHECK_THAT(ssim(a, b, small), WithinAbs(oracle::dense_ssim(a, b, small), 1e-10));
}

TEST_CASE("SSIM ordering and bounds") {
  RngStream rng(4, 4);
  const Field ref = oracle::random_field({32, 32}, rng);
  const Field mild = ref + Field::white_noise({32, 32}, rng) * 0.05;
  const Field harsh = ref + Field::white_noise({32, 32}, rng) * 0.5;
  const double s1 = ssim(mild, ref), s2 = ssim(harsh, ref);
  CHECK(s1 > s2);
  CHECK(s1 < 1.0);
  CHECK(s2 > -1.0);
  CHECK_THROWS_AS(ssim(Field({8, 8}), Field({8, 8})), Error);
  CHECK_THROWS_AS(ssim(ref, ref, SsimConfig{10}), Error);
}

TEST_CASE("gaussian taps") {
  const auto t = gaussian_taps(11, 1.5);
  double s = 0.0;
  for (double v : t) s += v;
  CHECK_THAT(s, WithinAbs(1.0, 1e-15));
  CHECK(t[5] > t[4]);
  CHECK(t[0] == t[10]);
}

TEST_CASE("radial power spectrum") {
  const Field c = Field::constant({8, 8}, 0.5);
  const auto e = power_spectrum(c);
  CHECK_THAT(e.dc_power, WithinRel(0.25 * 64.0, 1e-14));
  for (double p : e.power) CHECK(p < 1e-28);

  RngStream rng(5, 5);
  const Field w = Field::white_noise({64, 64}, rng) * 0.3;
  const auto sw = power_spectrum(w, 8);
  REQUIRE(sw.power.size() == 8);
  // each bin mean has relative sd about sqrt(2 / count)
  for (std::size_t b = 0; b < sw.power.size(); ++b) {
    CHECK_THAT(sw.power[b], WithinRel(0.09, 4.0 * std::sqrt(2.0 / static_cast<double>(sw.count[b]))));
  }
  // Parseval with DC split off
  double total = sw.dc_power;
  for (std::size_t b = 0; b < sw.power.size(); ++b) total += sw.power[b] * static_cast<double>(sw.count[b]);
  CHECK_THAT(total, WithinRel(w.squared_norm(), 1e-10));
  std::size_t n = 0;
  for (auto k : sw.count) n += k;
  CHECK(n == 64 * 64 - 1);
  for (std::size_t b = 1; b < sw.k.size(); ++b) CHECK(sw.k[b] > sw.k[b - 1]);
}
