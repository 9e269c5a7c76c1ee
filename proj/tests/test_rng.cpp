#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "gdiff/rng.hpp"

using namespace gdiff;

TEST_CASE("same key gives the same sequence") {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("streams and splits differ") {
  RngStream a(42, 7), b(42, 8), c(43, 7);
  const auto s1 = a.split(0), s2 = a.split(1);
  RngStream x = s1, y = s2;
  CHECK(a.next_u64() != b.next_u64());
  CHECK(RngStream(42, 7).next_u64() != c.next_u64());
  CHECK(x.next_u64() != y.next_u64());
  // split does not advance the parent
  RngStream p(1, 2);
  const auto before = RngStream(1, 2).next_u64();
  (void)p.split(5);
  CHECK(p.next_u64() == before);
}

TEST_CASE("independent streams are uncorrelated") {
  RngStream a(9, 1), b(9, 2);
  const int n = 200000;
  double sab = 0, sa = 0, sb = 0, saa = 0, sbb = 0;
  for (int i = 0; i < n; ++i) {
    const double u = a.normal(), v = b.normal();
    sab += u * v;
    sa += u;
    sb += v;
    saa += u * u;
    sbb += v * v;
  }
  const double corr = (sab / n - sa / n * sb / n) / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
  CHECK(std::abs(corr) < 4.0 / std::sqrt(n));
}

TEST_CASE("uniform and normal moments") {
  RngStream r(2, 3);
  const int n = 400000;
  double su = 0, sn = 0, snn = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    snn += z * z;
  }
  CHECK(std::abs(su / n - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::abs(sn / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(snn / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("uniform_int covers its closed range evenly") {
  RngStream r(4, 4);
  std::vector<int> counts(6, 0);
  for (int i = 0; i < 60000; ++i) {
    const auto v = r.uniform_int(-2, 3);
    REQUIRE(v >= -2);
    REQUIRE(v <= 3);
    ++counts[static_cast<std::size_t>(v + 2)];
  }
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
}
