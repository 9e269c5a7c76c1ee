#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace gdiff {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

/// Well-known stream ids. Chains add their index to kChainBase.
namespace streams {
inline constexpr std::uint64_t kGenerate = 0x100;
inline constexpr std::uint64_t kTrain = 0x200;
inline constexpr std::uint64_t kHeldOut = 0x300;
inline constexpr std::uint64_t kSbc = 0x400;
inline constexpr std::uint64_t kOracle = 0x500;
inline constexpr std::uint64_t kChainBase = 0x10000;
}  // namespace streams

/// Splittable xoshiro256** stream keyed by (master_seed, stream_id).
///
/// The same key always yields the same sequence. Child streams are derived by
/// hashing the parent key with a sub-id, so forks never share state.
/// Normal variates come from Box-Muller over our own uniforms, which keeps
/// draws bit-identical across standard libraries.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
      : master_(master_seed), stream_(stream_id) {
    std::uint64_t sm = master_seed ^ detail::rotl(stream_id * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL, 17);
    // burn one output so that nearby keys decorrelate
    detail::splitmix64(sm);
    for (auto& w : s_) w = detail::splitmix64(sm);
  }

  std::uint64_t master_seed() const { return master_; }
  std::uint64_t stream_id() const { return stream_; }

  RngStream split(std::uint64_t sub_id) const {
    std::uint64_t h = stream_;
    h = detail::splitmix64(h) ^ (sub_id * 0x9e3779b97f4a7c15ULL);
    return RngStream(master_, detail::splitmix64(h));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());
    // rejection sampling over the largest multiple of the range
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % span);
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

 private:
  std::uint64_t master_;
  std::uint64_t stream_;
  std::uint64_t s_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gdiff
