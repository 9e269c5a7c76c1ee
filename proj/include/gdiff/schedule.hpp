#pragma once

// Variance-preserving diffusion schedule with linear beta(t).
//
//   beta(t) = beta_min + (beta_max - beta_min) t
//   F(t)    = 1/2 int_0^t beta = 1/2 (beta_min t + (beta_max - beta_min) t^2 / 2)
//   a(t)    = exp(-F),  b(t) = sqrt(1 - exp(-2F))
//
// b has this closed form because g^2 = beta = 2 F', so the variance integral
// exp(-2F) int_0^t exp(2F) g^2 du telescopes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/field.hpp"
#include "gdiff/noise_model.hpp"
#include "gdiff/rng.hpp"

namespace gdiff {

struct ScheduleValues {
  double a;
  double b;
  double beta;
  double F;
};

class DiffusionSchedule {
 public:
  DiffusionSchedule() = default;
  DiffusionSchedule(double beta_min, double beta_max, std::size_t n_steps)
      : beta_min_(beta_min), beta_max_(beta_max), n_steps_(n_steps) {
    require(std::isfinite(beta_min) && std::isfinite(beta_max) && beta_min >= 0.0 && beta_max >= beta_min,
            ErrorKind::InvalidArgument, "schedule needs 0 <= beta_min <= beta_max");
    require(n_steps >= 1, ErrorKind::InvalidArgument, "schedule needs n_steps >= 1");
  }

  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }
  std::size_t n_steps() const { return n_steps_; }

  double F(double t) const { return 0.5 * (beta_min_ * t + 0.5 * (beta_max_ - beta_min_) * t * t); }
  double beta(double t) const { return beta_min_ + (beta_max_ - beta_min_) * t; }

  ScheduleValues eval(double t) const {
    require(t >= 0.0 && t <= 1.0, ErrorKind::OutOfDomain, "schedule time outside [0, 1]: " + std::to_string(t));
    const double f = F(t);
    return {std::exp(-f), std::sqrt(-std::expm1(-2.0 * f)), beta(t), f};
  }

  /// b(t)/a(t) = sqrt(exp(2F) - 1).
  double noise_ratio(double t) const { return std::sqrt(std::expm1(2.0 * F(t))); }

  double max_sigma() const { return noise_ratio(1.0); }

  /// Time t* with b(t*)/a(t*) = sigma, i.e. F(t*) = log(1 + sigma^2) / 2.
  double noise_to_time(double sigma) const {
    require(std::isfinite(sigma) && sigma >= 0.0, ErrorKind::OutOfDomain, "sigma must be >= 0");
    const double cap = max_sigma();
    if (sigma > cap) {
      fail(ErrorKind::CapacityExceeded, "noise level exceeds schedule capacity (sigma=" + std::to_string(sigma) +
                                            " > max_sigma=" + std::to_string(cap) + ")");
    }
    if (sigma == 0.0) return 0.0;
    const double target_f = 0.5 * std::log1p(sigma * sigma);
    const double qa = 0.25 * (beta_max_ - beta_min_);
    const double qb = 0.5 * beta_min_;
    double t;
    if (qa == 0.0) {
      t = target_f / qb;
    } else {
      // positive root of qa t^2 + qb t - target_f, written without cancellation
      t = 2.0 * target_f / (qb + std::sqrt(qb * qb + 4.0 * qa * target_f));
    }
    t = std::clamp(t, 0.0, 1.0);
    if (std::abs(noise_ratio(t) - sigma) <= 1e-12 * (1.0 + sigma)) return t;
    return bisect(sigma);
  }

  /// Uniform grid t_i = i / n_steps, i = 0..n_steps.
  double grid_time(std::size_t i) const { return static_cast<double>(i) / static_cast<double>(n_steps_); }

  /// Discrete cumulative product alpha_bar_i = a(t_i)^2.
  double alpha_bar(std::size_t i) const { return std::exp(-2.0 * F(grid_time(i))); }

  std::size_t nearest_index(double t) const {
    const double x = t * static_cast<double>(n_steps_);
    return std::min<std::size_t>(n_steps_, static_cast<std::size_t>(std::llround(x)));
  }

  /// FNV-1a over the defining parameters, for manifests and predictor headers.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* c = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= c[i];
        h *= 0x100000001b3ULL;
      }
    };
    mix(&beta_min_, sizeof beta_min_);
    mix(&beta_max_, sizeof beta_max_);
    const std::uint64_t n = n_steps_;
    mix(&n, sizeof n);
    return h;
  }

 private:
  double bisect(double sigma) const {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid == lo || mid == hi) break;
      (noise_ratio(mid) < sigma ? lo : hi) = mid;
    }
    const double t = std::abs(noise_ratio(lo) - sigma) <= std::abs(noise_ratio(hi) - sigma) ? lo : hi;
    return t;
  }

  double beta_min_ = 0.1;
  double beta_max_ = 20.0;
  std::size_t n_steps_ = 1000;
};

inline ScheduleValues schedule_eval(const DiffusionSchedule& s, double t) { return s.eval(t); }
inline double noise_to_time(const DiffusionSchedule& s, double sigma) { return s.noise_to_time(sigma); }
inline double max_sigma(const DiffusionSchedule& s) { return s.max_sigma(); }

/// z_t = a(t) x + b(t) eps' with eps' ~ N(0, F^T D F) (unit amplitude).
inline Field forward_marginal_sample(const DiffusionSchedule& s, const Field& x, double t, const PowerSpectrum& spectrum,
                                     std::span<const double> spectral, RngStream& rng) {
  const auto v = s.eval(t);
  if (v.b == 0.0) return x;
  Field eps = sample_noise(spectrum, NoiseParams{1.0, {spectral.begin(), spectral.end()}}, x.dims(), rng);
  Field z = x * v.a;
  eps *= v.b;
  z += eps;
  return z;
}

}  // namespace gdiff
