#pragma once

// Sampling p(x | y, phi) by running the discrete reverse diffusion from the
// time t* at which the rescaled observation a(t*) y has the law of z_t*.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/field.hpp"
#include "gdiff/noise_model.hpp"
#include "gdiff/rng.hpp"
#include "gdiff/schedule.hpp"
#include "gdiff/score_model.hpp"

namespace gdiff {

/// Variance of the noise injected at reverse step k.
enum class ReverseVariance {
  Beta,       ///< beta_k
  BetaTilde,  ///< beta_k (1 - abar_{k-1}) / (1 - abar_k)
};

struct ReverseRunConfig {
  const DiffusionSchedule* schedule = nullptr;
  const NoisePredictor* predictor = nullptr;
  PowerSpectrum noise = PowerSpectrum::power_law();
  bool stochastic = true;  ///< ancestral sampling; false runs the deterministic (eta = 0) update
  ReverseVariance variance = ReverseVariance::Beta;
  double sigma_min = 1e-3;
  bool record_trajectory = false;
  std::size_t trajectory_stride = 10;
};

struct ConditionalDraw {
  Field x;
  double t_star = 0.0;
  std::size_t start_index = 0;
  double snap_error = 0.0;        ///< |b/a at the snapped grid time - sigma|
  double condition_number = 1.0;  ///< max S / min S of the colouring spectrum
  std::vector<Field> trajectory;
};

inline ConditionalDraw sample_conditional_detailed(const Field& y, const NoiseParams& params,
                                                   const ReverseRunConfig& cfg, RngStream& rng) {
  require(cfg.schedule && cfg.predictor, ErrorKind::InvalidArgument, "reverse run needs a schedule and a predictor");
  require(y.dims() == cfg.predictor->dims(), ErrorKind::InvalidArgument,
          "observation shape " + shape_string(y.dims()) + " does not match predictor " +
              shape_string(cfg.predictor->dims()));
  require(y.all_finite(), ErrorKind::NonFinite, "observation contains NaN/Inf");
  const auto& s = *cfg.schedule;
  const double sigma = std::max(params.sigma, cfg.sigma_min);
  ConditionalDraw out;
  out.t_star = s.noise_to_time(sigma);
  out.start_index = s.nearest_index(out.t_star);
  out.snap_error = std::abs(s.noise_ratio(s.grid_time(out.start_index)) - sigma);

  const auto spec = spectrum_eval(cfg.noise, params.spectral, y.dims());
  const auto [smin, smax] = std::minmax_element(spec.begin(), spec.end());
  out.condition_number = *smax / *smin;
  std::vector<double> sqrt_spec(spec.size());
  std::transform(spec.begin(), spec.end(), sqrt_spec.begin(), [](double v) { return std::sqrt(v); });

  Field z = y * std::sqrt(s.alpha_bar(out.start_index));
  if (cfg.record_trajectory) out.trajectory.push_back(z);
  for (std::size_t k = out.start_index; k >= 1; --k) {
    const double abar = s.alpha_bar(k);
    const double abar_prev = s.alpha_bar(k - 1);
    const double alpha = abar / abar_prev;
    const double beta = 1.0 - alpha;
    const Field m = cfg.predictor->predict(z, s.grid_time(k), params.spectral);
    if (cfg.stochastic) {
      // z <- (z - beta / sqrt(1 - abar) m) / sqrt(alpha) + sqrt(var) * colour(w)
      z -= m * (beta / std::sqrt(1.0 - abar));
      z *= 1.0 / std::sqrt(alpha);
      if (k > 1) {
        const double var = cfg.variance == ReverseVariance::Beta ? beta : beta * (1.0 - abar_prev) / (1.0 - abar);
        Field w = apply_spectral_gain(Field::white_noise(y.dims(), rng), sqrt_spec);
        w *= std::sqrt(var);
        z += w;
      }
    } else {
      Field x0 = (z - m * std::sqrt(1.0 - abar)) * (1.0 / std::sqrt(abar));
      z = x0 * std::sqrt(abar_prev) + m * std::sqrt(1.0 - abar_prev);
    }
    if (!z.all_finite()) fail(ErrorKind::Numeric, "non-finite state at reverse step " + std::to_string(k));
    if (cfg.record_trajectory && (k - 1) % std::max<std::size_t>(cfg.trajectory_stride, 1) == 0) {
      out.trajectory.push_back(z);
    }
  }
  out.x = std::move(z);
  return out;
}

inline Field sample_conditional(const Field& y, const NoiseParams& params, const ReverseRunConfig& cfg,
                                RngStream& rng) {
  return sample_conditional_detailed(y, params, cfg, rng).x;
}

inline Field posterior_mean_estimate(std::span<const Field> samples) {
  require(!samples.empty(), ErrorKind::InvalidArgument, "posterior mean of an empty sample list");
  Field mean(samples.front().dims());
  for (const auto& s : samples) mean += s;
  mean *= 1.0 / static_cast<double>(samples.size());
  return mean;
}

/// Draws x ~ q(x | y, phi); the x-update of the Gibbs loop.
class ConditionalSampler {
 public:
  virtual ~ConditionalSampler() = default;
  virtual Field sample(const Field& y, const NoiseParams& params, RngStream& rng) const = 0;
};

class DiffusionConditionalSampler final : public ConditionalSampler {
 public:
  explicit DiffusionConditionalSampler(ReverseRunConfig cfg) : cfg_(std::move(cfg)) {}
  Field sample(const Field& y, const NoiseParams& params, RngStream& rng) const override {
    return sample_conditional(y, params, cfg_, rng);
  }
  const ReverseRunConfig& config() const { return cfg_; }

 private:
  ReverseRunConfig cfg_;
};

}  // namespace gdiff
