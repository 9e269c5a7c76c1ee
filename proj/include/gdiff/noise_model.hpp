#pragma once

// Stationary Gaussian noise whose covariance is diagonal in Fourier space:
// Sigma = sigma^2 F^T D F with D = diag(S(k)).

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/field.hpp"
#include "gdiff/rng.hpp"

namespace gdiff {

struct NoiseParams {
  double sigma = 1.0;
  std::vector<double> spectral;

  std::size_t dim() const { return 1 + spectral.size(); }

  std::vector<double> to_vector() const {
    std::vector<double> v{sigma};
    v.insert(v.end(), spectral.begin(), spectral.end());
    return v;
  }

  static NoiseParams from_vector(std::span<const double> v) {
    require(!v.empty(), ErrorKind::InvalidArgument, "parameter vector is empty");
    return NoiseParams{v[0], std::vector<double>(v.begin() + 1, v.end())};
  }

  friend bool operator==(const NoiseParams&, const NoiseParams&) = default;
};

/// Uniform prior on an axis-aligned box over (sigma, spectral...).
///
/// A zero-width axis is allowed and pins that coordinate.
class PriorBox {
 public:
  PriorBox() = default;
  PriorBox(std::vector<double> lower, std::vector<double> upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
    require(!lower_.empty() && lower_.size() == upper_.size(), ErrorKind::InvalidArgument,
            "prior box bounds must be nonempty and of equal length");
    for (std::size_t i = 0; i < lower_.size(); ++i) {
      require(std::isfinite(lower_[i]) && std::isfinite(upper_[i]) && lower_[i] <= upper_[i],
              ErrorKind::InvalidArgument, "prior box requires finite lower <= upper on axis " + std::to_string(i));
    }
    require(lower_[0] >= 0.0, ErrorKind::InvalidArgument, "sigma lower bound must be >= 0");
  }

  std::size_t dim() const { return lower_.size(); }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }
  double width(std::size_t i) const { return upper_[i] - lower_[i]; }
  bool degenerate(std::size_t i) const { return upper_[i] == lower_[i]; }

  bool contains(std::span<const double> v) const {
    if (v.size() != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i) {
      if (!(v[i] >= lower_[i] && v[i] <= upper_[i])) return false;
    }
    return true;
  }
  bool contains(const NoiseParams& p) const { return contains(p.to_vector()); }

  std::vector<double> project(std::span<const double> v) const {
    require(v.size() == dim(), ErrorKind::InvalidArgument, "projection dimension mismatch");
    std::vector<double> out(dim());
    for (std::size_t i = 0; i < dim(); ++i) {
      out[i] = std::isfinite(v[i]) ? std::clamp(v[i], lower_[i], upper_[i]) : 0.5 * (lower_[i] + upper_[i]);
    }
    return out;
  }

  NoiseParams sample(RngStream& rng) const {
    std::vector<double> v(dim());
    for (std::size_t i = 0; i < dim(); ++i) v[i] = rng.uniform(lower_[i], upper_[i]);
    return NoiseParams::from_vector(v);
  }

  /// Log density over the non-degenerate axes (Lebesgue measure on the box).
  double log_density() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) {
      if (!degenerate(i)) s -= std::log(width(i));
    }
    return s;
  }

 private:
  std::vector<double> lower_, upper_;
};

enum class SpectrumFamily { PowerLaw, Tabulated };

/// Unit-amplitude power spectrum S(k).
///
/// PowerLaw: S(k) = |k|^phi with S(0) = 1, one spectral parameter.
/// Tabulated: fixed positive table over |k| with log-linear interpolation and
/// no spectral parameters.
class PowerSpectrum {
 public:
  static PowerSpectrum power_law() { return PowerSpectrum(SpectrumFamily::PowerLaw, {}, {}); }

  static PowerSpectrum tabulated(std::vector<double> k, std::vector<double> values) {
    require(!k.empty() && k.size() == values.size(), ErrorKind::InvalidArgument, "tabulated spectrum needs k/value pairs");
    std::vector<std::pair<double, double>> rows;
    for (std::size_t i = 0; i < k.size(); ++i) {
      require(std::isfinite(k[i]) && k[i] >= 0.0, ErrorKind::InvalidArgument, "tabulated |k| must be >= 0");
      require(std::isfinite(values[i]) && values[i] > 0.0, ErrorKind::InvalidArgument, "tabulated S must be > 0");
      rows.emplace_back(k[i], values[i]);
    }
    std::sort(rows.begin(), rows.end());
    std::vector<double> ks, logs;
    for (auto& [kk, s] : rows) {
      require(ks.empty() || kk > ks.back(), ErrorKind::InvalidArgument, "duplicate |k| node in tabulated spectrum");
      ks.push_back(kk);
      logs.push_back(std::log(s));
    }
    return PowerSpectrum(SpectrumFamily::Tabulated, std::move(ks), std::move(logs));
  }

  SpectrumFamily family() const { return family_; }
  std::size_t n_spectral() const { return family_ == SpectrumFamily::PowerLaw ? 1 : 0; }
  const std::vector<double>& table_k() const { return table_k_; }
  std::vector<double> table_values() const {
    std::vector<double> v(table_log_.size());
    std::transform(table_log_.begin(), table_log_.end(), v.begin(), [](double l) { return std::exp(l); });
    return v;
  }

  void check_spectral(std::span<const double> spectral) const {
    require(spectral.size() == n_spectral(), ErrorKind::InvalidArgument,
            "expected " + std::to_string(n_spectral()) + " spectral parameters, got " + std::to_string(spectral.size()));
    for (double v : spectral) require(std::isfinite(v), ErrorKind::NonFinite, "non-finite spectral parameter");
  }

  double log_value(double kmag, std::span<const double> spectral) const {
    if (family_ == SpectrumFamily::PowerLaw) {
      return kmag > 0.0 ? spectral[0] * std::log(kmag) : 0.0;
    }
    if (kmag <= table_k_.front()) return table_log_.front();
    if (kmag >= table_k_.back()) return table_log_.back();
    const auto it = std::upper_bound(table_k_.begin(), table_k_.end(), kmag);
    const auto j = static_cast<std::size_t>(it - table_k_.begin());
    const double w = (kmag - table_k_[j - 1]) / (table_k_[j] - table_k_[j - 1]);
    return (1.0 - w) * table_log_[j - 1] + w * table_log_[j];
  }

  double value(double kmag, std::span<const double> spectral) const { return std::exp(log_value(kmag, spectral)); }

  /// d log S / d spectral[j].
  double dlog_value(double kmag, std::span<const double> /*spectral*/, std::size_t /*j*/) const {
    if (family_ == SpectrumFamily::PowerLaw) return kmag > 0.0 ? std::log(kmag) : 0.0;
    return 0.0;
  }

 private:
  PowerSpectrum(SpectrumFamily family, std::vector<double> k, std::vector<double> logs)
      : family_(family), table_k_(std::move(k)), table_log_(std::move(logs)) {}

  SpectrumFamily family_;
  std::vector<double> table_k_;
  std::vector<double> table_log_;
};

/// S over every grid mode (flat row-major index of the DFT grid).
inline std::vector<double> spectrum_eval(const PowerSpectrum& spectrum, std::span<const double> spectral,
                                         const Shape& dims) {
  spectrum.check_spectral(spectral);
  const ModeGrid grid(dims);
  std::vector<double> s(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    s[i] = spectrum.value(grid.radius[i], spectral);
    require(std::isfinite(s[i]) && s[i] > 0.0, ErrorKind::NonFinite, "spectrum value not positive/finite");
  }
  return s;
}

inline std::vector<double> spectrum_eval(const PowerSpectrum& spectrum, const NoiseParams& params, const Shape& dims) {
  return spectrum_eval(spectrum, params.spectral, dims);
}

inline void check_params(const PowerSpectrum& spectrum, const NoiseParams& params) {
  require(std::isfinite(params.sigma) && params.sigma > 0.0, ErrorKind::OutOfDomain, "sigma must be > 0");
  spectrum.check_spectral(params.spectral);
}

/// Applies F^T D^{power} F with D the unit-amplitude spectrum.
inline Field spectral_power_apply(const PowerSpectrum& spectrum, std::span<const double> spectral, const Field& f,
                                  double power) {
  auto s = spectrum_eval(spectrum, spectral, f.dims());
  for (auto& v : s) v = std::pow(v, power);
  return apply_spectral_gain(f, s);
}

/// (F^T D^{1/2} F) f, the colouring operator of the unit-amplitude noise law.
inline Field normalized_covariance_sqrt_apply(const PowerSpectrum& spectrum, std::span<const double> spectral,
                                              const Field& f) {
  return spectral_power_apply(spectrum, spectral, f, 0.5);
}

inline Field normalized_covariance_inv_sqrt_apply(const PowerSpectrum& spectrum, std::span<const double> spectral,
                                                  const Field& f) {
  return spectral_power_apply(spectrum, spectral, f, -0.5);
}

/// Draw eps ~ N(0, sigma^2 F^T D F): colour a real white field, then scale.
inline Field sample_noise(const PowerSpectrum& spectrum, const NoiseParams& params, const Shape& dims,
                          RngStream& rng) {
  check_params(spectrum, params);
  Field w = Field::white_noise(dims, rng);
  Field out = normalized_covariance_sqrt_apply(spectrum, params.spectral, w);
  out *= params.sigma;
  return out;
}

/// Gaussian log-likelihood evaluated through the periodogram of a fixed eps.
///
/// Modes are grouped by integer |k|^2 so each evaluation costs one pass over
/// the distinct radii rather than the whole grid.
class NoiseLikelihood {
 public:
  NoiseLikelihood(const Field& eps, PowerSpectrum spectrum) : spectrum_(std::move(spectrum)), dim_(eps.size()) {
    const auto s = dft(eps);
    const ModeGrid grid(eps.dims());
    std::map<long, std::pair<double, double>> shells;  // |k|^2 -> (count, power)
    for (std::size_t i = 0; i < grid.size(); ++i) {
      auto& [count, power] = shells[grid.radius_sq[i]];
      count += 1.0;
      power += std::norm(s.coeffs[i]);
    }
    for (const auto& [rsq, cp] : shells) {
      radius_.push_back(std::sqrt(static_cast<double>(rsq)));
      count_.push_back(cp.first);
      power_.push_back(cp.second);
    }
  }

  std::size_t dim() const { return dim_; }
  const PowerSpectrum& spectrum() const { return spectrum_; }

  double log_normalizer() const { return -0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi); }

  /// log p(eps | params); fills d/d(sigma, spectral...) when grad is nonempty.
  double evaluate(const NoiseParams& params, std::span<double> grad = {}) const {
    check_params(spectrum_, params);
    const double sigma = params.sigma;
    const double sigma2 = sigma * sigma;
    const std::size_t ns = params.spectral.size();
    double logdet = 0.0, quad = 0.0;
    std::vector<double> dquad(ns, 0.0), dlogdet(ns, 0.0);
    for (std::size_t j = 0; j < radius_.size(); ++j) {
      const double log_s = spectrum_.log_value(radius_[j], params.spectral);
      const double s = std::exp(log_s);
      const double q = power_[j] / (sigma2 * s);
      logdet += count_[j] * log_s;
      quad += q;
      for (std::size_t m = 0; m < ns; ++m) {
        const double dl = spectrum_.dlog_value(radius_[j], params.spectral, m);
        dlogdet[m] += count_[j] * dl;
        dquad[m] -= q * dl;
      }
    }
    logdet += static_cast<double>(dim_) * std::log(sigma2);
    if (!grad.empty()) {
      require(grad.size() == params.dim(), ErrorKind::InvalidArgument, "gradient buffer has wrong length");
      grad[0] = -static_cast<double>(dim_) / sigma + quad / sigma;
      for (std::size_t m = 0; m < ns; ++m) grad[1 + m] = -0.5 * dlogdet[m] - 0.5 * dquad[m];
    }
    return -0.5 * logdet - 0.5 * quad + log_normalizer();
  }

 private:
  PowerSpectrum spectrum_;
  std::size_t dim_;
  std::vector<double> radius_, count_, power_;
};

inline double log_likelihood(const Field& eps, const PowerSpectrum& spectrum, const NoiseParams& params) {
  require(eps.all_finite(), ErrorKind::NonFinite, "eps contains NaN/Inf");
  return NoiseLikelihood(eps, spectrum).evaluate(params);
}

inline std::vector<double> grad_log_likelihood(const Field& eps, const PowerSpectrum& spectrum,
                                               const NoiseParams& params) {
  std::vector<double> g(params.dim());
  NoiseLikelihood(eps, spectrum).evaluate(params, g);
  return g;
}

/// Box-checked variant used where the contract forbids out-of-prior parameters.
inline double log_likelihood(const Field& eps, const PowerSpectrum& spectrum, const NoiseParams& params,
                             const PriorBox& box) {
  require(box.contains(params), ErrorKind::OutOfDomain, "parameters outside the prior box");
  return log_likelihood(eps, spectrum, params);
}

}  // namespace gdiff
