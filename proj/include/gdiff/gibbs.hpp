#pragma once

// Blocked Gibbs sampler for p(x, phi | y): alternate x ~ q(x | y, phi) and
// phi ~ p(phi | eps = y - x) by HMC. Chains run on their own threads with
// independent random streams.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/field.hpp"
#include "gdiff/hmc.hpp"
#include "gdiff/noise_model.hpp"
#include "gdiff/posterior_sampler.hpp"
#include "gdiff/rng.hpp"

namespace gdiff {

enum class InitStrategy { PriorDraw, SigmaRegression, SpectralMoment };

// ---------------------------------------------------------------------------
// Initialization heuristics

namespace detail {

inline double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  const double hi = *mid;
  return 0.5 * (hi + *std::max_element(v.begin(), mid));
}

}  // namespace detail

/// Finest-scale orthonormal Haar detail coefficients: the diagonal band in 2D,
/// pairwise differences in 1D. Odd trailing rows/columns are dropped.
inline std::vector<double> haar_finest_details(const Field& y) {
  std::vector<double> d;
  if (y.dims().size() == 1) {
    for (std::size_t i = 0; i + 1 < y.size(); i += 2) d.push_back((y[i] - y[i + 1]) / std::numbers::sqrt2);
    return d;
  }
  const std::size_t rows = y.dims()[0], cols = y.dims()[1];
  for (std::size_t r = 0; r + 1 < rows; r += 2) {
    for (std::size_t c = 0; c + 1 < cols; c += 2) {
      d.push_back(0.5 * (y.at(r, c) - y.at(r, c + 1) - y.at(r + 1, c) + y.at(r + 1, c + 1)));
    }
  }
  return d;
}

/// (MAD of the finest Haar details, standard deviation of y).
inline std::array<double, 2> sigma_features(const Field& y) {
  auto d = haar_finest_details(y);
  require(!d.empty(), ErrorKind::InvalidArgument, "field too small for Haar features");
  const double med = detail::median(d);
  for (auto& v : d) v = std::abs(v - med);
  const double mad = detail::median(d);
  const double m = y.mean();
  double s = 0.0;
  for (double v : y.data()) s += (v - m) * (v - m);
  return {mad, std::sqrt(s / static_cast<double>(y.size()))};
}

/// Linear least-squares sigma ~ c0 + c1 * MAD + c2 * std(y).
class SigmaRegressor {
 public:
  SigmaRegressor() = default;

  static SigmaRegressor fit(std::span<const Field> ys, std::span<const double> sigmas) {
    require(ys.size() == sigmas.size(), ErrorKind::InvalidArgument, "observations and labels differ in count");
    require(ys.size() >= 20, ErrorKind::InvalidArgument, "sigma regression needs >= 20 held-out pairs");
    Eigen::MatrixXd a(static_cast<Eigen::Index>(ys.size()), 3);
    Eigen::VectorXd b(static_cast<Eigen::Index>(ys.size()));
    for (std::size_t i = 0; i < ys.size(); ++i) {
      const auto f = sigma_features(ys[i]);
      a.row(static_cast<Eigen::Index>(i)) << 1.0, f[0], f[1];
      b[static_cast<Eigen::Index>(i)] = sigmas[i];
    }
    SigmaRegressor r;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-10);
    if (qr.rank() < 3) {
      r.fallback_ = true;
      r.warning_ = "rank-deficient sigma regression design (rank " + std::to_string(qr.rank()) + "); using prior draws";
      return r;
    }
    const Eigen::VectorXd c = qr.solve(b);
    r.coef_ = {c[0], c[1], c[2]};
    return r;
  }

  bool fallback() const { return fallback_; }
  const std::string& warning() const { return warning_; }
  const std::array<double, 3>& coefficients() const { return coef_; }

  double predict_raw(const Field& y) const {
    const auto f = sigma_features(y);
    return coef_[0] + coef_[1] * f[0] + coef_[2] * f[1];
  }

  /// Predicted sigma clipped into the box; a prior draw when the fit fell back.
  double predict(const Field& y, const PriorBox& prior, RngStream& rng) const {
    if (fallback_) return rng.uniform(prior.lower()[0], prior.upper()[0]);
    return std::clamp(predict_raw(y), prior.lower()[0], prior.upper()[0]);
  }

 private:
  std::array<double, 3> coef_{0.0, 0.0, 0.0};
  bool fallback_ = false;
  std::string warning_;
};

inline SigmaRegressor init_sigma_regression(std::span<const Field> ys, std::span<const double> sigmas) {
  return SigmaRegressor::fit(ys, sigmas);
}

/// Spectral index from the least-squares slope of log |y_hat|^2 against log |k|
/// over the top octave of radii; sigma^2 from the mean of |y_hat|^2 / |k|^index
/// there. The result is projected into the box.
inline NoiseParams init_spectral_moment(const Field& y, const PriorBox& prior,
                                        const PowerSpectrum& spectrum = PowerSpectrum::power_law()) {
  require(y.all_finite(), ErrorKind::NonFinite, "observation contains NaN/Inf");
  const auto yh = dft(y);
  const ModeGrid grid(y.dims());
  double kmax = 0.0;
  for (double r : grid.radius) kmax = std::max(kmax, r);
  std::vector<double> lk, lp, power, radius;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (grid.radius[i] < 0.5 * kmax) continue;
    const double p = std::norm(yh.coeffs[i]);
    power.push_back(p);
    radius.push_back(grid.radius[i]);
    if (p > 0.0) {
      lk.push_back(std::log(grid.radius[i]));
      lp.push_back(std::log(p));
    }
  }
  std::vector<double> v(prior.dim());
  for (std::size_t a = 0; a < prior.dim(); ++a) v[a] = 0.5 * (prior.lower()[a] + prior.upper()[a]);
  double index = 0.0;
  if (spectrum.n_spectral() == 1) {
    if (lk.size() >= 2) {
      const double mk = std::accumulate(lk.begin(), lk.end(), 0.0) / static_cast<double>(lk.size());
      const double mp = std::accumulate(lp.begin(), lp.end(), 0.0) / static_cast<double>(lp.size());
      double sxy = 0.0, sxx = 0.0;
      for (std::size_t i = 0; i < lk.size(); ++i) {
        sxy += (lk[i] - mk) * (lp[i] - mp);
        sxx += (lk[i] - mk) * (lk[i] - mk);
      }
      if (sxx > 0.0) v[1] = sxy / sxx;
    }
    index = std::clamp(v[1], prior.lower()[1], prior.upper()[1]);
  }
  double s2 = 0.0;
  for (std::size_t i = 0; i < power.size(); ++i) {
    const double s = spectrum.n_spectral() == 1 ? std::pow(radius[i], index)
                                                 : spectrum.value(radius[i], std::span<const double>{});
    s2 += power[i] / s;
  }
  v[0] = power.empty() ? 0.0 : std::sqrt(s2 / static_cast<double>(power.size()));
  return NoiseParams::from_vector(prior.project(v));
}

// ---------------------------------------------------------------------------
// Gibbs loop

struct GibbsConfig {
  std::size_t iterations = 60;  ///< M
  std::size_t n_chains = 4;
  std::optional<std::size_t> warmup_discard;  ///< defaults to M / 2
  InitStrategy init = InitStrategy::PriorDraw;
  std::uint64_t seed = 0;
  std::size_t x_thin = 5;  ///< keep x every j-th iteration; 0 keeps none
  HmcConfig hmc;
  std::size_t n_threads = 0;  ///< 0 uses one thread per chain

  std::size_t discard() const { return warmup_discard.value_or(iterations / 2); }

  void validate() const {
    require(iterations >= 1, ErrorKind::Config, "Gibbs needs M >= 1");
    require(n_chains >= 1, ErrorKind::Config, "Gibbs needs at least one chain");
    require(discard() < iterations, ErrorKind::Config, "warmup_discard must be < M");
    hmc.validate();
  }
};

struct ChainTrace {
  std::size_t chain = 0;
  NoiseParams init;
  std::vector<NoiseParams> params;  ///< phi_k for k = 1..M
  std::vector<double> accept, delta_H, wall_ms;
  std::vector<char> divergent;
  std::vector<std::pair<std::size_t, Field>> x_samples;  ///< (k, x_k) every x_thin iterations
  Field x_mean;                                          ///< mean of retained x_k
  std::size_t n_retained = 0;
  double step_size = 0.0;
  bool failed = false;
  std::string failure;
  std::string warning;

  std::vector<NoiseParams> retained(std::size_t discard) const {
    if (params.size() <= discard) return {};
    return {params.begin() + static_cast<std::ptrdiff_t>(discard), params.end()};
  }
};

struct GibbsResult {
  std::vector<ChainTrace> chains;
  std::size_t n_failed = 0;

  std::vector<const ChainTrace*> succeeded() const {
    std::vector<const ChainTrace*> out;
    for (const auto& c : chains) {
      if (!c.failed) out.push_back(&c);
    }
    return out;
  }
};

struct GibbsComponents {
  const ConditionalSampler* x_sampler = nullptr;
  PowerSpectrum noise = PowerSpectrum::power_law();
  PriorBox prior;
  const SigmaRegressor* regressor = nullptr;  ///< needed by InitStrategy::SigmaRegression
};

inline NoiseParams initial_params(const Field& y, const GibbsConfig& cfg, const GibbsComponents& comp,
                                  RngStream& rng, std::string& warning) {
  switch (cfg.init) {
    case InitStrategy::PriorDraw:
      return comp.prior.sample(rng);
    case InitStrategy::SigmaRegression: {
      require(comp.regressor != nullptr, ErrorKind::Config, "sigma-regression init needs a fitted regressor");
      NoiseParams p = comp.prior.sample(rng);
      if (comp.regressor->fallback()) warning = comp.regressor->warning();
      p.sigma = comp.regressor->predict(y, comp.prior, rng);
      return p;
    }
    case InitStrategy::SpectralMoment:
      return init_spectral_moment(y, comp.prior, comp.noise);
  }
  fail(ErrorKind::Config, "unknown init strategy");
}

/// One chain of the loop; errors are recorded on the trace.
inline ChainTrace gibbs_chain(const Field& y, const GibbsConfig& cfg, const GibbsComponents& comp, std::size_t chain) {
  using clock = std::chrono::steady_clock;
  ChainTrace tr;
  tr.chain = chain;
  RngStream rng(cfg.seed, streams::kChainBase + chain);
  try {
    tr.init = initial_params(y, cfg, comp, rng, tr.warning);
    HmcSampler hmc(cfg.hmc);
    NoiseParams phi = tr.init;
    Field x = comp.x_sampler->sample(y, phi, rng);
    tr.x_mean = Field(y.dims());
    for (std::size_t k = 1; k <= cfg.iterations; ++k) {
      const auto t0 = clock::now();
      const Field eps = y - x;
      const NoisePosterior post(eps, comp.noise, comp.prior);
      const auto d = hmc.draw(post, phi, rng);
      phi = d.params;
      x = comp.x_sampler->sample(y, phi, rng);
      const auto t1 = clock::now();
      tr.params.push_back(phi);
      tr.accept.push_back(d.accept_prob);
      tr.delta_H.push_back(d.delta_H);
      tr.divergent.push_back(d.divergent ? 1 : 0);
      tr.wall_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      if (k > cfg.discard()) {
        tr.x_mean += x;
        ++tr.n_retained;
      }
      if (cfg.x_thin && k % cfg.x_thin == 0) tr.x_samples.emplace_back(k, x);
    }
    tr.step_size = hmc.step_size();
    if (tr.n_retained) tr.x_mean *= 1.0 / static_cast<double>(tr.n_retained);
  } catch (const std::exception& e) {
    tr.failed = true;
    tr.failure = e.what();
  }
  return tr;
}

inline GibbsResult gibbs_run(const Field& y, const GibbsConfig& cfg, const GibbsComponents& comp) {
  cfg.validate();
  require(comp.x_sampler != nullptr, ErrorKind::InvalidArgument, "Gibbs needs an x sampler");
  require(comp.prior.dim() == 1 + comp.noise.n_spectral(), ErrorKind::InvalidArgument,
          "prior box dimension does not match the noise family");
  require(y.all_finite(), ErrorKind::NonFinite, "observation contains NaN/Inf");
  GibbsResult res;
  res.chains.resize(cfg.n_chains);
  const std::size_t n_threads = std::min(cfg.n_chains, cfg.n_threads ? cfg.n_threads : cfg.n_chains);
  if (n_threads <= 1) {
    for (std::size_t c = 0; c < cfg.n_chains; ++c) res.chains[c] = gibbs_chain(y, cfg, comp, c);
  } else {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < n_threads; ++w) {
      workers.emplace_back([&, w] {
        for (std::size_t c = w; c < cfg.n_chains; c += n_threads) res.chains[c] = gibbs_chain(y, cfg, comp, c);
      });
    }
  }
  for (const auto& c : res.chains) res.n_failed += c.failed ? 1 : 0;
  return res;
}

/// Retained phi draws pooled over successful chains, as rows of parameter vectors.
inline std::vector<std::vector<double>> pooled_retained(const GibbsResult& res, std::size_t discard) {
  std::vector<std::vector<double>> rows;
  for (const auto* c : res.succeeded()) {
    for (const auto& p : c->retained(discard)) rows.push_back(p.to_vector());
  }
  return rows;
}

}  // namespace gdiff
