#pragma once

// Closed-form references: linear-Gaussian (Wiener) posteriors, grid posteriors
// over the noise parameters, a dense-covariance likelihood and exact
// stationary distributions of two-block Gibbs kernels on finite tables.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/field.hpp"
#include "gdiff/noise_model.hpp"
#include "gdiff/posterior_sampler.hpp"
#include "gdiff/rng.hpp"

namespace gdiff {

/// y = x + eps with x ~ N(prior_mean, F^T diag(P) F) and eps ~ N(0, sigma^2 F^T diag(S_phi) F).
struct LinearGaussianProblem {
  Field prior_mean;
  std::vector<double> prior_spectrum;  ///< P per DFT mode, Hermitian-symmetric
  PowerSpectrum noise = PowerSpectrum::power_law();
  Field y;

  const Shape& dims() const { return prior_mean.dims(); }

  void validate() const {
    require(prior_spectrum.size() == prior_mean.size(), ErrorKind::InvalidArgument, "prior spectrum length mismatch");
    for (double p : prior_spectrum) {
      require(std::isfinite(p) && p > 0.0, ErrorKind::InvalidArgument, "prior spectrum must be strictly positive");
    }
    if (!y.empty()) y.check_same(prior_mean);
  }
};

/// Draws x from the problem's prior.
inline Field sample_gaussian_prior(const LinearGaussianProblem& problem, RngStream& rng) {
  std::vector<double> amp(problem.prior_spectrum.size());
  std::transform(problem.prior_spectrum.begin(), problem.prior_spectrum.end(), amp.begin(),
                 [](double p) { return std::sqrt(p); });
  return problem.prior_mean + apply_spectral_gain(Field::white_noise(problem.dims(), rng), amp);
}

struct WienerPosterior {
  Field mean;
  std::vector<double> variance;  ///< E|x_hat - mean_hat|^2 per mode
};

inline WienerPosterior wiener_posterior(const LinearGaussianProblem& problem, const Field& y, const NoiseParams& params) {
  problem.validate();
  y.check_same(problem.prior_mean);
  check_params(problem.noise, params);
  const auto s = spectrum_eval(problem.noise, params, y.dims());
  const auto yh = dft(y);
  const auto mh = dft(problem.prior_mean);
  SpectralField post{y.dims(), std::vector<Complex>(yh.size())};
  WienerPosterior out;
  out.variance.resize(yh.size());
  const double s2 = params.sigma * params.sigma;
  for (std::size_t k = 0; k < yh.size(); ++k) {
    const double p = problem.prior_spectrum[k];
    const double n = s2 * s[k];
    post.coeffs[k] = mh.coeffs[k] + (p / (p + n)) * (yh.coeffs[k] - mh.coeffs[k]);
    out.variance[k] = p * n / (p + n);
  }
  out.mean = idft(post);
  return out;
}

inline WienerPosterior wiener_posterior(const LinearGaussianProblem& problem, const NoiseParams& params) {
  return wiener_posterior(problem, problem.y, params);
}

/// Exact x | y, phi draws; stands in for the diffusion step in oracle runs.
class WienerConditionalSampler final : public ConditionalSampler {
 public:
  explicit WienerConditionalSampler(LinearGaussianProblem problem) : problem_(std::move(problem)) { problem_.validate(); }

  Field sample(const Field& y, const NoiseParams& params, RngStream& rng) const override {
    auto post = wiener_posterior(problem_, y, params);
    for (auto& v : post.variance) v = std::sqrt(v);
    return post.mean + apply_spectral_gain(Field::white_noise(y.dims(), rng), post.variance);
  }

 private:
  LinearGaussianProblem problem_;
};

// ---------------------------------------------------------------------------
// Grid posterior over phi

struct PhiGridPosterior {
  std::vector<std::vector<double>> axes;  ///< cell centres per parameter axis
  std::vector<double> cell_width;         ///< 0 on one-point axes
  std::vector<double> log_density;        ///< normalized log mass per cell, row-major over axes
  std::vector<double> probability;
  std::vector<double> cdf;
  std::vector<std::vector<double>> marginals;

  std::size_t n_cells() const { return probability.size(); }

  std::vector<double> cell(std::size_t flat) const {
    std::vector<double> v(axes.size());
    for (std::size_t a = axes.size(); a-- > 0;) {
      v[a] = axes[a][flat % axes[a].size()];
      flat /= axes[a].size();
    }
    return v;
  }

  std::vector<double> mean() const {
    std::vector<double> m(axes.size(), 0.0);
    for (std::size_t a = 0; a < axes.size(); ++a) {
      for (std::size_t i = 0; i < axes[a].size(); ++i) m[a] += marginals[a][i] * axes[a][i];
    }
    return m;
  }

  std::vector<double> sd() const {
    const auto m = mean();
    std::vector<double> s(axes.size(), 0.0);
    for (std::size_t a = 0; a < axes.size(); ++a) {
      for (std::size_t i = 0; i < axes[a].size(); ++i) {
        const double d = axes[a][i] - m[a];
        s[a] += marginals[a][i] * d * d;
      }
      s[a] = std::sqrt(s[a] + cell_width[a] * cell_width[a] / 12.0);
    }
    return s;
  }

  /// Cell drawn by mass, then a uniform position inside it.
  std::vector<double> sample(RngStream& rng) const {
    const double u = rng.uniform() * cdf.back();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto flat = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
    auto v = cell(flat);
    for (std::size_t a = 0; a < v.size(); ++a) v[a] += (rng.uniform() - 0.5) * cell_width[a];
    return v;
  }
};

/// Log marginal likelihood log p(y | phi) with per-mode variance P + sigma^2 S.
inline double marginal_log_likelihood(const LinearGaussianProblem& problem, std::span<const double> resid_power,
                                      std::span<const double> s, double sigma) {
  const double s2 = sigma * sigma;
  double acc = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double v = problem.prior_spectrum[k] + s2 * s[k];
    acc += std::log(v) + resid_power[k] / v;
  }
  return -0.5 * acc - 0.5 * static_cast<double>(s.size()) * std::log(2.0 * std::numbers::pi);
}

/// Posterior over a regular grid of cell centres in `region` (defaults to the
/// prior box); axes with zero width get a single point. The box prior is flat.
inline PhiGridPosterior phi_grid_posterior(const LinearGaussianProblem& problem, const PriorBox& prior,
                                           std::size_t resolution, std::optional<PriorBox> region = std::nullopt) {
  problem.validate();
  require(!problem.y.empty(), ErrorKind::InvalidArgument, "grid posterior needs an observation");
  require(prior.dim() == 1 + problem.noise.n_spectral(), ErrorKind::InvalidArgument, "prior box dimension mismatch");
  require(resolution >= 50, ErrorKind::InvalidArgument, "grid posterior needs >= 50 points per axis");
  const PriorBox& r = region ? *region : prior;
  require(r.dim() == prior.dim(), ErrorKind::InvalidArgument, "region dimension mismatch");
  PhiGridPosterior g;
  for (std::size_t a = 0; a < r.dim(); ++a) {
    const double lo = std::max(r.lower()[a], prior.lower()[a]);
    const double hi = std::min(r.upper()[a], prior.upper()[a]);
    require(hi >= lo, ErrorKind::InvalidArgument, "region does not intersect the prior box");
    std::vector<double> axis;
    if (hi == lo) {
      axis.push_back(lo);
      g.cell_width.push_back(0.0);
    } else {
      const double h = (hi - lo) / static_cast<double>(resolution);
      for (std::size_t i = 0; i < resolution; ++i) axis.push_back(lo + (static_cast<double>(i) + 0.5) * h);
      g.cell_width.push_back(h);
    }
    g.axes.push_back(std::move(axis));
  }
  const auto yh = dft(problem.y);
  const auto mh = dft(problem.prior_mean);
  std::vector<double> resid(yh.size());
  for (std::size_t k = 0; k < yh.size(); ++k) resid[k] = std::norm(yh.coeffs[k] - mh.coeffs[k]);

  // modes sharing radius and prior power contribute identically up to resid
  const ModeGrid grid(problem.dims());
  std::map<std::pair<double, double>, std::size_t> group_of;
  std::vector<std::size_t> rep;
  std::vector<double> g_count, g_resid, g_prior;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto key = std::make_pair(grid.radius[k], problem.prior_spectrum[k]);
    auto [it, fresh] = group_of.try_emplace(key, rep.size());
    if (fresh) {
      rep.push_back(k);
      g_count.push_back(0.0);
      g_resid.push_back(0.0);
      g_prior.push_back(problem.prior_spectrum[k]);
    }
    g_count[it->second] += 1.0;
    g_resid[it->second] += resid[k];
  }
  const double log_2pi_term = 0.5 * static_cast<double>(grid.size()) * std::log(2.0 * std::numbers::pi);

  std::size_t n_spectral_cells = 1;
  for (std::size_t a = 1; a < g.axes.size(); ++a) n_spectral_cells *= g.axes[a].size();
  const std::size_t n_sigma = g.axes[0].size();
  g.log_density.assign(n_sigma * n_spectral_cells, 0.0);
  for (std::size_t j = 0; j < n_spectral_cells; ++j) {
    std::vector<double> spectral;
    std::size_t rem = j;
    for (std::size_t a = g.axes.size(); a-- > 1;) {
      spectral.insert(spectral.begin(), g.axes[a][rem % g.axes[a].size()]);
      rem /= g.axes[a].size();
    }
    const auto s = spectrum_eval(problem.noise, spectral, problem.dims());
    for (std::size_t i = 0; i < n_sigma; ++i) {
      const double s2 = g.axes[0][i] * g.axes[0][i];
      double acc = 0.0;
      for (std::size_t q = 0; q < rep.size(); ++q) {
        const double v = g_prior[q] + s2 * s[rep[q]];
        acc += g_count[q] * std::log(v) + g_resid[q] / v;
      }
      g.log_density[i * n_spectral_cells + j] = -0.5 * acc - log_2pi_term;
    }
  }
  const double mx = *std::max_element(g.log_density.begin(), g.log_density.end());
  double z = 0.0;
  for (double v : g.log_density) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  g.probability.resize(g.log_density.size());
  for (std::size_t c = 0; c < g.log_density.size(); ++c) {
    g.log_density[c] -= log_z;
    g.probability[c] = std::exp(g.log_density[c]);
  }
  g.cdf.resize(g.probability.size());
  std::partial_sum(g.probability.begin(), g.probability.end(), g.cdf.begin());
  g.marginals.resize(g.axes.size());
  for (std::size_t a = 0; a < g.axes.size(); ++a) g.marginals[a].assign(g.axes[a].size(), 0.0);
  for (std::size_t c = 0; c < g.probability.size(); ++c) {
    std::size_t rem = c;
    for (std::size_t a = g.axes.size(); a-- > 0;) {
      g.marginals[a][rem % g.axes[a].size()] += g.probability[c];
      rem /= g.axes[a].size();
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Dense likelihood

inline constexpr std::size_t kDenseOracleMaxDim = 256;

/// Circulant covariance sigma^2 F^T diag(S) F assembled from its first row by a
/// direct cosine sum (Hermitian S makes the imaginary parts cancel).
inline Eigen::MatrixXd dense_covariance(const Shape& dims, std::span<const double> per_mode_spectrum, double scale = 1.0) {
  validate_shape(dims);
  const std::size_t d = shape_size(dims);
  require(d <= kDenseOracleMaxDim, ErrorKind::CapacityExceeded, "dense oracle is limited to 256 pixels");
  require(per_mode_spectrum.size() == d, ErrorKind::InvalidArgument, "spectrum length mismatch");
  const std::size_t rows = dims.size() == 2 ? dims[0] : 1;
  const std::size_t cols = dims.back();
  std::vector<double> lag(d, 0.0);
  for (std::size_t lr = 0; lr < rows; ++lr) {
    for (std::size_t lc = 0; lc < cols; ++lc) {
      double acc = 0.0;
      for (std::size_t kr = 0; kr < rows; ++kr) {
        for (std::size_t kc = 0; kc < cols; ++kc) {
          const double phase = 2.0 * std::numbers::pi *
                               (static_cast<double>((kr * lr) % rows) / static_cast<double>(rows) +
                                static_cast<double>((kc * lc) % cols) / static_cast<double>(cols));
          acc += per_mode_spectrum[kr * cols + kc] * std::cos(phase);
        }
      }
      lag[lr * cols + lc] = scale * acc / static_cast<double>(d);
    }
  }
  Eigen::MatrixXd c(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t dr = (i / cols + rows - j / cols) % rows;
      const std::size_t dc = (i % cols + cols - j % cols) % cols;
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = lag[dr * cols + dc];
    }
  }
  return c;
}

/// Zero-mean Gaussian log density by Cholesky.
inline double dense_gaussian_logpdf(std::span<const double> x, const Eigen::MatrixXd& cov) {
  require(static_cast<Eigen::Index>(x.size()) == cov.rows() && cov.rows() == cov.cols(), ErrorKind::InvalidArgument,
          "covariance dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  require(llt.info() == Eigen::Success, ErrorKind::Numeric, "covariance is not positive definite");
  const Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::VectorXd w = llt.matrixL().solve(v);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (log_det + w.squaredNorm() + static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi));
}

inline double dense_gaussian_logpdf(const Field& eps, const PowerSpectrum& spectrum, const NoiseParams& params) {
  check_params(spectrum, params);
  const auto s = spectrum_eval(spectrum, params, eps.dims());
  return dense_gaussian_logpdf(eps.data(), dense_covariance(eps.dims(), s, params.sigma * params.sigma));
}

// ---------------------------------------------------------------------------
// Finite two-block Gibbs kernels
//
// Tables are indexed (phi, x): p_phi_given_x(i, j) = p(phi_i | x_j) with columns
// summing to 1; q_x_given_phi(i, j) = q(x_j | phi_i) with rows summing to 1.

struct StationaryResult {
  Eigen::MatrixXd joint;  ///< pi(phi_i, x_j)
  Eigen::VectorXd phi_marginal;
  std::size_t iterations = 0;
  double residual = 0.0;
};

namespace detail {

inline void check_conditional_table(const Eigen::MatrixXd& t, bool columns, const char* name) {
  require(t.size() > 0, ErrorKind::InvalidArgument, std::string(name) + " is empty");
  require(t.allFinite() && (t.array() >= 0.0).all(), ErrorKind::InvalidArgument,
          std::string(name) + " must be finite and non-negative");
  const Eigen::VectorXd sums = columns ? Eigen::VectorXd(t.colwise().sum().transpose()) : Eigen::VectorXd(t.rowwise().sum());
  for (Eigen::Index i = 0; i < sums.size(); ++i) {
    require(std::abs(sums[i] - 1.0) < 1e-9, ErrorKind::InvalidArgument, std::string(name) + " is not normalized");
  }
}

/// phi -> phi' kernel of one Gibbs sweep.
inline Eigen::MatrixXd phi_kernel(const Eigen::MatrixXd& p_phi_given_x, const Eigen::MatrixXd& q_x_given_phi) {
  // K(i, l) = sum_j q(x_j | phi_i) p(phi_l | x_j)
  return q_x_given_phi * p_phi_given_x.transpose();
}

inline bool strongly_connected(const Eigen::MatrixXd& k) {
  const auto n = k.rows();
  auto reach_all = [&](bool transpose) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<Eigen::Index> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double w = transpose ? k(j, i) : k(i, j);
        if (w > 0.0 && !seen[static_cast<std::size_t>(j)]) {
          seen[static_cast<std::size_t>(j)] = 1;
          stack.push_back(j);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  };
  return reach_all(false) && reach_all(true);
}

}  // namespace detail

/// Stationary law of "phi ~ p(phi | x), then x ~ q(x | phi)" by power iteration
/// on the phi-chain; the joint is read off after the x-update.
inline StationaryResult discrete_gibbs_stationary(const Eigen::MatrixXd& p_phi_given_x,
                                                  const Eigen::MatrixXd& q_x_given_phi, double tol = 1e-14,
                                                  std::size_t max_iter = 1000000) {
  detail::check_conditional_table(p_phi_given_x, true, "p(phi|x)");
  detail::check_conditional_table(q_x_given_phi, false, "q(x|phi)");
  require(p_phi_given_x.rows() == q_x_given_phi.rows() && p_phi_given_x.cols() == q_x_given_phi.cols(),
          ErrorKind::InvalidArgument, "conditional tables disagree in shape");
  const Eigen::MatrixXd k = detail::phi_kernel(p_phi_given_x, q_x_given_phi);
  if (!detail::strongly_connected(k)) fail(ErrorKind::Reducible, "Gibbs kernel is reducible");
  const auto n = k.rows();
  Eigen::RowVectorXd pi = Eigen::RowVectorXd::Constant(n, 1.0 / static_cast<double>(n));
  StationaryResult out;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    Eigen::RowVectorXd next = pi * k;
    next /= next.sum();
    out.residual = (next - pi).lpNorm<1>();
    pi = next;
    out.iterations = it;
    if (out.residual < tol) break;
  }
  if (!(out.residual < tol)) {
    // a periodic kernel never settles; the lazy chain shares its stationary law
    const Eigen::MatrixXd lazy = 0.5 * (k + Eigen::MatrixXd::Identity(n, n));
    for (std::size_t it = 1; it <= max_iter && !(out.residual < tol); ++it) {
      Eigen::RowVectorXd next = pi * lazy;
      next /= next.sum();
      out.residual = (next - pi).lpNorm<1>();
      pi = next;
      ++out.iterations;
    }
    require(out.residual < tol, ErrorKind::Numeric, "power iteration did not reach the residual tolerance");
  }
  out.phi_marginal = pi.transpose();
  out.joint = pi.transpose().asDiagonal() * q_x_given_phi;
  return out;
}

/// phi-marginal after M sweeps from `init`.
inline Eigen::VectorXd gibbs_phi_marginal_after(const Eigen::MatrixXd& p_phi_given_x, const Eigen::MatrixXd& q_x_given_phi,
                                                const Eigen::VectorXd& init, std::size_t sweeps) {
  const Eigen::MatrixXd k = detail::phi_kernel(p_phi_given_x, q_x_given_phi);
  Eigen::RowVectorXd rho = init.transpose();
  for (std::size_t m = 0; m < sweeps; ++m) rho = rho * k;
  return rho.transpose();
}

/// Conditionals of a joint table p(phi_i, x_j).
struct JointConditionals {
  Eigen::VectorXd phi_marginal, x_marginal;
  Eigen::MatrixXd phi_given_x;  ///< columns sum to 1
  Eigen::MatrixXd x_given_phi;  ///< rows sum to 1
};

inline JointConditionals conditionals_of(const Eigen::MatrixXd& joint) {
  require(joint.allFinite() && (joint.array() > 0.0).all(), ErrorKind::InvalidArgument,
          "joint table must be strictly positive");
  JointConditionals c;
  const double total = joint.sum();
  const Eigen::MatrixXd p = joint / total;
  c.phi_marginal = p.rowwise().sum();
  c.x_marginal = p.colwise().sum().transpose();
  c.phi_given_x = p * c.x_marginal.cwiseInverse().asDiagonal();
  c.x_given_phi = c.phi_marginal.cwiseInverse().asDiagonal() * p;
  return c;
}

}  // namespace gdiff
