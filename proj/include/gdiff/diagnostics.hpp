#pragma once

// Convergence and calibration checks: rank-normalized split R-hat, Geyer ESS,
// SBC rank histograms, the stationary KL identity on finite tables, and the
// ratio integral that must be finite for conditionals to be compatible.

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/oracle.hpp"
#include "gdiff/rng.hpp"

namespace gdiff {

// ---------------------------------------------------------------------------
// R-hat

struct RHat {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;  ///< zero within-chain variance; value is +inf
};

namespace detail {

/// Average ranks (1-based) with ties sharing their mean rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double variance(std::span<const double> v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

/// Classic potential scale reduction on equal-length chains.
inline RHat classic_rhat(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  std::vector<double> means(m);
  double w = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    means[j] = std::accumulate(chains[j].begin(), chains[j].end(), 0.0) / static_cast<double>(n);
    w += variance(chains[j]);
  }
  w /= static_cast<double>(m);
  const double b_over_n = variance(means);
  RHat r;
  if (!(w > 0.0)) {
    r.value = std::numeric_limits<double>::infinity();
    r.degenerate = true;
    return r;
  }
  const double nn = static_cast<double>(n);
  r.value = std::sqrt(((nn - 1.0) / nn * w + b_over_n) / w);
  return r;
}

}  // namespace detail

/// Rank-normalized split R-hat over chains of equal length (>= 2 chains, >= 4 draws).
inline RHat r_hat(const std::vector<std::vector<double>>& chains) {
  require(chains.size() >= 2, ErrorKind::InvalidArgument, "R-hat needs at least 2 chains");
  const std::size_t n = chains.front().size();
  require(n >= 4, ErrorKind::InvalidArgument, "R-hat needs at least 4 draws per chain");
  for (const auto& c : chains) require(c.size() == n, ErrorKind::InvalidArgument, "chains differ in length");
  const std::size_t half = n / 2;
  std::vector<std::vector<double>> split;
  for (const auto& c : chains) {
    split.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    split.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  std::vector<double> pooled;
  for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
  for (std::size_t i = 1; i < pooled.size(); ++i) {
    if (pooled[i] != pooled[0]) break;
    if (i + 1 == pooled.size()) return RHat{std::numeric_limits<double>::infinity(), true};
  }
  const auto ranks = detail::average_ranks(pooled);
  const double s = static_cast<double>(pooled.size());
  const boost::math::normal_distribution<double> unit;
  std::size_t pos = 0;
  for (auto& c : split) {
    for (auto& v : c) v = boost::math::quantile(unit, (ranks[pos++] - 0.375) / (s + 0.25));
  }
  return detail::classic_rhat(split);
}

// ---------------------------------------------------------------------------
// ESS

struct Ess {
  double value = 0.0;
  bool capped = false;      ///< estimate exceeded N (anticorrelated trace)
  bool degenerate = false;  ///< constant trace
};

/// N / tau with Geyer's initial monotone positive sequence; capped at N.
inline Ess ess(std::span<const double> trace) {
  const std::size_t n = trace.size();
  require(n >= 8, ErrorKind::InvalidArgument, "ESS needs at least 8 draws");
  const double mean = std::accumulate(trace.begin(), trace.end(), 0.0) / static_cast<double>(n);
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = trace[i] - mean;
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += c[i] * c[i + lag];
    return s / static_cast<double>(n);
  };
  const double c0 = autocov(0);
  Ess out;
  if (!(c0 > 0.0)) {
    out.value = static_cast<double>(n);
    out.degenerate = true;
    return out;
  }
  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = (autocov(2 * m) + autocov(2 * m + 1)) / c0;
    if (!(pair > 0.0)) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  const double nn = static_cast<double>(n);
  if (!(tau > 0.0) || nn / tau > nn) {
    out.value = nn;
    out.capped = true;
    return out;
  }
  out.value = nn / tau;
  return out;
}

struct ConvergenceStats {
  std::vector<RHat> r_hat;               ///< per parameter (empty with a single chain)
  std::vector<std::vector<Ess>> ess;     ///< [parameter][chain]
  std::size_t n_chains = 0, n_draws = 0;
};

/// draws[chain][iteration][parameter]
inline ConvergenceStats convergence_stats(const std::vector<std::vector<std::vector<double>>>& draws) {
  require(!draws.empty(), ErrorKind::InvalidArgument, "no chains");
  ConvergenceStats st;
  st.n_chains = draws.size();
  st.n_draws = draws.front().size();
  require(st.n_draws > 0, ErrorKind::InvalidArgument, "empty chain");
  const std::size_t np = draws.front().front().size();
  for (std::size_t p = 0; p < np; ++p) {
    std::vector<std::vector<double>> per_chain;
    for (const auto& chain : draws) {
      std::vector<double> v;
      for (const auto& row : chain) v.push_back(row[p]);
      per_chain.push_back(std::move(v));
    }
    if (per_chain.size() >= 2) st.r_hat.push_back(r_hat(per_chain));
    std::vector<Ess> e;
    for (const auto& v : per_chain) e.push_back(ess(v));
    st.ess.push_back(std::move(e));
  }
  return st;
}

// ---------------------------------------------------------------------------
// SBC

struct ChiSquare {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Pearson chi-square test of equal bin probabilities.
inline ChiSquare chi2_uniformity(std::span<const std::size_t> counts) {
  require(counts.size() >= 2, ErrorKind::InvalidArgument, "chi-square needs >= 2 bins");
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  require(total > 0.0, ErrorKind::InvalidArgument, "chi-square of an empty histogram");
  const double expected = total / static_cast<double>(counts.size());
  ChiSquare out;
  for (auto c : counts) out.statistic += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  out.p_value = boost::math::gamma_q(0.5 * static_cast<double>(counts.size() - 1), 0.5 * out.statistic);
  return out;
}

struct RankHistogram {
  std::size_t n_bins = 20;
  std::vector<std::size_t> counts;
  std::size_t total = 0;

  explicit RankHistogram(std::size_t bins = 20) : n_bins(bins), counts(bins, 0) {
    require(bins >= 2, ErrorKind::InvalidArgument, "rank histogram needs >= 2 bins");
  }

  /// rank in [0, L] among L draws.
  void add(std::size_t rank, std::size_t n_draws) {
    require(rank <= n_draws, ErrorKind::InvalidArgument, "rank exceeds draw count");
    const double u = (static_cast<double>(rank) + 0.5) / static_cast<double>(n_draws + 1);
    counts[std::min(n_bins - 1, static_cast<std::size_t>(u * static_cast<double>(n_bins)))] += 1;
    ++total;
  }

  ChiSquare chi2() const { return chi2_uniformity(counts); }
};

/// Rank of `truth` among draws; ties broken uniformly at random.
inline std::size_t sbc_rank(double truth, std::span<const double> draws, RngStream& rng) {
  std::size_t below = 0, equal = 0;
  for (double d : draws) {
    if (d < truth) ++below;
    else if (d == truth) ++equal;
  }
  return below + (equal ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(equal))) : 0);
}

/// One simulated run: truth phi* from the prior and the pipeline's posterior draws.
struct SbcDraws {
  std::vector<double> truth;
  std::vector<std::vector<double>> draws;  ///< [draw][parameter]
};

using SbcPipeline = std::function<SbcDraws(std::size_t run, RngStream& rng)>;

struct SbcConfig {
  std::size_t n_runs = 200;
  std::size_t n_draws = 99;  ///< L; with 20 bins L + 1 should be a multiple of 20
  std::size_t n_bins = 20;
  std::size_t thinning = 0;  ///< 0 derives the stride from the ESS of the first parameter
  std::size_t n_threads = 0;
  std::uint64_t seed = 0;
};

struct SbcResult {
  std::vector<RankHistogram> histograms;  ///< per parameter
  std::vector<ChiSquare> tests;
  std::size_t completed = 0, failed = 0;
  std::vector<std::string> failures;
};

inline SbcResult sbc(const SbcPipeline& pipeline, const SbcConfig& cfg) {
  require(cfg.n_runs >= 1, ErrorKind::Config, "SBC needs at least one run");
  require(cfg.n_draws >= 1, ErrorKind::Config, "SBC needs at least one draw per run");
  struct Slot {
    std::vector<std::size_t> ranks;
    std::string error;
  };
  std::vector<Slot> slots(cfg.n_runs);
  const RngStream master(cfg.seed, streams::kSbc);
  auto run_one = [&](std::size_t r) {
    RngStream rng = master.split(r);
    try {
      SbcDraws d = pipeline(r, rng);
      require(!d.draws.empty(), ErrorKind::Numeric, "pipeline returned no draws");
      const std::size_t np = d.truth.size();
      std::size_t stride = cfg.thinning;
      if (stride == 0) {
        stride = 1;
        if (d.draws.size() >= 8) {
          std::vector<double> first;
          for (const auto& row : d.draws) first.push_back(row[0]);
          const auto e = ess(first);
          if (!e.degenerate) stride = static_cast<std::size_t>(std::ceil(static_cast<double>(first.size()) / e.value));
        }
      }
      std::vector<std::vector<double>> kept;
      for (std::size_t i = 0; i < d.draws.size(); i += stride) kept.push_back(d.draws[i]);
      require(kept.size() >= cfg.n_draws, ErrorKind::Numeric,
              "pipeline produced " + std::to_string(kept.size()) + " thinned draws, need " + std::to_string(cfg.n_draws));
      kept.erase(kept.begin(), kept.end() - static_cast<std::ptrdiff_t>(cfg.n_draws));
      for (std::size_t p = 0; p < np; ++p) {
        std::vector<double> col;
        for (const auto& row : kept) col.push_back(row[p]);
        slots[r].ranks.push_back(sbc_rank(d.truth[p], col, rng));
      }
    } catch (const std::exception& e) {
      slots[r].ranks.clear();
      slots[r].error = e.what();
    }
  };
  const std::size_t n_threads =
      std::max<std::size_t>(1, cfg.n_threads ? cfg.n_threads : std::thread::hardware_concurrency());
  if (n_threads == 1) {
    for (std::size_t r = 0; r < cfg.n_runs; ++r) run_one(r);
  } else {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < n_threads; ++w) {
      workers.emplace_back([&, w] {
        for (std::size_t r = w; r < cfg.n_runs; r += n_threads) run_one(r);
      });
    }
  }
  SbcResult out;
  for (std::size_t r = 0; r < cfg.n_runs; ++r) {
    const auto& s = slots[r];
    if (!s.error.empty() || s.ranks.empty()) {
      ++out.failed;
      out.failures.push_back("run " + std::to_string(r) + ": " + s.error);
      continue;
    }
    if (out.histograms.empty()) out.histograms.assign(s.ranks.size(), RankHistogram(cfg.n_bins));
    for (std::size_t p = 0; p < s.ranks.size(); ++p) out.histograms[p].add(s.ranks[p], cfg.n_draws);
    ++out.completed;
  }
  for (const auto& h : out.histograms) out.tests.push_back(h.chi2());
  return out;
}

// ---------------------------------------------------------------------------
// Distances

inline double tv_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  require(a.size() == b.size(), ErrorKind::InvalidArgument, "distribution size mismatch");
  return 0.5 * (a - b).cwiseAbs().sum();
}

inline double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  require(p.size() == q.size(), ErrorKind::InvalidArgument, "distribution size mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

/// W1 between an empirical sample and a piecewise-uniform density on cells of
/// width h centred at `centres` with masses `mass`: integral of |F_emp - F_grid|.
inline double wasserstein1_vs_grid(std::vector<double> samples, std::span<const double> centres,
                                   std::span<const double> mass, double h) {
  require(!samples.empty() && centres.size() == mass.size() && !centres.empty(), ErrorKind::InvalidArgument,
          "bad W1 inputs");
  std::sort(samples.begin(), samples.end());
  const double lo = std::min(samples.front(), centres.front() - 0.5 * h);
  const double hi = std::max(samples.back(), centres.back() + 0.5 * h);
  std::vector<double> cdf_edges(centres.size() + 1, 0.0);
  for (std::size_t i = 0; i < mass.size(); ++i) cdf_edges[i + 1] = cdf_edges[i] + mass[i];
  auto grid_cdf = [&](double x) {
    if (h <= 0.0) {
      double c = 0.0;
      for (std::size_t i = 0; i < centres.size(); ++i) {
        if (centres[i] <= x) c += mass[i];
      }
      return c;
    }
    const double pos = (x - (centres.front() - 0.5 * h)) / h;
    if (pos <= 0.0) return 0.0;
    if (pos >= static_cast<double>(centres.size())) return cdf_edges.back();
    const auto i = static_cast<std::size_t>(pos);
    return cdf_edges[i] + (pos - static_cast<double>(i)) * mass[i];
  };
  std::vector<double> breaks{lo, hi};
  breaks.insert(breaks.end(), samples.begin(), samples.end());
  for (std::size_t i = 0; i <= centres.size(); ++i) breaks.push_back(centres.front() - 0.5 * h + static_cast<double>(i) * h);
  if (h <= 0.0) breaks.insert(breaks.end(), centres.begin(), centres.end());
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  const double n = static_cast<double>(samples.size());
  double w = 0.0;
  std::size_t below = 0;
  for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
    const double x0 = breaks[b], x1 = breaks[b + 1];
    if (x1 <= lo || x0 >= hi) continue;
    while (below < samples.size() && samples[below] <= x0) ++below;
    const double fe = static_cast<double>(below) / n;
    // grid CDF is linear on (x0, x1); integrate |fe - g(x)| exactly
    const double g0 = grid_cdf(x0);
    const double g1 = h > 0.0 ? grid_cdf(x1) : g0;
    const double d0 = fe - g0, d1 = fe - g1;
    const double len = x1 - x0;
    if (d0 * d1 >= 0.0) {
      w += 0.5 * (std::abs(d0) + std::abs(d1)) * len;
    } else {
      const double tz = d0 / (d0 - d1);
      w += 0.5 * (std::abs(d0) * tz + std::abs(d1) * (1.0 - tz)) * len;
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Stationary KL on finite tables

struct KlCheck {
  double formula = 0.0;  ///< E_p(phi) log E_p(x) [q(x|phi) / p(x|phi)]
  double direct = 0.0;   ///< KL[p(phi) || pi(phi)] from the power-iterated stationary law
  Eigen::VectorXd p_phi, pi_phi;
  double tv = 0.0;
  double pinsker_bound = 0.0;  ///< sqrt(KL / 2)
  double compatibility_residual = 0.0;
};

/// Max relative deviation of q(x|phi) / p(phi|x) from a rank-one product u(x) v(phi).
inline double compatibility_residual(const Eigen::MatrixXd& p_phi_given_x, const Eigen::MatrixXd& q_x_given_phi) {
  const Eigen::MatrixXd ratio = q_x_given_phi.cwiseQuotient(p_phi_given_x);
  const Eigen::MatrixXd logr = ratio.array().log().matrix();
  const Eigen::VectorXd row = logr.rowwise().mean();
  const Eigen::RowVectorXd col = logr.colwise().mean();
  const double all = logr.mean();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < logr.rows(); ++i) {
    for (Eigen::Index j = 0; j < logr.cols(); ++j) {
      worst = std::max(worst, std::abs(logr(i, j) - row[i] - col[j] + all));
    }
  }
  return worst;
}

/// p_joint(i, j) = p(phi_i, x_j); q_x_given_phi(i, j) = q(x_j | phi_i).
inline KlCheck kl_at_stationarity_discrete(const Eigen::MatrixXd& p_joint, const Eigen::MatrixXd& q_x_given_phi) {
  require((q_x_given_phi.array() > 0.0).all(), ErrorKind::InvalidArgument, "q(x|phi) must be strictly positive");
  const auto p = conditionals_of(p_joint);
  KlCheck out;
  out.compatibility_residual = compatibility_residual(p.phi_given_x, q_x_given_phi);
  out.p_phi = p.phi_marginal;
  for (Eigen::Index i = 0; i < p.phi_marginal.size(); ++i) {
    double inner = 0.0;
    for (Eigen::Index j = 0; j < p.x_marginal.size(); ++j) {
      inner += p.x_marginal[j] * q_x_given_phi(i, j) / p.x_given_phi(i, j);
    }
    out.formula += p.phi_marginal[i] * std::log(inner);
  }
  const auto st = discrete_gibbs_stationary(p.phi_given_x, q_x_given_phi);
  out.pi_phi = st.phi_marginal;
  out.direct = kl_divergence(out.p_phi, out.pi_phi);
  out.tv = tv_distance(out.p_phi, out.pi_phi);
  out.pinsker_bound = std::sqrt(0.5 * std::max(out.direct, 0.0));
  return out;
}

// ---------------------------------------------------------------------------
// Compatibility integral

enum class CompatibilityVerdict { Finite, LikelyDivergent };

struct CompatibilityResult {
  double value = 0.0;
  std::vector<double> refinements;  ///< integral at each refinement level
  CompatibilityVerdict verdict = CompatibilityVerdict::Finite;
};

struct CompatibilityGrid {
  double centre = 0.0;
  double half_width = 10.0;
  std::size_t points = 2001;
  std::size_t levels = 4;   ///< each level doubles the half-width and the point count
  double growth_tol = 1e-3;
};

/// integral over x of q(x) / p_rev(x) for fixed phi by the trapezoid rule on
/// growing domains; relative growth above tolerance at the last level marks divergence.
inline CompatibilityResult compatibility_integral(const std::function<double(double)>& q,
                                                  const std::function<double(double)>& p_rev,
                                                  const CompatibilityGrid& grid = {}) {
  require(grid.points >= 3 && grid.levels >= 2 && grid.half_width > 0.0, ErrorKind::InvalidArgument,
          "compatibility grid needs >= 3 points, >= 2 levels and positive width");
  CompatibilityResult out;
  double half = grid.half_width;
  std::size_t pts = grid.points;
  for (std::size_t level = 0; level < grid.levels; ++level) {
    const double h = 2.0 * half / static_cast<double>(pts - 1);
    double acc = 0.0;
    for (std::size_t i = 0; i < pts; ++i) {
      const double x = grid.centre - half + static_cast<double>(i) * h;
      const double qv = q(x);
      const double pv = p_rev(x);
      require(std::isfinite(qv) && qv >= 0.0 && std::isfinite(pv) && pv >= 0.0, ErrorKind::InvalidArgument,
              "densities must be finite and non-negative");
      if (qv > 0.0 && pv == 0.0) {
        fail(ErrorKind::IncompatibleSupport,
             "incompatible support: p(phi | x) vanishes where q(x | phi) > 0 (x = " + std::to_string(x) + ")");
      }
      if (qv == 0.0) continue;
      const double w = (i == 0 || i + 1 == pts) ? 0.5 : 1.0;
      acc += w * qv / pv;
    }
    out.refinements.push_back(acc * h);
    half *= 2.0;
    pts = 2 * pts - 1;
  }
  out.value = out.refinements.back();
  const double prev = out.refinements[out.refinements.size() - 2];
  const double growth = std::abs(out.value - prev) / std::max(std::abs(prev), std::numeric_limits<double>::min());
  if (!std::isfinite(out.value) || growth > grid.growth_tol) out.verdict = CompatibilityVerdict::LikelyDivergent;
  return out;
}

}  // namespace gdiff
