#pragma once

// Hamiltonian Monte Carlo on a compact box.
//
// Leapfrog position updates are event-driven: a coordinate that reaches a face
// is stopped there and its velocity component is reversed (elastic collision),
// then the flight continues for the remaining time. Step size is tuned by
// Nesterov dual averaging and the inverse mass matrix is estimated from the
// warm-up draws of iterations (P/4, 3P/4].

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/field.hpp"
#include "gdiff/noise_model.hpp"
#include "gdiff/rng.hpp"

namespace gdiff {

struct HmcConfig {
  double target_accept = 0.65;
  double gamma = 0.05;
  double t0 = 10.0;
  double kappa = 0.75;
  std::size_t warmup_iters = 300;
  int steps_min = 5;
  int steps_max = 15;
  double initial_step = 0.0;  ///< 0 runs the doubling heuristic
  double max_step = 1e3;
  bool dense_mass = true;
  bool adapt_mass = true;
  double divergence_threshold = 1000.0;
  std::size_t transitions_per_draw = 1;
  std::size_t max_wall_hits = 1000000;

  void validate() const {
    require(target_accept > 0.0 && target_accept < 1.0, ErrorKind::Config, "target_accept must be in (0, 1)");
    require(steps_min >= 1 && steps_max >= steps_min, ErrorKind::Config, "steps range must satisfy 1 <= min <= max");
    require(gamma > 0.0 && t0 >= 0.0 && kappa > 0.0 && kappa <= 1.0, ErrorKind::Config, "bad dual averaging constants");
    require(transitions_per_draw >= 1, ErrorKind::Config, "transitions_per_draw must be >= 1");
  }
};

/// Closed box for the HMC coordinates; every axis must have positive width.
struct Bounds {
  std::vector<double> lower, upper;

  std::size_t dim() const { return lower.size(); }
  bool contains(std::span<const double> q) const {
    for (std::size_t i = 0; i < dim(); ++i) {
      if (!(q[i] >= lower[i] && q[i] <= upper[i])) return false;
    }
    return true;
  }
  void validate() const {
    require(lower.size() == upper.size() && !lower.empty(), ErrorKind::InvalidArgument, "bounds dimension mismatch");
    for (std::size_t i = 0; i < dim(); ++i) {
      require(lower[i] < upper[i], ErrorKind::InvalidArgument, "HMC bounds need positive width on every axis");
    }
  }
};

/// log density and gradient; throws gdiff::Error outside its domain.
using LogDensity = std::function<double(std::span<const double> q, std::span<double> grad)>;

class MassMatrix {
 public:
  MassMatrix() = default;
  explicit MassMatrix(std::size_t dim) : inv_(Eigen::MatrixXd::Identity(dim, dim)) { factor(); }
  explicit MassMatrix(Eigen::MatrixXd inverse_mass) : inv_(std::move(inverse_mass)) { factor(); }

  std::size_t dim() const { return static_cast<std::size_t>(inv_.rows()); }
  const Eigen::MatrixXd& inverse() const { return inv_; }

  Eigen::VectorXd velocity(const Eigen::VectorXd& p) const { return inv_ * p; }
  double kinetic(const Eigen::VectorXd& p) const { return 0.5 * p.dot(inv_ * p); }

  /// p ~ N(0, M) with M = inv^{-1}: solve L^T p = w where inv = L L^T.
  Eigen::VectorXd sample_momentum(RngStream& rng) const {
    Eigen::VectorXd w(dim());
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = rng.normal();
    return chol_.matrixU().solve(w);
  }

  /// Elastic reflection off the face normal to axis i: reverses v_i, keeps p^T inv p.
  void reflect(Eigen::VectorXd& p, std::size_t i) const {
    const Eigen::VectorXd v = inv_ * p;
    p[static_cast<Eigen::Index>(i)] -= 2.0 * v[static_cast<Eigen::Index>(i)] / inv_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
  }

 private:
  void factor() {
    chol_.compute(inv_);
    require(chol_.info() == Eigen::Success, ErrorKind::Numeric, "inverse mass matrix is not positive definite");
  }

  Eigen::MatrixXd inv_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
};

struct LeapfrogResult {
  Eigen::VectorXd q, p;
  double log_density = 0.0;
  Eigen::VectorXd grad;
  std::size_t wall_hits = 0;
  std::vector<std::size_t> hits_per_axis;
  bool divergent = false;
};

namespace detail {

inline bool evaluate(const LogDensity& target, const Eigen::VectorXd& q, double& logp, Eigen::VectorXd& grad) {
  grad.resize(q.size());
  try {
    logp = target(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())),
                  std::span<double>(grad.data(), static_cast<std::size_t>(grad.size())));
  } catch (const Error&) {
    return false;
  }
  return std::isfinite(logp) && grad.allFinite();
}

/// Free flight for `duration` with reflections; false when the hit budget is exhausted.
inline bool reflective_drift(Eigen::VectorXd& q, Eigen::VectorXd& p, double duration, const MassMatrix& mass,
                             const Bounds& box, LeapfrogResult& res, std::size_t max_hits) {
  const auto d = static_cast<std::size_t>(q.size());
  for (std::size_t i = 0; i < d; ++i) q[static_cast<Eigen::Index>(i)] = std::clamp(q[static_cast<Eigen::Index>(i)], box.lower[i], box.upper[i]);
  double remaining = duration;
  while (remaining > 0.0) {
    const Eigen::VectorXd v = mass.velocity(p);
    double first = remaining;
    std::size_t axis = d;
    for (std::size_t i = 0; i < d; ++i) {
      const double vi = v[static_cast<Eigen::Index>(i)];
      const double qi = q[static_cast<Eigen::Index>(i)];
      double tau = std::numeric_limits<double>::infinity();
      if (vi > 0.0) tau = (box.upper[i] - qi) / vi;
      else if (vi < 0.0) tau = (box.lower[i] - qi) / vi;
      if (tau < first) {
        first = tau;
        axis = i;
      }
    }
    q += first * v;
    remaining -= first;
    if (axis == d) break;
    const auto ai = static_cast<Eigen::Index>(axis);
    q[ai] = v[ai] > 0.0 ? box.upper[axis] : box.lower[axis];
    mass.reflect(p, axis);
    ++res.wall_hits;
    ++res.hits_per_axis[axis];
    if (res.wall_hits > max_hits) return false;
  }
  for (std::size_t i = 0; i < d; ++i) q[static_cast<Eigen::Index>(i)] = std::clamp(q[static_cast<Eigen::Index>(i)], box.lower[i], box.upper[i]);
  return true;
}

}  // namespace detail

/// n_steps leapfrog steps of size `step` from (q, p) with cached log density/gradient.
inline LeapfrogResult leapfrog_reflective(const Eigen::VectorXd& q0, const Eigen::VectorXd& p0, double logp0,
                                          const Eigen::VectorXd& grad0, const LogDensity& target, int n_steps,
                                          double step, const MassMatrix& mass, const Bounds& box,
                                          std::size_t max_hits = 1000000) {
  LeapfrogResult r;
  r.q = q0;
  r.p = p0;
  r.grad = grad0;
  r.log_density = logp0;
  r.hits_per_axis.assign(static_cast<std::size_t>(q0.size()), 0);
  for (int s = 0; s < n_steps; ++s) {
    r.p += 0.5 * step * r.grad;  // potential is -log density
    if (!detail::reflective_drift(r.q, r.p, step, mass, box, r, max_hits)) {
      r.divergent = true;
      return r;
    }
    if (!detail::evaluate(target, r.q, r.log_density, r.grad)) {
      r.divergent = true;
      return r;
    }
    r.p += 0.5 * step * r.grad;
  }
  return r;
}

/// Nesterov dual averaging of log step size.
class DualAveraging {
 public:
  DualAveraging() = default;
  DualAveraging(const HmcConfig& cfg, double step) : cfg_(cfg) { restart(step); }

  void restart(double step) {
    mu_ = std::log(10.0 * step);
    hbar_ = 0.0;
    log_avg_ = 0.0;
    m_ = 0;
    log_step_ = std::log(step);
  }

  double update(double accept_prob) {
    ++m_;
    const double m = static_cast<double>(m_);
    const double eta = 1.0 / (m + cfg_.t0);
    hbar_ = (1.0 - eta) * hbar_ + eta * (cfg_.target_accept - accept_prob);
    log_step_ = std::min(mu_ - std::sqrt(m) / cfg_.gamma * hbar_, std::log(cfg_.max_step));
    const double w = std::pow(m, -cfg_.kappa);
    log_avg_ = w * log_step_ + (1.0 - w) * log_avg_;
    return std::exp(log_step_);
  }

  double step() const { return std::exp(log_step_); }
  double averaged_step() const { return m_ ? std::exp(log_avg_) : std::exp(log_step_); }
  std::size_t iterations() const { return m_; }

 private:
  HmcConfig cfg_;
  double mu_ = 0.0, hbar_ = 0.0, log_avg_ = 0.0, log_step_ = 0.0;
  std::size_t m_ = 0;
};

struct MassEstimate {
  Eigen::MatrixXd inverse_mass;
  bool fell_back_to_diagonal = false;
};

/// Unbiased sample covariance of the window plus 1e-8 * trace / dim jitter.
inline MassEstimate estimate_inverse_mass(std::span<const Eigen::VectorXd> samples, bool dense) {
  require(samples.size() >= 2, ErrorKind::InvalidArgument, "mass estimation needs >= 2 samples");
  const Eigen::Index d = samples.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& s : samples) cov += (s - mean) * (s - mean).transpose();
  cov /= static_cast<double>(samples.size() - 1);
  const double jitter = 1e-8 * cov.trace() / static_cast<double>(d);
  MassEstimate est;
  if (dense) {
    Eigen::MatrixXd c = cov;
    c.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() == Eigen::Success && c.allFinite() && jitter > 0.0) {
      est.inverse_mass = c;
      return est;
    }
    est.fell_back_to_diagonal = true;
  }
  Eigen::MatrixXd diag = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double v = cov(i, i) + jitter;
    diag(i, i) = (std::isfinite(v) && v > 0.0) ? v : 1.0;
  }
  est.inverse_mass = diag;
  return est;
}

struct HmcStepInfo {
  bool accepted = false;
  double accept_prob = 0.0;
  double delta_H = 0.0;
  bool divergent = false;
  int n_leapfrog = 0;
  std::size_t wall_hits = 0;
};

struct HmcState {
  Eigen::VectorXd q;
  double log_density = 0.0;
  Eigen::VectorXd grad;
  double step_size = 0.1;
  MassMatrix mass;
  DualAveraging dual;
  std::size_t iteration = 0;
};

inline HmcState make_hmc_state(const LogDensity& target, std::span<const double> q0, const Bounds& box) {
  box.validate();
  require(q0.size() == box.dim(), ErrorKind::InvalidArgument, "initial position dimension mismatch");
  require(box.contains(q0), ErrorKind::OutOfDomain, "initial position outside the box");
  HmcState st;
  st.q = Eigen::Map<const Eigen::VectorXd>(q0.data(), static_cast<Eigen::Index>(q0.size()));
  st.mass = MassMatrix(box.dim());
  require(detail::evaluate(target, st.q, st.log_density, st.grad), ErrorKind::Numeric,
          "log density is not finite at the initial position");
  return st;
}

/// One Metropolis-corrected transition with full momentum refresh.
inline HmcStepInfo hmc_step(HmcState& st, const LogDensity& target, const HmcConfig& cfg, const Bounds& box,
                            RngStream& rng) {
  HmcStepInfo info;
  const Eigen::VectorXd p0 = st.mass.sample_momentum(rng);
  info.n_leapfrog = static_cast<int>(rng.uniform_int(cfg.steps_min, cfg.steps_max));
  const double h0 = -st.log_density + st.mass.kinetic(p0);
  auto r = leapfrog_reflective(st.q, p0, st.log_density, st.grad, target, info.n_leapfrog, st.step_size, st.mass, box,
                               cfg.max_wall_hits);
  info.wall_hits = r.wall_hits;
  const double h1 = -r.log_density + st.mass.kinetic(r.p);
  info.delta_H = h1 - h0;
  if (r.divergent || !std::isfinite(info.delta_H) || std::abs(info.delta_H) > cfg.divergence_threshold) {
    info.divergent = true;
    info.accept_prob = 0.0;
  } else {
    info.accept_prob = std::min(1.0, std::exp(-info.delta_H));
  }
  const double u = rng.uniform();
  if (!info.divergent && u < info.accept_prob) {
    st.q = r.q;
    st.log_density = r.log_density;
    st.grad = r.grad;
    info.accepted = true;
  }
  ++st.iteration;
  return info;
}

/// Doubling/halving heuristic for a first step size with acceptance near 1/2.
inline double find_reasonable_step(const HmcState& st, const LogDensity& target, const HmcConfig& cfg,
                                   const Bounds& box, RngStream& rng) {
  double step = 1.0;
  auto accept_at = [&](double eps) {
    const Eigen::VectorXd p0 = st.mass.sample_momentum(rng);
    const double h0 = -st.log_density + st.mass.kinetic(p0);
    auto r = leapfrog_reflective(st.q, p0, st.log_density, st.grad, target, 1, eps, st.mass, box, cfg.max_wall_hits);
    if (r.divergent) return 0.0;
    const double dh = -r.log_density + st.mass.kinetic(r.p) - h0;
    return std::isfinite(dh) ? std::min(1.0, std::exp(-dh)) : 0.0;
  };
  double a = accept_at(step);
  const double dir = a > 0.5 ? 1.0 : -1.0;
  for (int it = 0; it < 60; ++it) {
    if (dir > 0 ? !(a > 0.5) : !(a < 0.5)) break;
    const double next = step * std::pow(2.0, dir);
    if (next > cfg.max_step || next < 1e-12) break;
    step = next;
    a = accept_at(step);
  }
  return step;
}

struct WarmupReport {
  double step_size = 0.0;
  Eigen::MatrixXd inverse_mass;
  bool mass_fallback = false;
  double mean_accept = 0.0;
  std::vector<Eigen::VectorXd> draws;
  std::vector<double> step_history;
};

/// P warm-up transitions: dual averaging throughout, mass estimated at floor(3P/4)
/// from iterations (floor(P/4), floor(3P/4)], dual averaging restarted after it.
inline WarmupReport hmc_warmup(HmcState& st, const LogDensity& target, const HmcConfig& cfg, const Bounds& box,
                               RngStream& rng) {
  cfg.validate();
  WarmupReport rep;
  const std::size_t P = cfg.warmup_iters;
  st.step_size = cfg.initial_step > 0.0 ? cfg.initial_step : find_reasonable_step(st, target, cfg, box, rng);
  st.dual = DualAveraging(cfg, st.step_size);
  const std::size_t lo = P / 4, hi = (3 * P) / 4;
  double acc = 0.0;
  for (std::size_t m = 1; m <= P; ++m) {
    const auto info = hmc_step(st, target, cfg, box, rng);
    acc += info.accept_prob;
    st.step_size = st.dual.update(info.accept_prob);
    rep.draws.push_back(st.q);
    rep.step_history.push_back(st.step_size);
    if (cfg.adapt_mass && m == hi && hi > lo + 1) {
      auto est = estimate_inverse_mass(std::span<const Eigen::VectorXd>(rep.draws).subspan(lo, hi - lo), cfg.dense_mass);
      st.mass = MassMatrix(est.inverse_mass);
      rep.mass_fallback = est.fell_back_to_diagonal;
      st.step_size = cfg.initial_step > 0.0 ? st.step_size : find_reasonable_step(st, target, cfg, box, rng);
      st.dual.restart(st.step_size);
    }
  }
  if (P > 0) st.step_size = st.dual.averaged_step();
  rep.step_size = st.step_size;
  rep.inverse_mass = st.mass.inverse();
  rep.mean_accept = P ? acc / static_cast<double>(P) : 0.0;
  return rep;
}

struct HmcTrace {
  std::vector<Eigen::VectorXd> draws;
  std::vector<HmcStepInfo> steps;
  double step_size = 0.0;
  Eigen::MatrixXd inverse_mass;

  double mean_accept_prob() const {
    if (steps.empty()) return 0.0;
    double s = 0.0;
    for (const auto& i : steps) s += i.accept_prob;
    return s / static_cast<double>(steps.size());
  }
};

/// Generic driver: optional warm-up, then n_samples draws.
inline HmcTrace run_hmc(const LogDensity& target, std::span<const double> q0, const Bounds& box, std::size_t n_samples,
                        const HmcConfig& cfg, RngStream& rng, bool warmup = true) {
  cfg.validate();
  HmcState st = make_hmc_state(target, q0, box);
  if (warmup) {
    hmc_warmup(st, target, cfg, box, rng);
  } else {
    st.step_size = cfg.initial_step > 0.0 ? cfg.initial_step : find_reasonable_step(st, target, cfg, box, rng);
  }
  HmcTrace trace;
  for (std::size_t i = 0; i < n_samples; ++i) {
    for (std::size_t k = 0; k < cfg.transitions_per_draw; ++k) trace.steps.push_back(hmc_step(st, target, cfg, box, rng));
    trace.draws.push_back(st.q);
  }
  trace.step_size = st.step_size;
  trace.inverse_mass = st.mass.inverse();
  return trace;
}

// ---------------------------------------------------------------------------
// Noise-parameter posterior p(phi | eps) on the prior box

/// log p(eps | phi) + log prior on the free (non-degenerate) axes of the box.
class NoisePosterior {
 public:
  NoisePosterior(const Field& eps, PowerSpectrum spectrum, PriorBox box, bool use_likelihood = true)
      : like_(eps, std::move(spectrum)), box_(std::move(box)), use_likelihood_(use_likelihood) {
    require(box_.dim() == 1 + like_.spectrum().n_spectral(), ErrorKind::InvalidArgument,
            "prior box dimension does not match the noise family");
    for (std::size_t i = 0; i < box_.dim(); ++i) {
      if (!box_.degenerate(i)) free_.push_back(i);
    }
  }

  const PriorBox& box() const { return box_; }
  const std::vector<std::size_t>& free_axes() const { return free_; }

  Bounds bounds() const {
    Bounds b;
    for (auto i : free_) {
      b.lower.push_back(box_.lower()[i]);
      b.upper.push_back(box_.upper()[i]);
    }
    return b;
  }

  NoiseParams expand(std::span<const double> q, std::span<const double> anchor) const {
    std::vector<double> full(anchor.begin(), anchor.end());
    for (std::size_t j = 0; j < free_.size(); ++j) full[free_[j]] = q[j];
    for (std::size_t i = 0; i < box_.dim(); ++i) {
      if (box_.degenerate(i)) full[i] = box_.lower()[i];
    }
    return NoiseParams::from_vector(full);
  }

  std::vector<double> reduce(const NoiseParams& p) const {
    const auto v = p.to_vector();
    std::vector<double> q;
    for (auto i : free_) q.push_back(v[i]);
    return q;
  }

  double log_density(const NoiseParams& p, std::span<double> grad_full = {}) const {
    require(box_.contains(p), ErrorKind::OutOfDomain, "parameters outside the prior box");
    if (!use_likelihood_) {
      if (!grad_full.empty()) std::fill(grad_full.begin(), grad_full.end(), 0.0);
      return box_.log_density();
    }
    return like_.evaluate(p, grad_full) + box_.log_density();
  }

  LogDensity target() const {
    return [this](std::span<const double> q, std::span<double> grad) {
      std::vector<double> anchor(box_.dim(), 0.0);
      const NoiseParams p = expand(q, anchor);
      std::vector<double> g(box_.dim(), 0.0);
      const double lp = log_density(p, g);
      for (std::size_t j = 0; j < free_.size(); ++j) grad[j] = g[free_[j]];
      return lp;
    };
  }

 private:
  NoiseLikelihood like_;
  PriorBox box_;
  bool use_likelihood_;
  std::vector<std::size_t> free_;
};

struct ParamTrace {
  std::vector<NoiseParams> draws;
  std::vector<HmcStepInfo> steps;
  double step_size = 0.0;
  Eigen::MatrixXd inverse_mass;
};

/// HMC draws from p(phi | eps) prop. to exp(loglik) on the prior box.
inline ParamTrace run_hmc(const Field& eps, const NoiseParams& init, const PowerSpectrum& spectrum, const PriorBox& prior,
                          std::size_t n_samples, const HmcConfig& cfg, RngStream& rng, bool use_likelihood = true) {
  require(prior.contains(init), ErrorKind::OutOfDomain, "initial parameters outside the prior box");
  NoisePosterior post(eps, spectrum, prior, use_likelihood);
  ParamTrace out;
  if (post.free_axes().empty()) {
    out.draws.assign(n_samples, post.expand({}, init.to_vector()));
    return out;
  }
  const auto q0 = post.reduce(init);
  auto trace = run_hmc(post.target(), q0, post.bounds(), n_samples, cfg, rng, true);
  for (const auto& q : trace.draws) {
    out.draws.push_back(post.expand(std::span<const double>(q.data(), static_cast<std::size_t>(q.size())), init.to_vector()));
  }
  out.steps = std::move(trace.steps);
  out.step_size = trace.step_size;
  out.inverse_mass = trace.inverse_mass;
  return out;
}

/// Per-chain HMC whose tuning persists across Gibbs iterations: the first call
/// runs the warm-up, later calls reuse the frozen step size and mass matrix.
class HmcSampler {
 public:
  explicit HmcSampler(HmcConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  bool warmed_up() const { return warmed_up_; }
  double step_size() const { return step_; }
  const Eigen::MatrixXd& inverse_mass() const { return mass_.inverse(); }
  const WarmupReport& warmup_report() const { return warmup_; }

  struct Draw {
    NoiseParams params;
    double accept_prob = 1.0;
    double delta_H = 0.0;
    bool divergent = false;
  };

  Draw draw(const NoisePosterior& post, const NoiseParams& current, RngStream& rng) {
    Draw d;
    d.params = post.expand(post.reduce(current), current.to_vector());
    if (post.free_axes().empty()) return d;
    const auto target = post.target();
    const auto bounds = post.bounds();
    const auto q0 = post.reduce(d.params);
    HmcState st = make_hmc_state(target, q0, bounds);
    if (!warmed_up_) {
      warmup_ = hmc_warmup(st, target, cfg_, bounds, rng);
      step_ = st.step_size;
      mass_ = st.mass;
      warmed_up_ = true;
    } else {
      st.step_size = step_;
      st.mass = mass_;
    }
    double acc = 0.0, dh = 0.0;
    for (std::size_t k = 0; k < cfg_.transitions_per_draw; ++k) {
      const auto info = hmc_step(st, target, cfg_, bounds, rng);
      acc += info.accept_prob;
      dh = info.delta_H;
      d.divergent = d.divergent || info.divergent;
    }
    d.accept_prob = acc / static_cast<double>(cfg_.transitions_per_draw);
    d.delta_H = dh;
    d.params = post.expand(std::span<const double>(st.q.data(), static_cast<std::size_t>(st.q.size())),
                           d.params.to_vector());
    return d;
  }

 private:
  HmcConfig cfg_;
  bool warmed_up_ = false;
  double step_ = 0.0;
  MassMatrix mass_;
  WarmupReport warmup_;
};

}  // namespace gdiff
