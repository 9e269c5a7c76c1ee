#pragma once

// Noise predictors m(z_t, t, spectral) ~ E[eps' | z_t], where
// z_t = a(t) x + b(t) eps' and eps' ~ N(0, F^T D F).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/field.hpp"
#include "gdiff/noise_model.hpp"
#include "gdiff/rng.hpp"
#include "gdiff/schedule.hpp"

namespace gdiff {

class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;

  /// Estimate of eps' from z at diffusion time t under spectral parameters.
  virtual Field predict(const Field& z, double t, std::span<const double> spectral) const = 0;

  virtual const Shape& dims() const = 0;

 protected:
  void check_input(const Field& z) const {
    require(z.dims() == dims(), ErrorKind::InvalidArgument,
            "predictor expects " + shape_string(dims()) + ", got " + shape_string(z.dims()));
  }
};

inline Field predict(const NoisePredictor& m, const Field& z, double t, std::span<const double> spectral) {
  return m.predict(z, t, spectral);
}

/// Exact E[eps' | z_t] when x ~ N(mu, F^T diag(P) F).
///
/// Per mode: b S (z^ - a mu^) / (a^2 P + b^2 S).
class GaussianPriorPredictor final : public NoisePredictor {
 public:
  GaussianPriorPredictor(Field prior_mean, std::vector<double> prior_spectrum, PowerSpectrum noise,
                         DiffusionSchedule schedule)
      : mean_(std::move(prior_mean)),
        mean_hat_(dft(mean_)),
        prior_(std::move(prior_spectrum)),
        noise_(std::move(noise)),
        schedule_(schedule) {
    require(prior_.size() == mean_.size(), ErrorKind::InvalidArgument, "prior spectrum length mismatch");
    for (double p : prior_) require(std::isfinite(p) && p >= 0.0, ErrorKind::InvalidArgument, "prior power must be >= 0");
  }

  const Shape& dims() const override { return mean_.dims(); }
  const Field& prior_mean() const { return mean_; }
  const std::vector<double>& prior_spectrum() const { return prior_; }
  const DiffusionSchedule& schedule() const { return schedule_; }

  Field predict(const Field& z, double t, std::span<const double> spectral) const override {
    check_input(z);
    const auto v = schedule_.eval(t);
    require(v.b > 0.0, ErrorKind::OutOfDomain, "prediction at t = 0 divides by b = 0");
    const auto s = spectrum_eval(noise_, spectral, z.dims());
    auto zh = dft(z);
    for (std::size_t k = 0; k < zh.coeffs.size(); ++k) {
      const double denom = v.a * v.a * prior_[k] + v.b * v.b * s[k];
      zh.coeffs[k] = v.b * s[k] * (zh.coeffs[k] - v.a * mean_hat_.coeffs[k]) / denom;
    }
    return idft(zh);
  }

 private:
  Field mean_;
  SpectralField mean_hat_;
  std::vector<double> prior_;
  PowerSpectrum noise_;
  DiffusionSchedule schedule_;
};

/// Bin layout of the affine predictor: time x spectral-index x |k|-shell.
struct AffineBins {
  Shape dims;
  std::size_t n_time_bins = 32;
  double spectral_lo = 0.0;
  double spectral_hi = 0.0;
  std::size_t n_spectral_bins = 8;

  void validate() const {
    validate_shape(dims);
    require(n_time_bins >= 1 && n_spectral_bins >= 1, ErrorKind::InvalidArgument, "bin counts must be >= 1");
    require(spectral_lo <= spectral_hi, ErrorKind::InvalidArgument, "spectral bin range reversed");
  }

  std::size_t effective_spectral_bins() const { return spectral_hi > spectral_lo ? n_spectral_bins : 1; }

  std::size_t time_bin(double t) const {
    const auto b = static_cast<std::size_t>(std::max(0.0, std::floor(t * static_cast<double>(n_time_bins))));
    return std::min(b, n_time_bins - 1);
  }

  std::size_t spectral_bin(std::span<const double> spectral) const {
    const std::size_t n = effective_spectral_bins();
    if (n == 1 || spectral.empty()) return 0;
    const double u = (spectral[0] - spectral_lo) / (spectral_hi - spectral_lo);
    const auto b = static_cast<long>(std::floor(u * static_cast<double>(n)));
    return static_cast<std::size_t>(std::clamp<long>(b, 0, static_cast<long>(n) - 1));
  }

  std::pair<double, double> time_bin_range(std::size_t tb) const {
    const double w = 1.0 / static_cast<double>(n_time_bins);
    return {w * static_cast<double>(tb), w * static_cast<double>(tb + 1)};
  }

  std::pair<double, double> spectral_bin_range(std::size_t sb) const {
    const std::size_t n = effective_spectral_bins();
    const double w = (spectral_hi - spectral_lo) / static_cast<double>(n);
    return {spectral_lo + w * static_cast<double>(sb), spectral_lo + w * static_cast<double>(sb + 1)};
  }
};

/// Piecewise-constant per-mode affine map: m^(k) = gain * z^(k) + bias.
///
/// The bias is real and added to every coefficient of its shell, which keeps
/// the output spectrum Hermitian. For Gaussian data the optimal predictor is
/// exactly of this form within each bin.
class AffineSpectralPredictor final : public NoisePredictor {
 public:
  explicit AffineSpectralPredictor(AffineBins bins) : bins_(std::move(bins)), grid_(validated(bins_).dims) {
    n_shells_ = grid_.n_shells();
    shell_of_.resize(grid_.size());
    for (std::size_t i = 0; i < grid_.size(); ++i) shell_of_[i] = grid_.shell(i);
    gain_.assign(n_coefficients(), 0.0);
    bias_.assign(n_coefficients(), 0.0);
  }

  static AffineSpectralPredictor identity(AffineBins bins) {
    AffineSpectralPredictor p(std::move(bins));
    std::fill(p.gain_.begin(), p.gain_.end(), 1.0);
    return p;
  }

  const Shape& dims() const override { return bins_.dims; }
  const AffineBins& bins() const { return bins_; }
  const ModeGrid& modes() const { return grid_; }
  std::size_t n_shells() const { return n_shells_; }
  std::size_t shell_of(std::size_t mode) const { return shell_of_[mode]; }
  std::size_t n_coefficients() const { return bins_.n_time_bins * bins_.effective_spectral_bins() * n_shells_; }

  std::size_t index(std::size_t tb, std::size_t sb, std::size_t shell) const {
    return (tb * bins_.effective_spectral_bins() + sb) * n_shells_ + shell;
  }

  std::vector<double>& gains() { return gain_; }
  std::vector<double>& biases() { return bias_; }
  const std::vector<double>& gains() const { return gain_; }
  const std::vector<double>& biases() const { return bias_; }

  /// Apply in Fourier space; returns the predicted coefficients.
  void predict_spectral(std::span<const Complex> zh, double t, std::span<const double> spectral,
                        std::span<Complex> out) const {
    const std::size_t base = index(bins_.time_bin(t), bins_.spectral_bin(spectral), 0);
    for (std::size_t k = 0; k < zh.size(); ++k) {
      const std::size_t j = base + shell_of_[k];
      out[k] = gain_[j] * zh[k] + bias_[j];
    }
  }

  Field predict(const Field& z, double t, std::span<const double> spectral) const override {
    check_input(z);
    require(t >= 0.0 && t <= 1.0, ErrorKind::OutOfDomain, "prediction time outside [0, 1]");
    auto zh = dft(z);
    predict_spectral(zh.coeffs, t, spectral, zh.coeffs);
    return idft(zh);
  }

 private:
  static const AffineBins& validated(const AffineBins& b) {
    b.validate();
    return b;
  }

  AffineBins bins_;
  ModeGrid grid_;
  std::size_t n_shells_ = 0;
  std::vector<std::size_t> shell_of_;
  std::vector<double> gain_;
  std::vector<double> bias_;
};

// ---------------------------------------------------------------------------
// Training

/// One regression example: predict `target` from `z` at (t, spectral).
struct TrainingSample {
  Field z;
  double t = 0.0;
  std::vector<double> spectral;
  Field target;
};

/// Mean squared loss (1/n) sum ||m(z) - target||^2 and its exact gradient.
inline double affine_loss(const AffineSpectralPredictor& m, std::span<const TrainingSample> samples,
                          std::vector<double>* grad_gain = nullptr, std::vector<double>* grad_bias = nullptr) {
  require(!samples.empty(), ErrorKind::InvalidArgument, "loss over an empty sample set");
  if (grad_gain) grad_gain->assign(m.n_coefficients(), 0.0);
  if (grad_bias) grad_bias->assign(m.n_coefficients(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  double loss = 0.0;
  std::vector<Complex> pred;
  for (const auto& s : samples) {
    const auto zh = dft(s.z);
    const auto th = dft(s.target);
    pred.resize(zh.size());
    m.predict_spectral(zh.coeffs, s.t, s.spectral, pred);
    const std::size_t base = m.index(m.bins().time_bin(s.t), m.bins().spectral_bin(s.spectral), 0);
    for (std::size_t k = 0; k < zh.size(); ++k) {
      const Complex r = pred[k] - th.coeffs[k];
      loss += std::norm(r) * inv_n;
      const std::size_t j = base + m.shell_of(k);
      if (grad_gain) (*grad_gain)[j] += 2.0 * (r * std::conj(zh.coeffs[k])).real() * inv_n;
      if (grad_bias) (*grad_bias)[j] += 2.0 * r.real() * inv_n;
    }
  }
  return loss;
}

struct TrainConfig {
  std::size_t epochs = 8;
  std::size_t samples_per_epoch = 0;  ///< 0 means one pass over the dataset
  std::size_t batch_size = 64;
  double step_size = 0.0;             ///< 0 selects from step_candidates on held-out loss
  std::vector<double> step_candidates{0.05, 0.2, 0.5};
  double momentum = 0.0;
  bool antithetic = true;             ///< pair every eps' with -eps'
  double tail_start = 0.25;           ///< iterate averaging starts at this fraction of epochs
  std::size_t heldout_samples = 256;
  std::uint64_t seed = 0;
};

/// Full optimizer state; a checkpoint is exactly this plus the predictor.
struct TrainState {
  AffineSpectralPredictor predictor;
  std::vector<double> vel_gain, vel_bias;
  std::vector<double> curv_sum, curv_count;
  std::vector<double> avg_gain, avg_bias;
  double avg_count = 0.0;
  std::size_t epoch = 0;
  double step_size = 0.0;
  std::vector<double> epoch_loss;
  std::vector<double> samples_per_bin;

  explicit TrainState(AffineSpectralPredictor p) : predictor(std::move(p)) {
    const std::size_t n = predictor.n_coefficients();
    vel_gain.assign(n, 0.0);
    vel_bias.assign(n, 0.0);
    curv_sum.assign(n, 0.0);
    curv_count.assign(n, 0.0);
    avg_gain.assign(n, 0.0);
    avg_bias.assign(n, 0.0);
    samples_per_bin.assign(n, 0.0);
  }

  /// Tail-averaged coefficients once averaging has begun, else the iterate.
  AffineSpectralPredictor averaged() const {
    AffineSpectralPredictor out = predictor;
    if (avg_count > 0.0) {
      for (std::size_t j = 0; j < out.n_coefficients(); ++j) {
        out.gains()[j] = avg_gain[j] / avg_count;
        out.biases()[j] = avg_bias[j] / avg_count;
      }
    }
    return out;
  }
};

struct TrainResult {
  AffineSpectralPredictor predictor;
  std::vector<double> epoch_loss;
  double step_size = 0.0;
  std::vector<double> samples_per_bin;
};

namespace detail {

/// Draws (t index, spectral, eps'^) for one training example.
struct TrainingDraw {
  double t;
  std::vector<double> spectral;
  std::vector<Complex> eps_hat;
};

inline TrainingDraw draw_training_noise(const Shape& dims, const ModeGrid& grid, const DiffusionSchedule& schedule,
                                        const PowerSpectrum& noise, const PriorBox& prior, RngStream& rng) {
  TrainingDraw d;
  const auto i = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(schedule.n_steps())));
  d.t = schedule.grid_time(i);
  for (std::size_t m = 0; m < noise.n_spectral(); ++m) d.spectral.push_back(rng.uniform(prior.lower()[1 + m], prior.upper()[1 + m]));
  Field w = Field::white_noise(dims, rng);
  d.eps_hat = dft(w).coeffs;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    d.eps_hat[k] *= std::exp(0.5 * noise.log_value(grid.radius[k], d.spectral));
  }
  return d;
}

struct BinStats {
  std::vector<double> n, szz, sz, sez, se;
  explicit BinStats(std::size_t m) : n(m, 0.0), szz(m, 0.0), sz(m, 0.0), sez(m, 0.0), se(m, 0.0) {}
  void clear() {
    for (auto* v : {&n, &szz, &sz, &sez, &se}) std::fill(v->begin(), v->end(), 0.0);
  }
};

/// Accumulate one (x^, eps'^) example; returns its loss under the current model.
inline double accumulate_example(const AffineSpectralPredictor& m, std::span<const Complex> xh,
                                 std::span<const Complex> eh, double a, double b, double t,
                                 std::span<const double> spectral, BinStats& st) {
  const std::size_t base = m.index(m.bins().time_bin(t), m.bins().spectral_bin(spectral), 0);
  double loss = 0.0;
  for (std::size_t k = 0; k < xh.size(); ++k) {
    const Complex zk = a * xh[k] + b * eh[k];
    const std::size_t j = base + m.shell_of(k);
    const Complex r = m.gains()[j] * zk + m.biases()[j] - eh[k];
    loss += std::norm(r);
    st.n[j] += 1.0;
    st.szz[j] += std::norm(zk);
    st.sz[j] += zk.real();
    st.sez[j] += (eh[k] * std::conj(zk)).real();
    st.se[j] += eh[k].real();
  }
  return loss;
}

inline double heldout_loss(const AffineSpectralPredictor& m, const std::vector<std::vector<Complex>>& xh,
                           const std::vector<std::pair<std::size_t, TrainingDraw>>& held, const DiffusionSchedule& s) {
  BinStats scratch(m.n_coefficients());
  double total = 0.0;
  for (const auto& [xi, d] : held) {
    const auto v = s.eval(d.t);
    total += accumulate_example(m, xh[xi], d.eps_hat, v.a, v.b, d.t, d.spectral, scratch);
  }
  return total / static_cast<double>(held.size());
}

}  // namespace detail

/// Run epochs [state.epoch, cfg.epochs) of preconditioned SGD on the
/// reweighted denoising loss ||m(z_t, t, phi) - eps'||^2 (lambda(t) = 1).
///
/// Every epoch draws from its own RNG substream, so resuming from a saved
/// state reproduces the uninterrupted run exactly.
inline void train_affine_epochs(TrainState& state, std::span<const Field> dataset, const DiffusionSchedule& schedule,
                                const PowerSpectrum& noise, const PriorBox& prior, const TrainConfig& cfg,
                                std::size_t stop_epoch = std::numeric_limits<std::size_t>::max()) {
  require(!dataset.empty(), ErrorKind::InvalidArgument, "training dataset is empty");
  require(cfg.batch_size >= 1, ErrorKind::InvalidArgument, "batch_size must be >= 1");
  require(state.step_size > 0.0, ErrorKind::InvalidArgument, "step size must be positive");
  require(prior.dim() == 1 + noise.n_spectral(), ErrorKind::InvalidArgument, "prior box dimension mismatch");
  auto& m = state.predictor;
  const Shape dims = m.dims();
  const ModeGrid& grid = m.modes();
  std::vector<std::vector<Complex>> xh;
  xh.reserve(dataset.size());
  for (const auto& x : dataset) {
    require(x.dims() == dims, ErrorKind::InvalidArgument, "dataset field has shape " + shape_string(x.dims()));
    xh.push_back(dft(x).coeffs);
  }
  const std::size_t per_epoch = cfg.samples_per_epoch ? cfg.samples_per_epoch : dataset.size();
  const auto tail_epoch = static_cast<std::size_t>(std::floor(cfg.tail_start * static_cast<double>(cfg.epochs)));
  const std::size_t nc = m.n_coefficients();
  detail::BinStats st(nc);
  std::vector<std::size_t> order(dataset.size());

  for (; state.epoch < std::min(cfg.epochs, stop_epoch); ++state.epoch) {
    RngStream rng = RngStream(cfg.seed, streams::kTrain).split(state.epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    std::size_t cursor = 0;
    while (epoch_count < per_epoch) {
      st.clear();
      double batch_loss = 0.0;
      std::size_t batch_n = 0;
      for (std::size_t b = 0; b < cfg.batch_size && epoch_count + batch_n < per_epoch; ++b) {
        const std::size_t xi = order[cursor++ % order.size()];
        auto d = detail::draw_training_noise(dims, grid, schedule, noise, prior, rng);
        const auto v = schedule.eval(d.t);
        batch_loss += detail::accumulate_example(m, xh[xi], d.eps_hat, v.a, v.b, d.t, d.spectral, st);
        ++batch_n;
        if (cfg.antithetic) {
          for (auto& c : d.eps_hat) c = -c;
          batch_loss += detail::accumulate_example(m, xh[xi], d.eps_hat, v.a, v.b, d.t, d.spectral, st);
          ++batch_n;
        }
      }
      if (!std::isfinite(batch_loss)) {
        fail(ErrorKind::Numeric, "non-finite training loss in epoch " + std::to_string(state.epoch));
      }
      epoch_loss += batch_loss;
      epoch_count += batch_n;

      for (std::size_t j = 0; j < nc; ++j) {
        if (st.n[j] == 0.0) continue;
        state.curv_sum[j] += st.szz[j];
        state.curv_count[j] += st.n[j];
        state.samples_per_bin[j] += st.n[j];
        const double h = std::max(state.curv_sum[j] / state.curv_count[j], 1e-12);
        double& g = m.gains()[j];
        double& c = m.biases()[j];
        const double grad_g = (g * st.szz[j] + c * st.sz[j] - st.sez[j]) / st.n[j];
        const double grad_c = (g * st.sz[j] + c * st.n[j] - st.se[j]) / st.n[j];
        state.vel_gain[j] = cfg.momentum * state.vel_gain[j] - state.step_size * grad_g / h;
        state.vel_bias[j] = cfg.momentum * state.vel_bias[j] - state.step_size * grad_c;
        g += state.vel_gain[j];
        c += state.vel_bias[j];
      }
      if (state.epoch >= tail_epoch) {
        for (std::size_t j = 0; j < nc; ++j) {
          state.avg_gain[j] += m.gains()[j];
          state.avg_bias[j] += m.biases()[j];
        }
        state.avg_count += 1.0;
      }
    }
    const double mean_loss = epoch_loss / static_cast<double>(epoch_count);
    if (!std::isfinite(mean_loss)) fail(ErrorKind::Numeric, "non-finite loss in epoch " + std::to_string(state.epoch));
    state.epoch_loss.push_back(mean_loss);
  }
}

/// Pick the step size with the lowest held-out loss after one epoch.
inline double select_step_size(const AffineSpectralPredictor& init, std::span<const Field> dataset,
                               const DiffusionSchedule& schedule, const PowerSpectrum& noise, const PriorBox& prior,
                               const TrainConfig& cfg) {
  require(!cfg.step_candidates.empty(), ErrorKind::InvalidArgument, "no step candidates");
  std::vector<std::vector<Complex>> xh;
  for (const auto& x : dataset) xh.push_back(dft(x).coeffs);
  RngStream rng(cfg.seed, streams::kHeldOut);
  std::vector<std::pair<std::size_t, detail::TrainingDraw>> held;
  for (std::size_t i = 0; i < std::max<std::size_t>(cfg.heldout_samples, 1); ++i) {
    const auto xi = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1));
    held.emplace_back(xi, detail::draw_training_noise(init.dims(), init.modes(), schedule, noise, prior, rng));
  }
  double best_step = cfg.step_candidates.front();
  double best_loss = std::numeric_limits<double>::infinity();
  for (double step : cfg.step_candidates) {
    TrainState trial(init);
    trial.step_size = step;
    TrainConfig one = cfg;
    one.epochs = 1;
    one.tail_start = 1.0;
    try {
      train_affine_epochs(trial, dataset, schedule, noise, prior, one);
    } catch (const Error&) {
      continue;
    }
    const double loss = detail::heldout_loss(trial.predictor, xh, held, schedule);
    if (loss < best_loss) {
      best_loss = loss;
      best_step = step;
    }
  }
  return best_step;
}

inline TrainResult train_affine(AffineSpectralPredictor init, std::span<const Field> dataset,
                                const DiffusionSchedule& schedule, const PowerSpectrum& noise, const PriorBox& prior,
                                const TrainConfig& cfg) {
  require(!dataset.empty(), ErrorKind::InvalidArgument, "training dataset is empty");
  TrainState state(std::move(init));
  state.step_size =
      cfg.step_size > 0.0 ? cfg.step_size : select_step_size(state.predictor, dataset, schedule, noise, prior, cfg);
  train_affine_epochs(state, dataset, schedule, noise, prior, cfg);
  return {state.averaged(), state.epoch_loss, state.step_size, state.samples_per_bin};
}

}  // namespace gdiff
