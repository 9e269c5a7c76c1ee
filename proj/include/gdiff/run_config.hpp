#pragma once

// JSON run configuration shared by the command-line tools.

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/field.hpp"
#include "gdiff/gdtf.hpp"
#include "gdiff/gibbs.hpp"
#include "gdiff/hmc.hpp"
#include "gdiff/noise_model.hpp"
#include "gdiff/oracle.hpp"
#include "gdiff/schedule.hpp"
#include "gdiff/score_model.hpp"

namespace gdiff {

inline constexpr int kRunConfigSchema = 1;

/// Gaussian random-field prior: P(k) = amplitude * |k|^index, P(0) = amplitude.
struct PriorModelConfig {
  double mean = 0.5;
  double amplitude = 0.01;
  double index = -2.0;
};

struct NoiseConfig {
  std::string family = "power_law";  ///< power_law | tabulated
  std::vector<double> k, values;     ///< tabulated family only
};

struct ProblemConfig {
  std::vector<std::size_t> dims{32, 32};
  PriorModelConfig prior;
  NoiseConfig noise;
  std::vector<double> box_lower{0.05, -1.0};
  std::vector<double> box_upper{1.0, 1.0};
};

struct ScheduleConfig {
  double beta_min = 0.1;
  double beta_max = 20.0;
  std::size_t n_steps = 1000;
};

struct PredictorConfig {
  std::string kind = "gaussian_prior";  ///< gaussian_prior | affine | wiener
  std::string path;                     ///< affine predictor file
  std::size_t time_bins = 32;
  std::size_t spectral_bins = 8;
  bool stochastic = true;
  std::string variance = "beta";  ///< beta | beta_tilde
};

struct GenerateConfig {
  std::size_t n_items = 10;
};

struct TrainRunConfig {
  std::size_t epochs = 8;
  std::size_t samples_per_epoch = 0;
  std::size_t batch_size = 64;
  double step_size = 0.0;
  double momentum = 0.0;
  bool antithetic = true;
  double tail_start = 0.25;
  std::size_t heldout_samples = 256;
  bool resume = false;
  std::size_t stop_after_epoch = 0;  ///< 0 runs all epochs
};

struct GibbsRunConfig {
  std::size_t iterations = 60;
  std::size_t chains = 4;
  long warmup_discard = -1;  ///< -1 means M / 2
  std::string init = "prior";  ///< prior | sigma_regression | spectral_moment
  std::size_t x_thin = 5;
  std::string input;
  std::string truth;
  std::size_t threads = 0;
};

struct HmcRunConfig {
  double target_accept = 0.65;
  double gamma = 0.05;
  double t0 = 10.0;
  double kappa = 0.75;
  std::size_t warmup_iters = 300;
  int steps_min = 5;
  int steps_max = 15;
  bool dense_mass = true;
  std::size_t transitions = 1;
};

struct SbcRunConfig {
  std::size_t n_runs = 200;
  std::size_t n_draws = 99;
  std::size_t bins = 20;
  std::string pipeline = "exact_oracle";  ///< exact_oracle | biased | gibbs
  double bias = 0.0;
  std::size_t thinning = 0;
  std::size_t grid_resolution = 100;
};

struct DiagnoseConfig {
  std::vector<std::string> traces;
};

struct OracleCompareConfig {
  std::string input;
  std::vector<double> params;  ///< phi for the Wiener comparison; empty uses the grid posterior mean
  std::size_t grid_resolution = 200;
  std::size_t n_samples = 64;
};

struct RunConfig {
  int schema_version = kRunConfigSchema;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::string data_dir = "data";
  ProblemConfig problem;
  ScheduleConfig schedule;
  PredictorConfig predictor;
  GenerateConfig generate;
  TrainRunConfig train;
  GibbsRunConfig gibbs;
  HmcRunConfig hmc;
  SbcRunConfig sbc;
  DiagnoseConfig diagnose;
  OracleCompareConfig oracle;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PriorModelConfig, mean, amplitude, index)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NoiseConfig, family, k, values)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ProblemConfig, dims, prior, noise, box_lower, box_upper)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleConfig, beta_min, beta_max, n_steps)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PredictorConfig, kind, path, time_bins, spectral_bins, stochastic, variance)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenerateConfig, n_items)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainRunConfig, epochs, samples_per_epoch, batch_size, step_size, momentum,
                                                antithetic, tail_start, heldout_samples, resume, stop_after_epoch)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GibbsRunConfig, iterations, chains, warmup_discard, init, x_thin, input,
                                                truth, threads)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HmcRunConfig, target_accept, gamma, t0, kappa, warmup_iters, steps_min,
                                                steps_max, dense_mass, transitions)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SbcRunConfig, n_runs, n_draws, bins, pipeline, bias, thinning,
                                                grid_resolution)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DiagnoseConfig, traces)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OracleCompareConfig, input, params, grid_resolution, n_samples)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, schema_version, seed, output_dir, data_dir, problem, schedule,
                                                predictor, generate, train, gibbs, hmc, sbc, diagnose, oracle)

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) fail(ErrorKind::Config, "unknown config key '" + where + key + "'");
    if (value.is_object()) reject_unknown_keys(value, known.at(key), where + key + ".");
  }
}

inline void require_one_of(const std::string& v, std::initializer_list<const char*> options, const std::string& key) {
  for (const char* o : options) {
    if (v == o) return;
  }
  fail(ErrorKind::Config, "invalid value '" + v + "' for " + key);
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  require(c.schema_version == kRunConfigSchema, ErrorKind::Config,
          "unsupported schema_version " + std::to_string(c.schema_version));
  require(!c.problem.dims.empty() && c.problem.dims.size() <= 2, ErrorKind::Config, "problem.dims must have 1 or 2 entries");
  for (auto d : c.problem.dims) require(d >= 2, ErrorKind::Config, "problem.dims entries must be >= 2");
  detail::require_one_of(c.problem.noise.family, {"power_law", "tabulated"}, "problem.noise.family");
  const std::size_t n_params = c.problem.noise.family == "power_law" ? 2 : 1;
  require(c.problem.box_lower.size() == n_params && c.problem.box_upper.size() == n_params, ErrorKind::Config,
          "prior box must have " + std::to_string(n_params) + " entries for this noise family");
  require(c.problem.prior.amplitude > 0.0, ErrorKind::Config, "problem.prior.amplitude must be > 0");
  detail::require_one_of(c.predictor.kind, {"gaussian_prior", "affine", "wiener"}, "predictor.kind");
  detail::require_one_of(c.predictor.variance, {"beta", "beta_tilde"}, "predictor.variance");
  detail::require_one_of(c.gibbs.init, {"prior", "sigma_regression", "spectral_moment"}, "gibbs.init");
  detail::require_one_of(c.sbc.pipeline, {"exact_oracle", "biased", "gibbs"}, "sbc.pipeline");
  require(c.schedule.n_steps >= 1 && c.schedule.beta_max >= c.schedule.beta_min && c.schedule.beta_min >= 0.0,
          ErrorKind::Config, "schedule needs n_steps >= 1 and 0 <= beta_min <= beta_max");
  require(c.gibbs.warmup_discard >= -1, ErrorKind::Config, "gibbs.warmup_discard must be >= -1");
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  require(j.is_object(), ErrorKind::Config, "config must be a JSON object");
  detail::reject_unknown_keys(j, nlohmann::json(RunConfig{}), "");
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("config has a wrongly typed field: ") + e.what());
  }
  validate(c);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(detail::read_file(path)); }

inline std::string dump_run_config(const RunConfig& c) { return nlohmann::json(c).dump(2) + "\n"; }

/// FNV-1a of the canonical JSON dump.
/// FNV-1a over the canonical JSON; where results are written does not count.
inline std::uint64_t config_hash(const RunConfig& c) {
  nlohmann::json j = c;
  j.erase("output_dir");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Builders

inline DiffusionSchedule make_schedule(const RunConfig& c) {
  return DiffusionSchedule(c.schedule.beta_min, c.schedule.beta_max, c.schedule.n_steps);
}

inline PowerSpectrum make_noise(const RunConfig& c) {
  if (c.problem.noise.family == "tabulated") return PowerSpectrum::tabulated(c.problem.noise.k, c.problem.noise.values);
  return PowerSpectrum::power_law();
}

inline PriorBox make_prior_box(const RunConfig& c) {
  try {
    return PriorBox(c.problem.box_lower, c.problem.box_upper);
  } catch (const Error& e) {
    fail(ErrorKind::Config, e.what());
  }
}

inline std::vector<double> prior_model_spectrum(const PriorModelConfig& p, const Shape& dims) {
  const ModeGrid grid(dims);
  std::vector<double> s(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    s[i] = grid.radius[i] == 0.0 ? p.amplitude : p.amplitude * std::pow(grid.radius[i], p.index);
  }
  return s;
}

inline LinearGaussianProblem make_problem(const RunConfig& c, Field y = {}) {
  const Shape dims(c.problem.dims.begin(), c.problem.dims.end());
  LinearGaussianProblem p;
  p.prior_mean = Field::constant(dims, c.problem.prior.mean);
  p.prior_spectrum = prior_model_spectrum(c.problem.prior, dims);
  p.noise = make_noise(c);
  p.y = std::move(y);
  return p;
}

inline HmcConfig make_hmc_config(const RunConfig& c) {
  HmcConfig h;
  h.target_accept = c.hmc.target_accept;
  h.gamma = c.hmc.gamma;
  h.t0 = c.hmc.t0;
  h.kappa = c.hmc.kappa;
  h.warmup_iters = c.hmc.warmup_iters;
  h.steps_min = c.hmc.steps_min;
  h.steps_max = c.hmc.steps_max;
  h.dense_mass = c.hmc.dense_mass;
  h.transitions_per_draw = c.hmc.transitions;
  try {
    h.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, e.what());
  }
  return h;
}

inline GibbsConfig make_gibbs_config(const RunConfig& c) {
  GibbsConfig g;
  g.iterations = c.gibbs.iterations;
  g.n_chains = c.gibbs.chains;
  if (c.gibbs.warmup_discard >= 0) g.warmup_discard = static_cast<std::size_t>(c.gibbs.warmup_discard);
  g.init = c.gibbs.init == "sigma_regression"  ? InitStrategy::SigmaRegression
           : c.gibbs.init == "spectral_moment" ? InitStrategy::SpectralMoment
                                               : InitStrategy::PriorDraw;
  g.seed = c.seed;
  g.x_thin = c.gibbs.x_thin;
  g.hmc = make_hmc_config(c);
  g.n_threads = c.gibbs.threads;
  try {
    g.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, e.what());
  }
  return g;
}

inline TrainConfig make_train_config(const RunConfig& c) {
  TrainConfig t;
  t.epochs = c.train.epochs;
  t.samples_per_epoch = c.train.samples_per_epoch;
  t.batch_size = c.train.batch_size;
  t.step_size = c.train.step_size;
  t.momentum = c.train.momentum;
  t.antithetic = c.train.antithetic;
  t.tail_start = c.train.tail_start;
  t.heldout_samples = c.train.heldout_samples;
  t.seed = c.seed;
  return t;
}

inline AffineBins make_affine_bins(const RunConfig& c) {
  AffineBins b;
  b.dims = Shape(c.problem.dims.begin(), c.problem.dims.end());
  b.n_time_bins = c.predictor.time_bins;
  b.n_spectral_bins = c.predictor.spectral_bins;
  if (c.problem.box_lower.size() > 1) {
    b.spectral_lo = c.problem.box_lower[1];
    b.spectral_hi = c.problem.box_upper[1];
  }
  return b;
}

}  // namespace gdiff
