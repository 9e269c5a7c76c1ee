// gdiff command-line runner.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>
#include <fftw3.h>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gdiff/gdiff.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace gdiff;

namespace {

constexpr const char* kVersion = "0.1.0";

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config:
    case ErrorKind::CapacityExceeded:
    case ErrorKind::InvalidArgument:
    case ErrorKind::OutOfDomain:
      return 2;
    case ErrorKind::Io:
    case ErrorKind::BadMagic:
    case ErrorKind::VersionMismatch:
    case ErrorKind::Truncated:
      return 3;
    default:
      return 4;
  }
}

struct Context {
  std::string command;
  RunConfig cfg;
  fs::path out;
  std::vector<std::string> positional;
};

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  require(!ec, ErrorKind::Io, "cannot create directory " + p.string() + ": " + ec.message());
}

void write_text(const fs::path& p, const std::string& s) { detail::write_file(p, s); }

void require_path(const std::string& p, const std::string& what) {
  require(!p.empty(), ErrorKind::Config, what + " path is not set");
  require(fs::exists(p), ErrorKind::Config, what + " not found: " + p);
}

json base_manifest(const Context& c) {
  const auto& cfg = c.cfg;
  json m;
  m["command"] = c.command;
  m["gdiff_version"] = kVersion;
  m["schema_version"] = cfg.schema_version;
  m["config_hash"] = hex64(config_hash(cfg));
  m["seed"] = cfg.seed;
  m["schedule_hash"] = hex64(make_schedule(cfg).hash());
  m["components"] = {{"fftw", std::string(fftw_version)},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"boost", BOOST_LIB_VERSION},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  return m;
}

void write_manifest(const Context& c, const json& m) {
  write_text(c.out / "manifest.json", m.dump(2) + "\n");
  write_text(c.out / "config.json", dump_run_config(c.cfg));
}

Shape problem_shape(const RunConfig& cfg) { return Shape(cfg.problem.dims.begin(), cfg.problem.dims.end()); }

void check_capacity(const RunConfig& cfg, const DiffusionSchedule& s) {
  const double hi = cfg.problem.box_upper.at(0);
  if (hi > s.max_sigma()) {
    fail(ErrorKind::CapacityExceeded, "prior sigma upper bound " + format_double(hi) +
                                          " exceeds the schedule capacity max_sigma = " + format_double(s.max_sigma()) +
                                          "; raise schedule.beta_max or lower problem.box_upper[0]");
  }
}

Field load_observation(const std::string& path, const RunConfig& cfg) {
  Field y = load_field(path);
  require(y.dims() == problem_shape(cfg), ErrorKind::Config,
          path + " has shape " + shape_string(y.dims()) + ", config expects " + shape_string(problem_shape(cfg)));
  return y;
}

// Owns the predictor and schedule a diffusion sampler points into.
struct XSampler {
  std::unique_ptr<DiffusionSchedule> schedule;
  std::unique_ptr<NoisePredictor> predictor;
  std::unique_ptr<ConditionalSampler> sampler;
};

XSampler make_x_sampler(const RunConfig& cfg, const LinearGaussianProblem& problem) {
  XSampler xs;
  if (cfg.predictor.kind == "wiener") {
    xs.sampler = std::make_unique<WienerConditionalSampler>(problem);
    return xs;
  }
  xs.schedule = std::make_unique<DiffusionSchedule>(make_schedule(cfg));
  check_capacity(cfg, *xs.schedule);
  if (cfg.predictor.kind == "affine") {
    require_path(cfg.predictor.path, "predictor file");
    auto loaded = load_predictor(cfg.predictor.path);
    require(loaded.schedule_hash == hex64(xs.schedule->hash()), ErrorKind::Config,
            "predictor " + cfg.predictor.path + " was trained under a different schedule");
    require(loaded.predictor.dims() == problem_shape(cfg), ErrorKind::Config,
            "predictor " + cfg.predictor.path + " has a different grid shape");
    xs.predictor = std::make_unique<AffineSpectralPredictor>(std::move(loaded.predictor));
  } else {
    xs.predictor = std::make_unique<GaussianPriorPredictor>(problem.prior_mean, problem.prior_spectrum, problem.noise,
                                                            *xs.schedule);
  }
  ReverseRunConfig rc;
  rc.schedule = xs.schedule.get();
  rc.predictor = xs.predictor.get();
  rc.noise = problem.noise;
  rc.stochastic = cfg.predictor.stochastic;
  rc.variance = cfg.predictor.variance == "beta_tilde" ? ReverseVariance::BetaTilde : ReverseVariance::Beta;
  xs.sampler = std::make_unique<DiffusionConditionalSampler>(rc);
  return xs;
}

struct Simulated {
  NoiseParams phi;
  Field x, eps, y;
};

Simulated simulate(const LinearGaussianProblem& problem, const PriorBox& box, RngStream& rng) {
  Simulated s;
  s.phi = box.sample(rng);
  s.x = sample_gaussian_prior(problem, rng);
  s.eps = sample_noise(problem.noise, s.phi, problem.dims(), rng);
  s.y = s.x + s.eps;
  return s;
}

std::string item_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu.gdtf", prefix, i);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_generate(const Context& c) {
  const auto& cfg = c.cfg;
  const auto sched = make_schedule(cfg);
  check_capacity(cfg, sched);
  const auto box = make_prior_box(cfg);
  const auto problem = make_problem(cfg);
  ensure_dir(c.out);
  const RngStream master(cfg.seed, streams::kGenerate);
  auto items = json::array();
  std::ostringstream csv;
  csv << "id";
  for (const auto& n : parameter_names(box.dim())) csv << ',' << n;
  csv << '\n';
  for (std::size_t i = 0; i < cfg.generate.n_items; ++i) {
    RngStream rng = master.split(i);
    const auto s = simulate(problem, box, rng);
    save_field(s.x, c.out / item_name("x", i));
    save_field(s.eps, c.out / item_name("eps", i));
    save_field(s.y, c.out / item_name("y", i));
    items.push_back({{"id", i},
                     {"sigma", s.phi.sigma},
                     {"spectral", s.phi.spectral},
                     {"x", item_name("x", i)},
                     {"eps", item_name("eps", i)},
                     {"y", item_name("y", i)}});
    csv << i;
    for (double v : s.phi.to_vector()) csv << ',' << format_double(v);
    csv << '\n';
  }
  write_text(c.out / "phi.csv", csv.str());
  auto m = base_manifest(c);
  m["n_items"] = cfg.generate.n_items;
  m["items"] = items;
  write_manifest(c, m);
  std::cout << "generated " << cfg.generate.n_items << " items in " << c.out.string() << "\n";
  return 0;
}

int cmd_train(const Context& c) {
  const auto& cfg = c.cfg;
  require(fs::is_directory(cfg.data_dir), ErrorKind::Config, "data directory not found: " + cfg.data_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(cfg.data_dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.starts_with("x_") && name.ends_with(".gdtf")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorKind::Config, "no training fields (x_*.gdtf) in " + cfg.data_dir);
  std::vector<Field> data;
  for (const auto& f : files) data.push_back(load_observation(f.string(), cfg));

  const auto sched = make_schedule(cfg);
  check_capacity(cfg, sched);
  const auto noise = make_noise(cfg);
  const auto box = make_prior_box(cfg);
  const auto tcfg = make_train_config(cfg);
  const auto bins = make_affine_bins(cfg);
  ensure_dir(c.out);
  const fs::path ckpt = c.out / "checkpoint.gdck";

  std::optional<TrainState> st;
  if (cfg.train.resume) {
    require(fs::exists(ckpt), ErrorKind::Config, "resume requested but no checkpoint at " + ckpt.string());
    auto lc = decode_checkpoint(detail::read_file(ckpt));
    require(lc.schedule_hash == hex64(sched.hash()), ErrorKind::Config, "checkpoint schedule differs from config");
    require(lc.seed == cfg.seed, ErrorKind::Config, "checkpoint seed differs from config");
    require(lc.state.predictor.bins().dims == bins.dims && lc.state.predictor.n_coefficients() ==
                                                               AffineSpectralPredictor(bins).n_coefficients(),
            ErrorKind::Config, "checkpoint bin layout differs from config");
    st.emplace(std::move(lc.state));
  } else {
    st.emplace(AffineSpectralPredictor::identity(bins));
    st->step_size = tcfg.step_size > 0.0 ? tcfg.step_size
                                         : select_step_size(st->predictor, data, sched, noise, box, tcfg);
  }
  const std::size_t stop = cfg.train.stop_after_epoch ? std::min(cfg.train.stop_after_epoch, tcfg.epochs) : tcfg.epochs;
  int code = 0;
  std::string failure;
  try {
    while (st->epoch < stop) {
      train_affine_epochs(*st, data, sched, noise, box, tcfg, st->epoch + 1);
      write_text(ckpt, encode_checkpoint(*st, sched, cfg.seed));
    }
  } catch (const Error& e) {
    if (exit_code(e.kind()) != 4) throw;
    code = 4;
    failure = e.what();
  }
  std::ostringstream loss;
  loss << "epoch,loss\n";
  for (std::size_t e = 0; e < st->epoch_loss.size(); ++e) loss << e << ',' << format_double(st->epoch_loss[e]) << '\n';
  write_text(c.out / "loss.csv", loss.str());

  const bool complete = code == 0 && st->epoch >= tcfg.epochs;
  if (complete) save_predictor(st->averaged(), sched, c.out / "predictor.gdpr");
  auto m = base_manifest(c);
  m["n_fields"] = data.size();
  m["epochs_completed"] = st->epoch_loss.size();
  m["epochs_planned"] = tcfg.epochs;
  m["step_size"] = st->step_size;
  m["last_finite_epoch"] = st->epoch_loss.empty() ? json(nullptr) : json(st->epoch_loss.size() - 1);
  m["predictor"] = complete ? json("predictor.gdpr") : json(nullptr);
  m["failure"] = failure.empty() ? json(nullptr) : json(failure);
  write_manifest(c, m);
  if (code) {
    std::cerr << "gdiff train: " << failure << " (last finite epoch: "
              << (st->epoch_loss.empty() ? std::string("none") : std::to_string(st->epoch_loss.size() - 1)) << ")\n";
  } else {
    std::cout << "trained " << st->epoch_loss.size() << " epochs, step " << format_double(st->step_size) << "\n";
  }
  return code;
}

SigmaRegressor fit_regressor(const RunConfig& cfg, const LinearGaussianProblem& problem, const PriorBox& box) {
  RngStream rng = RngStream(cfg.seed, streams::kHeldOut).split(1);
  std::vector<Field> ys;
  std::vector<double> sig;
  for (std::size_t i = 0; i < 40; ++i) {
    auto s = simulate(problem, box, rng);
    ys.push_back(std::move(s.y));
    sig.push_back(s.phi.sigma);
  }
  return SigmaRegressor::fit(ys, sig);
}

int cmd_gibbs(const Context& c) {
  const auto& cfg = c.cfg;
  require_path(cfg.gibbs.input, "input observation");
  if (!cfg.gibbs.truth.empty()) require_path(cfg.gibbs.truth, "truth field");
  const Field y = load_observation(cfg.gibbs.input, cfg);
  const auto problem = make_problem(cfg, y);
  const auto box = make_prior_box(cfg);
  const auto gcfg = make_gibbs_config(cfg);
  const auto xs = make_x_sampler(cfg, problem);
  std::optional<SigmaRegressor> reg;
  if (gcfg.init == InitStrategy::SigmaRegression) reg = fit_regressor(cfg, problem, box);

  GibbsComponents comp;
  comp.x_sampler = xs.sampler.get();
  comp.noise = problem.noise;
  comp.prior = box;
  comp.regressor = reg ? &*reg : nullptr;
  const auto res = gibbs_run(y, gcfg, comp);

  ensure_dir(c.out);
  ensure_dir(c.out / "x_samples");
  const std::size_t discard = gcfg.discard();
  std::vector<std::vector<std::vector<double>>> draws;
  auto chains = json::array();
  for (const auto& tr : res.chains) {
    const std::string name = "chain_" + std::to_string(tr.chain) + ".csv";
    write_text(c.out / name, chain_csv(tr, box.dim()));
    for (const auto& [k, x] : tr.x_samples) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "chain%zu_iter%04zu.gdtf", tr.chain, k);
      save_field(x, c.out / "x_samples" / buf);
    }
    json e;
    e["chain"] = tr.chain;
    e["trace"] = name;
    e["failed"] = tr.failed;
    e["failure"] = tr.failed ? json(tr.failure) : json(nullptr);
    e["warning"] = tr.warning.empty() ? json(nullptr) : json(tr.warning);
    e["init"] = tr.init.to_vector();
    e["step_size"] = tr.step_size;
    std::size_t n_div = 0;
    for (char d : tr.divergent) n_div += d ? 1 : 0;
    e["divergent"] = n_div;
    chains.push_back(e);
    if (!tr.failed) {
      std::vector<std::vector<double>> rows;
      for (const auto& p : tr.retained(discard)) rows.push_back(p.to_vector());
      draws.push_back(std::move(rows));
    }
    if (tr.failed) std::cerr << "gdiff gibbs: chain " << tr.chain << " failed: " << tr.failure << "\n";
    if (!tr.warning.empty()) std::cerr << "gdiff gibbs: chain " << tr.chain << ": " << tr.warning << "\n";
  }
  const auto ok = res.succeeded();
  auto report = convergence_report(draws, parameter_names(box.dim()));
  report["discard"] = discard;
  report["chains"] = chains;
  report["n_failed"] = res.n_failed;
  auto m = base_manifest(c);
  m["input"] = cfg.gibbs.input;
  m["chain_streams"] = json::array();
  for (std::size_t k = 0; k < gcfg.n_chains; ++k) m["chain_streams"].push_back(streams::kChainBase + k);
  m["n_failed"] = res.n_failed;

  if (ok.empty()) {
    write_text(c.out / "diagnostics.json", report.dump(2) + "\n");
    write_manifest(c, m);
    std::cerr << "gdiff gibbs: every chain failed\n";
    return 4;
  }
  Field mean(y.dims());
  for (const auto* tr : ok) mean += tr->x_mean;
  mean *= 1.0 / static_cast<double>(ok.size());
  save_field(mean, c.out / "posterior_mean.gdtf");

  std::vector<double> phi_mean(box.dim(), 0.0);
  std::size_t n_rows = 0;
  for (const auto& ch : draws) {
    for (const auto& row : ch) {
      for (std::size_t p = 0; p < row.size(); ++p) phi_mean[p] += row[p];
      ++n_rows;
    }
  }
  for (auto& v : phi_mean) v /= static_cast<double>(std::max<std::size_t>(n_rows, 1));
  report["posterior_mean_phi"] = phi_mean;

  if (!cfg.gibbs.truth.empty()) {
    const Field truth = load_observation(cfg.gibbs.truth, cfg);
    const Field& sample = ok.front()->x_samples.empty() ? ok.front()->x_mean : ok.front()->x_samples.back().second;
    const auto dims = truth.dims();
    const bool ssim_ok = dims.back() >= 11 && (dims.size() == 1 || dims[0] >= 11);
    const double nan = std::nan("");
    std::ostringstream mc;
    mc << "image_id,method,sigma,index,psnr_sample,psnr_mean,ssim_sample,ssim_mean\n";
    mc << fs::path(cfg.gibbs.input).stem().string() << ",gdiff," << format_double(phi_mean[0]) << ','
       << (phi_mean.size() > 1 ? format_double(phi_mean[1]) : std::string("nan")) << ','
       << format_double(psnr(sample, truth)) << ',' << format_double(psnr(mean, truth)) << ','
       << format_double(ssim_ok ? ssim(sample, truth) : nan) << ',' << format_double(ssim_ok ? ssim(mean, truth) : nan)
       << '\n';
    write_text(c.out / "metrics.csv", mc.str());
  }
  write_text(c.out / "diagnostics.json", report.dump(2) + "\n");
  write_manifest(c, m);
  std::cout << "gibbs: " << ok.size() << "/" << res.chains.size() << " chains, sigma mean "
            << format_double(phi_mean[0]) << (report["flagged"].get<bool>() ? " [R-hat flagged]" : "") << "\n";
  return 0;
}

int cmd_sbc(const Context& c) {
  const auto& cfg = c.cfg;
  require(cfg.sbc.n_runs >= 1, ErrorKind::Config, "sbc.n_runs must be >= 1");
  require(cfg.sbc.n_draws >= 1 && cfg.sbc.bins >= 2, ErrorKind::Config, "sbc needs n_draws >= 1 and bins >= 2");
  require(cfg.sbc.pipeline != "biased" || cfg.sbc.bias != 0.0, ErrorKind::Config, "biased pipeline needs sbc.bias != 0");
  require(cfg.sbc.grid_resolution >= 50, ErrorKind::Config, "sbc.grid_resolution must be >= 50");
  const auto box = make_prior_box(cfg);
  const auto base = make_problem(cfg);
  const auto& sc = cfg.sbc;
  SbcConfig scfg;
  scfg.n_runs = sc.n_runs;
  scfg.n_draws = sc.n_draws;
  scfg.n_bins = sc.bins;
  scfg.seed = cfg.seed;

  SbcPipeline pipeline;
  std::optional<XSampler> xs;
  std::optional<GibbsConfig> gcfg;
  if (sc.pipeline == "gibbs") {
    xs = make_x_sampler(cfg, base);
    gcfg = make_gibbs_config(cfg);
    require(gcfg->init != InitStrategy::SigmaRegression, ErrorKind::Config,
            "sbc gibbs pipeline supports prior or spectral_moment init");
    scfg.thinning = sc.thinning;
    pipeline = [&](std::size_t, RngStream& rng) {
      auto s = simulate(base, box, rng);
      GibbsConfig g = *gcfg;
      g.seed = rng.next_u64();
      g.n_threads = 1;
      GibbsComponents comp;
      comp.x_sampler = xs->sampler.get();
      comp.noise = base.noise;
      comp.prior = box;
      const auto res = gibbs_run(s.y, g, comp);
      require(res.n_failed == 0, ErrorKind::Numeric, "a Gibbs chain failed");
      return SbcDraws{s.phi.to_vector(), pooled_retained(res, g.discard())};
    };
  } else {
    const double bias = sc.pipeline == "biased" ? sc.bias : 0.0;
    const std::size_t thin = sc.thinning ? sc.thinning : 1;
    scfg.thinning = thin;
    pipeline = [&, bias, thin](std::size_t, RngStream& rng) {
      auto s = simulate(base, box, rng);
      auto problem = base;
      problem.y = s.y;
      const auto grid = phi_grid_posterior(problem, box, sc.grid_resolution);
      SbcDraws d{s.phi.to_vector(), {}};
      for (std::size_t i = 0; i < sc.n_draws * thin; ++i) {
        auto v = grid.sample(rng);
        v[0] += bias;
        d.draws.push_back(std::move(v));
      }
      return d;
    };
  }
  const auto res = sbc(pipeline, scfg);
  ensure_dir(c.out);
  const auto names = parameter_names(box.dim());
  std::ostringstream csv;
  csv << "parameter,bin,count\n";
  for (std::size_t p = 0; p < res.histograms.size(); ++p) {
    for (std::size_t b = 0; b < res.histograms[p].counts.size(); ++b) {
      csv << names[p] << ',' << b << ',' << res.histograms[p].counts[b] << '\n';
    }
  }
  write_text(c.out / "sbc_ranks.csv", csv.str());
  json rep;
  rep["pipeline"] = sc.pipeline;
  rep["n_runs"] = sc.n_runs;
  rep["n_draws"] = sc.n_draws;
  rep["bins"] = sc.bins;
  rep["completed"] = res.completed;
  rep["failed"] = res.failed;
  rep["failures"] = res.failures;
  auto params = json::array();
  bool uniform = res.completed > 0;
  for (std::size_t p = 0; p < res.tests.size(); ++p) {
    const bool u = res.tests[p].p_value > 0.01;
    uniform = uniform && u;
    params.push_back({{"name", names[p]},
                      {"chi2", res.tests[p].statistic},
                      {"p_value", res.tests[p].p_value},
                      {"counts", res.histograms[p].counts},
                      {"verdict", u ? "uniform" : "non-uniform"}});
  }
  rep["parameters"] = params;
  rep["verdict"] = uniform ? "uniform" : "non-uniform";
  write_text(c.out / "sbc_report.json", rep.dump(2) + "\n");
  auto m = base_manifest(c);
  m["sbc_stream"] = streams::kSbc;
  write_manifest(c, m);
  std::cout << "sbc: " << res.completed << " runs, verdict " << rep["verdict"].get<std::string>() << "\n";
  return res.completed ? 0 : 4;
}

int cmd_diagnose(const Context& c) {
  const auto& cfg = c.cfg;
  const auto files = c.positional.empty() ? cfg.diagnose.traces : c.positional;
  require(!files.empty(), ErrorKind::Config, "diagnose needs trace files (positional or diagnose.traces)");
  std::vector<TraceTable> tables;
  for (const auto& f : files) tables.push_back(parse_chain_csv(detail::read_file(f), f));
  auto notes = json::array();
  std::size_t n = tables.front().params.size();
  for (const auto& t : tables) {
    require(t.names == tables.front().names, ErrorKind::Io, "trace files disagree on parameter columns");
    if (t.params.size() != n) {
      n = std::min(n, t.params.size());
      notes.push_back("chains differ in length; truncated to the shortest");
    }
  }
  const std::size_t discard =
      cfg.gibbs.warmup_discard >= 0 ? std::min<std::size_t>(static_cast<std::size_t>(cfg.gibbs.warmup_discard), n) : n / 2;
  std::vector<std::vector<std::vector<double>>> draws;
  for (const auto& t : tables) {
    draws.emplace_back(t.params.begin() + static_cast<std::ptrdiff_t>(discard),
                       t.params.begin() + static_cast<std::ptrdiff_t>(n));
  }
  auto report = convergence_report(draws, tables.front().names);
  for (const auto& note : notes) report["notes"].push_back(note);
  report["discard"] = discard;
  report["traces"] = files;
  ensure_dir(c.out);
  write_text(c.out / "diagnostics.json", report.dump(2) + "\n");
  std::cout << "diagnose: " << tables.size() << " chains, " << (n - discard) << " retained draws"
            << (report["flagged"].get<bool>() ? ", R-hat flagged" : ", no flags") << "\n";
  return 0;
}

int cmd_oracle_compare(const Context& c) {
  const auto& cfg = c.cfg;
  require_path(cfg.oracle.input, "input observation");
  const Field y = load_observation(cfg.oracle.input, cfg);
  const auto problem = make_problem(cfg, y);
  const auto box = make_prior_box(cfg);
  require(cfg.oracle.grid_resolution >= 50, ErrorKind::Config, "oracle.grid_resolution must be >= 50");
  const auto grid = phi_grid_posterior(problem, box, cfg.oracle.grid_resolution);
  const auto phi_vec = cfg.oracle.params.empty() ? grid.mean() : cfg.oracle.params;
  require(phi_vec.size() == box.dim(), ErrorKind::Config, "oracle.params must have " + std::to_string(box.dim()) + " entries");
  const auto phi = NoiseParams::from_vector(phi_vec);
  const auto wp = wiener_posterior(problem, phi);

  ensure_dir(c.out);
  save_field(wp.mean, c.out / "oracle_mean.gdtf");
  const auto names = parameter_names(box.dim());
  std::ostringstream gcsv;
  gcsv << "parameter,value,probability\n";
  for (std::size_t a = 0; a < grid.axes.size(); ++a) {
    for (std::size_t i = 0; i < grid.axes[a].size(); ++i) {
      gcsv << names[a] << ',' << format_double(grid.axes[a][i]) << ',' << format_double(grid.marginals[a][i]) << '\n';
    }
  }
  write_text(c.out / "oracle_grid.csv", gcsv.str());

  json rep;
  rep["params"] = phi_vec;
  rep["grid_mean"] = grid.mean();
  rep["grid_sd"] = grid.sd();
  const std::size_t ns = cfg.oracle.n_samples;
  if (ns >= 2) {
    const auto xs = make_x_sampler(cfg, problem);
    RngStream rng(cfg.seed, streams::kOracle);
    const std::size_t d = y.size();
    std::vector<std::vector<Complex>> hats;
    for (std::size_t i = 0; i < ns; ++i) hats.push_back(dft(xs.sampler->sample(y, phi, rng)).coeffs);
    const auto mh = dft(wp.mean).coeffs;
    double max_z = 0.0, var_ratio_sum = 0.0;
    std::ostringstream mcsv;
    mcsv << "mode,oracle_variance,sample_variance,mean_z\n";
    for (std::size_t k = 0; k < d; ++k) {
      Complex m{0.0, 0.0};
      for (const auto& h : hats) m += h[k];
      m /= static_cast<double>(ns);
      double v = 0.0;
      for (const auto& h : hats) v += std::norm(h[k] - m);
      v /= static_cast<double>(ns - 1);
      const double z = std::abs(m - mh[k]) / std::sqrt(wp.variance[k] / static_cast<double>(ns));
      max_z = std::max(max_z, z);
      var_ratio_sum += v / wp.variance[k];
      mcsv << k << ',' << format_double(wp.variance[k]) << ',' << format_double(v) << ',' << format_double(z) << '\n';
    }
    write_text(c.out / "oracle_modes.csv", mcsv.str());
    rep["predictor"] = cfg.predictor.kind;
    rep["n_samples"] = ns;
    rep["max_mean_z"] = max_z;
    rep["mean_variance_ratio"] = var_ratio_sum / static_cast<double>(d);
  }
  write_text(c.out / "oracle_compare.json", rep.dump(2) + "\n");
  auto m = base_manifest(c);
  m["input"] = cfg.oracle.input;
  write_manifest(c, m);
  std::cout << "oracle-compare: grid mean sigma " << format_double(grid.mean()[0]) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gdiff: Gibbs-diffusion blind denoising runner"};
  app.fallthrough();
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::size_t chains = 0, iters = 0;
  std::vector<std::string> positional;
  auto* o_config = app.add_option("--config", config_path, "JSON run config");
  auto* o_seed = app.add_option("--seed", seed, "master seed (overrides config)");
  auto* o_out = app.add_option("--out", out_dir, "output directory");
  auto* o_chains = app.add_option("--chains", chains, "number of Gibbs chains")->check(CLI::PositiveNumber);
  auto* o_iters = app.add_option("--iters", iters, "Gibbs iterations M")->check(CLI::PositiveNumber);
  app.add_subcommand("generate", "simulate (x, eps, y) triples");
  app.add_subcommand("train", "fit the affine noise predictor");
  app.add_subcommand("gibbs", "blind denoising of one observation");
  app.add_subcommand("sbc", "simulation-based calibration");
  auto* diag = app.add_subcommand("diagnose", "R-hat / ESS of stored chain traces");
  diag->add_option("traces", positional, "chain CSV files");
  app.add_subcommand("oracle-compare", "exact linear-Gaussian reference");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  Context c;
  c.command = app.get_subcommands().front()->get_name();
  c.positional = positional;
  try {
    if (*o_config) {
      require(fs::exists(config_path), ErrorKind::Config, "config file not found: " + config_path);
      std::string text;
      try {
        text = detail::read_file(config_path);
      } catch (const Error& e) {
        fail(ErrorKind::Io, e.what());
      }
      c.cfg = parse_run_config(text);
    }
    if (*o_seed) c.cfg.seed = seed;
    if (*o_out) c.cfg.output_dir = out_dir;
    if (*o_chains) c.cfg.gibbs.chains = chains;
    if (*o_iters) c.cfg.gibbs.iterations = iters;
    validate(c.cfg);
    c.out = c.cfg.output_dir;
    if (c.command == "generate") return cmd_generate(c);
    if (c.command == "train") return cmd_train(c);
    if (c.command == "gibbs") return cmd_gibbs(c);
    if (c.command == "sbc") return cmd_sbc(c);
    if (c.command == "diagnose") return cmd_diagnose(c);
    return cmd_oracle_compare(c);
  } catch (const Error& e) {
    std::cerr << "gdiff " << c.command << ": " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "gdiff " << c.command << ": " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "gdiff " << c.command << ": " << e.what() << "\n";
    return 4;
  }
}
