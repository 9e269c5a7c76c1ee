#pragma once

// Affine predictor and training-checkpoint files: one line of JSON header
// followed by GDTF blobs whose byte lengths the header lists in order.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/gdtf.hpp"
#include "gdiff/schedule.hpp"
#include "gdiff/score_model.hpp"

namespace gdiff {

inline constexpr int kPredictorFormatVersion = 1;

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

namespace detail {

inline std::string pack(nlohmann::json header, const std::vector<std::pair<std::string, std::vector<double>>>& arrays) {
  std::string blobs;
  header["payloads"] = nlohmann::json::array();
  for (const auto& [name, values] : arrays) {
    const Field f(Shape{std::max<std::size_t>(values.size(), 1)},
                  values.empty() ? std::vector<double>{0.0} : values);
    const std::string blob = encode_gdtf(f);
    header["payloads"].push_back({{"name", name}, {"bytes", blob.size()}, {"count", values.size()}});
    blobs += blob;
  }
  return header.dump() + "\n" + blobs;
}

struct Unpacked {
  nlohmann::json header;
  std::vector<std::pair<std::string, std::vector<double>>> arrays;

  const std::vector<double>& get(const std::string& name) const {
    for (const auto& [n, v] : arrays) {
      if (n == name) return v;
    }
    fail(ErrorKind::InvalidArgument, "missing payload '" + name + "'");
  }
};

inline Unpacked unpack(const std::string& bytes, const std::string& expected_format) {
  const auto nl = bytes.find('\n');
  require(nl != std::string::npos, ErrorKind::Truncated, "missing header line");
  Unpacked u;
  try {
    u.header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::BadMagic, std::string("unreadable header: ") + e.what());
  }
  if (u.header.value("format", std::string{}) != expected_format) {
    fail(ErrorKind::BadMagic, "expected a " + expected_format + " file");
  }
  if (u.header.value("version", -1) != kPredictorFormatVersion) {
    fail(ErrorKind::VersionMismatch, "unsupported " + expected_format + " version");
  }
  std::size_t offset = nl + 1;
  for (const auto& p : u.header.at("payloads")) {
    const auto n = p.at("bytes").get<std::size_t>();
    require(offset + n <= bytes.size(), ErrorKind::Truncated, "payload truncated");
    Field f = decode_gdtf(bytes.substr(offset, n));
    std::vector<double> v(f.data().begin(), f.data().end());
    v.resize(p.at("count").get<std::size_t>());
    u.arrays.emplace_back(p.at("name").get<std::string>(), std::move(v));
    offset += n;
  }
  return u;
}

inline nlohmann::json bins_header(const AffineBins& b) {
  nlohmann::json h;
  h["dims"] = b.dims;
  h["n_time_bins"] = b.n_time_bins;
  h["spectral_lo"] = b.spectral_lo;
  h["spectral_hi"] = b.spectral_hi;
  h["n_spectral_bins"] = b.n_spectral_bins;
  std::vector<double> time_edges;
  for (std::size_t i = 0; i <= b.n_time_bins; ++i) time_edges.push_back(static_cast<double>(i) / static_cast<double>(b.n_time_bins));
  h["time_edges"] = time_edges;
  std::vector<double> spectral_edges;
  for (std::size_t i = 0; i < b.effective_spectral_bins(); ++i) spectral_edges.push_back(b.spectral_bin_range(i).first);
  spectral_edges.push_back(b.spectral_hi);
  h["spectral_edges"] = spectral_edges;
  return h;
}

inline AffineBins bins_from_header(const nlohmann::json& h) {
  AffineBins b;
  b.dims = h.at("dims").get<Shape>();
  b.n_time_bins = h.at("n_time_bins").get<std::size_t>();
  b.spectral_lo = h.at("spectral_lo").get<double>();
  b.spectral_hi = h.at("spectral_hi").get<double>();
  b.n_spectral_bins = h.at("n_spectral_bins").get<std::size_t>();
  b.validate();
  return b;
}

inline AffineSpectralPredictor predictor_from(const Unpacked& u) {
  AffineSpectralPredictor m(bins_from_header(u.header));
  const auto& g = u.get("gains");
  const auto& c = u.get("biases");
  require(g.size() == m.n_coefficients() && c.size() == m.n_coefficients(), ErrorKind::InvalidArgument,
          "coefficient count does not match the bin layout");
  m.gains() = g;
  m.biases() = c;
  return m;
}

}  // namespace detail

inline std::string encode_predictor(const AffineSpectralPredictor& m, const DiffusionSchedule& schedule) {
  auto h = detail::bins_header(m.bins());
  h["format"] = "gdiff-affine-predictor";
  h["version"] = kPredictorFormatVersion;
  h["schedule_hash"] = hex64(schedule.hash());
  return detail::pack(h, {{"gains", m.gains()}, {"biases", m.biases()}});
}

struct LoadedPredictor {
  AffineSpectralPredictor predictor;
  std::string schedule_hash;
};

inline LoadedPredictor decode_predictor(const std::string& bytes) {
  const auto u = detail::unpack(bytes, "gdiff-affine-predictor");
  return {detail::predictor_from(u), u.header.at("schedule_hash").get<std::string>()};
}

inline void save_predictor(const AffineSpectralPredictor& m, const DiffusionSchedule& s, const std::filesystem::path& p) {
  detail::write_file(p, encode_predictor(m, s));
}

inline LoadedPredictor load_predictor(const std::filesystem::path& p) { return decode_predictor(detail::read_file(p)); }

inline std::string encode_checkpoint(const TrainState& st, const DiffusionSchedule& schedule, std::uint64_t seed) {
  auto h = detail::bins_header(st.predictor.bins());
  h["format"] = "gdiff-train-checkpoint";
  h["version"] = kPredictorFormatVersion;
  h["schedule_hash"] = hex64(schedule.hash());
  h["seed"] = seed;
  h["epoch"] = st.epoch;
  h["step_size"] = st.step_size;
  h["avg_count"] = st.avg_count;
  return detail::pack(h, {{"gains", st.predictor.gains()},
                          {"biases", st.predictor.biases()},
                          {"vel_gain", st.vel_gain},
                          {"vel_bias", st.vel_bias},
                          {"curv_sum", st.curv_sum},
                          {"curv_count", st.curv_count},
                          {"avg_gain", st.avg_gain},
                          {"avg_bias", st.avg_bias},
                          {"samples_per_bin", st.samples_per_bin},
                          {"epoch_loss", st.epoch_loss}});
}

struct LoadedCheckpoint {
  TrainState state;
  std::string schedule_hash;
  std::uint64_t seed = 0;
};

inline LoadedCheckpoint decode_checkpoint(const std::string& bytes) {
  const auto u = detail::unpack(bytes, "gdiff-train-checkpoint");
  LoadedCheckpoint c{TrainState(detail::predictor_from(u)), u.header.at("schedule_hash").get<std::string>(),
                     u.header.at("seed").get<std::uint64_t>()};
  auto& st = c.state;
  st.epoch = u.header.at("epoch").get<std::size_t>();
  st.step_size = u.header.at("step_size").get<double>();
  st.avg_count = u.header.at("avg_count").get<double>();
  st.vel_gain = u.get("vel_gain");
  st.vel_bias = u.get("vel_bias");
  st.curv_sum = u.get("curv_sum");
  st.curv_count = u.get("curv_count");
  st.avg_gain = u.get("avg_gain");
  st.avg_bias = u.get("avg_bias");
  st.samples_per_bin = u.get("samples_per_bin");
  st.epoch_loss = u.get("epoch_loss");
  return c;
}

}  // namespace gdiff
