#pragma once

// Image-quality and spectral summaries.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/field.hpp"

namespace gdiff {

/// 10 log10(peak^2 / MSE); +inf when the inputs are identical.
inline double psnr(const Field& x, const Field& ref, double peak = 1.0) {
  x.check_same(ref);
  require(peak > 0.0, ErrorKind::InvalidArgument, "PSNR peak must be positive");
  // Neumaier summation
  double se = 0.0, comp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = (x[i] - ref[i]) * (x[i] - ref[i]);
    const double t = se + v;
    comp += std::abs(se) >= v ? (se - t) + v : (v - t) + se;
    se = t;
  }
  se += comp;
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak) - 10.0 * std::log10(se / static_cast<double>(x.size()));
}

struct SsimConfig {
  std::size_t window = 11;
  double sd = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double peak = 1.0;
};

/// Normalized 1D Gaussian taps centred on the middle of the window.
inline std::vector<double> gaussian_taps(std::size_t window, double sd) {
  std::vector<double> w(window);
  const double c = 0.5 * static_cast<double>(window - 1);
  double s = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-0.5 * d * d / (sd * sd));
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

namespace detail {

/// Periodic separable filtering with centred taps.
inline std::vector<double> periodic_filter(const std::vector<double>& img, std::size_t rows, std::size_t cols,
                                           const std::vector<double>& taps) {
  const auto half = static_cast<long>(taps.size() / 2);
  std::vector<double> tmp(img.size(), 0.0), out(img.size(), 0.0);
  const auto R = static_cast<long>(rows), C = static_cast<long>(cols);
  for (long r = 0; r < R; ++r) {
    for (long c = 0; c < C; ++c) {
      double s = 0.0;
      for (long t = 0; t < static_cast<long>(taps.size()); ++t) {
        const long cc = ((c + t - half) % C + C) % C;
        s += taps[static_cast<std::size_t>(t)] * img[static_cast<std::size_t>(r * C + cc)];
      }
      tmp[static_cast<std::size_t>(r * C + c)] = s;
    }
  }
  if (rows == 1) return tmp;
  for (long r = 0; r < R; ++r) {
    for (long c = 0; c < C; ++c) {
      double s = 0.0;
      for (long t = 0; t < static_cast<long>(taps.size()); ++t) {
        const long rr = ((r + t - half) % R + R) % R;
        s += taps[static_cast<std::size_t>(t)] * tmp[static_cast<std::size_t>(rr * C + c)];
      }
      out[static_cast<std::size_t>(r * C + c)] = s;
    }
  }
  return out;
}

}  // namespace detail

/// Local SSIM map under a Gaussian window with periodic wrap-around.
inline std::vector<double> ssim_map(const Field& x, const Field& ref, const SsimConfig& cfg = {}) {
  x.check_same(ref);
  const auto& d = x.dims();
  const std::size_t rows = d.size() == 2 ? d[0] : 1;
  const std::size_t cols = d.back();
  require(cfg.window % 2 == 1, ErrorKind::InvalidArgument, "SSIM window must be odd");
  require(cols >= cfg.window && (rows == 1 || rows >= cfg.window), ErrorKind::InvalidArgument,
          "field " + shape_string(d) + " is smaller than the SSIM window");
  const auto taps = gaussian_taps(cfg.window, cfg.sd);
  const auto& a = x.values();
  const auto& b = ref.values();
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = detail::periodic_filter(a, rows, cols, taps);
  const auto mu_b = detail::periodic_filter(b, rows, cols, taps);
  const auto e_aa = detail::periodic_filter(aa, rows, cols, taps);
  const auto e_bb = detail::periodic_filter(bb, rows, cols, taps);
  const auto e_ab = detail::periodic_filter(ab, rows, cols, taps);
  const double c1 = (cfg.k1 * cfg.peak) * (cfg.k1 * cfg.peak);
  const double c2 = (cfg.k2 * cfg.peak) * (cfg.k2 * cfg.peak);
  std::vector<double> m(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    m[i] = ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
           ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return m;
}

inline double ssim(const Field& x, const Field& ref, const SsimConfig& cfg = {}) {
  const auto m = ssim_map(x, ref, cfg);
  double s = 0.0;
  for (double v : m) s += v;
  return s / static_cast<double>(m.size());
}

struct SpectrumEstimate {
  std::vector<double> k;      ///< mean |k| of the modes in each bin
  std::vector<double> power;  ///< mean |f_hat|^2 per bin
  std::vector<std::size_t> count;
  double dc_power = 0.0;
};

/// |dft(f)|^2 averaged over integer radius shells, DC reported separately.
/// n_bins == 0 keeps one bin per shell; otherwise shells are merged evenly.
inline SpectrumEstimate power_spectrum(const Field& f, std::size_t n_bins = 0) {
  const auto fh = dft(f);
  const ModeGrid grid(f.dims());
  std::size_t max_shell = 1;
  for (std::size_t i = 1; i < grid.size(); ++i) max_shell = std::max(max_shell, grid.shell(i));
  const std::size_t bins = n_bins ? std::min(n_bins, max_shell) : max_shell;
  SpectrumEstimate est;
  est.k.assign(bins, 0.0);
  est.power.assign(bins, 0.0);
  est.count.assign(bins, 0);
  est.dc_power = std::norm(fh.coeffs[0]);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const std::size_t shell = std::max<std::size_t>(grid.shell(i), 1);
    const std::size_t b = std::min(bins - 1, (shell - 1) * bins / max_shell);
    est.power[b] += std::norm(fh.coeffs[i]);
    est.k[b] += grid.radius[i];
    ++est.count[b];
  }
  for (std::size_t b = 0; b < bins; ++b) {
    if (est.count[b]) {
      est.power[b] /= static_cast<double>(est.count[b]);
      est.k[b] /= static_cast<double>(est.count[b]);
    }
  }
  return est;
}

}  // namespace gdiff
