#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gdiff/error.hpp"
#include "gdiff/rng.hpp"

namespace gdiff {

using Shape = std::vector<std::size_t>;
using Complex = std::complex<double>;

inline std::size_t shape_size(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

inline void validate_shape(const Shape& dims) {
  require(!dims.empty() && dims.size() <= 2, ErrorKind::InvalidArgument,
          "grids must be 1D or 2D, got ndim=" + std::to_string(dims.size()));
  for (auto n : dims) require(n >= 1, ErrorKind::InvalidArgument, "grid extent must be >= 1");
}

inline std::string shape_string(const Shape& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s;
}

/// Real signal on a periodic 1D/2D grid, row-major.
class Field {
 public:
  Field() = default;

  explicit Field(Shape dims) : dims_(std::move(dims)) {
    validate_shape(dims_);
    data_.assign(shape_size(dims_), 0.0);
  }

  Field(Shape dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate_shape(dims_);
    require(data_.size() == shape_size(dims_), ErrorKind::InvalidArgument,
            "data length " + std::to_string(data_.size()) + " does not match shape " + shape_string(dims_));
  }

  static Field constant(const Shape& dims, double value) {
    Field f(dims);
    std::fill(f.data_.begin(), f.data_.end(), value);
    return f;
  }

  static Field white_noise(const Shape& dims, RngStream& rng) {
    Field f(dims);
    for (auto& v : f.data_) v = rng.normal();
    return f;
  }

  const Shape& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t row, std::size_t col) { return data_[row * dims_.back() + col]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * dims_.back() + col]; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double squared_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
  }

  double mean() const { return std::accumulate(data_.begin(), data_.end(), 0.0) / static_cast<double>(size()); }

  Field& operator+=(const Field& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Field& operator-=(const Field& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Field& operator*=(double c) {
    for (auto& v : data_) v *= c;
    return *this;
  }

  friend Field operator+(Field a, const Field& b) { return a += b; }
  friend Field operator-(Field a, const Field& b) { return a -= b; }
  friend Field operator*(Field a, double c) { return a *= c; }
  friend Field operator*(double c, Field a) { return a *= c; }

  friend bool operator==(const Field& a, const Field& b) { return a.dims_ == b.dims_ && a.data_ == b.data_; }

  void check_same(const Field& o) const {
    require(dims_ == o.dims_, ErrorKind::InvalidArgument,
            "shape mismatch: " + shape_string(dims_) + " vs " + shape_string(o.dims_));
  }

 private:
  Shape dims_;
  std::vector<double> data_;
};

/// DFT coefficients under the unitary convention.
struct SpectralField {
  Shape dims;
  std::vector<Complex> coeffs;

  std::size_t size() const { return coeffs.size(); }

  double squared_norm() const {
    double s = 0.0;
    for (const auto& c : coeffs) s += std::norm(c);
    return s;
  }
};

// ---------------------------------------------------------------------------
// Frequency bookkeeping

/// Integer frequency of index j on an axis of length n, in [-n/2, n/2).
inline long signed_frequency(std::size_t j, std::size_t n) {
  const auto jj = static_cast<long>(j);
  const auto nn = static_cast<long>(n);
  return jj < (nn + 1) / 2 ? jj : jj - nn;
}

/// Per-mode geometry for a grid: Euclidean |k| and the index of -k.
struct ModeGrid {
  Shape dims;
  std::vector<double> radius;
  std::vector<long> radius_sq;
  std::vector<std::size_t> mirror;

  explicit ModeGrid(const Shape& d) : dims(d) {
    validate_shape(dims);
    const std::size_t n = shape_size(dims);
    radius.resize(n);
    radius_sq.resize(n);
    mirror.resize(n);
    if (dims.size() == 1) {
      const std::size_t n0 = dims[0];
      for (std::size_t j = 0; j < n0; ++j) {
        const long k = signed_frequency(j, n0);
        radius_sq[j] = k * k;
        mirror[j] = (n0 - j) % n0;
      }
    } else {
      const std::size_t n0 = dims[0], n1 = dims[1];
      for (std::size_t i = 0; i < n0; ++i) {
        const long k0 = signed_frequency(i, n0);
        for (std::size_t j = 0; j < n1; ++j) {
          const long k1 = signed_frequency(j, n1);
          const std::size_t idx = i * n1 + j;
          radius_sq[idx] = k0 * k0 + k1 * k1;
          mirror[idx] = ((n0 - i) % n0) * n1 + (n1 - j) % n1;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) radius[i] = std::sqrt(static_cast<double>(radius_sq[i]));
  }

  std::size_t size() const { return radius.size(); }

  /// Integer-radius shell index, round(|k|).
  std::size_t shell(std::size_t idx) const { return static_cast<std::size_t>(std::lround(radius[idx])); }

  std::size_t n_shells() const {
    std::size_t m = 0;
    for (std::size_t i = 0; i < size(); ++i) m = std::max(m, shell(i));
    return m + 1;
  }
};

// ---------------------------------------------------------------------------
// Transforms

namespace detail {

class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  fftw_plan get(const Shape& dims, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_pair(dims, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const std::size_t n = shape_size(dims);
    auto* in = fftw_alloc_complex(n);
    auto* out = fftw_alloc_complex(n);
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    fftw_plan plan = dims.size() == 1
                         ? fftw_plan_dft_1d(static_cast<int>(dims[0]), in, out, sign, flags)
                         : fftw_plan_dft_2d(static_cast<int>(dims[0]), static_cast<int>(dims[1]), in, out, sign, flags);
    fftw_free(in);
    fftw_free(out);
    require(plan != nullptr, ErrorKind::Numeric, "fftw plan creation failed for " + shape_string(dims));
    plans_.emplace(key, plan);
    return plan;
  }

  FftPlanCache(const FftPlanCache&) = delete;
  FftPlanCache& operator=(const FftPlanCache&) = delete;

 private:
  FftPlanCache() = default;
  ~FftPlanCache() {
    for (auto& [_, p] : plans_) fftw_destroy_plan(p);
  }

  std::mutex mutex_;
  std::map<std::pair<Shape, int>, fftw_plan> plans_;
};

inline void execute_unitary(const Shape& dims, int sign, std::vector<Complex>& in, std::vector<Complex>& out) {
  fftw_plan plan = FftPlanCache::instance().get(dims, sign);
  out.resize(in.size());
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(in.data()), reinterpret_cast<fftw_complex*>(out.data()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(in.size()));
  for (auto& c : out) c *= scale;
}

}  // namespace detail

/// Forward unitary DFT, both directions scaled by 1/sqrt(N).
inline SpectralField dft(const Field& f) {
  require(!f.empty(), ErrorKind::InvalidArgument, "dft of an empty field");
  require(f.all_finite(), ErrorKind::NonFinite, "dft input contains NaN/Inf");
  std::vector<Complex> in(f.data().begin(), f.data().end());
  SpectralField s{f.dims(), {}};
  detail::execute_unitary(f.dims(), FFTW_FORWARD, in, s.coeffs);
  return s;
}

/// Complex inverse transform without the real-output check.
inline std::vector<Complex> idft_complex(const SpectralField& s) {
  validate_shape(s.dims);
  require(s.coeffs.size() == shape_size(s.dims), ErrorKind::InvalidArgument, "coefficient count mismatch");
  std::vector<Complex> in = s.coeffs;
  std::vector<Complex> out;
  detail::execute_unitary(s.dims, FFTW_BACKWARD, in, out);
  return out;
}

inline constexpr double kImagResidueTolerance = 1e-10;

/// Inverse unitary DFT back to a real field.
///
/// Imaginary residue up to 1e-10 (relative to max(1, max |value|)) is dropped;
/// anything larger means the spectrum was not Hermitian.
inline Field idft(const SpectralField& s) {
  auto out = idft_complex(s);
  double max_re = 1.0, max_im = 0.0;
  for (const auto& c : out) {
    require(std::isfinite(c.real()) && std::isfinite(c.imag()), ErrorKind::NonFinite, "idft produced NaN/Inf");
    max_re = std::max(max_re, std::abs(c.real()));
    max_im = std::max(max_im, std::abs(c.imag()));
  }
  if (max_im > kImagResidueTolerance * max_re) {
    fail(ErrorKind::HermitianBroken, "imaginary residue " + std::to_string(max_im) + " after inverse transform");
  }
  std::vector<double> data(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) data[i] = out[i].real();
  return Field(s.dims, std::move(data));
}

/// Multiply every coefficient by a real per-mode gain and transform back.
inline Field apply_spectral_gain(const Field& f, std::span<const double> gain) {
  require(gain.size() == f.size(), ErrorKind::InvalidArgument, "gain length mismatch");
  auto s = dft(f);
  for (std::size_t i = 0; i < s.coeffs.size(); ++i) s.coeffs[i] *= gain[i];
  return idft(s);
}

}  // namespace gdiff
