#pragma once

// Real Fourier representation of fields on the torus R/LZ.
//
// A field is stored by its coefficients c_k, k = -K..K, in the orthonormal
// real basis
//
//   e_0(x) = 1/sqrt(L)
//   e_k(x) = sqrt(2/L) cos(2 pi k x / L)   (k > 0)
//   e_k(x) = sqrt(2/L) sin(2 pi k x / L)   (k < 0)
//
// The linear operator driving the dynamics is diagonal in this basis with
// eigenvalues mu_k = k^2 pi^2 / L^2 (see laplacian_eigenvalue).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spdelab/errors.hpp"

namespace spdelab {

struct TorusSpec {
  double length = 1.0;  // L
  int cutoff = 16;      // K, modes k in [-K, K]
  int n_grid = 65;      // physical samples, >= 2K+1

  // Grid large enough to project a cubic nonlinearity without aliasing.
  static int default_grid(int cutoff) { return 4 * cutoff + 1; }

  static TorusSpec make(double length, int cutoff, int n_grid = 0) {
    TorusSpec spec{length, cutoff, n_grid > 0 ? n_grid : default_grid(cutoff)};
    spec.validate();
    return spec;
  }

  void validate() const {
    if (!(length > 0.0) || !std::isfinite(length))
      throw InvalidArgument("torus length must be positive and finite");
    if (cutoff < 0) throw InvalidArgument("spectral cutoff must be nonnegative");
    if (n_grid < 2 * cutoff + 1)
      throw InvalidArgument("n_grid must be at least 2K+1 (got " +
                            std::to_string(n_grid) + " for K=" +
                            std::to_string(cutoff) + ")");
  }

  int modes() const { return 2 * cutoff + 1; }
  double grid_point(int j) const { return length * j / n_grid; }

  friend bool operator==(const TorusSpec&, const TorusSpec&) = default;
};

inline double basis_eval(int k, double x, const TorusSpec& spec) {
  const double L = spec.length;
  if (k == 0) return 1.0 / std::sqrt(L);
  const double arg = 2.0 * std::numbers::pi * k * x / L;
  const double amp = std::sqrt(2.0 / L);
  return k > 0 ? amp * std::cos(arg) : amp * std::sin(arg);
}

inline double laplacian_eigenvalue(int k, const TorusSpec& spec) {
  const double q = k * std::numbers::pi / spec.length;
  return q * q;
}

// <k> = (1 + k^2)^(1/2)
inline double japanese_bracket(int k) { return std::sqrt(1.0 + double(k) * k); }

class SpectralField {
 public:
  SpectralField() = default;
  explicit SpectralField(const TorusSpec& spec)
      : spec_(spec), coeffs_(static_cast<std::size_t>(spec.modes()), 0.0) {}
  SpectralField(const TorusSpec& spec, std::vector<double> coeffs)
      : spec_(spec), coeffs_(std::move(coeffs)) {
    if (coeffs_.size() != static_cast<std::size_t>(spec_.modes()))
      throw InvalidArgument("coefficient count does not match 2K+1");
  }

  // Field equal to `value` times the basis vector e_k.
  static SpectralField basis(const TorusSpec& spec, int k, double value = 1.0) {
    SpectralField f(spec);
    f[k] = value;
    return f;
  }

  // Spatially constant field with physical value `value`.
  static SpectralField constant(const TorusSpec& spec, double value) {
    return basis(spec, 0, value * std::sqrt(spec.length));
  }

  const TorusSpec& spec() const { return spec_; }
  int cutoff() const { return spec_.cutoff; }

  double& operator[](int k) { return coeffs_[index(k)]; }
  double operator[](int k) const { return coeffs_[index(k)]; }

  std::span<double> coeffs() { return coeffs_; }
  std::span<const double> coeffs() const { return coeffs_; }

  bool all_finite() const {
    return std::all_of(coeffs_.begin(), coeffs_.end(),
                       [](double c) { return std::isfinite(c); });
  }

  SpectralField& operator+=(const SpectralField& o) {
    check_same(o);
    for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] += o.coeffs_[i];
    return *this;
  }
  SpectralField& operator-=(const SpectralField& o) {
    check_same(o);
    for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] -= o.coeffs_[i];
    return *this;
  }
  SpectralField& operator*=(double a) {
    for (double& c : coeffs_) c *= a;
    return *this;
  }
  friend SpectralField operator+(SpectralField a, const SpectralField& b) { return a += b; }
  friend SpectralField operator-(SpectralField a, const SpectralField& b) { return a -= b; }
  friend SpectralField operator*(double s, SpectralField a) { return a *= s; }

  friend bool operator==(const SpectralField&, const SpectralField&) = default;

 private:
  std::size_t index(int k) const {
    if (k < -spec_.cutoff || k > spec_.cutoff)
      throw OutOfRange("mode index " + std::to_string(k) + " outside cutoff");
    return static_cast<std::size_t>(k + spec_.cutoff);
  }
  void check_same(const SpectralField& o) const {
    if (!(spec_ == o.spec_)) throw InvalidArgument("fields live on different tori");
  }

  TorusSpec spec_{};
  std::vector<double> coeffs_;
};

// Synthesis/analysis matrices for one torus. Reused by the time stepper, where
// the transforms are the inner loop.
class SpectralTransform {
 public:
  explicit SpectralTransform(const TorusSpec& spec)
      : spec_(spec),
        n_(static_cast<std::size_t>(spec.n_grid)),
        m_(static_cast<std::size_t>(spec.modes())),
        synth_(n_ * m_) {
    spec_.validate();
    for (std::size_t j = 0; j < n_; ++j) {
      const double x = spec_.grid_point(static_cast<int>(j));
      for (std::size_t i = 0; i < m_; ++i)
        synth_[j * m_ + i] = basis_eval(static_cast<int>(i) - spec_.cutoff, x, spec_);
    }
  }

  const TorusSpec& spec() const { return spec_; }

  void to_physical(std::span<const double> coeffs, std::span<double> samples) const {
    for (std::size_t j = 0; j < n_; ++j) {
      const double* row = &synth_[j * m_];
      double acc = 0.0;
      for (std::size_t i = 0; i < m_; ++i) acc += row[i] * coeffs[i];
      samples[j] = acc;
    }
  }

  // Uniform-weight quadrature projection; exact on the truncated space.
  void from_physical(std::span<const double> samples, std::span<double> coeffs) const {
    std::fill(coeffs.begin(), coeffs.end(), 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      const double* row = &synth_[j * m_];
      const double v = samples[j];
      for (std::size_t i = 0; i < m_; ++i) coeffs[i] += row[i] * v;
    }
    const double w = spec_.length / static_cast<double>(n_);
    for (double& c : coeffs) c *= w;
  }

 private:
  TorusSpec spec_;
  std::size_t n_;
  std::size_t m_;
  std::vector<double> synth_;  // row-major n_grid x modes, entry e_k(x_j)
};

inline std::vector<double> to_physical(const SpectralField& field) {
  std::vector<double> samples(static_cast<std::size_t>(field.spec().n_grid));
  SpectralTransform(field.spec()).to_physical(field.coeffs(), samples);
  return samples;
}

inline SpectralField from_physical(std::span<const double> samples, const TorusSpec& spec) {
  if (samples.size() != static_cast<std::size_t>(spec.n_grid))
    throw InvalidArgument("sample count " + std::to_string(samples.size()) +
                          " does not match n_grid " + std::to_string(spec.n_grid));
  SpectralField out(spec);
  SpectralTransform(spec).from_physical(samples, out.coeffs());
  return out;
}

// sqrt(sum_k <k>^{2s} c_k^2)
inline double hs_norm(std::span<const double> coeffs, int cutoff, double s) {
  double acc = 0.0;
  for (int k = -cutoff; k <= cutoff; ++k) {
    const double c = coeffs[static_cast<std::size_t>(k + cutoff)];
    if (c == 0.0) continue;
    acc += std::pow(1.0 + double(k) * k, s) * c * c;
  }
  return std::sqrt(acc);
}

inline double hs_norm(const SpectralField& field, double s) {
  return hs_norm(field.coeffs(), field.cutoff(), s);
}

struct MeanTransverse {
  double mean;          // coefficient on e_0
  SpectralField perp;   // zero-mean remainder
};

inline MeanTransverse mean_transverse_split(const SpectralField& field) {
  MeanTransverse out{field[0], field};
  out.perp[0] = 0.0;
  return out;
}

inline SpectralField recombine(double mean, const SpectralField& perp) {
  SpectralField out = perp;
  out[0] += mean;
  return out;
}

inline double sup_norm_estimate(const SpectralField& field) {
  double m = 0.0;
  for (double v : to_physical(field)) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace spdelab
