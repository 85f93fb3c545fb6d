#pragma once

// Independent reference implementations shared by the unit and acceptance
// tests. Nothing here uses the spectral stepper.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "spdelab/rng.hpp"

namespace oracle {

struct ScalarPath {
  double u_final = 0.0;
  double tau_d = std::numeric_limits<double>::infinity();
  double tau_d0 = std::numeric_limits<double>::infinity();
};

// Euler-Maruyama for eps du = f(t, u) dt + sqrt(eps) sigma dW on [t0, t1] with
// n steps. Level crossings u <= -d, u <= -d0 are taken at step midpoints;
// the path stops at -d0 when d0 > 0.
inline ScalarPath scalar_em(const std::function<double(double, double)>& f, double eps,
                            double sigma, double u0, double t0, double t1, long n,
                            std::uint64_t seed, std::uint64_t path, double d = 0.0,
                            double d0 = 0.0) {
  spdelab::NormalStream z(seed, path, 0, spdelab::StreamDomain::ScalarOracle);
  const double h = (t1 - t0) / static_cast<double>(n);
  const double noise = sigma * std::sqrt(h / eps);
  ScalarPath out;
  double u = u0;
  for (long i = 0; i < n; ++i) {
    const double t = t0 + static_cast<double>(i) * h;
    u += h / eps * f(t, u) + noise * z.next();
    const double tm = t + 0.5 * h;
    if (d > 0.0 && out.tau_d == INFINITY && u <= -d) out.tau_d = tm;
    if (d0 > 0.0 && u <= -d0) {
      out.tau_d0 = tm;
      break;
    }
  }
  out.u_final = u;
  return out;
}

// Asymptotic p-value of the two-sample Kolmogorov-Smirnov statistic with
// Stephens' small-sample correction.
inline double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double dmax = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    dmax = std::max(dmax, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  const double lambda = (ne + 0.12 + 0.11 / ne) * dmax;
  if (lambda < 0.2) return 1.0;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    q += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(q, 0.0, 1.0);
}

inline bool intervals_overlap(double lo1, double hi1, double lo2, double hi2) {
  return lo1 <= hi2 && lo2 <= hi1;
}

}  // namespace oracle
