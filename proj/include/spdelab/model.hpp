#pragma once

// Drift nonlinearities f(t, phi) in slow time, their equilibrium branches, and
// the split of the drift into mean and transverse parts.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spdelab/errors.hpp"
#include "spdelab/spectral.hpp"

namespace spdelab {

enum class DriftKind { AllenCahn, NormalForm, Custom };

inline const char* to_string(DriftKind k) {
  switch (k) {
    case DriftKind::AllenCahn: return "allen_cahn";
    case DriftKind::NormalForm: return "normal_form";
    case DriftKind::Custom: return "custom";
  }
  return "?";
}

namespace detail {
// Shortest round-trip representation, independent of the C locale.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific);
  return std::string(buf, res.ptr);
}
}  // namespace detail

// Callables for a user-supplied drift. The caller is responsible for the
// global growth conditions (even-degree confining polynomial plus bounded
// part); they are not verified here.
struct CustomDrift {
  std::string name;
  std::function<double(double, double)> f;
  std::function<double(double, double)> df;
  std::function<double(double, double)> ddf;
  std::function<double(double, double)> potential;  // optional, f = -dU/dphi
  double linear_rate = 0.0;
};

class DriftModel {
 public:
  // f(t, phi) = phi - phi^3 + A cos t
  static DriftModel allen_cahn(double amplitude) {
    if (!(amplitude >= 0.0)) throw InvalidArgument("Allen-Cahn amplitude must be >= 0");
    return DriftModel(DriftKind::AllenCahn, {{"A", amplitude}}, 4);
  }

  // f(t, phi) = (delta + a1 t^2) - phi^2 - cubic phi^3
  static DriftModel normal_form(double delta, double cubic = 0.0, double a1 = 1.0) {
    if (!(delta >= 0.0)) throw InvalidArgument("normal form gap delta must be >= 0");
    // With cubic = 0 the potential is cubic and the model is only local.
    return DriftModel(DriftKind::NormalForm, {{"a1", a1}, {"cubic", cubic}, {"delta", delta}},
                      cubic > 0.0 ? 4 : 3);
  }

  // f(t, phi) = rate * phi + offset. The stepper integrates the linear part
  // exactly.
  static DriftModel linear(double rate, double offset = 0.0) {
    CustomDrift c;
    c.name = "linear";
    c.f = [rate, offset](double, double u) { return rate * u + offset; };
    c.df = [rate](double, double) { return rate; };
    c.ddf = [](double, double) { return 0.0; };
    c.potential = [rate, offset](double, double u) { return -0.5 * rate * u * u - offset * u; };
    c.linear_rate = rate;
    return custom(std::move(c), 2, 0.0, {{"offset", offset}, {"rate", rate}});
  }

  // Time-independent f(phi) = delta - phi^2.
  static DriftModel frozen_quadratic(double delta) {
    CustomDrift c;
    c.name = "quadratic";
    c.f = [delta](double, double u) { return delta - u * u; };
    c.df = [](double, double u) { return -2.0 * u; };
    c.ddf = [](double, double) { return -2.0; };
    c.potential = [delta](double, double u) { return -delta * u + u * u * u / 3.0; };
    return custom(std::move(c), 3, 0.0, {{"delta", delta}});
  }

  static DriftModel custom(CustomDrift drift, int degree, double bound,
                           std::map<std::string, double> params = {}) {
    if (!drift.f || !drift.df || !drift.ddf)
      throw InvalidArgument("custom drift needs f, df and ddf");
    DriftModel m(DriftKind::Custom, std::move(params), degree);
    m.bound_ = bound;
    m.custom_ = std::make_shared<const CustomDrift>(std::move(drift));
    return m;
  }

  DriftKind kind() const { return kind_; }
  const std::map<std::string, double>& params() const { return params_; }
  double param(const std::string& key) const {
    auto it = params_.find(key);
    if (it == params_.end()) throw InvalidArgument("model has no parameter '" + key + "'");
    return it->second;
  }
  int potential_degree() const { return degree_; }
  double bounded_part_bound() const { return bound_; }
  std::string custom_name() const { return custom_ ? custom_->name : std::string(); }

  // Rate l such that only f(t, phi) - l phi is treated explicitly in time.
  double linear_rate() const { return custom_ ? custom_->linear_rate : 0.0; }

  double f(double t, double u) const {
    switch (kind_) {
      case DriftKind::AllenCahn: return u - u * u * u + a_ * std::cos(t);
      case DriftKind::NormalForm: return delta_ + a1_ * t * t - u * u - cubic_ * u * u * u;
      case DriftKind::Custom: break;
    }
    return custom_->f(t, u);
  }

  double df(double t, double u) const {
    switch (kind_) {
      case DriftKind::AllenCahn: return 1.0 - 3.0 * u * u;
      case DriftKind::NormalForm: return -2.0 * u - 3.0 * cubic_ * u * u;
      case DriftKind::Custom: break;
    }
    return custom_->df(t, u);
  }

  double ddf(double t, double u) const {
    switch (kind_) {
      case DriftKind::AllenCahn: return -6.0 * u;
      case DriftKind::NormalForm: return -2.0 - 6.0 * cubic_ * u;
      case DriftKind::Custom: break;
    }
    return custom_->ddf(t, u);
  }

  std::optional<double> potential(double t, double u) const {
    switch (kind_) {
      case DriftKind::AllenCahn:
        return -0.5 * u * u + 0.25 * u * u * u * u - a_ * std::cos(t) * u;
      case DriftKind::NormalForm:
        return -(delta_ + a1_ * t * t) * u + u * u * u / 3.0 + 0.25 * cubic_ * u * u * u * u;
      case DriftKind::Custom: break;
    }
    if (custom_->potential) return custom_->potential(t, u);
    return std::nullopt;
  }

  // Canonical text used for digests and manifests.
  std::string describe() const {
    std::string s = std::string("kind=") + to_string(kind_);
    if (custom_) s += ";custom=" + custom_->name;
    for (const auto& [k, v] : params_) s += ";" + k + "=" + detail::format_double(v);
    return s;
  }

 private:
  DriftModel(DriftKind kind, std::map<std::string, double> params, int degree)
      : kind_(kind), params_(std::move(params)), degree_(degree) {
    if (kind_ == DriftKind::AllenCahn) a_ = params_.at("A");
    if (kind_ == DriftKind::NormalForm) {
      delta_ = params_.at("delta");
      cubic_ = params_.at("cubic");
      a1_ = params_.at("a1");
    }
  }

  DriftKind kind_;
  std::map<std::string, double> params_;
  int degree_ = 0;
  double bound_ = 0.0;
  std::shared_ptr<const CustomDrift> custom_;
  double a_ = 0.0, delta_ = 0.0, cubic_ = 0.0, a1_ = 1.0;
};

// ---------------------------------------------------------------------------
// Equilibrium branches

enum class Stability { Stable, Unstable };

inline const char* to_string(Stability s) { return s == Stability::Stable ? "stable" : "unstable"; }

struct BranchSet {
  double t = 0.0;
  std::vector<double> roots;  // ascending
  std::vector<Stability> stability;
  std::vector<double> a_values;  // df at the root
  std::vector<int> multiplicity;

  std::size_t size() const { return roots.size(); }

  std::optional<double> largest(Stability which) const {
    for (std::size_t i = roots.size(); i-- > 0;)
      if (stability[i] == which) return roots[i];
    return std::nullopt;
  }
};

struct RootScan {
  double bracket = 3.0;     // search [-bracket, bracket]
  int cells = 3000;         // sign-scan resolution
  double merge_tol = 1e-7;  // closer roots are reported as one double root
  double residual_tol = 1e-10;
};

namespace detail {

template <class F>
double bisect(F&& g, double lo, double hi, double glo) {
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    const double gm = g(mid);
    if (gm == 0.0) return mid;
    if ((gm < 0.0) == (glo < 0.0)) {
      lo = mid;
      glo = gm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// A few secant updates, kept only while they reduce |g|.
template <class F>
double secant_polish(F&& g, double x0, double h) {
  double x1 = x0 + h;
  double g0 = g(x0), g1 = g(x1);
  double best = x0, gbest = std::abs(g0);
  for (int it = 0; it < 8 && g1 != g0; ++it) {
    const double x2 = x1 - g1 * (x1 - x0) / (g1 - g0);
    x0 = x1;
    g0 = g1;
    x1 = x2;
    g1 = g(x1);
    if (!std::isfinite(g1)) break;
    if (std::abs(g1) < gbest) {
      best = x1;
      gbest = std::abs(g1);
    }
    if (g1 == 0.0) break;
  }
  return best;
}

}  // namespace detail

inline BranchSet equilibrium_branches(const DriftModel& model, double t,
                                      const RootScan& scan = {}) {
  const auto f = [&](double u) { return model.f(t, u); };
  const auto df = [&](double u) { return model.df(t, u); };
  const double B = scan.bracket;
  const int n = scan.cells;
  const double h = 2.0 * B / n;

  std::vector<double> cand;
  double u0 = -B, f0 = f(u0), d0 = df(u0);
  if (f0 == 0.0) cand.push_back(u0);
  for (int i = 1; i <= n; ++i) {
    const double u1 = -B + h * i;
    const double f1 = f(u1), d1 = df(u1);
    if (f1 == 0.0) {
      cand.push_back(u1);
    } else if (f0 != 0.0 && (f0 < 0.0) != (f1 < 0.0)) {
      double r = detail::bisect(f, u0, u1, f0);
      r = detail::secant_polish(f, r, 1e-9 * std::max(1.0, std::abs(r)));
      cand.push_back(r);
    }
    // Tangential roots do not change sign; look for them at critical points.
    if ((d0 < 0.0) != (d1 < 0.0) || d1 == 0.0) {
      const double c = d1 == 0.0 ? u1 : detail::bisect(df, u0, u1, d0);
      if (std::abs(f(c)) <= scan.residual_tol) cand.push_back(c);
    }
    u0 = u1;
    f0 = f1;
    d0 = d1;
  }
  if (cand.empty())
    throw RootBracketExhausted("no equilibrium of the drift in [-" + detail::format_double(B) +
                               ", " + detail::format_double(B) + "] at t=" +
                               detail::format_double(t));
  std::sort(cand.begin(), cand.end());

  BranchSet out;
  out.t = t;
  std::size_t i = 0;
  while (i < cand.size()) {
    std::size_t j = i + 1;
    while (j < cand.size() && cand[j] - cand[i] < scan.merge_tol) ++j;
    // Distinct candidates within the tolerance collapse to one double root;
    // repeated detections of the same simple root are deduplicated.
    const bool collision = cand[j - 1] - cand[i] > 1e-13 * std::max(1.0, std::abs(cand[i])) ||
                           std::abs(df(cand[i])) < 1e-6;
    double r = 0.5 * (cand[i] + cand[j - 1]);
    if (std::abs(f(r)) > std::abs(f(cand[i]))) r = cand[i];
    out.roots.push_back(r);
    out.multiplicity.push_back(collision ? 2 : 1);
    const double a = df(r);
    out.a_values.push_back(a);
    out.stability.push_back(!collision && a < 0.0 ? Stability::Stable : Stability::Unstable);
    i = j;
  }
  return out;
}

// Newton continuation of a simple root from a nearby guess.
inline double polish_root(const DriftModel& model, double t, double guess) {
  double u = guess;
  for (int it = 0; it < 50; ++it) {
    const double fu = model.f(t, u);
    const double d = model.df(t, u);
    if (d == 0.0) break;
    const double step = fu / d;
    u -= step;
    if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(u))) break;
  }
  return u;
}

inline double linearization(const DriftModel& model, double t, double u) {
  return model.df(t, u);
}

inline double critical_amplitude(const DriftModel& model) {
  switch (model.kind()) {
    case DriftKind::AllenCahn: return 2.0 / (3.0 * std::sqrt(3.0));
    case DriftKind::NormalForm: return 0.0;
    case DriftKind::Custom: break;
  }
  throw UnsupportedModel("no analytic branch-collision data for custom drift '" +
                         model.custom_name() + "'");
}

// ---------------------------------------------------------------------------
// Mean / transverse split of the drift

// Drift of the e_0 coefficient for the spatially constant field phi0 e_0.
inline double mean_drift(const DriftModel& model, double t, double phi0, double length) {
  const double sl = std::sqrt(length);
  return sl * model.f(t, phi0 / sl);
}

struct SplitRemainders {
  double b0;            // nonlocal correction to the mean drift
  double a;             // linearization multiplying phi_perp
  SpectralField bperp;  // zero-mean nonlinear remainder
};

// With u0 = phi0/sqrt(L) the spatial mean value and p = phi_perp(x), Taylor's
// formula gives f(u0 + p) = f(u0) + f'(u0) p + f''(u0) p^2 / 2 + R(p). Then
//
//   <e_0, f(phi)> = mean_drift(phi0) + b0,
//   b0    = L^{-1/2} ( f''(u0)/2 ||p||^2 + int R ),
//   a     = f'(u0),
//   bperp = P_perp[ f''(u0)/2 (p^2 - ||p||^2/L) + R - int R / L ].
//
// For L = 1 and f = g - phi^2 - b this is exactly the normal-form split with
// R the cubic Taylor remainder of b.
inline SplitRemainders perp_remainders(const DriftModel& model, double t, double phi0,
                                       const SpectralField& phi_perp) {
  const TorusSpec& spec = phi_perp.spec();
  const double L = spec.length;
  const double sl = std::sqrt(L);
  const double u0 = phi0 / sl;
  const double f0 = model.f(t, u0);
  const double f1 = model.df(t, u0);
  const double f2 = model.ddf(t, u0);

  SpectralField perp = phi_perp;
  perp[0] = 0.0;
  double norm2 = 0.0;
  for (double c : perp.coeffs()) norm2 += c * c;

  const SpectralTransform tr(spec);
  std::vector<double> p(static_cast<std::size_t>(spec.n_grid));
  tr.to_physical(perp.coeffs(), p);
  std::vector<double> rem(p.size());
  double int_r = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double r = model.f(t, u0 + p[j]) - f0 - f1 * p[j] - 0.5 * f2 * p[j] * p[j];
    rem[j] = r;
    int_r += r;
  }
  int_r *= L / static_cast<double>(p.size());

  std::vector<double> local(p.size());
  for (std::size_t j = 0; j < p.size(); ++j)
    local[j] = 0.5 * f2 * (p[j] * p[j] - norm2 / L) + rem[j] - int_r / L;

  SplitRemainders out{(0.5 * f2 * norm2 + int_r) / sl, f1, SpectralField(spec)};
  tr.from_physical(local, out.bperp.coeffs());
  out.bperp[0] = 0.0;
  return out;
}

// Spectral coefficients of x -> f(t, phi(x)), truncated to the cutoff. The
// grid size controls aliasing (n_grid > 4K is alias-free for cubic f).
inline SpectralField drift_apply(const DriftModel& model, double t, const SpectralField& field) {
  const TorusSpec& spec = field.spec();
  const SpectralTransform tr(spec);
  std::vector<double> u(static_cast<std::size_t>(spec.n_grid));
  tr.to_physical(field.coeffs(), u);
  for (double& v : u) v = model.f(t, v);
  SpectralField out(spec);
  tr.from_physical(u, out.coeffs());
  return out;
}

// ---------------------------------------------------------------------------
// Allen-Cahn near its avoided bifurcation

// Near t = pi and phi_c = 1/sqrt(3) the Allen-Cahn drift reads
//   f = (A_c - A) + (A/2) tau^2 - sqrt(3) u^2 - u^3 + O(tau^4),
// with tau = t - pi, u = phi - phi_c. Rescaling t - pi = time_scale * s,
// x = space_scale * y and u = field_scale * v brings the slow-time SPDE to the
// normal form dv = (1/eps')[Delta v + delta' + s^2 - v^2 - cubic' v^3] dt
// + (sigma'/sqrt(eps')) dW with unit space scale.
struct RecentredAllenCahn {
  double t_center = std::numbers::pi;
  double phi_center = 1.0 / std::sqrt(3.0);
  double time_scale = 0.0;   // alpha
  double space_scale = 1.0;  // beta
  double field_scale = 0.0;  // gamma
  double delta = 0.0;
  double cubic = 0.0;
  double eps = 0.0;
  double sigma = 0.0;
  double length = 0.0;

  DriftModel normal_form() const { return DriftModel::normal_form(delta, cubic); }
};

inline RecentredAllenCahn recentre_allen_cahn(double amplitude, double eps, double sigma,
                                              double length) {
  if (!(amplitude > 0.0)) throw InvalidArgument("recentring needs A > 0");
  const double ac = 2.0 / (3.0 * std::sqrt(3.0));
  const double quad = std::sqrt(3.0);
  const double a1 = 0.5 * amplitude;
  RecentredAllenCahn r;
  r.space_scale = 1.0;
  r.field_scale = 1.0 / quad;
  r.time_scale = 1.0 / std::sqrt(a1 * quad);
  const double beta2 = r.space_scale * r.space_scale;
  r.delta = beta2 * (ac - amplitude) / r.field_scale;
  r.cubic = r.field_scale * r.field_scale * beta2;
  r.eps = eps * beta2 / r.time_scale;
  r.sigma = sigma * std::pow(r.space_scale, 1.5) / r.field_scale;
  r.length = length / r.space_scale;
  return r;
}

}  // namespace spdelab
