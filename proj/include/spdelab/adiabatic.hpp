#pragma once

// Deterministic slow-manifold objects near an (avoided) bifurcation: the
// adiabatic solutions tracking the stable and unstable branches, their
// linearizations, the variance scale zeta and the cumulative integrals of the
// linearizations.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "spdelab/errors.hpp"
#include "spdelab/model.hpp"
#include "spdelab/stepper.hpp"

namespace spdelab {

struct AdiabaticFrame {
  DriftModel model = DriftModel::normal_form(0.0);
  double eps = 0.0;
  std::vector<double> t_grid;
  std::vector<double> phibar, abar, alphabar_cum;
  std::vector<double> phihat, ahat, alphahat_cum;
  std::vector<double> zeta;

  bool has_stable() const { return !phibar.empty(); }
  bool has_unstable() const { return !phihat.empty(); }
  bool has_zeta() const { return !zeta.empty(); }
  double t_min() const { return t_grid.front(); }
  double t_max() const { return t_grid.back(); }

  // Linear interpolation of a column on the uniform grid; clamps at the ends.
  double interpolate(const std::vector<double>& column, double t) const {
    const std::size_t n = t_grid.size();
    if (t <= t_grid.front()) return column.front();
    if (t >= t_grid.back()) return column.back();
    const double h = (t_grid.back() - t_grid.front()) / static_cast<double>(n - 1);
    auto i = static_cast<std::size_t>((t - t_grid.front()) / h);
    i = std::min(i, n - 2);
    while (i > 0 && t < t_grid[i]) --i;
    while (i + 2 < n && t > t_grid[i + 1]) ++i;
    const double w = (t - t_grid[i]) / (t_grid[i + 1] - t_grid[i]);
    return (1.0 - w) * column[i] + w * column[i + 1];
  }
};

namespace detail {

// Uniform grid on [-T0, T0] with t_{N-i} = -t_i exactly.
inline std::vector<double> symmetric_grid(double T0, double step) {
  if (!(T0 > 0.0)) throw InvalidArgument("T0 must be positive");
  if (!(step > 0.0)) throw InvalidArgument("grid step must be positive");
  const long n = std::max(2L, static_cast<long>(std::ceil(2.0 * T0 / step - 1e-9)));
  const double h = 2.0 * T0 / static_cast<double>(n);
  std::vector<double> t(static_cast<std::size_t>(n + 1));
  for (long i = 0; i <= n; ++i) {
    if (2 * i == n) t[static_cast<std::size_t>(i)] = 0.0;
    else if (2 * i < n) t[static_cast<std::size_t>(i)] = -T0 + static_cast<double>(i) * h;
    else t[static_cast<std::size_t>(i)] = T0 - static_cast<double>(n - i) * h;
  }
  return t;
}

// One implicit midpoint step of eps y' = f(t, y) from (ta, ya) to tb; either
// direction. Substeps on Newton failure.
inline double implicit_midpoint(const DriftModel& m, double eps, double ta, double ya, double tb,
                                int depth = 0) {
  const double h = tb - ta;
  const double tm = 0.5 * (ta + tb);
  const double c = h / eps;
  double y = ya;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (ya + y);
    const double g = y - ya - c * m.f(tm, mid);
    const double dg = 1.0 - 0.5 * c * m.df(tm, mid);
    if (dg == 0.0 || !std::isfinite(g)) break;
    const double dy = g / dg;
    y -= dy;
    if (std::abs(dy) <= 1e-15 * (1.0 + std::abs(y))) return y;
  }
  if (depth >= 20)
    throw StiffnessFailure("implicit midpoint did not converge near t=" + format_double(ta));
  const double half = implicit_midpoint(m, eps, ta, ya, tm, depth + 1);
  return implicit_midpoint(m, eps, tm, half, tb, depth + 1);
}

inline std::vector<double> cumulative_trapezoid(const std::vector<double>& t,
                                                const std::vector<double>& v) {
  std::vector<double> out(t.size(), 0.0);
  for (std::size_t i = 1; i < t.size(); ++i)
    out[i] = out[i - 1] + 0.5 * (t[i] - t[i - 1]) * (v[i] + v[i - 1]);
  return out;
}

inline double require_root(std::optional<double> r, const char* what, double t) {
  if (!r) throw RootBracketExhausted(std::string("no ") + what + " equilibrium at t=" +
                                     format_double(t));
  return *r;
}

}  // namespace detail

// Adiabatic solution started on the largest stable equilibrium at -T0 and
// integrated forward with the implicit midpoint rule.
inline AdiabaticFrame track_stable(const DriftModel& model, double eps, double T0,
                                   double grid_step) {
  if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
  if (grid_step > eps / 4.0) throw InvalidArgument("grid_step must not exceed eps/4");
  AdiabaticFrame fr;
  fr.model = model;
  fr.eps = eps;
  fr.t_grid = detail::symmetric_grid(T0, grid_step);
  const auto& t = fr.t_grid;
  fr.phibar.resize(t.size());
  fr.phibar[0] = detail::require_root(equilibrium_branches(model, t[0]).largest(Stability::Stable),
                                      "stable", t[0]);
  for (std::size_t i = 1; i < t.size(); ++i)
    fr.phibar[i] = detail::implicit_midpoint(model, eps, t[i - 1], fr.phibar[i - 1], t[i]);
  fr.abar.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) fr.abar[i] = model.df(t[i], fr.phibar[i]);
  fr.alphabar_cum = detail::cumulative_trapezoid(t, fr.abar);
  return fr;
}

// Adiabatic solution tracking the (largest) unstable equilibrium. It attracts
// in reversed time, so it is integrated backwards from +T0.
inline AdiabaticFrame track_unstable(const DriftModel& model, double eps, double T0,
                                     double grid_step) {
  if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
  if (grid_step > eps / 4.0) throw InvalidArgument("grid_step must not exceed eps/4");
  AdiabaticFrame fr;
  fr.model = model;
  fr.eps = eps;
  fr.t_grid = detail::symmetric_grid(T0, grid_step);
  const auto& t = fr.t_grid;
  const std::size_t n = t.size();
  fr.phihat.resize(n);
  fr.phihat[n - 1] = detail::require_root(
      equilibrium_branches(model, t[n - 1]).largest(Stability::Unstable), "unstable", t[n - 1]);
  for (std::size_t i = n - 1; i-- > 0;)
    fr.phihat[i] = detail::implicit_midpoint(model, eps, t[i + 1], fr.phihat[i + 1], t[i]);
  fr.ahat.resize(n);
  for (std::size_t i = 0; i < n; ++i) fr.ahat[i] = model.df(t[i], fr.phihat[i]);
  fr.alphahat_cum = detail::cumulative_trapezoid(t, fr.ahat);
  return fr;
}

// eps zeta' = 2 abar zeta + 1, zeta(start) = 1 / (2 |abar(start)|), implicit
// midpoint on the frame grid (exact for constant abar at the fixed point).
inline std::vector<double> zeta_solve(const AdiabaticFrame& frame) {
  if (!frame.has_stable()) throw InvalidArgument("zeta_solve needs the stable track");
  const auto& t = frame.t_grid;
  const auto& a = frame.abar;
  std::vector<double> z(t.size());
  z[0] = 1.0 / (2.0 * std::abs(a[0]));
  for (std::size_t i = 1; i < t.size(); ++i) {
    const double c = (t[i] - t[i - 1]) / frame.eps;
    const double am = 0.5 * (a[i] + a[i - 1]);
    z[i] = (z[i - 1] * (1.0 + c * am) + c) / (1.0 - c * am);
  }
  return z;
}

// Both tracks and zeta on one grid.
inline AdiabaticFrame build_frame(const DriftModel& model, double eps, double T0,
                                  double grid_step) {
  AdiabaticFrame fr = track_stable(model, eps, T0, grid_step);
  AdiabaticFrame un = track_unstable(model, eps, T0, grid_step);
  fr.phihat = std::move(un.phihat);
  fr.ahat = std::move(un.ahat);
  fr.alphahat_cum = std::move(un.alphahat_cum);
  fr.zeta = zeta_solve(fr);
  return fr;
}

enum class Track { Bar, Hat };

// Integral of the linearization along the chosen track from t1 to t.
inline double alpha_integral(const AdiabaticFrame& frame, double t, double t1, Track which) {
  const auto& cum = which == Track::Bar ? frame.alphabar_cum : frame.alphahat_cum;
  if (cum.empty()) throw InvalidArgument("frame lacks the requested track");
  const double lo = frame.t_min(), hi = frame.t_max();
  const double slack = 1e-12 * std::max(1.0, hi - lo);
  for (double s : {t, t1})
    if (s < lo - slack || s > hi + slack)
      throw OutOfRange("alpha_integral: time " + detail::format_double(s) +
                       " outside the frame grid");
  if (t == t1) return 0.0;
  return frame.interpolate(cum, t) - frame.interpolate(cum, t1);
}

// Envelope constants c <= zeta(t) * max(|t|, scale) <= C on the grid.
struct ZetaEnvelope {
  double lower;
  double upper;
};

inline ZetaEnvelope zeta_envelope(const AdiabaticFrame& frame, double scale) {
  ZetaEnvelope e{INFINITY, 0.0};
  for (std::size_t i = 0; i < frame.t_grid.size(); ++i) {
    const double v = frame.zeta[i] * std::max(std::abs(frame.t_grid[i]), scale);
    e.lower = std::min(e.lower, v);
    e.upper = std::max(e.upper, v);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Deterministic PDE tracking in the stable case

struct PdeTrack {
  std::vector<double> times;
  std::vector<SpectralField> fields;
  std::vector<double> branch;  // phi*(t), physical value
  double max_gap_h1 = 0.0;     // max_t ||phi(t) - phi*(t) e_0||_{H^1}
  double max_perp_h1 = 0.0;    // max_t ||phi_perp(t)||_{H^1}
};

// Runs the sigma = 0 dynamics from the constant field on the largest stable
// equilibrium at t = 0 and measures the distance to the frozen branch. The
// branch is continued by Newton from the previous time.
inline PdeTrack deterministic_pde_track(const DriftModel& model, double eps,
                                        const TorusSpec& spec, double T, double dt = 0.0,
                                        int stride = 1) {
  SimConfig cfg;
  cfg.eps = eps;
  cfg.sigma = 0.0;
  cfg.dt = dt > 0.0 ? dt : eps / 20.0;
  cfg.spec = spec;
  cfg.t_start = 0.0;
  cfg.t_end = T;
  cfg.record_stride = stride;
  cfg = cfg.aligned();
  Stepper stepper(cfg, model);

  double root = detail::require_root(equilibrium_branches(model, 0.0).largest(Stability::Stable),
                                     "stable", 0.0);
  const double sl = std::sqrt(spec.length);
  SpectralField phi = SpectralField::basis(spec, 0, root * sl);
  std::vector<NormalStream> no_noise;

  PdeTrack out;
  const auto measure = [&](double t, bool keep) {
    SpectralField gap = phi;
    gap[0] -= root * sl;
    out.max_gap_h1 = std::max(out.max_gap_h1, hs_norm(gap, 1.0));
    gap[0] = 0.0;
    out.max_perp_h1 = std::max(out.max_perp_h1, hs_norm(gap, 1.0));
    if (keep) {
      out.times.push_back(t);
      out.fields.push_back(phi);
      out.branch.push_back(root);
    }
  };
  measure(0.0, true);
  const long n = cfg.steps();
  for (long i = 0; i < n; ++i) {
    const double t0 = cfg.time_at(i);
    stepper.advance(phi.coeffs(), t0, no_noise);
    const double t1 = cfg.time_at(i + 1);
    root = polish_root(model, t1, root);
    measure(t1, (i + 1) % stride == 0 || i + 1 == n);
  }
  return out;
}

}  // namespace spdelab
