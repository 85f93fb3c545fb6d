#pragma once

// Sample paths of the slow-time SPDE with online detection of exits from the
// concentration sets around the adiabatic solution.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "spdelab/adiabatic.hpp"
#include "spdelab/errors.hpp"
#include "spdelab/model.hpp"
#include "spdelab/spectral.hpp"
#include "spdelab/stepper.hpp"

namespace spdelab {

inline constexpr double kNever = std::numeric_limits<double>::infinity();

// Radii and levels of the monitored sets. Levels d, d0 refer to the spatial
// mean value phi0/sqrt(L).
struct ExitSpec {
  std::optional<double> h;         // |phi0 - phibar0 sqrt(L)| >= h sqrt(zeta)
  std::optional<double> h_perp;    // ||phi_perp||_{H^s} >= h_perp
  std::optional<double> h_stable;  // ||phi - phibar||_{H^s} >= h_stable
  std::optional<double> d_level;   // mean <= -d
  std::optional<double> d0_level;  // mean <= -d0
  // Beyond -d0 the path has left the region where the model is meaningful;
  // stop there.
  bool absorb_at_d0 = true;
  // Stop once every monitored event has occurred (hitting times unchanged).
  bool stop_when_resolved = false;

  void validate() const {
    for (const auto& v : {h, h_perp, h_stable, d_level, d0_level})
      if (v && !(*v > 0.0)) throw InvalidArgument("exit radii and levels must be positive");
    if (d_level && d0_level && !(*d0_level > *d_level))
      throw InvalidArgument("d0_level must exceed d_level");
  }

  std::string describe() const {
    const auto opt = [](const std::optional<double>& v) {
      return v ? detail::format_double(*v) : std::string("none");
    };
    return "h=" + opt(h) + ";h_perp=" + opt(h_perp) + ";h_stable=" + opt(h_stable) +
           ";d=" + opt(d_level) + ";d0=" + opt(d0_level) +
           ";absorb=" + (absorb_at_d0 ? "1" : "0") + ";resolve=" + (stop_when_resolved ? "1" : "0");
  }
};

struct TrajectoryRecord {
  std::vector<double> t_samples;
  std::vector<double> phi0;     // e_0 coefficient
  std::vector<double> perp_hs;  // ||phi_perp||_{H^s}
  double tau_B0 = kNever;
  double tau_Bperp = kNever;
  double tau_B = kNever;
  double tau_minus_d = kNever;
  double tau_minus_d0 = kNever;
  double t_stop = 0.0;
  double phi0_final = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t trajectory = 0;
};

namespace detail {

inline std::vector<double> hs_weights(int cutoff, double s) {
  std::vector<double> w(static_cast<std::size_t>(2 * cutoff + 1));
  for (int k = -cutoff; k <= cutoff; ++k)
    w[static_cast<std::size_t>(k + cutoff)] = std::pow(1.0 + double(k) * k, s);
  return w;
}

}  // namespace detail

// Steps from cfg.t_start to cfg.t_end (dt shrunk to tile the interval). The
// reference for the stable-case tube is the frame's stable track when a frame
// is given, otherwise the deterministic mean-mode solution from the initial
// mean, advanced with the same scheme. Crossing times are the midpoints of
// the bracketing steps.
inline TrajectoryRecord simulate(const SimConfig& config, const DriftModel& model,
                                 const SpectralField& init, const ExitSpec& exits,
                                 const AdiabaticFrame* frame = nullptr,
                                 std::uint64_t trajectory = 0, bool record = true) {
  const SimConfig cfg = config.aligned();
  cfg.validate();
  exits.validate();
  if (!(init.spec() == cfg.spec)) throw InvalidArgument("initial field does not match torus");
  if (exits.h && !(frame && frame->has_stable() && frame->has_zeta()))
    throw InvalidArgument("B0 monitoring needs a frame with the stable track and zeta");

  Stepper stepper(cfg, model);
  auto streams = mode_streams(cfg.seed, trajectory, cfg.spec.cutoff);
  const auto weights = detail::hs_weights(cfg.spec.cutoff, cfg.s_monitor);
  const int K = cfg.spec.cutoff;
  const auto i0 = static_cast<std::size_t>(K);
  const double sl = std::sqrt(cfg.spec.length);
  const bool use_frame = frame && frame->has_stable();

  // Mean-mode companion; same coefficients as the stepper's k = 0 update.
  const double rate0 = -model.linear_rate();
  const double decay0 = std::exp(-rate0 * cfg.dt / cfg.eps);
  const double weight0 = drift_weight(cfg.dt, cfg.eps, rate0);
  double companion = init[0];

  TrajectoryRecord rec;
  rec.seed = cfg.seed;
  rec.trajectory = trajectory;
  SpectralField phi = init;
  auto c = phi.coeffs();

  const auto perp_norm = [&] {
    double acc = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (i != i0) acc += weights[i] * c[i] * c[i];
    return std::sqrt(acc);
  };
  const auto push_sample = [&](double t) {
    rec.t_samples.push_back(t);
    rec.phi0.push_back(c[i0]);
    rec.perp_hs.push_back(perp_norm());
  };
  const auto resolved = [&] {
    return (!exits.h || rec.tau_B0 < kNever) && (!exits.h_perp || rec.tau_Bperp < kNever) &&
           (!exits.h_stable || rec.tau_B < kNever) && (!exits.d_level || rec.tau_minus_d < kNever) &&
           (!exits.d0_level || rec.tau_minus_d0 < kNever);
  };

  if (record) push_sample(cfg.t_start);
  const long n = cfg.steps();
  rec.t_stop = cfg.t_end;
  for (long i = 0; i < n; ++i) {
    const double t0 = cfg.time_at(i);
    const double t1 = cfg.time_at(i + 1);
    stepper.advance(c, t0, streams);
    if (!use_frame)
      companion = decay0 * companion +
                  weight0 * (sl * model.f(t0, companion / sl) + rate0 * companion);

    const double tm = 0.5 * (t0 + t1);
    const double mean = c[i0] / sl;
    const double perp = perp_norm();
    if (exits.h && frame && rec.tau_B0 == kNever) {
      const double ref = sl * frame->interpolate(frame->phibar, t1);
      const double width = *exits.h * std::sqrt(frame->interpolate(frame->zeta, t1));
      if (std::abs(c[i0] - ref) >= width) rec.tau_B0 = tm;
    }
    if (exits.h_perp && rec.tau_Bperp == kNever && perp >= *exits.h_perp) rec.tau_Bperp = tm;
    if (exits.h_stable && rec.tau_B == kNever) {
      const double ref = use_frame ? sl * frame->interpolate(frame->phibar, t1) : companion;
      const double dev = c[i0] - ref;
      if (std::sqrt(perp * perp + dev * dev) >= *exits.h_stable) rec.tau_B = tm;
    }
    if (exits.d_level && rec.tau_minus_d == kNever && mean <= -*exits.d_level) rec.tau_minus_d = tm;
    if (exits.d0_level && rec.tau_minus_d0 == kNever && mean <= -*exits.d0_level)
      rec.tau_minus_d0 = tm;

    const bool last = i + 1 == n;
    const bool absorbed = exits.absorb_at_d0 && rec.tau_minus_d0 < kNever;
    const bool done = exits.stop_when_resolved && resolved();
    if (record && ((i + 1) % cfg.record_stride == 0 || last || absorbed || done)) push_sample(t1);
    if (absorbed || done) {
      rec.t_stop = t1;
      break;
    }
  }
  rec.phi0_final = c[i0];
  return rec;
}

// Gaussian sampling of one linear mode
//   d psi = (1/eps) (-mu_k + a(t)) psi dt + (sigma/sqrt(eps)) dW_k
// on the grid of cfg, using the closed-form mean factor and variance with the
// rate frozen at each step midpoint. Exact in distribution for constant a; for
// a(t) affine the mean factor stays exact. Uses the noise stream of mode k.
inline std::vector<double> simulate_linear_mode(int k, const std::function<double(double)>& a_of_t,
                                                const SimConfig& config,
                                                std::uint64_t trajectory = 0,
                                                double psi0 = 0.0) {
  const SimConfig cfg = config.aligned();
  cfg.validate();
  const double mu = laplacian_eigenvalue(k, cfg.spec);
  NormalStream stream(cfg.seed, trajectory, k);
  const long n = cfg.steps();
  std::vector<double> psi(static_cast<std::size_t>(n + 1));
  psi[0] = psi0;
  for (long i = 0; i < n; ++i) {
    const double t0 = cfg.time_at(i), t1 = cfg.time_at(i + 1);
    const double rate = mu - a_of_t(0.5 * (t0 + t1));  // decay rate
    double next = std::exp(-rate * (t1 - t0) / cfg.eps) * psi[static_cast<std::size_t>(i)];
    if (cfg.sigma > 0.0)
      next += noise_increment_std(k, t1 - t0, cfg.eps, cfg.sigma, rate) * stream.next();
    psi[static_cast<std::size_t>(i + 1)] = next;
  }
  return psi;
}

}  // namespace spdelab
