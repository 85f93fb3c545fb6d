#pragma once

// Exponential Euler stepping of the slow-time SPDE
//
//   d phi = (1/eps) [ -A phi + f(t, phi) ] dt + (sigma / sqrt(eps)) dW,
//
// with A diagonal (eigenvalues mu_k) in the e_k basis. Per mode, the linear
// part (mu_k minus the model's exact linear rate) and the additive noise are
// integrated exactly over each step; the rest of the drift is frozen at the
// start of the step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spdelab/errors.hpp"
#include "spdelab/model.hpp"
#include "spdelab/rng.hpp"
#include "spdelab/spectral.hpp"

namespace spdelab {

struct SimConfig {
  double eps = 1e-2;
  double sigma = 0.0;
  double dt = 5e-4;
  TorusSpec spec{};
  double t_start = 0.0;
  double t_end = 1.0;
  double s_monitor = 0.4;
  std::uint64_t seed = 1;
  int record_stride = 1;

  void validate() const {
    spec.validate();
    if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
    if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be nonnegative");
    if (!(dt > 0.0) || dt > eps) throw InvalidArgument("dt must lie in (0, eps]");
    if (!(t_start < t_end)) throw InvalidArgument("t_start must be before t_end");
    if (!(s_monitor > 0.0 && s_monitor < 0.5))
      throw InvalidArgument("monitoring exponent s must lie in (0, 1/2)");
    if (record_stride < 1) throw InvalidArgument("record_stride must be >= 1");
  }

  long steps() const {
    return std::max(1L, static_cast<long>(std::ceil((t_end - t_start) / dt - 1e-9)));
  }

  // Same configuration with dt shrunk so that whole steps tile [t_start, t_end].
  SimConfig aligned() const {
    SimConfig c = *this;
    c.dt = (t_end - t_start) / static_cast<double>(steps());
    return c;
  }

  double time_at(long i) const {
    return i == steps() ? t_end : t_start + static_cast<double>(i) * dt;
  }

  std::string describe() const {
    using detail::format_double;
    return "eps=" + format_double(eps) + ";sigma=" + format_double(sigma) +
           ";dt=" + format_double(dt) + ";L=" + format_double(spec.length) +
           ";K=" + std::to_string(spec.cutoff) + ";n_grid=" + std::to_string(spec.n_grid) +
           ";t_start=" + format_double(t_start) + ";t_end=" + format_double(t_end) +
           ";s=" + format_double(s_monitor) + ";seed=" + std::to_string(seed) +
           ";stride=" + std::to_string(record_stride);
  }
};

// Standard deviation of the exact stochastic-convolution increment over one
// step for a mode relaxing at rate mu (in fast time units):
//   sigma * sqrt((1 - exp(-2 mu dt/eps)) / (2 mu)),  sigma sqrt(dt/eps) at mu = 0.
// Negative rates (growing modes) use the same closed form.
inline double noise_increment_std(int /*k*/, double dt, double eps, double sigma, double mu) {
  const double h = dt / eps;
  const double x = 2.0 * mu * h;
  if (std::abs(x) < 1e-12) return sigma * std::sqrt(h);
  return sigma * std::sqrt(-std::expm1(-x) / (2.0 * mu));
}

// (1 - exp(-mu dt/eps)) / mu, with limit dt/eps at mu = 0.
inline double drift_weight(double dt, double eps, double mu) {
  const double h = dt / eps;
  const double x = mu * h;
  if (std::abs(x) < 1e-12) return h;
  return -std::expm1(-x) / mu;
}

// Independent noise streams for the 2K+1 modes of one trajectory.
inline std::vector<NormalStream> mode_streams(std::uint64_t seed, std::uint64_t trajectory,
                                              int cutoff) {
  std::vector<NormalStream> out;
  out.reserve(static_cast<std::size_t>(2 * cutoff + 1));
  for (int k = -cutoff; k <= cutoff; ++k) out.emplace_back(seed, trajectory, k);
  return out;
}

class Stepper {
 public:
  Stepper(const SimConfig& cfg, DriftModel model)
      : cfg_(cfg), model_(std::move(model)), transform_(cfg.spec) {
    cfg_.validate();
    const int K = cfg_.spec.cutoff;
    const double ell = model_.linear_rate();
    const auto m = static_cast<std::size_t>(cfg_.spec.modes());
    decay_.resize(m);
    weight_.resize(m);
    noise_.resize(m);
    for (int k = -K; k <= K; ++k) {
      const auto i = static_cast<std::size_t>(k + K);
      const double rate = laplacian_eigenvalue(k, cfg_.spec) - ell;
      decay_[i] = std::exp(-rate * cfg_.dt / cfg_.eps);
      weight_[i] = drift_weight(cfg_.dt, cfg_.eps, rate);
      noise_[i] = noise_increment_std(k, cfg_.dt, cfg_.eps, cfg_.sigma, rate);
    }
    grid_.resize(static_cast<std::size_t>(cfg_.spec.n_grid));
    forcing_.resize(m);
  }

  const SimConfig& config() const { return cfg_; }
  const DriftModel& model() const { return model_; }
  const SpectralTransform& transform() const { return transform_; }

  // Advances `coeffs` from t to t + dt. Draws exactly one normal per mode per
  // step when sigma > 0.
  void advance(std::span<double> coeffs, double t, std::span<NormalStream> streams) {
    const double ell = model_.linear_rate();
    transform_.to_physical(coeffs, grid_);
    for (double& u : grid_) u = model_.f(t, u) - ell * u;
    transform_.from_physical(grid_, forcing_);
    const bool noisy = cfg_.sigma > 0.0;
    bool finite = true;
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
      double c = decay_[i] * coeffs[i] + weight_[i] * forcing_[i];
      if (noisy) c += noise_[i] * streams[i].next();
      finite = finite && std::isfinite(c);
      coeffs[i] = c;
    }
    if (!finite)
      throw NonFinite("non-finite coefficient after step at t=" + detail::format_double(t), t);
  }

 private:
  SimConfig cfg_;
  DriftModel model_;
  SpectralTransform transform_;
  std::vector<double> decay_, weight_, noise_;
  std::vector<double> grid_, forcing_;
};

inline SpectralField step(const SpectralField& state, double t, const SimConfig& cfg,
                          const DriftModel& model, std::span<NormalStream> streams) {
  if (!(state.spec() == cfg.spec)) throw InvalidArgument("state cutoff does not match config");
  Stepper stepper(cfg, model);
  SpectralField out = state;
  stepper.advance(out.coeffs(), t, streams);
  return out;
}

}  // namespace spdelab
