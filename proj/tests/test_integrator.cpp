#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "spdelab/integrator.hpp"

using namespace spdelab;

namespace {

SimConfig normal_form_config(double eps, double sigma, int K, double L = 1.0) {
  SimConfig c;
  c.eps = eps;
  c.sigma = sigma;
  c.dt = eps / 20.0;
  c.spec = TorusSpec::make(L, K);
  c.t_start = -0.2;
  c.t_end = 0.2;
  return c;
}

SimConfig linear_config(double sigma, int K) {
  SimConfig c;
  c.eps = 1e-2;
  c.sigma = sigma;
  c.dt = c.eps / 20.0;
  c.spec = TorusSpec::make(1.0, K);
  c.t_start = 0.0;
  c.t_end = 0.1;
  return c;
}

SpectralField on_stable_root(const DriftModel& m, const SimConfig& c) {
  const double root = *equilibrium_branches(m, c.t_start).largest(Stability::Stable);
  return SpectralField::basis(c.spec, 0, root * std::sqrt(c.spec.length));
}

}  // namespace

TEST(Simulate, DeterministicPathStaysInside) {
  const auto model = DriftModel::normal_form(0.04);
  const auto cfg = normal_form_config(1e-2, 0.0, 8);
  const auto frame = build_frame(model, cfg.eps, 0.2, cfg.eps / 10.0);
  ExitSpec ex;
  ex.h = 5.0;
  ex.h_perp = 1.0;
  ex.h_stable = 1.0;
  ex.d_level = 0.5;
  ex.d0_level = 1.0;
  const auto r = simulate(cfg, model, on_stable_root(model, cfg), ex, &frame);
  EXPECT_EQ(r.tau_B0, kNever);
  EXPECT_EQ(r.tau_Bperp, kNever);
  EXPECT_EQ(r.tau_B, kNever);
  EXPECT_EQ(r.tau_minus_d, kNever);
  EXPECT_EQ(r.tau_minus_d0, kNever);
  EXPECT_EQ(r.t_stop, cfg.t_end);
  EXPECT_EQ(r.t_samples.back(), cfg.t_end);
  for (double p : r.perp_hs) EXPECT_LE(p, 1e-12);
}

TEST(Simulate, TinyTransverseRadiusExitsAtOnce) {
  const auto model = DriftModel::normal_form(0.04);
  const auto cfg = normal_form_config(1e-2, 0.05, 8);
  ExitSpec ex;
  ex.h_perp = 1e-12;
  const auto r = simulate(cfg, model, on_stable_root(model, cfg), ex);
  EXPECT_LE(r.tau_Bperp, cfg.t_start + 3.0 * cfg.dt);
}

TEST(Simulate, BitwiseReproducible) {
  const auto model = DriftModel::normal_form(0.04);
  const auto cfg = normal_form_config(1e-2, 0.1, 8);
  ExitSpec ex;
  ex.d_level = 0.2;
  ex.d0_level = 0.4;
  const auto init = on_stable_root(model, cfg);
  const auto a = simulate(cfg, model, init, ex, nullptr, 3);
  const auto b = simulate(cfg, model, init, ex, nullptr, 3);
  const auto c = simulate(cfg, model, init, ex, nullptr, 4);
  EXPECT_EQ(a.phi0, b.phi0);
  EXPECT_EQ(a.perp_hs, b.perp_hs);
  EXPECT_EQ(a.tau_minus_d, b.tau_minus_d);
  EXPECT_NE(a.phi0, c.phi0);
}

TEST(Simulate, ExitProbabilityFallsWithRadius) {
  const auto model = DriftModel::linear(-1.0);
  auto cfg = linear_config(0.1, 2);
  cfg.t_end = 0.02;
  const SpectralField init(cfg.spec);
  const auto exits = [&](double h) {
    ExitSpec ex;
    ex.h_stable = h;
    ex.stop_when_resolved = true;
    int hits = 0;
    for (int i = 0; i < 1000; ++i)
      hits += simulate(cfg, model, init, ex, nullptr, static_cast<std::uint64_t>(i), false).tau_B < kNever;
    return hits;
  };
  const int small = exits(0.05), large = exits(0.1);
  EXPECT_GT(small, large);
  EXPECT_GT(small, 0);
}

TEST(Simulate, HittingTimesMonotoneInRadii) {
  // Globally stable drift, so that paths may run on past -d0.
  const auto model = DriftModel::normal_form(0.04, 1.0);
  const auto cfg = normal_form_config(1e-2, 0.12, 8);
  const auto frame = build_frame(model, cfg.eps, 0.2, cfg.eps / 10.0);
  const auto init = on_stable_root(model, cfg);
  ExitSpec small;
  small.h = 1.0;
  small.h_perp = 0.15;
  small.h_stable = 0.15;
  small.d_level = 0.05;
  small.d0_level = 0.1;
  small.absorb_at_d0 = false;
  ExitSpec large = small;
  large.h = 2.0;
  large.h_perp = 0.25;
  large.h_stable = 0.3;
  large.d_level = 0.1;
  large.d0_level = 0.2;
  for (std::uint64_t i = 0; i < 40; ++i) {
    const auto a = simulate(cfg, model, init, small, &frame, i, false);
    const auto b = simulate(cfg, model, init, large, &frame, i, false);
    EXPECT_LE(a.tau_B0, b.tau_B0);
    EXPECT_LE(a.tau_Bperp, b.tau_Bperp);
    EXPECT_LE(a.tau_B, b.tau_B);
    EXPECT_LE(a.tau_minus_d, b.tau_minus_d);
    EXPECT_LE(a.tau_minus_d0, b.tau_minus_d0);
  }
}

TEST(Simulate, HittingTimesAgreeWithSamples) {
  const auto model = DriftModel::normal_form(0.04);
  const auto cfg = normal_form_config(1e-2, 0.12, 8);
  const auto init = on_stable_root(model, cfg);
  ExitSpec ex;
  ex.h_perp = 0.2;
  ex.d_level = 0.1;
  ex.d0_level = 0.3;
  int checked = 0;
  for (std::uint64_t i = 0; i < 40; ++i) {
    const auto r = simulate(cfg, model, init, ex, nullptr, i);
    const auto check = [&](double tau, auto outside) {
      if (tau == kNever) {
        for (std::size_t j = 0; j < r.t_samples.size(); ++j) EXPECT_FALSE(outside(j));
        return;
      }
      EXPECT_GE(tau, cfg.t_start);
      EXPECT_LE(tau, cfg.t_end);
      std::size_t j = 0;
      while (j < r.t_samples.size() && r.t_samples[j] < tau) {
        EXPECT_FALSE(outside(j)) << "flagged late at sample " << j;
        ++j;
      }
      ASSERT_LT(j, r.t_samples.size());
      EXPECT_TRUE(outside(j));
      EXPECT_NEAR(r.t_samples[j] - tau, 0.5 * (r.t_samples[j] - r.t_samples[j - 1]), 1e-12);
      ++checked;
    };
    check(r.tau_Bperp, [&](std::size_t j) { return r.perp_hs[j] >= 0.2; });
    check(r.tau_minus_d, [&](std::size_t j) { return r.phi0[j] <= -0.1; });
  }
  EXPECT_GT(checked, 5);
}

TEST(Simulate, AbsorbsAtLowerLevel) {
  const auto model = DriftModel::normal_form(0.01);
  const auto cfg = normal_form_config(1e-2, 0.3, 4);
  ExitSpec ex;
  ex.d_level = 0.1;
  ex.d0_level = 0.2;
  bool seen = false;
  for (std::uint64_t i = 0; i < 20 && !seen; ++i) {
    const auto r = simulate(cfg, model, on_stable_root(model, cfg), ex, nullptr, i);
    if (r.tau_minus_d0 == kNever) continue;
    seen = true;
    EXPECT_LE(r.tau_minus_d, r.tau_minus_d0);
    EXPECT_LT(r.t_stop, cfg.t_end);
    EXPECT_EQ(r.t_samples.back(), r.t_stop);
    EXPECT_LE(r.phi0_final, -0.2);
  }
  EXPECT_TRUE(seen);
}

TEST(Simulate, Preconditions) {
  const auto model = DriftModel::normal_form(0.04);
  const auto cfg = normal_form_config(1e-2, 0.1, 4);
  ExitSpec ex;
  ex.h = 1.0;
  EXPECT_THROW(simulate(cfg, model, on_stable_root(model, cfg), ex), InvalidArgument);
  ExitSpec bad;
  bad.d_level = 0.3;
  bad.d0_level = 0.2;
  EXPECT_THROW(simulate(cfg, model, on_stable_root(model, cfg), bad), InvalidArgument);
  EXPECT_THROW(simulate(cfg, model, SpectralField(TorusSpec::make(1.0, 5)), ExitSpec{}), InvalidArgument);
}

TEST(Simulate, ModeZeroMatchesScalarOracle) {
  // With K = 0 the SPDE is the scalar SDE for the mean u = phi0 / sqrt(L),
  // eps du = f(t, u) dt + sqrt(eps) (sigma / sqrt(L)) dW. The cubic term keeps
  // the explicit oracle from diverging on paths that cross the unstable branch.
  const double delta = 0.04, eps = 1e-2, sigma = 0.06;
  const auto model = DriftModel::normal_form(delta, 0.5);
  for (double L : {1.0, 2.0}) {
    const auto cfg = normal_form_config(eps, sigma, 0, L);
    const auto init = on_stable_root(model, cfg);
    const auto f = [&](double t, double u) { return model.f(t, u); };
    const long oracle_steps = 10 * cfg.steps();
    std::vector<double> spde, scalar;
    for (std::uint64_t i = 0; i < 1000; ++i) {
      spde.push_back(simulate(cfg, model, init, ExitSpec{}, nullptr, i, false).phi0_final / std::sqrt(L));
      scalar.push_back(oracle::scalar_em(f, eps, sigma / std::sqrt(L), init[0] / std::sqrt(L), cfg.t_start,
                                         cfg.t_end, oracle_steps, cfg.seed, i)
                           .u_final);
    }
    EXPECT_GT(oracle::ks_two_sample_p(spde, scalar), 0.01) << "L=" << L;
  }
}

TEST(KolmogorovSmirnov, DetectsShift) {
  std::vector<double> a, b, c;
  NormalStream s(5, 0, 0);
  for (int i = 0; i < 1000; ++i) {
    a.push_back(s.next());
    b.push_back(s.next());
    c.push_back(s.next() + 0.3);
  }
  EXPECT_GT(oracle::ks_two_sample_p(a, b), 0.01);
  EXPECT_LT(oracle::ks_two_sample_p(a, c), 1e-6);
}

TEST(SimulateLinearMode, DeterministicDecay) {
  auto cfg = linear_config(0.0, 4);
  cfg.t_end = 0.02;
  const auto a = [](double t) { return -1.0 + 0.5 * t; };
  for (int k : {0, 1, -2}) {
    const auto psi = simulate_linear_mode(k, a, cfg, 0, 1.3);
    const double mu = laplacian_eigenvalue(k, cfg.spec);
    const auto aligned = cfg.aligned();
    for (long i = 0; i <= aligned.steps(); i += 17) {
      const double t = aligned.time_at(i);
      const double alpha = -mu * t - t + 0.25 * t * t;
      const double exact = 1.3 * std::exp(alpha / cfg.eps);
      EXPECT_NEAR(psi[static_cast<std::size_t>(i)], exact, 1e-10 * exact);
    }
  }
}

TEST(SimulateLinearMode, StationaryVariance) {
  auto cfg = linear_config(0.2, 4);
  cfg.t_end = 0.05;
  const auto zero = [](double) { return 0.0; };
  const int n = 10000;
  for (int k : {1, 2}) {
    const double mu = laplacian_eigenvalue(k, cfg.spec);
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = simulate_linear_mode(k, zero, cfg, static_cast<std::uint64_t>(i)).back();
      s1 += x;
      s2 += x * x;
    }
    const double var = s2 / n - (s1 / n) * (s1 / n);
    const double exact = cfg.sigma * cfg.sigma / (2.0 * mu);
    EXPECT_LE(std::abs(var - exact), 3.0 * exact * std::sqrt(2.0 / n)) << "k=" << k;
  }
}

TEST(SimulateLinearMode, VarianceBoundShape) {
  auto cfg = linear_config(0.2, 8);
  cfg.t_end = 0.05;
  const auto a = [](double) { return -0.5; };
  const int n = 2000;
  double c0 = 0.0;
  const auto aligned = cfg.aligned();
  for (int k = 1; k <= 8; ++k) {
    std::vector<double> s1(static_cast<std::size_t>(aligned.steps() + 1), 0.0), s2(s1.size(), 0.0);
    for (int i = 0; i < n; ++i) {
      const auto psi = simulate_linear_mode(k, a, cfg, static_cast<std::uint64_t>(i));
      for (std::size_t j = 0; j < psi.size(); ++j) {
        s1[j] += psi[j];
        s2[j] += psi[j] * psi[j];
      }
    }
    double sup = 0.0;
    for (std::size_t j = 0; j < s1.size(); ++j) sup = std::max(sup, s2[j] / n - (s1[j] / n) * (s1[j] / n));
    c0 = std::max(c0, sup * (1.0 + k * k) / (cfg.sigma * cfg.sigma));
  }
  const double L = cfg.spec.length;
  EXPECT_LE(c0, 2.0 * L * L / (std::numbers::pi * std::numbers::pi) + 1.0);
  EXPECT_GT(c0, 0.0);
}
