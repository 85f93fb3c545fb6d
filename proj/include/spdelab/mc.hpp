#pragma once

// Monte Carlo over independent trajectories: batches, exit and transition
// probabilities with Wilson intervals, log-linear fits, threshold bisection
// and the per-mode variance report.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "spdelab/errors.hpp"
#include "spdelab/integrator.hpp"
#include "spdelab/model.hpp"
#include "spdelab/spectral.hpp"
#include "spdelab/stepper.hpp"

namespace spdelab {

// ---------------------------------------------------------------------------
// Workers

inline constexpr const char* kWorkersEnv = "SPDELAB_WORKERS";

inline int default_workers() {
  if (const char* env = std::getenv(kWorkersEnv)) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs body(i) for i in [0, n). Tasks write only to their own slots, so the
// result never depends on the number of workers. The first exception thrown
// by any task is rethrown after all workers stop.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                         int workers = 0) {
  if (workers <= 0) workers = default_workers();
  const auto nw = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  if (nw <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || stop.load()) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        stop = true;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nw - 1);
  for (std::size_t w = 1; w < nw; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Batches

struct TrajectoryOutcome {
  double tau_B0 = kNever;
  double tau_Bperp = kNever;
  double tau_B = kNever;
  double tau_minus_d = kNever;
  double tau_minus_d0 = kNever;
  double phi0_final = 0.0;
  double t_stop = 0.0;
  bool failed = false;
  double failure_time = kNever;

  bool operator==(const TrajectoryOutcome&) const = default;
};

struct BatchResult {
  int n = 0;
  std::vector<TrajectoryOutcome> outcomes;
  std::vector<std::size_t> failures;  // trajectory indices that hit NonFinite
  std::uint64_t cfg_digest = 0;
  std::uint64_t master_seed = 0;
};

inline std::uint64_t batch_digest(const SimConfig& cfg, const DriftModel& model,
                                  const ExitSpec& exits) {
  std::uint64_t h = fnv1a64(cfg.aligned().describe());
  h = fnv1a64("|", h);
  h = fnv1a64(model.describe(), h);
  h = fnv1a64("|", h);
  return fnv1a64(exits.describe(), h);
}

inline TrajectoryOutcome outcome_of(const TrajectoryRecord& r) {
  TrajectoryOutcome o;
  o.tau_B0 = r.tau_B0;
  o.tau_Bperp = r.tau_Bperp;
  o.tau_B = r.tau_B;
  o.tau_minus_d = r.tau_minus_d;
  o.tau_minus_d0 = r.tau_minus_d0;
  o.phi0_final = r.phi0_final;
  o.t_stop = r.t_stop;
  return o;
}

// Trajectory i draws its noise from the streams of (cfg.seed, i, k).
inline BatchResult run_batch(const SimConfig& cfg, const DriftModel& model,
                             const SpectralField& init, const ExitSpec& exits,
                             const AdiabaticFrame* frame, int n, int workers = 0) {
  if (n < 1) throw InvalidArgument("run_batch needs n >= 1");
  cfg.validate();
  exits.validate();
  BatchResult out;
  out.n = n;
  out.master_seed = cfg.seed;
  out.cfg_digest = batch_digest(cfg, model, exits);
  out.outcomes.resize(static_cast<std::size_t>(n));
  parallel_for(
      out.outcomes.size(),
      [&](std::size_t i) {
        try {
          out.outcomes[i] = outcome_of(simulate(cfg, model, init, exits, frame, i, false));
        } catch (const NonFinite& e) {
          TrajectoryOutcome o;
          o.failed = true;
          o.failure_time = e.time();
          o.t_stop = e.time();
          out.outcomes[i] = o;
        }
      },
      workers);
  for (std::size_t i = 0; i < out.outcomes.size(); ++i)
    if (out.outcomes[i].failed) out.failures.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Event statistics

enum class Event { ExitB, ExitB0, ExitBperp, CrossMinusD, ReachMinusD0, Transition };

inline std::string to_string(Event e) {
  switch (e) {
    case Event::ExitB: return "ExitB";
    case Event::ExitB0: return "ExitB0";
    case Event::ExitBperp: return "ExitBperp";
    case Event::CrossMinusD: return "CrossMinusD";
    case Event::ReachMinusD0: return "ReachMinusD0";
    case Event::Transition: return "Transition";
  }
  return "?";
}

inline Event event_from_string(std::string_view s) {
  for (Event e : {Event::ExitB, Event::ExitB0, Event::ExitBperp, Event::CrossMinusD,
                  Event::ReachMinusD0, Event::Transition})
    if (s == to_string(e)) return e;
  throw UnknownEvent("unknown event '" + std::string(s) + "'");
}

struct ExitStatistics {
  double p_hat = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
  int n = 0;          // trajectories counted (failed ones excluded)
  int successes = 0;
  int failed = 0;
  Event event = Event::ExitB;
};

struct WilsonInterval {
  double low, high;
};

inline WilsonInterval wilson_interval(int successes, int n, double z = 1.96) {
  if (n <= 0) return {0.0, 1.0};
  const double nn = n;
  const double p = successes / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
  WilsonInterval w{std::max(0.0, centre - half), std::min(1.0, centre + half)};
  if (successes == 0) w.low = 0.0;
  if (successes == n) w.high = 1.0;
  w.low = std::min(w.low, p);
  w.high = std::max(w.high, p);
  return w;
}

inline ExitStatistics make_statistics(int successes, int n, Event event, int failed = 0) {
  ExitStatistics s;
  s.n = n;
  s.successes = successes;
  s.failed = failed;
  s.event = event;
  s.p_hat = n > 0 ? static_cast<double>(successes) / n : 0.0;
  const auto w = wilson_interval(successes, n);
  s.ci_low = w.low;
  s.ci_high = w.high;
  return s;
}

inline bool event_occurred(const TrajectoryOutcome& o, Event e, double horizon) {
  switch (e) {
    case Event::ExitB: return o.tau_B <= horizon;
    case Event::ExitB0: return o.tau_B0 <= horizon;
    case Event::ExitBperp: return o.tau_Bperp <= horizon;
    case Event::CrossMinusD: return o.tau_minus_d <= horizon;
    case Event::ReachMinusD0: return o.tau_minus_d0 <= horizon;
    case Event::Transition:
      return o.tau_minus_d0 <= horizon && o.tau_minus_d <= o.tau_minus_d0;
  }
  throw UnknownEvent("unknown event");
}

inline ExitStatistics event_probability(const BatchResult& batch, Event event, double horizon) {
  int hits = 0, counted = 0, failed = 0;
  for (const auto& o : batch.outcomes) {
    if (o.failed) {
      ++failed;
      continue;
    }
    ++counted;
    if (event_occurred(o, event, horizon)) ++hits;
  }
  return make_statistics(hits, counted, event, failed);
}

// ---------------------------------------------------------------------------
// Fits

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<double> xs, ys;
};

inline FitResult linear_fit(std::vector<double> xs, std::vector<double> ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("fit: x and y lengths differ");
  if (xs.size() < 2) throw DegeneratePoints("fit needs at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (!(sxx > 0.0)) throw DegeneratePoints("fit needs at least two distinct x values");
  FitResult f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (f.intercept + f.slope * xs[i]);
    ssr += r * r;
  }
  f.r_squared = syy > 0.0 ? std::clamp(1.0 - ssr / syy, 0.0, 1.0) : 1.0;
  f.xs = std::move(xs);
  f.ys = std::move(ys);
  return f;
}

inline constexpr int kMinFitSuccesses = 5;

struct ConcentrationResult {
  FitResult fit;
  std::vector<double> h_values;
  std::vector<ExitStatistics> stats;  // one per h, including points left out of the fit
};

// Exit probability from B(h) before `horizon` for each h (common random
// numbers across h), fitted as log p = intercept + slope * h^2/sigma^2.
inline ConcentrationResult concentration_fit(const DriftModel& model, const SimConfig& cfg_base,
                                             const SpectralField& init,
                                             const ExitSpec& exits_template,
                                             const std::vector<double>& h_values, int n,
                                             double horizon, const AdiabaticFrame* frame = nullptr,
                                             int workers = 0) {
  if (h_values.empty()) throw InvalidArgument("concentration_fit needs h values");
  const auto [hmin, hmax] = std::minmax_element(h_values.begin(), h_values.end());
  if (!(*hmin > 0.0) || *hmax < 2.0 * *hmin)
    throw InvalidArgument("h values must be positive and span at least a factor 2");
  if (!(cfg_base.sigma > 0.0)) throw InvalidArgument("concentration_fit needs sigma > 0");
  ConcentrationResult out;
  out.h_values = h_values;
  std::vector<double> xs, ys;
  for (double h : h_values) {
    ExitSpec ex = exits_template;
    ex.h_stable = h;
    ex.stop_when_resolved = true;
    const auto batch = run_batch(cfg_base, model, init, ex, frame, n, workers);
    const auto st = event_probability(batch, Event::ExitB, horizon);
    out.stats.push_back(st);
    if (st.successes >= kMinFitSuccesses && st.successes < st.n) {
      xs.push_back(h * h / (cfg_base.sigma * cfg_base.sigma));
      ys.push_back(std::log(st.p_hat));
    }
  }
  if (xs.size() < 3)
    throw DegeneratePoints("fewer than 3 h values gave a usable exit probability");
  out.fit = linear_fit(std::move(xs), std::move(ys));
  return out;
}

// ---------------------------------------------------------------------------
// Transitions near the avoided transcritical bifurcation

struct TransitionStudy {
  TorusSpec spec = TorusSpec::make(1.0, 16);
  double cubic = 0.0;
  double T0 = 0.2;
  double dt_over_eps = 1.0 / 20.0;
  double gap_factor = 2.0;  // minimum branch gap is 2 sqrt(delta v eps)
  std::optional<double> d_level, d0_level;
  double h_perp_over_sigma = 10.0;
  double s_monitor = 0.4;
  double root_bracket = RootScan{}.bracket;
  std::uint64_t seed = 1;
  int workers = 0;

  std::string describe() const {
    using detail::format_double;
    const auto opt = [](const std::optional<double>& v) {
      return v ? format_double(*v) : std::string("default");
    };
    return "L=" + format_double(spec.length) + ";K=" + std::to_string(spec.cutoff) +
           ";n_grid=" + std::to_string(spec.n_grid) + ";cubic=" + format_double(cubic) +
           ";T0=" + format_double(T0) + ";dt_over_eps=" + format_double(dt_over_eps) +
           ";gap_factor=" + format_double(gap_factor) + ";d=" + opt(d_level) +
           ";d0=" + opt(d0_level) + ";h_perp_over_sigma=" + format_double(h_perp_over_sigma) +
           ";s=" + format_double(s_monitor) + ";seed=" + std::to_string(seed);
  }
};

struct TransitionLevels {
  double d, d0;
};

// d = 0.5 sqrt(delta v eps) * gap_factor, d0 = 2d, both kept inside the root
// bracket.
inline TransitionLevels transition_levels(const TransitionStudy& st, double delta, double eps) {
  TransitionLevels lv{};
  lv.d = st.d_level.value_or(0.5 * std::sqrt(std::max(delta, eps)) * st.gap_factor);
  lv.d0 = st.d0_level.value_or(2.0 * lv.d);
  const double cap = 0.9 * st.root_bracket;
  lv.d0 = std::min(lv.d0, cap);
  lv.d = std::min(lv.d, 0.5 * lv.d0);
  if (!(lv.d > 0.0 && lv.d0 > lv.d)) throw InvalidArgument("transition levels must satisfy 0 < d < d0");
  return lv;
}

struct TransitionRun {
  SimConfig cfg;
  DriftModel model = DriftModel::normal_form(0.0);
  SpectralField init;
  ExitSpec exits;
  TransitionLevels levels{};
};

inline TransitionRun transition_setup(const TransitionStudy& st, double delta, double eps,
                                      double sigma) {
  if (!(delta > 0.0 && eps > 0.0 && sigma >= 0.0))
    throw InvalidArgument("transition study needs delta, eps > 0 and sigma >= 0");
  TransitionRun r;
  r.model = DriftModel::normal_form(delta, st.cubic);
  r.cfg.eps = eps;
  r.cfg.sigma = sigma;
  r.cfg.dt = st.dt_over_eps * eps;
  r.cfg.spec = st.spec;
  r.cfg.t_start = -st.T0;
  r.cfg.t_end = st.T0;
  r.cfg.s_monitor = st.s_monitor;
  r.cfg.seed = st.seed;
  r.cfg.record_stride = 1;
  r.levels = transition_levels(st, delta, eps);
  r.exits.d_level = r.levels.d;
  r.exits.d0_level = r.levels.d0;
  if (sigma > 0.0) r.exits.h_perp = st.h_perp_over_sigma * sigma;
  r.exits.absorb_at_d0 = true;
  // The path starts on the stable branch, which the adiabatic solution
  // coincides with at -T0.
  const double root = detail::require_root(
      equilibrium_branches(r.model, -st.T0).largest(Stability::Stable), "stable", -st.T0);
  r.init = SpectralField::basis(st.spec, 0, root * std::sqrt(st.spec.length));
  return r;
}

struct TransitionResult {
  ExitStatistics transition;
  ExitStatistics bperp;
  TransitionLevels levels{};
  std::uint64_t seed = 0;
  std::uint64_t cfg_digest = 0;
  int failures = 0;
};

inline TransitionResult transition_probability(const TransitionStudy& st, double delta,
                                               double eps, double sigma, int n) {
  const auto run = transition_setup(st, delta, eps, sigma);
  const auto batch = run_batch(run.cfg, run.model, run.init, run.exits, nullptr, n, st.workers);
  TransitionResult r;
  r.transition = event_probability(batch, Event::Transition, st.T0);
  r.bperp = event_probability(batch, Event::ExitBperp, st.T0);
  r.levels = run.levels;
  r.seed = run.cfg.seed;
  r.cfg_digest = batch.cfg_digest;
  r.failures = static_cast<int>(batch.failures.size());
  return r;
}

// ---------------------------------------------------------------------------
// Threshold location

struct BisectionProbe {
  double sigma;
  ExitStatistics stats;
};

struct BisectionResult {
  double sigma_star = 0.0;
  ExitStatistics stats;
  std::vector<BisectionProbe> probes;
};

using ProbabilityProbe = std::function<ExitStatistics(double sigma)>;

// Locates p(sigma) = 1/2 for a probe assumed nondecreasing in sigma. First
// brackets with p < 0.25 and p > 0.75 by doubling/halving from `guess`, then
// bisects in log sigma until the probe's CI contains 1/2 or the bracket is
// narrower than `tol` in log sigma.
inline BisectionResult threshold_bisect(const ProbabilityProbe& probe, double guess, double tol,
                                        int max_expand = 8) {
  if (!(guess > 0.0)) throw InvalidArgument("threshold_bisect needs a positive starting sigma");
  if (!(tol > 0.0)) throw InvalidArgument("threshold_bisect needs tol > 0");
  BisectionResult out;
  const auto run = [&](double s) {
    auto st = probe(s);
    out.probes.push_back({s, st});
    return st;
  };

  std::optional<double> lo, hi;
  const auto first = run(guess);
  if (first.p_hat < 0.25) lo = guess;
  if (first.p_hat > 0.75) hi = guess;
  double s = guess;
  for (int i = 0; !hi && i < max_expand; ++i) {
    s *= 2.0;
    const auto st = run(s);
    if (st.p_hat > 0.75) hi = s;
    else if (st.p_hat < 0.25) lo = s;
  }
  s = hi ? std::min(guess, *hi) : guess;
  for (int i = 0; !lo && i < max_expand; ++i) {
    s *= 0.5;
    const auto st = run(s);
    if (st.p_hat < 0.25) lo = s;
    else if (st.p_hat > 0.75) hi = s;
  }
  if (!lo || !hi || !(*lo < *hi))
    throw BracketNotFound("no sigma bracket with p < 0.25 and p > 0.75 found from " +
                          detail::format_double(guess));

  double a = *lo, b = *hi;
  for (;;) {
    const double mid = std::sqrt(a * b);
    const auto st = run(mid);
    if ((st.ci_low <= 0.5 && 0.5 <= st.ci_high) || std::log(b / a) < tol) {
      out.sigma_star = mid;
      out.stats = st;
      return out;
    }
    (st.p_hat < 0.5 ? a : b) = mid;
  }
}

// Threshold of the transition probability for the normal form at (delta, eps),
// starting from (delta v eps)^{3/4}. Every probe reuses the study seed.
inline BisectionResult transition_threshold(const TransitionStudy& st, double delta, double eps,
                                            int n, double tol) {
  const auto probe = [&](double sigma) {
    return transition_probability(st, delta, eps, sigma, n).transition;
  };
  return threshold_bisect(probe, std::pow(std::max(delta, eps), 0.75), tol);
}

// Fit of log sigma_star against log(delta v eps).
inline FitResult scaling_fit(const std::vector<double>& deltas, double eps,
                             const std::vector<double>& sigma_stars) {
  if (deltas.size() != sigma_stars.size()) throw InvalidArgument("scaling_fit: length mismatch");
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (!(sigma_stars[i] > 0.0)) throw InvalidArgument("scaling_fit: sigma_star must be positive");
    xs.push_back(std::log(std::max(deltas[i], eps)));
    ys.push_back(std::log(sigma_stars[i]));
  }
  if (xs.size() < 3) throw DegeneratePoints("scaling fit needs at least three thresholds");
  return linear_fit(std::move(xs), std::move(ys));
}

struct ScalingResult {
  FitResult fit;
  std::vector<double> deltas;
  std::vector<BisectionResult> thresholds;
};

inline ScalingResult scaling_exponent(const TransitionStudy& st, const std::vector<double>& deltas,
                                      double eps, int n, double tol) {
  if (deltas.size() < 3) throw InvalidArgument("scaling_exponent needs at least three deltas");
  for (double d : deltas)
    if (d < 4.0 * eps) throw InvalidArgument("scaling_exponent needs every delta >= 4 eps");
  const auto [dmin, dmax] = std::minmax_element(deltas.begin(), deltas.end());
  if (*dmax < 4.0 * *dmin) throw InvalidArgument("deltas must span at least a factor 4");
  ScalingResult out;
  out.deltas = deltas;
  std::vector<double> stars;
  for (double d : deltas) {
    out.thresholds.push_back(transition_threshold(st, d, eps, n, tol));
    stars.push_back(out.thresholds.back().sigma_star);
  }
  out.fit = scaling_fit(deltas, eps, stars);
  return out;
}

// ---------------------------------------------------------------------------
// Per-mode variance of the linear dynamics

struct VarianceRow {
  int k = 0;
  double mu = 0.0;
  double mean_final = 0.0;
  double se_mean = 0.0;
  double var_final = 0.0;
  double se_var = 0.0;
  double var_sup = 0.0;
  double exact_final = 0.0;       // from the zero initial condition
  double exact_stationary = 0.0;  // sigma^2 / (2 (mu_k - a))
  double scaled_sup = 0.0;        // var_sup <k>^2 / sigma^2
};

struct VarianceReport {
  double a = 0.0;
  double sigma = 0.0;
  int n = 0;
  double c0 = 0.0;  // max_k var_sup <k>^2 / sigma^2
  std::vector<VarianceRow> rows;
};

// Runs n paths of the full spectral scheme from phi = 0 under f = a phi and
// accumulates moments of the cosine modes k = 0..k_max every record_stride
// steps. Paths are processed in fixed chunks whose sums are folded in order.
inline VarianceReport mode_variance_report(const SimConfig& config, const DriftModel& model,
                                           int n, int k_max, int workers = 0) {
  const SimConfig cfg = config.aligned();
  cfg.validate();
  if (n < 2) throw InvalidArgument("mode_variance_report needs n >= 2");
  if (k_max < 0 || k_max > cfg.spec.cutoff) throw InvalidArgument("k_max must lie in [0, K]");
  const double a = model.linear_rate();
  for (double t : {cfg.t_start, cfg.t_end})
    for (double u : {-1.0, 0.0, 2.0})
      if (std::abs(model.f(t, u) - a * u) > 1e-12 * (1.0 + std::abs(u)))
        throw InvalidArgument("mode_variance_report needs a linear model f = a phi");
  if (!(a < 0.0)) throw InvalidArgument("mode_variance_report needs a < 0");

  const long steps = cfg.steps();
  const auto nrec = static_cast<std::size_t>(steps / cfg.record_stride);
  const auto nk = static_cast<std::size_t>(k_max + 1);
  const int K = cfg.spec.cutoff;
  constexpr int kChunk = 256;
  const auto nchunks = static_cast<std::size_t>((n + kChunk - 1) / kChunk);

  struct Sums {
    std::vector<double> s1, s2;  // [rec][k]
    std::vector<double> f1, f2, f4;
  };
  std::vector<Sums> chunks(nchunks);
  parallel_for(
      nchunks,
      [&](std::size_t c) {
        Sums& acc = chunks[c];
        acc.s1.assign(nrec * nk, 0.0);
        acc.s2.assign(nrec * nk, 0.0);
        acc.f1.assign(nk, 0.0);
        acc.f2.assign(nk, 0.0);
        acc.f4.assign(nk, 0.0);
        Stepper stepper(cfg, model);
        SpectralField phi(cfg.spec);
        const int begin = static_cast<int>(c) * kChunk;
        const int end = std::min(n, begin + kChunk);
        for (int p = begin; p < end; ++p) {
          auto coeffs = phi.coeffs();
          std::fill(coeffs.begin(), coeffs.end(), 0.0);
          auto streams = mode_streams(cfg.seed, static_cast<std::uint64_t>(p), K);
          std::size_t r = 0;
          for (long i = 0; i < steps; ++i) {
            stepper.advance(coeffs, cfg.time_at(i), streams);
            if ((i + 1) % cfg.record_stride == 0 && r < nrec) {
              for (std::size_t k = 0; k < nk; ++k) {
                const double x = coeffs[static_cast<std::size_t>(K) + k];
                acc.s1[r * nk + k] += x;
                acc.s2[r * nk + k] += x * x;
              }
              ++r;
            }
          }
          for (std::size_t k = 0; k < nk; ++k) {
            const double x = coeffs[static_cast<std::size_t>(K) + k];
            acc.f1[k] += x;
            acc.f2[k] += x * x;
            acc.f4[k] += x * x * x * x;
          }
        }
      },
      workers);

  Sums tot{std::vector<double>(nrec * nk, 0.0), std::vector<double>(nrec * nk, 0.0),
           std::vector<double>(nk, 0.0), std::vector<double>(nk, 0.0), std::vector<double>(nk, 0.0)};
  for (const auto& c : chunks) {
    for (std::size_t i = 0; i < tot.s1.size(); ++i) {
      tot.s1[i] += c.s1[i];
      tot.s2[i] += c.s2[i];
    }
    for (std::size_t k = 0; k < nk; ++k) {
      tot.f1[k] += c.f1[k];
      tot.f2[k] += c.f2[k];
      tot.f4[k] += c.f4[k];
    }
  }

  const double nn = n;
  const auto sample_var = [&](double s1, double s2) {
    return (s2 - s1 * s1 / nn) / (nn - 1.0);
  };
  VarianceReport rep;
  rep.a = a;
  rep.sigma = cfg.sigma;
  rep.n = n;
  const double s2 = cfg.sigma * cfg.sigma;
  for (std::size_t k = 0; k < nk; ++k) {
    VarianceRow row;
    row.k = static_cast<int>(k);
    row.mu = laplacian_eigenvalue(row.k, cfg.spec);
    const double rate = row.mu - a;
    row.mean_final = tot.f1[k] / nn;
    row.var_final = sample_var(tot.f1[k], tot.f2[k]);
    row.se_mean = std::sqrt(row.var_final / nn);
    // Standard error of the sample variance from the fourth moment (mean ~ 0).
    const double m2 = tot.f2[k] / nn, m4 = tot.f4[k] / nn;
    row.se_var = std::sqrt(std::max(0.0, m4 - m2 * m2) / nn);
    for (std::size_t r = 0; r < nrec; ++r)
      row.var_sup = std::max(row.var_sup, sample_var(tot.s1[r * nk + k], tot.s2[r * nk + k]));
    row.var_sup = std::max(row.var_sup, row.var_final);
    const double sd = noise_increment_std(row.k, cfg.t_end - cfg.t_start, cfg.eps, cfg.sigma, rate);
    row.exact_final = sd * sd;
    row.exact_stationary = s2 / (2.0 * rate);
    const double bracket2 = 1.0 + double(row.k) * row.k;
    row.scaled_sup = s2 > 0.0 ? row.var_sup * bracket2 / s2 : 0.0;
    rep.c0 = std::max(rep.c0, row.scaled_sup);
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace spdelab
