#pragma once

// Subcommands of the command-line tool. Each writes CSV files plus a
// manifest.json into the output directory; the manifest carries the full
// configuration, so `--config manifest.json` reproduces the CSVs bitwise.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "spdelab/adiabatic.hpp"
#include "spdelab/config.hpp"
#include "spdelab/errors.hpp"
#include "spdelab/integrator.hpp"
#include "spdelab/mc.hpp"
#include "spdelab/model.hpp"

namespace spdelab {

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// CSV

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvTable& cell(double v) { return text(detail::format_double(v)); }
  CsvTable& cell(long long v) { return text(std::to_string(v)); }
  CsvTable& cell(int v) { return text(std::to_string(v)); }
  CsvTable& cell(const std::optional<double>& v) { return v ? cell(*v) : text(""); }
  CsvTable& text(std::string s) {
    row_.push_back(std::move(s));
    return *this;
  }
  void end_row() {
    if (row_.size() != header_.size()) throw InvalidArgument("csv row has the wrong column count");
    rows_.push_back(join(row_));
    row_.clear();
  }

  std::string header_line() const { return join(header_); }
  const std::vector<std::string>& rows() const { return rows_; }

  std::string str() const {
    std::string s = header_line() + "\n";
    for (const auto& r : rows_) s += r + "\n";
    return s;
  }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
  }
  std::vector<std::string> header_, row_;
  std::vector<std::string> rows_;
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes through a temporary file and a rename so readers never see a
// partial file.
inline void write_file(const std::filesystem::path& p, const std::string& content) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp + "'");
    out << content;
    if (!out) throw Error("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, p);
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream o;
  o << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return o.str();
}

inline nlohmann::json json_time(double t) {
  return std::isfinite(t) ? nlohmann::json(t) : nlohmann::json(nullptr);
}

// ---------------------------------------------------------------------------
// Manifest

struct CommandOptions {
  std::filesystem::path out_dir = ".";
  bool resume = false;
  std::optional<int> max_cells;  // sweep: stop after this many new cells
  int workers = 0;
};

class RunManifest {
 public:
  RunManifest(std::string command, const Config& cfg) {
    json_["tool"] = "spdelab";
    json_["tool_version"] = kToolVersion;
    json_["command"] = std::move(command);
    json_["config_snapshot"] = serialize_config(cfg);
    json_["config_digest"] = hex64(fnv1a64(serialize_config(cfg)));
    json_["master_seed"] = cfg.seed;
    json_["started"] = utc_now();
    json_["workers_env"] = kWorkersEnv;
    json_["defaults"] = {{"dt", cfg.dt_value()},
                         {"K", cfg.cutoff},
                         {"n_grid", torus_of(cfg).n_grid},
                         {"T0", cfg.T0},
                         {"t_start", cfg.t_start_value()},
                         {"t_end", cfg.t_end_value()},
                         {"grid_step", cfg.grid_step_value()},
                         {"horizon", cfg.horizon_value()}};
    json_["outputs"] = nlohmann::json::object();
  }

  nlohmann::json& operator[](const char* key) { return json_[key]; }
  const nlohmann::json& json() const { return json_; }

  void write_output(const std::filesystem::path& dir, const std::string& name,
                    const std::string& content) {
    write_file(dir / name, content);
    json_["outputs"][name] = hex64(fnv1a64(content));
  }

  void save(const std::filesystem::path& dir, bool finished = true) {
    if (finished) json_["finished"] = utc_now();
    write_file(dir / "manifest.json", json_.dump(2) + "\n");
  }

 private:
  nlohmann::json json_;
};

// Accepts an INI configuration or a manifest.json from an earlier run.
inline Config load_run_config(const std::string& path) {
  const std::string text = [&] {
    try {
      return read_file(path);
    } catch (const Error&) {
      throw ConfigError("cannot open config file '" + path + "'");
    }
  }();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": invalid manifest JSON: " + e.what());
    }
    if (!j.contains("config_snapshot") || !j["config_snapshot"].is_string())
      throw ConfigError(path + ": manifest lacks config_snapshot");
    try {
      return parse_config_text(j["config_snapshot"].get<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError(path + " (config_snapshot): " + e.what());
    }
  }
  try {
    return parse_config_text(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// branches

inline CsvTable branches_table(const Config& cfg) {
  const DriftModel model = model_of(cfg);
  CsvTable t({"t", "root_1", "root_2", "root_3", "stability_1", "stability_2", "stability_3",
              "a_1", "a_2", "a_3"});
  const double t0 = cfg.t_start_value(), t1 = cfg.t_end_value();
  const int n = cfg.branch_points;
  for (int i = 0; i < n; ++i) {
    const double tt = i == n - 1 ? t1 : t0 + (t1 - t0) * i / (n - 1);
    const BranchSet b = equilibrium_branches(model, tt);
    t.cell(tt);
    for (std::size_t j = 0; j < 3; ++j) t.cell(j < b.size() ? std::optional(b.roots[j]) : std::nullopt);
    for (std::size_t j = 0; j < 3; ++j) t.text(j < b.size() ? to_string(b.stability[j]) : "");
    for (std::size_t j = 0; j < 3; ++j)
      t.cell(j < b.size() ? std::optional(b.a_values[j]) : std::nullopt);
    t.end_row();
  }
  return t;
}

inline void cmd_branches(const Config& cfg, const CommandOptions& opt) {
  RunManifest m("branches", cfg);
  m.write_output(opt.out_dir, "branches.csv", branches_table(cfg).str());
  m.save(opt.out_dir);
}

// ---------------------------------------------------------------------------
// adiabatic

// Stable track and zeta always; the unstable track when the model has one
// (its columns stay blank otherwise).
inline CsvTable adiabatic_table(const Config& cfg) {
  const DriftModel model = model_of(cfg);
  AdiabaticFrame fr = track_stable(model, cfg.eps, cfg.T0, cfg.grid_step_value());
  fr.zeta = zeta_solve(fr);
  try {
    AdiabaticFrame un = track_unstable(model, cfg.eps, cfg.T0, cfg.grid_step_value());
    fr.phihat = std::move(un.phihat);
    fr.ahat = std::move(un.ahat);
    fr.alphahat_cum = std::move(un.alphahat_cum);
  } catch (const RootBracketExhausted&) {
  }
  CsvTable t({"t", "phibar", "phihat", "abar", "ahat", "zeta", "alphabar_cum", "alphahat_cum"});
  const auto col = [&](const std::vector<double>& v, std::size_t i) {
    return v.empty() ? std::nullopt : std::optional(v[i]);
  };
  for (std::size_t i = 0; i < fr.t_grid.size(); ++i) {
    t.cell(fr.t_grid[i]).cell(fr.phibar[i]).cell(col(fr.phihat, i)).cell(fr.abar[i]);
    t.cell(col(fr.ahat, i)).cell(fr.zeta[i]).cell(fr.alphabar_cum[i]).cell(col(fr.alphahat_cum, i));
    t.end_row();
  }
  return t;
}

inline void cmd_adiabatic(const Config& cfg, const CommandOptions& opt) {
  RunManifest m("adiabatic", cfg);
  m.write_output(opt.out_dir, "adiabatic.csv", adiabatic_table(cfg).str());
  m.save(opt.out_dir);
}

// ---------------------------------------------------------------------------
// simulate

inline std::optional<AdiabaticFrame> frame_if_needed(const Config& cfg, const DriftModel& model,
                                                     const ExitSpec& exits) {
  if (!exits.h) return std::nullopt;
  AdiabaticFrame fr = track_stable(model, cfg.eps, cfg.T0, cfg.grid_step_value());
  fr.zeta = zeta_solve(fr);
  return fr;
}

inline nlohmann::json hitting_json(const TrajectoryRecord& r) {
  return {{"tau_B0", json_time(r.tau_B0)},
          {"tau_Bperp", json_time(r.tau_Bperp)},
          {"tau_B", json_time(r.tau_B)},
          {"tau_minus_d", json_time(r.tau_minus_d)},
          {"tau_minus_d0", json_time(r.tau_minus_d0)},
          {"t_stop", r.t_stop}};
}

// Throws NonFinite after saving a manifest that records the failure.
inline void cmd_simulate(const Config& cfg, const CommandOptions& opt) {
  RunManifest m("simulate", cfg);
  const DriftModel model = model_of(cfg);
  const SimConfig sim = sim_of(cfg);
  const ExitSpec exits = exits_of(cfg);
  const auto frame = frame_if_needed(cfg, model, exits);
  const SpectralField init = initial_field(cfg, model);
  TrajectoryRecord rec;
  try {
    rec = simulate(sim, model, init, exits, frame ? &*frame : nullptr, 0, true);
  } catch (const NonFinite& e) {
    m["failure"] = {{"kind", "NonFinite"}, {"time", e.time()}, {"message", e.what()}};
    m.save(opt.out_dir);
    throw;
  }
  CsvTable t({"t", "phi0", "perp_hs"});
  for (std::size_t i = 0; i < rec.t_samples.size(); ++i) {
    t.cell(rec.t_samples[i]).cell(rec.phi0[i]).cell(rec.perp_hs[i]);
    t.end_row();
  }
  m.write_output(opt.out_dir, "trajectory.csv", t.str());
  m["hitting_times"] = hitting_json(rec);
  m.save(opt.out_dir);
}

// ---------------------------------------------------------------------------
// sweep

struct SweepCell {
  std::optional<double> delta, sigma, h, h_perp;

  std::string key() const {
    const auto f = [](const std::optional<double>& v) {
      return v ? detail::format_double(*v) : std::string("-");
    };
    return f(delta) + "|" + f(sigma) + "|" + f(h) + "|" + f(h_perp);
  }
};

inline std::vector<SweepCell> sweep_cells(const Config& cfg) {
  const auto axis = [](const std::vector<double>& v) {
    std::vector<std::optional<double>> out(v.begin(), v.end());
    if (out.empty()) out.push_back(std::nullopt);
    return out;
  };
  std::vector<SweepCell> cells;
  for (auto d : axis(cfg.sweep_delta))
    for (auto s : axis(cfg.sweep_sigma))
      for (auto h : axis(cfg.sweep_h))
        for (auto hp : axis(cfg.sweep_h_perp)) cells.push_back({d, s, h, hp});
  return cells;
}

struct CellSetup {
  SimConfig sim;
  DriftModel model = DriftModel::normal_form(0.0);
  SpectralField init;
  ExitSpec exits;
  std::optional<AdiabaticFrame> frame;
  Event event = Event::Transition;
  double delta = 0.0;
  double horizon = 0.0;
};

// The h axis sets h_stable for the ExitB event and the B0 half-width h
// otherwise. Level events without configured levels use the transition
// defaults.
inline CellSetup cell_setup(const Config& cfg, const SweepCell& cell) {
  CellSetup s;
  s.event = event_from_string(cfg.event);
  s.delta = cell.delta.value_or(cfg.delta);
  s.model = model_of(cfg, s.delta);
  s.sim = sim_of(cfg);
  if (cell.sigma) s.sim.sigma = *cell.sigma;
  s.exits = exits_of(cfg);
  if (cell.h) (s.event == Event::ExitB ? s.exits.h_stable : s.exits.h) = *cell.h;
  if (cell.h_perp) s.exits.h_perp = *cell.h_perp;
  const bool levels = s.event == Event::Transition || s.event == Event::CrossMinusD ||
                      s.event == Event::ReachMinusD0;
  if (levels && !(s.exits.d_level && s.exits.d0_level)) {
    const auto lv = transition_levels(study_of(cfg), s.delta, cfg.eps);
    if (!s.exits.d_level) s.exits.d_level = lv.d;
    if (!s.exits.d0_level) s.exits.d0_level = lv.d0;
  }
  s.exits.stop_when_resolved = true;
  try {
    s.exits.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("exits: ") + e.what());
  }
  s.frame = frame_if_needed(cfg, s.model, s.exits);
  s.init = initial_field(cfg, s.model);
  s.horizon = cfg.horizon_value();
  return s;
}

inline ExitStatistics run_cell(const Config& cfg, const SweepCell& cell, int workers = 0) {
  const CellSetup s = cell_setup(cfg, cell);
  const BatchResult b = run_batch(s.sim, s.model, s.init, s.exits, s.frame ? &*s.frame : nullptr,
                                  cfg.n, workers);
  return event_probability(b, s.event, s.horizon);
}

inline const std::vector<std::string>& sweep_header() {
  static const std::vector<std::string> h{"delta", "eps",   "sigma",  "h",       "h_perp",
                                          "n",     "p_hat", "ci_low", "ci_high", "event"};
  return h;
}

inline std::string sweep_row(const Config& cfg, const SweepCell& cell, const ExitStatistics& st) {
  const CellSetup s = cell_setup(cfg, cell);
  const auto radius = s.event == Event::ExitB ? s.exits.h_stable : s.exits.h;
  CsvTable t(sweep_header());
  t.cell(s.delta).cell(cfg.eps).cell(s.sim.sigma).cell(radius).cell(s.exits.h_perp);
  t.cell(st.n).cell(st.p_hat).cell(st.ci_low).cell(st.ci_high).text(to_string(st.event));
  t.end_row();
  return t.rows().front();
}

// Returns true when every cell is done. Rows are appended cell by cell and
// the manifest is rewritten after each one; with `resume`, cells listed in
// the manifest are kept and skipped.
inline bool cmd_sweep(const Config& cfg, const CommandOptions& opt) {
  const auto cells = sweep_cells(cfg);
  const auto csv_path = opt.out_dir / "sweep.csv";
  const auto man_path = opt.out_dir / "manifest.json";
  RunManifest m("sweep", cfg);

  std::vector<std::string> done_keys;
  std::vector<std::string> rows;
  if (opt.resume && std::filesystem::exists(man_path)) {
    const auto prev = nlohmann::json::parse(read_file(man_path));
    if (prev.value("command", "") != "sweep" ||
        prev.value("config_digest", "") != m["config_digest"].get<std::string>())
      throw ConfigError("--resume: manifest in " + opt.out_dir.string() +
                        " belongs to a different sweep configuration");
    done_keys = prev.value("completed_cells", std::vector<std::string>{});
    if (prev.contains("started")) m["started"] = prev["started"];
    std::istringstream in(std::filesystem::exists(csv_path) ? read_file(csv_path) : "");
    std::string line;
    std::getline(in, line);
    while (rows.size() < done_keys.size() && std::getline(in, line)) rows.push_back(line);
    if (rows.size() != done_keys.size())
      throw ConfigError("--resume: sweep.csv has fewer rows than completed cells");
  }

  CsvTable header(sweep_header());
  const auto content = [&] {
    std::string s = header.header_line() + "\n";
    for (const auto& r : rows) s += r + "\n";
    return s;
  };
  int fresh = 0;
  bool complete = true;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i < done_keys.size()) {
      if (done_keys[i] != cells[i].key())
        throw ConfigError("--resume: completed cells do not match the sweep grid");
      continue;
    }
    if (opt.max_cells && fresh >= *opt.max_cells) {
      complete = false;
      break;
    }
    rows.push_back(sweep_row(cfg, cells[i], run_cell(cfg, cells[i], opt.workers)));
    done_keys.push_back(cells[i].key());
    ++fresh;
    m.write_output(opt.out_dir, "sweep.csv", content());
    m["completed_cells"] = done_keys;
    m["complete"] = false;
    m.save(opt.out_dir, false);
  }
  m.write_output(opt.out_dir, "sweep.csv", content());
  m["completed_cells"] = done_keys;
  m["total_cells"] = cells.size();
  m["complete"] = complete;
  m.save(opt.out_dir);
  return complete;
}

// ---------------------------------------------------------------------------
// threshold

// Logistic stand-in p = 1/(1 + (sigma_star/sigma)^8) reported with a huge
// nominal sample, so the bisection runs to its width tolerance.
inline ExitStatistics synthetic_logistic(double sigma, double sigma_star) {
  constexpr int kN = 1000000000;
  const double p = 1.0 / (1.0 + std::pow(sigma_star / sigma, 8.0));
  return make_statistics(static_cast<int>(std::llround(p * kN)), kN, Event::Transition);
}

struct ThresholdOutcome {
  std::vector<double> deltas;
  std::vector<std::optional<BisectionResult>> results;
  std::vector<std::string> errors;
  std::optional<FitResult> fit;
  std::string fit_error;
};

inline ThresholdOutcome run_thresholds(const Config& cfg, int workers = 0) {
  ThresholdOutcome out;
  out.deltas = !cfg.deltas.empty() ? cfg.deltas : cfg.sweep_delta;
  if (out.deltas.empty()) throw ConfigError("threshold: mc.deltas is empty");
  if (cfg.kind != "normal_form" && !cfg.synthetic_exponent)
    throw ConfigError("threshold needs model.kind = normal_form");
  TransitionStudy st = study_of(cfg);
  st.workers = workers;
  std::vector<double> ok_d, ok_s;
  for (double d : out.deltas) {
    try {
      BisectionResult r;
      if (cfg.synthetic_exponent) {
        const double star = std::pow(d, *cfg.synthetic_exponent);
        r = threshold_bisect([&](double s) { return synthetic_logistic(s, star); },
                             std::pow(std::max(d, cfg.eps), 0.75), cfg.tol);
      } else {
        r = transition_threshold(st, d, cfg.eps, cfg.n, cfg.tol);
      }
      ok_d.push_back(d);
      ok_s.push_back(r.sigma_star);
      out.results.push_back(std::move(r));
      out.errors.emplace_back();
    } catch (const BracketNotFound& e) {
      out.results.emplace_back();
      out.errors.emplace_back(e.what());
    }
  }
  try {
    out.fit = scaling_fit(ok_d, cfg.eps, ok_s);
  } catch (const DegeneratePoints& e) {
    out.fit_error = e.what();
  }
  return out;
}

// Returns false when a bracket or the fit failed (rows are still written).
inline bool cmd_threshold(const Config& cfg, const CommandOptions& opt) {
  RunManifest m("threshold", cfg);
  const ThresholdOutcome r = run_thresholds(cfg, opt.workers);
  CsvTable th({"delta", "sigma_star", "p_hat", "ci_low", "ci_high", "probes", "status"});
  CsvTable pr({"delta", "sigma", "seed", "n", "successes", "p_hat", "ci_low", "ci_high"});
  nlohmann::json seeds = nlohmann::json::array();
  bool ok = true;
  for (std::size_t i = 0; i < r.deltas.size(); ++i) {
    th.cell(r.deltas[i]);
    if (const auto& b = r.results[i]) {
      th.cell(b->sigma_star).cell(b->stats.p_hat).cell(b->stats.ci_low).cell(b->stats.ci_high);
      th.cell(static_cast<int>(b->probes.size())).text("ok");
      for (const auto& p : b->probes) {
        pr.cell(r.deltas[i]).cell(p.sigma).text(std::to_string(cfg.seed)).cell(p.stats.n);
        pr.cell(p.stats.successes).cell(p.stats.p_hat).cell(p.stats.ci_low).cell(p.stats.ci_high);
        pr.end_row();
        seeds.push_back({{"delta", r.deltas[i]}, {"sigma", p.sigma}, {"seed", cfg.seed}});
      }
    } else {
      ok = false;
      th.text("").text("").text("").text("").cell(0).text("bracket_not_found");
    }
    th.end_row();
  }
  CsvTable fit({"slope", "intercept", "r_squared", "x", "y"});
  if (r.fit) {
    for (std::size_t i = 0; i < r.fit->xs.size(); ++i) {
      fit.cell(r.fit->slope).cell(r.fit->intercept).cell(r.fit->r_squared);
      fit.cell(r.fit->xs[i]).cell(r.fit->ys[i]);
      fit.end_row();
    }
  } else {
    ok = false;
    m["fit_error"] = r.fit_error;
  }
  m["batch_seeds"] = seeds;
  nlohmann::json errs = nlohmann::json::object();
  for (std::size_t i = 0; i < r.deltas.size(); ++i)
    if (!r.errors[i].empty()) errs[detail::format_double(r.deltas[i])] = r.errors[i];
  m["bracket_errors"] = errs;
  m.write_output(opt.out_dir, "thresholds.csv", th.str());
  m.write_output(opt.out_dir, "probes.csv", pr.str());
  m.write_output(opt.out_dir, "fit.csv", fit.str());
  m.save(opt.out_dir);
  return ok;
}

// ---------------------------------------------------------------------------
// variance-check

inline CsvTable variance_table(const VarianceReport& rep) {
  CsvTable t({"k", "mu", "mean", "se_mean", "var_final", "se_var", "exact_final",
              "exact_stationary", "z_score", "var_sup", "scaled_sup", "bound", "c0"});
  for (const auto& r : rep.rows) {
    const double bracket2 = 1.0 + double(r.k) * r.k;
    t.cell(r.k).cell(r.mu).cell(r.mean_final).cell(r.se_mean).cell(r.var_final).cell(r.se_var);
    t.cell(r.exact_final).cell(r.exact_stationary).cell((r.var_final - r.exact_final) / r.se_var);
    t.cell(r.var_sup).cell(r.scaled_sup).cell(rep.c0 * rep.sigma * rep.sigma / bracket2).cell(rep.c0);
    t.end_row();
  }
  return t;
}

inline void cmd_variance_check(const Config& cfg, const CommandOptions& opt) {
  if (cfg.kind != "custom" || cfg.form != "linear")
    throw ConfigError("variance-check needs model.kind = custom with form = linear");
  if (!(cfg.rate < 0.0)) throw ConfigError("variance-check needs model.rate < 0");
  if (cfg.offset != 0.0) throw ConfigError("variance-check needs model.offset = 0");
  RunManifest m("variance-check", cfg);
  const auto rep = mode_variance_report(sim_of(cfg), model_of(cfg), cfg.n, cfg.k_max, opt.workers);
  m["c0"] = rep.c0;
  m.write_output(opt.out_dir, "variance.csv", variance_table(rep).str());
  m.save(opt.out_dir);
}

}  // namespace spdelab
