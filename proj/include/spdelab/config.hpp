#pragma once

// Run configuration: one INI file with sections torus, model, sim, adiabatic,
// exits, mc and sweep. Every value has a default, so an empty file is a
// valid (normal-form) configuration.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spdelab/errors.hpp"
#include "spdelab/mc.hpp"
#include "spdelab/model.hpp"
#include "spdelab/spectral.hpp"
#include "spdelab/stepper.hpp"

namespace spdelab {

struct Config {
  // [torus]
  double length = 1.0;
  int cutoff = 32;
  int n_grid = 0;  // 0: 4K+1

  // [model]
  std::string kind = "normal_form";  // normal_form | allen_cahn | custom
  double amplitude = 0.2;            // allen_cahn A
  double delta = 0.04;
  double cubic = 0.0;
  double a1 = 1.0;
  std::string form = "linear";  // custom: linear | quadratic
  double rate = -1.0;
  double offset = 0.0;

  // [sim]
  double eps = 1e-2;
  double sigma = 0.0;
  std::optional<double> dt;  // eps/20
  std::optional<double> t_start, t_end;  // -T0, T0
  double s_monitor = 0.4;
  std::uint64_t seed = 1;
  int record_stride = 1;
  std::string init = "stable";  // stable | zero | constant
  double init_value = 0.0;

  // [adiabatic]
  double T0 = 0.2;
  std::optional<double> grid_step;  // eps/10
  int branch_points = 201;

  // [exits]
  std::optional<double> h, h_perp, h_stable, d_level, d0_level;
  bool absorb = true;

  // [mc]
  int n = 200;
  std::string event = "Transition";
  std::optional<double> horizon;  // t_end
  int k_max = 8;
  double tol = 0.05;
  double gap_factor = 2.0;
  double h_perp_over_sigma = 10.0;
  std::vector<double> deltas;
  std::optional<double> synthetic_exponent;  // threshold test hook

  // [sweep]
  std::vector<double> sweep_sigma, sweep_delta, sweep_h, sweep_h_perp;

  bool operator==(const Config&) const = default;

  double dt_value() const { return dt.value_or(eps / 20.0); }
  double t_start_value() const { return t_start.value_or(-T0); }
  double t_end_value() const { return t_end.value_or(T0); }
  double grid_step_value() const { return grid_step.value_or(eps / 10.0); }
  double horizon_value() const { return horizon.value_or(t_end_value()); }
};

namespace detail {

inline std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

// Line of `key` inside `[section]` of the raw text, for diagnostics.
inline int locate_key(const std::string& text, const std::string& section, const std::string& key) {
  std::istringstream in(text);
  std::string line, current;
  for (int no = 1; std::getline(in, line); ++no) {
    const auto t = trim(line);
    if (t.size() >= 2 && t.front() == '[' && t.back() == ']') {
      current = std::string(trim(t.substr(1, t.size() - 2)));
      continue;
    }
    const auto eq = t.find('=');
    if (current == section && eq != std::string_view::npos && trim(t.substr(0, eq)) == key)
      return no;
  }
  return 0;
}

class ConfigReader {
 public:
  ConfigReader(const boost::property_tree::ptree& tree, const std::string& text)
      : tree_(tree), text_(text) {}

  template <class T>
  void get(const std::string& section, const std::string& key, T& out) {
    if (auto raw = raw_value(section, key)) out = convert<T>(section, key, *raw);
  }

  template <class T>
  void get(const std::string& section, const std::string& key, std::optional<T>& out) {
    if (auto raw = raw_value(section, key)) out = convert<T>(section, key, *raw);
  }

  void get_list(const std::string& section, const std::string& key, std::vector<double>& out) {
    auto raw = raw_value(section, key);
    if (!raw) return;
    out.clear();
    std::string_view rest = *raw;
    while (!trim(rest).empty()) {
      const auto comma = rest.find(',');
      const auto item = trim(rest.substr(0, comma));
      out.push_back(convert<double>(section, key, std::string(item)));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  }

  // Rejects sections or keys that were never read.
  void check_unknown() const {
    for (const auto& [section, sub] : tree_) {
      if (!sub.data().empty() && sub.empty())
        throw ConfigError("key '" + section + "' outside of any section");
      for (const auto& [key, value] : sub)
        if (!seen_.count(section + "." + key))
          throw ConfigError(where(section, key) + "unknown key '" + section + "." + key + "'");
    }
  }

 private:
  std::optional<std::string> raw_value(const std::string& section, const std::string& key) {
    seen_.insert(section + "." + key);
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(boost::property_tree::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return std::string(trim(*v));
  }

  std::string where(const std::string& section, const std::string& key) const {
    const int line = locate_key(text_, section, key);
    return line > 0 ? "line " + std::to_string(line) + ": " : std::string();
  }

  template <class T>
  T convert(const std::string& section, const std::string& key, const std::string& raw) const {
    const auto fail = [&](const char* what) -> T {
      throw ConfigError(where(section, key) + section + "." + key + ": cannot parse '" + raw +
                        "' as " + what);
    };
    if constexpr (std::is_same_v<T, std::string>) {
      return raw;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (raw == "true" || raw == "1") return true;
      if (raw == "false" || raw == "0") return false;
      return fail("boolean");
    } else {
      T v{};
      const char* end = raw.data() + raw.size();
      auto res = std::from_chars(raw.data(), end, v);
      if (res.ec != std::errc() || res.ptr != end || raw.empty())
        return fail(std::is_floating_point_v<T> ? "number" : "integer");
      if constexpr (std::is_floating_point_v<T>)
        if (!std::isfinite(v)) return fail("finite number");
      return v;
    }
  }

  const boost::property_tree::ptree& tree_;
  const std::string& text_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline void validate(const Config& c) {
  const auto bad = [](const std::string& m) { throw ConfigError(m); };
  if (c.kind != "normal_form" && c.kind != "allen_cahn" && c.kind != "custom")
    bad("model.kind must be normal_form, allen_cahn or custom");
  if (c.kind == "custom" && c.form != "linear" && c.form != "quadratic")
    bad("model.form must be linear or quadratic");
  if (c.init != "stable" && c.init != "zero" && c.init != "constant")
    bad("sim.init must be stable, zero or constant");
  if (!(c.T0 > 0.0)) bad("adiabatic.T0 must be positive");
  if (c.branch_points < 2) bad("adiabatic.branch_points must be >= 2");
  if (c.n < 1) bad("mc.n must be >= 1");
  if (c.k_max < 0) bad("mc.k_max must be >= 0");
  if (!(c.tol > 0.0)) bad("mc.tol must be positive");
  try {
    event_from_string(c.event);
  } catch (const UnknownEvent& e) {
    bad(std::string("mc.event: ") + e.what());
  }
}

inline Config parse_config_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
  }
  Config c;
  detail::ConfigReader r(tree, text);
  r.get("torus", "length", c.length);
  r.get("torus", "cutoff", c.cutoff);
  r.get("torus", "n_grid", c.n_grid);

  r.get("model", "kind", c.kind);
  r.get("model", "A", c.amplitude);
  r.get("model", "delta", c.delta);
  r.get("model", "cubic", c.cubic);
  r.get("model", "a1", c.a1);
  r.get("model", "form", c.form);
  r.get("model", "rate", c.rate);
  r.get("model", "offset", c.offset);

  r.get("sim", "eps", c.eps);
  r.get("sim", "sigma", c.sigma);
  r.get("sim", "dt", c.dt);
  r.get("sim", "t_start", c.t_start);
  r.get("sim", "t_end", c.t_end);
  r.get("sim", "s", c.s_monitor);
  r.get("sim", "seed", c.seed);
  r.get("sim", "record_stride", c.record_stride);
  r.get("sim", "init", c.init);
  r.get("sim", "init_value", c.init_value);

  r.get("adiabatic", "T0", c.T0);
  r.get("adiabatic", "grid_step", c.grid_step);
  r.get("adiabatic", "branch_points", c.branch_points);

  r.get("exits", "h", c.h);
  r.get("exits", "h_perp", c.h_perp);
  r.get("exits", "h_stable", c.h_stable);
  r.get("exits", "d", c.d_level);
  r.get("exits", "d0", c.d0_level);
  r.get("exits", "absorb", c.absorb);

  r.get("mc", "n", c.n);
  r.get("mc", "event", c.event);
  r.get("mc", "horizon", c.horizon);
  r.get("mc", "k_max", c.k_max);
  r.get("mc", "tol", c.tol);
  r.get("mc", "gap_factor", c.gap_factor);
  r.get("mc", "h_perp_over_sigma", c.h_perp_over_sigma);
  r.get_list("mc", "deltas", c.deltas);
  r.get("mc", "synthetic_exponent", c.synthetic_exponent);

  r.get_list("sweep", "sigma", c.sweep_sigma);
  r.get_list("sweep", "delta", c.sweep_delta);
  r.get_list("sweep", "h", c.sweep_h);
  r.get_list("sweep", "h_perp", c.sweep_h_perp);
  r.check_unknown();
  validate(c);
  return c;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Canonical text; parse_config_text(serialize_config(c)) == c.
inline std::string serialize_config(const Config& c) {
  using detail::format_double;
  std::ostringstream o;
  const auto num = [&](const char* key, double v) { o << key << " = " << format_double(v) << "\n"; };
  const auto opt = [&](const char* key, const std::optional<double>& v) {
    if (v) num(key, *v);
  };
  const auto list = [&](const char* key, const std::vector<double>& v) {
    if (!v.empty()) o << key << " = " << detail::format_list(v) << "\n";
  };
  o << "[torus]\n";
  num("length", c.length);
  o << "cutoff = " << c.cutoff << "\n";
  o << "n_grid = " << c.n_grid << "\n";
  o << "\n[model]\n";
  o << "kind = " << c.kind << "\n";
  num("A", c.amplitude);
  num("delta", c.delta);
  num("cubic", c.cubic);
  num("a1", c.a1);
  o << "form = " << c.form << "\n";
  num("rate", c.rate);
  num("offset", c.offset);
  o << "\n[sim]\n";
  num("eps", c.eps);
  num("sigma", c.sigma);
  opt("dt", c.dt);
  opt("t_start", c.t_start);
  opt("t_end", c.t_end);
  num("s", c.s_monitor);
  o << "seed = " << c.seed << "\n";
  o << "record_stride = " << c.record_stride << "\n";
  o << "init = " << c.init << "\n";
  num("init_value", c.init_value);
  o << "\n[adiabatic]\n";
  num("T0", c.T0);
  opt("grid_step", c.grid_step);
  o << "branch_points = " << c.branch_points << "\n";
  o << "\n[exits]\n";
  opt("h", c.h);
  opt("h_perp", c.h_perp);
  opt("h_stable", c.h_stable);
  opt("d", c.d_level);
  opt("d0", c.d0_level);
  o << "absorb = " << (c.absorb ? "true" : "false") << "\n";
  o << "\n[mc]\n";
  o << "n = " << c.n << "\n";
  o << "event = " << c.event << "\n";
  opt("horizon", c.horizon);
  o << "k_max = " << c.k_max << "\n";
  num("tol", c.tol);
  num("gap_factor", c.gap_factor);
  num("h_perp_over_sigma", c.h_perp_over_sigma);
  list("deltas", c.deltas);
  opt("synthetic_exponent", c.synthetic_exponent);
  o << "\n[sweep]\n";
  list("sigma", c.sweep_sigma);
  list("delta", c.sweep_delta);
  list("h", c.sweep_h);
  list("h_perp", c.sweep_h_perp);
  return o.str();
}

// ---------------------------------------------------------------------------
// Objects built from a configuration

inline TorusSpec torus_of(const Config& c) {
  try {
    return TorusSpec::make(c.length, c.cutoff, c.n_grid);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("torus: ") + e.what());
  }
}

// `delta` overrides the configured gap (sweeps over delta).
inline DriftModel model_of(const Config& c, std::optional<double> delta = std::nullopt) {
  const double d = delta.value_or(c.delta);
  try {
    if (c.kind == "allen_cahn") return DriftModel::allen_cahn(c.amplitude);
    if (c.kind == "normal_form") return DriftModel::normal_form(d, c.cubic, c.a1);
    if (c.form == "quadratic") return DriftModel::frozen_quadratic(d);
    return DriftModel::linear(c.rate, c.offset);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

inline SimConfig sim_of(const Config& c) {
  SimConfig s;
  s.eps = c.eps;
  s.sigma = c.sigma;
  s.dt = c.dt_value();
  s.spec = torus_of(c);
  s.t_start = c.t_start_value();
  s.t_end = c.t_end_value();
  s.s_monitor = c.s_monitor;
  s.seed = c.seed;
  s.record_stride = c.record_stride;
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("sim: ") + e.what());
  }
  return s;
}

inline ExitSpec exits_of(const Config& c) {
  ExitSpec e;
  e.h = c.h;
  e.h_perp = c.h_perp;
  e.h_stable = c.h_stable;
  e.d_level = c.d_level;
  e.d0_level = c.d0_level;
  e.absorb_at_d0 = c.absorb;
  try {
    e.validate();
  } catch (const InvalidArgument& ex) {
    throw ConfigError(std::string("exits: ") + ex.what());
  }
  return e;
}

inline SpectralField initial_field(const Config& c, const DriftModel& model) {
  const TorusSpec spec = torus_of(c);
  if (c.init == "zero") return SpectralField(spec);
  if (c.init == "constant") return SpectralField::constant(spec, c.init_value);
  const double t0 = c.t_start_value();
  const double root =
      detail::require_root(equilibrium_branches(model, t0).largest(Stability::Stable), "stable", t0);
  return SpectralField::constant(spec, root);
}

inline TransitionStudy study_of(const Config& c) {
  TransitionStudy st;
  st.spec = torus_of(c);
  st.cubic = c.cubic;
  st.T0 = c.T0;
  if (c.dt) st.dt_over_eps = *c.dt / c.eps;
  st.gap_factor = c.gap_factor;
  st.d_level = c.d_level;
  st.d0_level = c.d0_level;
  st.h_perp_over_sigma = c.h_perp_over_sigma;
  st.s_monitor = c.s_monitor;
  st.seed = c.seed;
  return st;
}

}  // namespace spdelab
