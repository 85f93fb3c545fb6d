// spdelab: command-line front end.
//
//   spdelab <branches|adiabatic|simulate|sweep|threshold|variance-check>
//           --config PATH [--out DIR] [--seed U64] [--resume]
//
// Exit status: 0 success, 1 configuration error, 2 numerical failure,
// 3 bracket or fit failure. Worker threads: SPDELAB_WORKERS.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "spdelab/commands.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 1, kNumerical = 2, kFit = 3 };

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slow-time stochastic Allen-Cahn / normal-form experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  bool resume = false;
  std::optional<int> max_cells;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI configuration or manifest.json")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "master seed (overrides the configuration)");
  };
  const char* names[] = {"branches", "adiabatic", "simulate", "sweep", "threshold",
                         "variance-check"};
  const char* help[] = {"equilibrium branches on a time grid",
                        "adiabatic solutions, linearizations and zeta",
                        "one trajectory with exit monitoring",
                        "grid of event probabilities (resumable)",
                        "critical noise per delta and the log-log fit",
                        "per-mode variance of the linear dynamics"};
  for (int i = 0; i < 6; ++i) {
    auto* sub = app.add_subcommand(names[i], help[i]);
    add_common(sub);
    if (std::string(names[i]) == "sweep") {
      sub->add_flag("--resume", resume, "skip cells completed in an earlier run");
      sub->add_option("--max-cells", max_cells, "stop after this many new cells");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    spdelab::Config cfg = spdelab::load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    spdelab::CommandOptions opt;
    opt.out_dir = out_dir;
    opt.resume = resume;
    opt.max_cells = max_cells;
    std::filesystem::create_directories(opt.out_dir);

    if (cmd == "branches") spdelab::cmd_branches(cfg, opt);
    else if (cmd == "adiabatic") spdelab::cmd_adiabatic(cfg, opt);
    else if (cmd == "simulate") spdelab::cmd_simulate(cfg, opt);
    else if (cmd == "sweep") {
      if (!spdelab::cmd_sweep(cfg, opt)) std::cerr << "sweep stopped early; rerun with --resume\n";
    } else if (cmd == "threshold") {
      if (!spdelab::cmd_threshold(cfg, opt)) {
        std::cerr << "threshold: a bracket or the fit failed (see manifest.json)\n";
        return kFit;
      }
    } else if (cmd == "variance-check") spdelab::cmd_variance_check(cfg, opt);
    return kOk;
  } catch (const spdelab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const spdelab::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kConfig;
  } catch (const spdelab::BracketNotFound& e) {
    std::cerr << "bracket failure: " << e.what() << "\n";
    return kFit;
  } catch (const spdelab::DegeneratePoints& e) {
    std::cerr << "fit failure: " << e.what() << "\n";
    return kFit;
  } catch (const spdelab::Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kNumerical;
  }
}
