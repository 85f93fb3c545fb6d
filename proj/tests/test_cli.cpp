#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "spdelab/commands.hpp"

namespace fs = std::filesystem;
using namespace spdelab;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("spdelab_cli_" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const std::string& text) {
    const auto p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  // Runs the CLI and returns its exit status; stderr goes to dir/stderr.txt.
  int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + "\"" + SPDELAB_CLI_PATH + "\" " + args +
                            " > /dev/null 2> \"" + (dir_ / "stderr.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string stderr_text() const { return read_file(dir_ / "stderr.txt"); }

  fs::path dir_;
};

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  ADD_FAILURE() << "missing column " << name;
  return 0;
}

const char* kSmallTransition = R"([torus]
cutoff = 4
[model]
kind = normal_form
delta = 0.04
cubic = 1
[sim]
eps = 0.01
sigma = 0.1
seed = 7
[mc]
n = 60
)";

}  // namespace

TEST_F(CliTest, ExitCodesForConfigErrors) {
  const auto bad = write_config("bad.ini", "[model]\nkind = normal_form\ndelta = abc\n");
  EXPECT_EQ(run("branches --config " + bad.string() + " --out " + dir_.string()), 1);
  EXPECT_NE(stderr_text().find("line 3"), std::string::npos) << stderr_text();
  EXPECT_NE(stderr_text().find("model.delta"), std::string::npos);
  EXPECT_EQ(run("branches --config " + (dir_ / "missing.ini").string()), 1);
  EXPECT_EQ(run("branches"), 1);
  EXPECT_EQ(run("frobnicate --config x"), 1);
}

TEST_F(CliTest, BranchesAllenCahnZeroForcing) {
  const auto cfg = write_config("ac.ini", "[model]\nkind = allen_cahn\nA = 0\n[adiabatic]\nbranch_points = 11\n");
  ASSERT_EQ(run("branches --config " + cfg.string() + " --out " + dir_.string()), 0);
  const auto rows = parse_csv(read_file(dir_ / "branches.csv"));
  ASSERT_EQ(rows.size(), 12u);
  EXPECT_EQ(rows[0][0], "t");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_NEAR(std::stod(rows[i][1]), -1.0, 1e-12);
    EXPECT_NEAR(std::stod(rows[i][2]), 0.0, 1e-12);
    EXPECT_NEAR(std::stod(rows[i][3]), 1.0, 1e-12);
    EXPECT_EQ(rows[i][4], "stable");
    EXPECT_EQ(rows[i][5], "unstable");
  }
}

TEST_F(CliTest, BranchesNormalFormClosedForm) {
  const auto cfg = write_config("nf.ini", "[model]\ndelta = 0.04\n[adiabatic]\nbranch_points = 21\n");
  ASSERT_EQ(run("branches --config " + cfg.string() + " --out " + dir_.string()), 0);
  const auto rows = parse_csv(read_file(dir_ / "branches.csv"));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double t = std::stod(rows[i][0]);
    EXPECT_NEAR(std::stod(rows[i][1]), -std::sqrt(0.04 + t * t), 1e-10);
    EXPECT_NEAR(std::stod(rows[i][2]), std::sqrt(0.04 + t * t), 1e-10);
    EXPECT_EQ(rows[i][3], "");
  }
}

TEST_F(CliTest, AdiabaticIsReproducibleAndPositive) {
  const auto cfg = write_config("nf.ini", "[model]\ndelta = 0.04\n[sim]\neps = 0.01\n");
  const auto a = dir_ / "a", b = dir_ / "b";
  ASSERT_EQ(run("adiabatic --config " + cfg.string() + " --out " + a.string()), 0);
  ASSERT_EQ(run("adiabatic --config " + cfg.string() + " --out " + b.string()), 0);
  const auto text = read_file(a / "adiabatic.csv");
  EXPECT_EQ(text, read_file(b / "adiabatic.csv"));
  const auto rows = parse_csv(text);
  const auto z = column(rows[0], "zeta");
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GT(std::stod(rows[i][z]), 0.0);

  const auto frozen = write_config("frozen.ini", "[model]\nkind = custom\nform = linear\nrate = -1\noffset = 1\n");
  ASSERT_EQ(run("adiabatic --config " + frozen.string() + " --out " + (dir_ / "c").string()), 0);
  const auto fr = parse_csv(read_file(dir_ / "c" / "adiabatic.csv"));
  const auto pb = column(fr[0], "phibar"), zz = column(fr[0], "zeta");
  for (std::size_t i = 1; i < fr.size(); ++i) {
    EXPECT_NEAR(std::stod(fr[i][pb]), 1.0, 1e-12);
    EXPECT_NEAR(std::stod(fr[i][zz]), 0.5, 1e-12);
    EXPECT_EQ(fr[i][column(fr[0], "phihat")], "");
  }
}

TEST_F(CliTest, SimulateDeterministicMatchesAdiabatic) {
  const auto cfg = write_config("nf.ini", "[torus]\ncutoff = 4\n[model]\ndelta = 0.04\n[sim]\neps = 0.01\n");
  ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + dir_.string()), 0);
  ASSERT_EQ(run("adiabatic --config " + cfg.string() + " --out " + dir_.string()), 0);
  const auto traj = parse_csv(read_file(dir_ / "trajectory.csv"));
  const auto adia = parse_csv(read_file(dir_ / "adiabatic.csv"));
  std::size_t j = 1, matched = 0;
  for (std::size_t i = 1; i < adia.size(); ++i) {
    const double t = std::stod(adia[i][0]);
    while (j + 1 < traj.size() && std::stod(traj[j][0]) < t - 1e-12) ++j;
    if (std::abs(std::stod(traj[j][0]) - t) > 1e-12) continue;
    EXPECT_NEAR(std::stod(traj[j][1]), std::stod(adia[i][1]), 2e-3) << "t=" << t;
    ++matched;
  }
  EXPECT_GT(matched, 100u);
}

TEST_F(CliTest, SimulateSeedAndManifestReproduce) {
  const auto cfg = write_config("nf.ini", kSmallTransition);
  const auto a = dir_ / "a", b = dir_ / "b", c = dir_ / "c", d = dir_ / "d";
  ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + a.string()), 0);
  ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + b.string()), 0);
  ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + c.string() + " --seed 8"), 0);
  ASSERT_EQ(run("simulate --config " + (a / "manifest.json").string() + " --out " + d.string()), 0);
  const auto ta = read_file(a / "trajectory.csv");
  EXPECT_EQ(ta, read_file(b / "trajectory.csv"));
  EXPECT_EQ(ta, read_file(d / "trajectory.csv"));
  EXPECT_NE(ta, read_file(c / "trajectory.csv"));

  const auto man = nlohmann::json::parse(read_file(a / "manifest.json"));
  EXPECT_EQ(man["master_seed"], 7);
  EXPECT_EQ(man["tool_version"], kToolVersion);
  EXPECT_EQ(man["outputs"]["trajectory.csv"], hex64(fnv1a64(ta)));
  EXPECT_TRUE(man.contains("hitting_times"));
  EXPECT_DOUBLE_EQ(man["defaults"]["dt"].get<double>(), 0.01 / 20.0);
  const auto seeded = nlohmann::json::parse(read_file(c / "manifest.json"));
  EXPECT_EQ(seeded["master_seed"], 8);
}

TEST_F(CliTest, NonFiniteTrajectoryExitsWithTwo) {
  const auto cfg = write_config("blow.ini",
                                "[torus]\ncutoff = 2\n[model]\ndelta = 0.04\n[sim]\ninit = constant\n"
                                "init_value = -50\neps = 0.01\n");
  EXPECT_EQ(run("simulate --config " + cfg.string() + " --out " + dir_.string()), 2);
  const auto man = nlohmann::json::parse(read_file(dir_ / "manifest.json"));
  EXPECT_EQ(man["failure"]["kind"], "NonFinite");
}

TEST_F(CliTest, SweepSingleCellEqualsDirectRun) {
  const auto text = std::string(kSmallTransition) + "[sweep]\nsigma = 0.1\n";
  const auto cfg = write_config("sweep.ini", text);
  ASSERT_EQ(run("sweep --config " + cfg.string() + " --out " + dir_.string()), 0);
  const auto rows = parse_csv(read_file(dir_ / "sweep.csv"));
  ASSERT_EQ(rows.size(), 2u);

  const Config c = parse_config_text(text);
  const CellSetup s = cell_setup(c, sweep_cells(c).front());
  const auto batch = run_batch(s.sim, s.model, s.init, s.exits, nullptr, c.n, 1);
  const auto st = event_probability(batch, Event::Transition, s.horizon);
  EXPECT_EQ(rows[1][column(rows[0], "p_hat")], detail::format_double(st.p_hat));
  EXPECT_EQ(rows[1][column(rows[0], "n")], std::to_string(c.n));
  EXPECT_EQ(rows[1][column(rows[0], "event")], "Transition");
}

TEST_F(CliTest, SweepResumesAndIsWorkerIndependent) {
  const auto cfg = write_config("sweep.ini", std::string(kSmallTransition) + "[sweep]\nsigma = 0.03, 0.1, 0.3\n");
  const auto full = dir_ / "full", part = dir_ / "part";
  ASSERT_EQ(run("sweep --config " + cfg.string() + " --out " + full.string(), "SPDELAB_WORKERS=1"), 0);
  const auto reference = read_file(full / "sweep.csv");

  ASSERT_EQ(run("sweep --config " + cfg.string() + " --out " + part.string() + " --max-cells 1",
                "SPDELAB_WORKERS=3"),
            0);
  auto man = nlohmann::json::parse(read_file(part / "manifest.json"));
  EXPECT_FALSE(man["complete"].get<bool>());
  EXPECT_EQ(man["completed_cells"].size(), 1u);
  EXPECT_EQ(parse_csv(read_file(part / "sweep.csv")).size(), 2u);

  ASSERT_EQ(run("sweep --config " + cfg.string() + " --out " + part.string() + " --resume",
                "SPDELAB_WORKERS=2"),
            0);
  man = nlohmann::json::parse(read_file(part / "manifest.json"));
  EXPECT_TRUE(man["complete"].get<bool>());
  EXPECT_EQ(read_file(part / "sweep.csv"), reference);
  EXPECT_EQ(man["outputs"]["sweep.csv"], hex64(fnv1a64(reference)));

  // p_hat is nondecreasing in sigma up to CI overlap.
  const auto rows = parse_csv(reference);
  const auto lo = column(rows[0], "ci_low"), hi = column(rows[0], "ci_high");
  for (std::size_t i = 2; i < rows.size(); ++i) EXPECT_GE(std::stod(rows[i][hi]), std::stod(rows[i - 1][lo]));

  // A different configuration cannot resume this directory.
  const auto other = write_config("other.ini", std::string(kSmallTransition) + "[sweep]\nsigma = 0.2\n");
  EXPECT_EQ(run("sweep --config " + other.string() + " --out " + part.string() + " --resume"), 1);
}

TEST_F(CliTest, ThresholdSyntheticHook) {
  const auto cfg = write_config("th.ini",
                                "[sim]\neps = 0.001\n[mc]\ndeltas = 0.01, 0.02, 0.04, 0.08, 0.16\n"
                                "synthetic_exponent = 0.75\ntol = 0.01\n");
  ASSERT_EQ(run("threshold --config " + cfg.string() + " --out " + dir_.string()), 0);
  const auto th = parse_csv(read_file(dir_ / "thresholds.csv"));
  ASSERT_EQ(th.size(), 6u);
  for (std::size_t i = 1; i < th.size(); ++i) {
    const double d = std::stod(th[i][0]);
    EXPECT_NEAR(std::log(std::stod(th[i][1])), 0.75 * std::log(d), 0.01);
    EXPECT_EQ(th[i][column(th[0], "status")], "ok");
  }
  const auto fit = parse_csv(read_file(dir_ / "fit.csv"));
  EXPECT_NEAR(std::stod(fit[1][0]), 0.75, 0.01);
  const auto man = nlohmann::json::parse(read_file(dir_ / "manifest.json"));
  const auto probes = parse_csv(read_file(dir_ / "probes.csv"));
  EXPECT_EQ(man["batch_seeds"].size(), probes.size() - 1);
  EXPECT_GT(man["batch_seeds"].size(), 5u);
}

TEST_F(CliTest, ThresholdFailuresExitWithThree) {
  // sigma_star = delta^6 lies far below every reachable probe.
  const auto unreachable = write_config("th.ini", "[sim]\neps = 0.001\n[mc]\ndeltas = 0.01, 0.02, 0.04, 0.08\n"
                                                  "synthetic_exponent = 6\n");
  EXPECT_EQ(run("threshold --config " + unreachable.string() + " --out " + dir_.string()), 3);
  const auto th = parse_csv(read_file(dir_ / "thresholds.csv"));
  EXPECT_EQ(th[1][column(th[0], "status")], "bracket_not_found");

  const auto two = write_config("two.ini", "[sim]\neps = 0.001\n[mc]\ndeltas = 0.01, 0.16\nsynthetic_exponent = 0.75\n");
  EXPECT_EQ(run("threshold --config " + two.string() + " --out " + (dir_ / "b").string()), 3);
}

TEST_F(CliTest, VarianceCheckTable) {
  const auto cfg = write_config("var.ini",
                                "[torus]\ncutoff = 8\n[model]\nkind = custom\nform = linear\nrate = -1\n"
                                "[sim]\neps = 0.01\nsigma = 0.05\nt_start = 0\nt_end = 0.08\nrecord_stride = 20\n"
                                "init = zero\n[mc]\nn = 1000\nk_max = 8\n");
  ASSERT_EQ(run("variance-check --config " + cfg.string() + " --out " + dir_.string()), 0);
  const auto rows = parse_csv(read_file(dir_ / "variance.csv"));
  ASSERT_EQ(rows.size(), 10u);
  const auto c0 = column(rows[0], "c0"), z = column(rows[0], "z_score");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][0], std::to_string(i - 1));
    EXPECT_GT(std::stod(rows[i][c0]), 0.0);
    EXPECT_LE(std::abs(std::stod(rows[i][z])), 3.0) << "k=" << i - 1;
  }
  const auto nf = write_config("nf.ini", "[model]\ndelta = 0.04\n");
  EXPECT_EQ(run("variance-check --config " + nf.string() + " --out " + dir_.string()), 1);
}
