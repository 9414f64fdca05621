#include <gtest/gtest.h>

#include "morphfit/background.hpp"
#include "morphfit/mesh_io.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace morphfit;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("morphfit_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

struct CliRun {
  int code;
  std::string out;
};

CliRun run(const std::string& args) {
  const std::string log = path("stdout.txt");
  const std::string cmd = std::string(MORPHFIT_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string read(const std::string& file) {
  std::ifstream is(file);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct Csv {
  std::vector<std::string> comments;
  std::string header;
  std::vector<std::vector<std::string>> rows;
};

Csv read_csv(const std::string& file) {
  Csv c;
  std::istringstream is(read(file));
  for (std::string line; std::getline(is, line);) {
    if (line.rfind("#", 0) == 0) {
      c.comments.push_back(line);
    } else if (c.header.empty()) {
      c.header = line;
    } else {
      std::vector<std::string> cells;
      std::stringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
      c.rows.push_back(cells);
    }
  }
  return c;
}

}  // namespace

TEST(Cli, OptimizePerturbedMesh) {
  const CliRun r = run("optimize --grid quad:4x4 --order 2 --perturb 0.3 --out " + path("opt.mesh") + " --csv-out " +
                    path("opt.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const HighOrderMesh m = load_mesh(path("opt.mesh"));
  EXPECT_EQ(m.num_elements(), 16);
  EXPECT_GT(min_detA(m), 0.0);
  const Csv c = read_csv(path("opt.csv"));
  EXPECT_EQ(c.header, "iter,F_mu,F_sigma,fit_error,min_detA,alpha,w_sigma,minres_iters");
  EXPECT_FALSE(c.rows.empty());
  EXPECT_NE(read(path("opt.csv")).find("# termination = gradient-tolerance"), std::string::npos);
}

TEST(Cli, OptimizeIdealMeshTakesNoSteps) {
  const CliRun r = run("optimize --grid quad:3x3 --csv-out " + path("ideal.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(read_csv(path("ideal.csv")).rows.empty());
}

TEST(Cli, MissingInputIsInputError) {
  CliRun r = run("optimize --mesh " + path("does-not-exist.mesh"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("error"), std::string::npos);
  EXPECT_EQ(run("optimize").code, 2);
  EXPECT_EQ(run("optimize --grid quad:4x4 --metric 5").code, 2);
  EXPECT_EQ(run("optimize --grid quad:4x4 --metric 303").code, 2);
  EXPECT_EQ(run("fit --grid quad:4x4 --shape circle --csg x.csg").code, 2);
  EXPECT_EQ(run("bogus").code, 2);
}

TEST(Cli, FitCircleOnQuads) {
  const CliRun r = run("fit --grid quad:8x8 --order 2 --shape circle --csv-out " + path("fit.csv") + " --vtk-out " +
                    path("fit.vtk") + " --out " + path("fit.mesh"));
  ASSERT_EQ(r.code, 0) << r.out;
  const Csv c = read_csv(path("fit.csv"));
  ASSERT_FALSE(c.rows.empty());
  EXPECT_LE(std::stod(c.rows.back()[3]), 1e-5);
  const HighOrderMesh m = load_mesh(path("fit.mesh"));
  EXPECT_TRUE(m.has_material());
  EXPECT_GT(min_detA(m), 0.0);
  EXPECT_NE(read(path("fit.vtk")).find("SCALARS material"), std::string::npos);
  // effective configuration in the header
  const std::string csv = read(path("fit.csv"));
  for (const char* key : {"# metric = 2", "# eps_sigma = 1e-05", "# alpha_sigma = 10", "# eps_dsigma = 0.001",
                          "# n_sigma = 10", "# grad_tol = 1e-10"})
    EXPECT_NE(csv.find(key), std::string::npos) << key;
}

TEST(Cli, FitIsDeterministic) {
  ASSERT_EQ(run("fit --grid tri:6x6 --shape circle --csv-out " + path("d1.csv")).code, 0);
  ASSERT_EQ(run("fit --grid tri:6x6 --shape circle --csv-out " + path("d2.csv")).code, 0);
  EXPECT_EQ(read(path("d1.csv")), read(path("d2.csv")));
}

TEST(Cli, FitSphereOnTets) {
  const CliRun r = run("fit --grid tet:4x4x4 --order 2 --metric 303 --shape sphere --csv-out " + path("tet.csv"));
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST(Cli, DefaultMetricFollowsDimension) {
  const CliRun r = run("fit --grid hex:4x4x4 --shape sphere --csv-out " + path("hex.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(read(path("hex.csv")).find("# metric = 303"), std::string::npos);
}

TEST(Cli, BoundaryFitOnTrimmedCsgMesh) {
  const CliRun r = run("fit --grid quad:24x24 --order 2 --shape csg2d --trim 1 --mode boundary --csv-out " +
                    path("csg.csv") + " --out " + path("csg.mesh"));
  ASSERT_EQ(r.code, 0) << r.out;
  const HighOrderMesh m = load_mesh(path("csg.mesh"));
  for (int v : m.material()) EXPECT_EQ(v, 1);
  const Csv c = read_csv(path("csg.csv"));
  EXPECT_LE(std::stod(c.rows.back()[3]), 1e-5);
}

TEST(Cli, EmptyFitSetExitCode) {
  // a shape outside every element leaves uniform labels
  std::ofstream(path("far.csg")) << "(csg 2 (circle 5 5 0.1))\n";
  EXPECT_EQ(run("fit --grid quad:4x4 --csg " + path("far.csg") + " --sigma analytic").code, 4);
}

TEST(Cli, SweepTable) {
  const CliRun r = run("sweep --grid quad:8x8 --shape circle --csv-out " + path("sweep.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const Csv c = read_csv(path("sweep.csv"));
  EXPECT_EQ(c.header, "mode,w_sigma,final_error,iterations,termination");
  ASSERT_EQ(c.rows.size(), 8u);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(c.rows[i][0], "fixed");
  EXPECT_EQ(c.rows[7][0], "adaptive");
  EXPECT_EQ(c.rows[0][1], "1");
  EXPECT_EQ(c.rows[6][1], "1000000");
  ASSERT_EQ(run("sweep --grid quad:8x8 --shape circle --csv-out " + path("sweep2.csv")).code, 0);
  EXPECT_EQ(read(path("sweep.csv")), read(path("sweep2.csv")));

  const CliRun only = run("sweep --grid quad:8x8 --shape circle --weights \"\" --csv-out " + path("sweep0.csv"));
  ASSERT_EQ(only.code, 0) << only.out;
  const Csv c0 = read_csv(path("sweep0.csv"));
  ASSERT_EQ(c0.rows.size(), 1u);
  EXPECT_EQ(c0.rows[0][0], "adaptive");
}

TEST(Cli, MarkExportsLabels) {
  const CliRun r =
      run("mark --grid quad:4x4 --shape circle --no-split --out " + path("mark.mesh") + " --vtk-out " + path("mark.vtk"));
  ASSERT_EQ(r.code, 0) << r.out;
  const HighOrderMesh m = load_mesh(path("mark.mesh"));
  int inside = 0;
  for (int v : m.material()) inside += v;
  EXPECT_EQ(inside, 4);
  EXPECT_NE(r.out.find("eta=1: 4"), std::string::npos);
  // the four inner cells each touch two interface faces; splitting removes that
  const CliRun split = run("mark --grid quad:4x4 --shape circle --out " + path("split.mesh"));
  ASSERT_EQ(split.code, 0) << split.out;
  EXPECT_EQ(load_mesh(path("split.mesh")).num_elements(), 24);
  EXPECT_NE(split.out.find("violations: 0"), std::string::npos);
}

TEST(Cli, DistanceField) {
  std::ofstream(path("disk.csg")) << "(csg 2 (circle 0.5 0.5 0.3)) ; disk\n";
  const CliRun r = run("distance --csg " + path("disk.csg") + " --bg-depth 4 --out " + path("disk.bg") + " --csv-out " +
                    path("disk.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const BackgroundField bg = load_background(path("disk.bg"));
  Vec x(2);
  x << 0.5, 0.9;
  EXPECT_NEAR(bg.value(x), 0.1, 2 * bg.finest_cell_diameter());
  EXPECT_EQ(read_csv(path("disk.csv")).header, "x,y,sigma,membership");
  std::ofstream(path("bad.csg")) << "(csg 2 (circle 0.5 0.5))\n";
  EXPECT_EQ(run("distance --csg " + path("bad.csg")).code, 2);
}

TEST(Cli, FitFromBackgroundFile) {
  ASSERT_EQ(run("distance --shape circle --bg-depth 5 --out " + path("circle.bg")).code, 0);
  const CliRun r = run("fit --grid quad:8x8 --bg " + path("circle.bg") + " --csv-out " + path("bgfit.csv"));
  EXPECT_EQ(r.code, 0) << r.out;
}
