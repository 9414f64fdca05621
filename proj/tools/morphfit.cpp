// Command-line driver: optimize, fit, sweep, mark, distance.

#include "morphfit/mesh_io.hpp"
#include "morphfit/pipeline.hpp"
#include "morphfit/solver.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <optional>
#include <iostream>
#include <sstream>

using namespace morphfit;

namespace {

enum ExitCode { ok = 0, input_error = 2, solver_failure = 3, empty_fit = 4 };

struct Options {
  // mesh
  std::string mesh_path, grid, out_path, vtk_out, csv_out;
  int order = 2;
  double perturb = 0.0;
  unsigned seed = 1;
  // quality
  std::optional<int> metric;  // unset: 2 in 2D, 303 in 3D
  double gamma = 0.5;
  std::string target = "identity";
  double target_scale = 1.0;
  // solver
  int max_iter = 200;
  double grad_tol = 1e-10;
  int minres_iter = 200;
  double minres_tol = 1e-8;
  // level set
  std::string shape, csg_path, bg_path, sigma = "auto";
  int bg_order = 3, bg_depth = 5;
  // weight
  double w_sigma = 10.0, alpha_sigma = 10.0, eps_dsigma = 1e-3, eps_sigma = 1e-5;
  int n_sigma = 10;
  bool adaptive = true;
  std::string counter = "algorithm";
  // pipeline
  std::string mode = "interface", trim = "none", marking = "integral";
  bool split = true;
  std::vector<int> attrs;
  // sweep
  std::string weights = "1,10,100,1000,10000,100000,1000000";
};

using Config = std::vector<std::pair<std::string, std::string>>;

HighOrderMesh load_input_mesh(const Options& o) {
  if (!o.mesh_path.empty() && !o.grid.empty()) throw Error(Errc::invalid_argument, "--mesh and --grid are exclusive");
  HighOrderMesh m;
  if (!o.mesh_path.empty()) {
    m = load_mesh(o.mesh_path);
  } else if (!o.grid.empty()) {
    // geometry:NxM[xK]
    const auto colon = o.grid.find(':');
    if (colon == std::string::npos) throw Error(Errc::invalid_argument, "--grid expects geometry:NxM[xK]");
    const Geometry g = geometry_from_string(o.grid.substr(0, colon));
    std::vector<int> counts;
    std::stringstream ss(o.grid.substr(colon + 1));
    for (std::string tok; std::getline(ss, tok, 'x');) {
      try {
        counts.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw Error(Errc::invalid_argument, "bad grid count '" + tok + "'");
      }
    }
    const int d = geometry_dim(g);
    if (static_cast<int>(counts.size()) != d) throw Error(Errc::invalid_argument, "--grid needs one count per direction");
    m = make_cartesian(d, counts, o.order, g);
    if (o.perturb > 0.0) m = perturb_interior(std::move(m), o.perturb, o.seed, 1.0 / (counts[0] * o.order));
  } else {
    throw Error(Errc::invalid_argument, "no input mesh: give --mesh FILE or --grid geometry:NxM");
  }
  if (o.perturb > 0.0 && o.grid.empty()) throw Error(Errc::invalid_argument, "--perturb applies to --grid meshes");
  return m;
}

int metric_id(const Options& o, int dim) { return o.metric.value_or(dim == 2 ? 2 : 303); }

Metric make_metric(const Options& o, int dim) {
  Metric mu = metric_from_number(metric_id(o, dim), o.gamma);
  mu.validate(dim);
  return mu;
}

TargetSpec make_target(const Options& o) {
  if (o.target == "identity") return {TargetKind::identity, o.target_scale};
  if (o.target == "ideal") return {TargetKind::ideal_simplex, o.target_scale};
  throw Error(Errc::invalid_argument, "--target must be identity or ideal");
}

SolverConfig make_solver(const Options& o) {
  SolverConfig c;
  c.max_iter = o.max_iter;
  c.grad_rel_tol = o.grad_tol;
  c.fit_tol = o.eps_sigma;
  c.minres_max_iter = o.minres_iter;
  c.minres_rel_tol = o.minres_tol;
  c.validate();
  return c;
}

WeightState make_weight(const Options& o) {
  if (!(o.w_sigma > 0.0) || !(o.alpha_sigma > 1.0) || !(o.eps_dsigma > 0.0) || o.n_sigma < 1)
    throw Error(Errc::invalid_argument, "weight parameters must satisfy w > 0, alpha > 1, eps > 0, N >= 1");
  WeightState w;
  w.w = o.w_sigma;
  w.alpha = o.alpha_sigma;
  w.eps_dsigma = o.eps_dsigma;
  w.n_max = o.n_sigma;
  w.adaptive = o.adaptive;
  if (o.counter == "algorithm") w.mode = CounterMode::algorithm;
  else if (o.counter == "consecutive") w.mode = CounterMode::consecutive;
  else throw Error(Errc::invalid_argument, "--counter must be algorithm or consecutive");
  return w;
}

PipelineOptions make_pipeline(const Options& o) {
  PipelineOptions p;
  if (o.mode == "interface") p.mode = FitMode::interface;
  else if (o.mode == "boundary") p.mode = FitMode::boundary;
  else throw Error(Errc::invalid_argument, "--mode must be interface or boundary");
  if (o.marking == "integral") p.marking = Marking::integral;
  else if (o.marking == "max") p.marking = Marking::sign_at_max;
  else throw Error(Errc::invalid_argument, "--marking must be integral or max");
  if (o.trim == "0") p.trim = 0;
  else if (o.trim == "1") p.trim = 1;
  else if (o.trim != "none") throw Error(Errc::invalid_argument, "--trim must be 0, 1 or none");
  p.split = o.split;
  p.boundary_attrs = o.attrs;
  return p;
}

CsgTree load_csg(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::io_error, "cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_csg(ss.str());
}

/// CSG source from --shape or --csg; empty when neither is given.
std::optional<CsgTree> csg_source(const Options& o) {
  if (!o.shape.empty() && !o.csg_path.empty()) throw Error(Errc::invalid_argument, "--shape and --csg are exclusive");
  if (!o.shape.empty()) return builtin_shape(o.shape);
  if (!o.csg_path.empty()) return load_csg(o.csg_path);
  return std::nullopt;
}

BackgroundOptions background_options(const Options& o) {
  if (o.bg_order < 1 || o.bg_depth < 0) throw Error(Errc::invalid_argument, "--bg-order >= 1 and --bg-depth >= 0");
  BackgroundOptions b;
  b.order = o.bg_order;
  b.max_depth = o.bg_depth;
  return b;
}

LevelSetField make_levelset(const Options& o, const HighOrderMesh& mesh) {
  const int sources = !o.shape.empty() + !o.csg_path.empty() + !o.bg_path.empty();
  if (sources != 1) throw Error(Errc::invalid_argument, "give exactly one of --shape, --csg, --bg");
  if (!o.bg_path.empty()) return LevelSetField(load_background(o.bg_path));
  const CsgTree tree = *csg_source(o);
  if (tree.dim != mesh.dim()) throw Error(Errc::invalid_argument, "level-set dimension differs from mesh dimension");
  bool distance = false;
  if (o.sigma == "auto") distance = !(o.shape == "circle" || o.shape == "sphere");
  else if (o.sigma == "distance") distance = true;
  else if (o.sigma != "analytic") throw Error(Errc::invalid_argument, "--sigma must be auto, analytic or distance");
  if (!distance) return LevelSetField(tree);
  const auto [lo, hi] = bounding_box(mesh);
  return distance_levelset(tree, lo, hi, background_options(o));
}

std::string fmt_attrs(const std::vector<int>& a) {
  std::string s;
  for (int v : a) s += (s.empty() ? "" : ",") + std::to_string(v);
  return s.empty() ? "auto" : s;
}

Config base_config(const std::string& cmd, const Options& o, int dim) {
  Config c = {{"command", cmd},
              {"mesh", o.mesh_path.empty() ? "grid " + o.grid : o.mesh_path},
              {"order", std::to_string(o.order)},
              {"perturb", fmt::format("{}", o.perturb)},
              {"seed", std::to_string(o.seed)},
              {"metric", std::to_string(metric_id(o, dim))},
              {"gamma", fmt::format("{}", o.gamma)},
              {"target", o.target},
              {"target_scale", fmt::format("{}", o.target_scale)},
              {"max_iter", std::to_string(o.max_iter)},
              {"grad_tol", fmt::format("{}", o.grad_tol)},
              {"minres_max_iter", std::to_string(o.minres_iter)},
              {"minres_tol", fmt::format("{}", o.minres_tol)}};
  return c;
}

void add_fit_config(Config& c, const Options& o) {
  const std::string src = !o.shape.empty() ? "shape " + o.shape : !o.csg_path.empty() ? "csg " + o.csg_path : "bg " + o.bg_path;
  Config extra = {{"levelset", src},
                  {"sigma", o.sigma},
                  {"bg_order", std::to_string(o.bg_order)},
                  {"bg_depth", std::to_string(o.bg_depth)},
                  {"mode", o.mode},
                  {"marking", o.marking},
                  {"split", o.split ? "true" : "false"},
                  {"trim", o.trim},
                  {"attrs", fmt_attrs(o.attrs)},
                  {"w_sigma", fmt::format("{}", o.w_sigma)},
                  {"adaptive", o.adaptive ? "true" : "false"},
                  {"alpha_sigma", fmt::format("{}", o.alpha_sigma)},
                  {"eps_dsigma", fmt::format("{}", o.eps_dsigma)},
                  {"eps_sigma", fmt::format("{}", o.eps_sigma)},
                  {"n_sigma", std::to_string(o.n_sigma)},
                  {"counter", o.counter}};
  c.insert(c.end(), extra.begin(), extra.end());
}

void write_text(const std::string& path, const std::function<void(std::ostream&)>& fn) {
  std::ofstream os(path);
  if (!os) throw Error(Errc::io_error, "cannot open '" + path + "' for writing");
  fn(os);
}

void write_outputs(const Options& o, const HighOrderMesh& mesh, const SolverReport* rep, const Config& cfg) {
  if (!o.out_path.empty()) save_mesh(mesh, o.out_path);
  if (!o.vtk_out.empty()) save_vtk(mesh, o.vtk_out);
  if (rep && !o.csv_out.empty()) write_text(o.csv_out, [&](std::ostream& os) { write_report_csv(os, *rep, cfg); });
}

void print_summary(const SolverReport& rep, bool fitting) {
  std::cout << fmt::format("termination: {}\niterations: {}\nF_mu: {} -> {}\nmin_detA: {} -> {}\n", to_string(rep.reason),
                           rep.iterations.size(), rep.initial.F_mu,
                           rep.iterations.empty() ? rep.initial.F_mu : rep.iterations.back().F_mu, rep.initial_min_det,
                           rep.final_min_det);
  if (fitting)
    std::cout << fmt::format("fit_error: {} -> {}\nw_sigma: {} -> {}\n", rep.initial.fit_error, rep.final_error,
                             rep.initial_w, rep.final_w);
}

HighOrderMesh with_coords(HighOrderMesh m, const std::vector<double>& x) {
  m.set_coords(x);
  return m;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_optimize(const Options& o) {
  const HighOrderMesh mesh = load_input_mesh(o);
  const Config cfg = base_config("optimize", o, mesh.dim());
  const NewtonResult r = newton_quality(mesh, make_target(o), make_metric(o, mesh.dim()), make_solver(o));
  const HighOrderMesh out = with_coords(mesh, r.coords);
  write_outputs(o, out, &r.report, cfg);
  print_summary(r.report, false);
  return r.report.reason == Termination::gradient_tolerance ? ok : solver_failure;
}

bool fit_converged(const SolverReport& rep) {
  return rep.reason == Termination::fit_tolerance || rep.reason == Termination::gradient_tolerance;
}

int cmd_fit(const Options& o) {
  const HighOrderMesh input = load_input_mesh(o);
  const LevelSetField ls = make_levelset(o, input);
  Config cfg = base_config("fit", o, input.dim());
  add_fit_config(cfg, o);
  const PreparedMesh prep = prepare_fit(input, ls, make_pipeline(o));
  std::cout << fmt::format("elements: {}\nfit nodes: {}\nsplits: {} applied, {} skipped\nviolations: {}\n",
                           prep.mesh.num_elements(), prep.fit_nodes.size(), prep.splits_applied, prep.splits_skipped,
                           prep.violations);
  const NewtonResult r = newton_fit(prep.mesh, make_target(o), make_metric(o, prep.mesh.dim()), ls, prep.fit_nodes,
                                    make_weight(o), make_solver(o));
  write_outputs(o, with_coords(prep.mesh, r.coords), &r.report, cfg);
  print_summary(r.report, true);
  return fit_converged(r.report) ? ok : solver_failure;
}

std::vector<double> parse_weights(const std::string& s) {
  std::vector<double> w;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      w.push_back(std::stod(tok, &used));
      if (used != tok.size() || !(w.back() > 0.0)) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw Error(Errc::invalid_argument, "bad weight '" + tok + "'");
    }
  }
  return w;
}

int cmd_sweep(const Options& o) {
  const HighOrderMesh input = load_input_mesh(o);
  const LevelSetField ls = make_levelset(o, input);
  const std::vector<double> weights = parse_weights(o.weights);
  Config cfg = base_config("sweep", o, input.dim());
  add_fit_config(cfg, o);
  cfg.push_back({"weights", o.weights.empty() ? "none" : o.weights});
  const PreparedMesh prep = prepare_fit(input, ls, make_pipeline(o));
  const TargetSpec target = make_target(o);
  const Metric mu = make_metric(o, prep.mesh.dim());
  const SolverConfig solver = make_solver(o);
  std::ostringstream table;
  for (const auto& [k, v] : cfg) table << "# " << k << " = " << v << '\n';
  table << "mode,w_sigma,final_error,iterations,termination\n";
  auto run = [&](const std::string& mode, WeightState w) {
    try {
      const NewtonResult r = newton_fit(prep.mesh, target, mu, ls, prep.fit_nodes, w, solver);
      table << fmt::format("{},{},{},{},{}\n", mode, w.w, r.report.final_error, r.report.iterations.size(),
                           to_string(r.report.reason));
    } catch (const Error& e) {
      table << fmt::format("{},{},nan,0,error:{}\n", mode, w.w, to_string(e.code()));
    }
  };
  for (double wv : weights) {
    WeightState w = make_weight(o);
    w.w = wv;
    w.adaptive = false;
    run("fixed", w);
  }
  WeightState w = make_weight(o);
  w.adaptive = true;
  run("adaptive", w);
  if (!o.csv_out.empty()) write_text(o.csv_out, [&](std::ostream& os) { os << table.str(); });
  std::cout << table.str();
  return ok;
}

int cmd_mark(const Options& o) {
  const HighOrderMesh input = load_input_mesh(o);
  const LevelSetField ls = make_levelset(o, input);
  const PipelineOptions p = make_pipeline(o);
  HighOrderMesh mesh;
  int violations = 0;
  try {
    const PreparedMesh prep = prepare_fit(input, ls, p);
    mesh = prep.mesh;
    violations = prep.violations;
  } catch (const Error& e) {
    if (e.code() != Errc::empty_fit_set) throw;
    // uniform labels: still export them
    mesh = trim(input, mark(input, ls, p.marking), p.trim);
  }
  int inside = 0;
  for (int v : mesh.material()) inside += v;
  std::cout << fmt::format("elements: {}\neta=0: {}\neta=1: {}\nviolations: {}\n", mesh.num_elements(),
                           mesh.num_elements() - inside, inside, violations);
  write_outputs(o, mesh, nullptr, {});
  return ok;
}

int cmd_distance(const Options& o) {
  const auto tree = csg_source(o);
  if (!tree) throw Error(Errc::invalid_argument, "distance needs --shape or --csg");
  const int d = tree->dim;
  const Vec lo = Vec::Zero(d), hi = Vec::Ones(d);
  const auto membership = [root = tree->root](const Vec& x) { return csg_value(*root, x); };
  const BackgroundField bg = build_background(membership, lo, hi, background_options(o));
  const BackgroundField dist = distance_field(bg, membership);
  std::cout << fmt::format("leaves: {}\nmax depth: {}\nfinest cell diameter: {}\n", dist.leaves().size(),
                           dist.max_depth(), dist.finest_cell_diameter());
  if (!o.out_path.empty()) save_background(dist, o.out_path);
  if (!o.csv_out.empty())
    write_text(o.csv_out, [&](std::ostream& os) {
      os << (d == 2 ? "x,y,sigma,membership\n" : "x,y,z,sigma,membership\n");
      for (int c : dist.leaves())
        for (int i = 0; i < dist.reference().num_nodes(); ++i) {
          const Vec x = dist.node_position(c, i);
          for (int a = 0; a < d; ++a) os << format_double(x[a]) << ',';
          os << format_double(dist.cell(c).values[i]) << ',' << format_double(membership(x)) << '\n';
        }
    });
  return ok;
}

int exit_code(Errc c) {
  switch (c) {
    case Errc::empty_fit_set: return empty_fit;
    case Errc::out_of_domain:
    case Errc::metric_undefined:
    case Errc::invalid_mesh: return solver_failure;
    default: return input_error;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"High-order mesh optimization and level-set fitting"};
  app.require_subcommand(1);
  Options o;

  auto mesh_opts = [&](CLI::App* s) {
    s->add_option("--mesh", o.mesh_path, "input mesh file");
    s->add_option("--grid", o.grid, "Cartesian unit-box mesh, geometry:NxM[xK] (quad, tri, hex, tet)");
    s->add_option("--order", o.order, "polynomial order for --grid")->check(CLI::Range(1, 8));
    s->add_option("--perturb", o.perturb, "random interior node offset, fraction of the node spacing");
    s->add_option("--seed", o.seed, "seed for --perturb");
    s->add_option("--out", o.out_path, "output file");
    s->add_option("--vtk-out", o.vtk_out, "VTK output of the final mesh");
    s->add_option("--csv-out", o.csv_out, "CSV report");
  };
  auto quality_opts = [&](CLI::App* s) {
    s->add_option("--metric", o.metric, "quality metric: 2, 77, 80, 303 (default 2 in 2D, 303 in 3D)");
    s->add_option("--gamma", o.gamma, "blend factor for metric 80");
    s->add_option("--target", o.target, "target: identity or ideal")->check(CLI::IsMember({"identity", "ideal"}));
    s->add_option("--target-scale", o.target_scale, "uniform target size factor");
    s->add_option("--max-iter", o.max_iter, "Newton iteration limit");
    s->add_option("--grad-tol", o.grad_tol, "relative gradient tolerance");
    s->add_option("--minres-iter", o.minres_iter, "MINRES iteration limit");
    s->add_option("--minres-tol", o.minres_tol, "MINRES relative tolerance");
  };
  auto levelset_opts = [&](CLI::App* s) {
    s->add_option("--shape", o.shape, "builtin shape: circle, sphere, csg2d, csg3d")
        ->check(CLI::IsMember({"circle", "sphere", "csg2d", "csg3d"}));
    s->add_option("--csg", o.csg_path, "primitive (CSG) file");
    s->add_option("--bg", o.bg_path, "background field file");
    s->add_option("--sigma", o.sigma, "level set from a CSG source: auto, analytic, distance");
    s->add_option("--bg-order", o.bg_order, "background field order");
    s->add_option("--bg-depth", o.bg_depth, "background refinement depth");
  };
  auto fit_opts = [&](CLI::App* s) {
    s->add_option("--mode", o.mode, "fit mode: interface or boundary")->check(CLI::IsMember({"interface", "boundary"}));
    s->add_option("--marking", o.marking, "material marking: integral or max")->check(CLI::IsMember({"integral", "max"}));
    s->add_flag("--split,!--no-split", o.split, "conforming quad splits");
    s->add_option("--trim", o.trim, "keep elements with this label: 0, 1 or none")
        ->check(CLI::IsMember({"0", "1", "none"}));
    s->add_option("--attr", o.attrs, "boundary attributes to fit (boundary mode)")->delimiter(',');
    s->add_option("--w-sigma", o.w_sigma, "initial penalty weight");
    s->add_flag("--adaptive,!--fixed-weight", o.adaptive, "adapt the penalty weight");
    s->add_option("--alpha-sigma", o.alpha_sigma, "weight growth factor");
    s->add_option("--eps-dsigma", o.eps_dsigma, "stagnation threshold for weight growth");
    s->add_option("--eps-sigma", o.eps_sigma, "fit tolerance");
    s->add_option("--n-sigma", o.n_sigma, "adaptation counter limit");
    s->add_option("--counter", o.counter, "counter semantics: algorithm or consecutive")
        ->check(CLI::IsMember({"algorithm", "consecutive"}));
  };

  auto* optimize = app.add_subcommand("optimize", "mesh quality optimization");
  mesh_opts(optimize);
  quality_opts(optimize);
  auto* fit = app.add_subcommand("fit", "fit mesh nodes to a level set");
  mesh_opts(fit);
  quality_opts(fit);
  levelset_opts(fit);
  fit_opts(fit);
  auto* sweep = app.add_subcommand("sweep", "fixed-weight fits plus one adaptive fit");
  mesh_opts(sweep);
  quality_opts(sweep);
  levelset_opts(sweep);
  fit_opts(sweep);
  sweep->add_option("--weights", o.weights, "comma-separated fixed weights (empty: adaptive run only)");
  auto* markc = app.add_subcommand("mark", "material marking, relabeling, splits and trimming");
  mesh_opts(markc);
  levelset_opts(markc);
  fit_opts(markc);
  auto* distance = app.add_subcommand("distance", "background field and distance function of a CSG source");
  distance->add_option("--shape", o.shape, "builtin shape")->check(CLI::IsMember({"circle", "sphere", "csg2d", "csg3d"}));
  distance->add_option("--csg", o.csg_path, "primitive (CSG) file");
  distance->add_option("--bg-order", o.bg_order, "background field order");
  distance->add_option("--bg-depth", o.bg_depth, "background refinement depth");
  distance->add_option("--out", o.out_path, "background field output file");
  distance->add_option("--csv-out", o.csv_out, "CSV of leaf node values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return input_error;
  }

  warning_handler() = [](std::string_view m) { std::cerr << "warning: " << m << '\n'; };
  try {
    if (*optimize) return cmd_optimize(o);
    if (*fit) return cmd_fit(o);
    if (*sweep) return cmd_sweep(o);
    if (*markc) return cmd_mark(o);
    if (*distance) return cmd_distance(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return input_error;
  }
  return input_error;
}
