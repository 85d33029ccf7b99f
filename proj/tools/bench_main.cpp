#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "experiments.hpp"
#include "problems.hpp"

namespace {

using rkproj::bench::resolve_method;

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct CommonOpts {
  std::string problem = "oscillator";
  int burgers_n = 50;
  std::string tableau = "rk44";
  std::string target = "conservative";
  std::string embedded = "euler";
  std::optional<bool> weighted_override;
  double dt = 0;
  double cfl = 0;
  double tf = 10;
  std::string out_path;
  std::string format = "csv";
  int seed = 0;
  std::string weighted_raw;
  std::string config_path;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_tableau = true) {
  cmd->add_option("--problem", o.problem,
                  "Problem name: lindiss | oscillator | burgers | rigidbody")
      ->capture_default_str();
  cmd->add_option("--burgers-n", o.burgers_n, "Grid points for the Burgers problem")
      ->capture_default_str();
  if (with_tableau)
    cmd->add_option("--tableau", o.tableau,
                    "Tableau: ssprk22 | rk33 | heun33 | rk44 | dp75 | bsrk85")
        ->capture_default_str();
  cmd->add_option("--target", o.target,
                  "Projection target: conservative | dissipative | "
                  "dissipative-unweighted")
      ->capture_default_str();
  cmd->add_option("--embedded", o.embedded,
                  "Embedded weights for directional projection: euler | <tableau>")
      ->capture_default_str();
  cmd->add_option("--dissipative-weighted", o.weighted_raw,
                  "Override the b_i weighting of the dissipative estimate: "
                  "true | false");
  cmd->add_option("--out", o.out_path, "Output file (default: stdout)");
  cmd->add_option("--seed", o.seed,
                  "Seed for randomized property runs (reserved; deterministic "
                  "subcommands ignore it)");
  cmd->add_option("--format", o.format, "Output format: csv | json")
      ->capture_default_str();
  cmd->add_option("--config", o.config_path,
                  "Read options from a flat key=value file")
      ->configurable(false);
}

// CLI11 only consults config files on the root app, so subcommand configs are
// fed back through the parser by hand. Values already given on the command
// line win.
void apply_config(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file: " + path);
  try {
    cmd->parse_from_stream(f);
  } catch (const CLI::ParseError& e) {
    throw std::invalid_argument(std::string("config file: ") + e.what());
  }
}

void finish_common(CommonOpts& o) {
  if (o.weighted_raw == "true")
    o.weighted_override = true;
  else if (o.weighted_raw == "false")
    o.weighted_override = false;
  else if (!o.weighted_raw.empty())
    throw std::invalid_argument("--dissipative-weighted expects true or false");
}

// Burgers runs are usually specified through a CFL multiple of dx.
double resolve_dt(const CommonOpts& o, const rkproj::OdeProblem<double>& prob) {
  if (o.dt > 0 && o.cfl > 0)
    throw std::invalid_argument("give either --dt or --cfl, not both");
  if (o.dt > 0) return o.dt;
  if (o.cfl > 0) return o.cfl * (2.0 / prob.m);
  throw std::invalid_argument("a positive --dt (or --cfl) is required");
}

struct OutStream {
  std::ofstream file;
  std::ostream* os = &std::cout;
  explicit OutStream(const std::string& path) {
    if (!path.empty()) {
      file.open(path);
      if (!file) throw std::invalid_argument("cannot open output file: " + path);
      os = &file;
    }
  }
};

int cmd_list() {
  std::cout << "problem lindiss\nproblem oscillator\nproblem burgers\n"
               "problem rigidbody\n";
  for (const auto& t : rkproj::builtin_tableaux<double>())
    std::cout << "tableau " << t.name << " stages=" << t.s << " order=" << t.p
              << (t.b_embedded ? " embedded_order=" + std::to_string(t.embedded_order)
                               : "")
              << "\n";
  std::cout << "method plain\nmethod orthogonal\nmethod relaxation\n"
               "method directional\nmethod quasi-orthogonal\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Invariant-preserving Runge-Kutta projection benchmarks.\n"
      "Exit codes: 0 success, 1 usage error, 2 numerical failure."};
  app.require_subcommand(1);

  CommonOpts evolve_o, sweep_o, conv_o, cmp_o;
  std::string evolve_method = "plain";
  std::string sweep_methods = "relaxation,quasi-orthogonal";
  double sweep_min = 0.05, sweep_max = 1.3;
  int sweep_points = 40;
  std::string conv_tableaus = "ssprk22,rk33,heun33,rk44,dp75,bsrk85";
  std::string conv_methods = "plain,quasi-orthogonal";
  double conv_dt_base = 0.1, conv_cfl_base = 0, conv_dt_ref = 0;
  int conv_levels = 6;
  std::string cmp_methods = "relaxation,directional,quasi-orthogonal";
  std::string cmp_channel = "projection_length";

  auto* evolve = app.add_subcommand(
      "evolve",
      "Integrate one configuration and stream per-step CSV.\n"
      "Columns: step,t,t_eff,G_<inv>...,dG_<inv>...[,lambda_<inv>...,"
      "projection_length,angle_<inv>...,eff_ratio,rank,skipped,newton_iters]\n"
      "(bracketed diagnostic columns appear for projection methods only; a\n"
      "failed run ends with a '# failure ...' trailer line)");
  add_common(evolve, evolve_o);
  evolve->add_option("--method", evolve_method,
                     "plain | orthogonal | relaxation | directional | "
                     "quasi-orthogonal")
      ->capture_default_str();
  evolve->add_option("--dt", evolve_o.dt, "Step size");
  evolve->add_option("--cfl", evolve_o.cfl, "Step size as a multiple of dx (Burgers)");
  evolve->add_option("--tf", evolve_o.tf, "Final time")->capture_default_str();

  auto* sweep = app.add_subcommand(
      "sweep",
      "Single-step solvability sweep with the dissipative target.\n"
      "Columns: dt,method,solvable,eff_ratio,dG (one row per dt per method;\n"
      "unsolvable rows carry nan ratios, which is data, not an error)");
  add_common(sweep, sweep_o);
  sweep_o.problem = "lindiss";
  sweep->get_option("--problem")->default_str("lindiss");
  sweep->add_option("--methods", sweep_methods, "Comma-separated method list")
      ->capture_default_str();
  sweep->add_option("--dt-min", sweep_min, "Smallest dt")->capture_default_str();
  sweep->add_option("--dt-max", sweep_max, "Largest dt")->capture_default_str();
  sweep->add_option("--points", sweep_points, "Grid size")->capture_default_str();

  auto* conv = app.add_subcommand(
      "converge",
      "Error-vs-dt study with windowed log-log slope fits.\n"
      "CSV columns: tableau,method,order,dt,error,failed,used_in_fit,slope;\n"
      "JSON mirrors the same report with the fit windows");
  add_common(conv, conv_o, false);
  conv->add_option("--tableaus", conv_tableaus, "Comma-separated tableau list")
      ->capture_default_str();
  conv->add_option("--methods", conv_methods, "Comma-separated method list")
      ->capture_default_str();
  conv->add_option("--dt-base", conv_dt_base,
                   "Coarsest dt; ladder is dt-base*2^{-k}")
      ->capture_default_str();
  conv->add_option("--cfl-base", conv_cfl_base,
                   "Coarsest CFL; ladder is cfl-base*0.5^k*dx (Burgers)");
  conv->add_option("--levels", conv_levels, "Ladder length")->capture_default_str();
  conv->add_option("--dt-ref", conv_dt_ref,
                   "Reference step for problems without an exact solution "
                   "(0 = auto)");
  conv->add_option("--tf", conv_o.tf, "Final time")->capture_default_str();

  auto* cmp = app.add_subcommand(
      "compare",
      "Per-step diagnostic channel for several methods on identical inputs.\n"
      "Columns: t,method,<channel> (long format, methods in the given order)");
  add_common(cmp, cmp_o);
  cmp->add_option("--methods", cmp_methods, "Comma-separated method list")
      ->capture_default_str();
  cmp->add_option("--channel", cmp_channel, "projection_length | angle_deg")
      ->capture_default_str();
  cmp->add_option("--dt", cmp_o.dt, "Step size");
  cmp->add_option("--cfl", cmp_o.cfl, "Step size as a multiple of dx (Burgers)");
  cmp->add_option("--tf", cmp_o.tf, "Final time")->capture_default_str();

  auto* list = app.add_subcommand("list", "List problems, tableaux, and methods");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (list->parsed()) return cmd_list();

    if (evolve->parsed()) {
      apply_config(evolve, evolve_o.config_path);
      finish_common(evolve_o);
      auto prob = rkproj::make_problem(evolve_o.problem, evolve_o.burgers_n);
      auto tab = rkproj::find_tableau(evolve_o.tableau);
      auto cfg = resolve_method(evolve_method, evolve_o.target,
                                evolve_o.weighted_override, evolve_o.embedded, tab);
      OutStream os(evolve_o.out_path);
      auto res = rkproj::bench::run_evolution(prob, tab, cfg,
                                              resolve_dt(evolve_o, prob),
                                              evolve_o.tf, *os.os);
      if (!res.ok) {
        std::cerr << "evolve failed at step " << res.failure_step << " (t="
                  << res.failure_time << "): " << res.reason << "\n";
        return 2;
      }
      return 0;
    }

    if (sweep->parsed()) {
      apply_config(sweep, sweep_o.config_path);
      finish_common(sweep_o);
      auto prob = rkproj::make_problem(sweep_o.problem, sweep_o.burgers_n);
      auto tab = rkproj::find_tableau(sweep_o.tableau);
      if (sweep_points < 1 || sweep_max < sweep_min)
        throw std::invalid_argument("sweep needs points >= 1 and dt-max >= dt-min");
      std::vector<double> grid;
      for (int i = 0; i < sweep_points; ++i)
        grid.push_back(sweep_points == 1
                           ? sweep_min
                           : sweep_min + i * (sweep_max - sweep_min) /
                                             (sweep_points - 1));
      bool weighted = sweep_o.target != "dissipative-unweighted";
      if (sweep_o.weighted_override) weighted = *sweep_o.weighted_override;
      auto rows = rkproj::bench::run_solvability_sweep(
          prob, tab, grid, split_list(sweep_methods), weighted);
      OutStream os(sweep_o.out_path);
      rkproj::bench::write_sweep_csv(rows, *os.os);
      return 0;
    }

    if (conv->parsed()) {
      apply_config(conv, conv_o.config_path);
      finish_common(conv_o);
      auto prob = rkproj::make_problem(conv_o.problem, conv_o.burgers_n);
      std::vector<double> dts;
      for (int k = 0; k < conv_levels; ++k) {
        double dt = conv_cfl_base > 0
                        ? conv_cfl_base * std::pow(0.5, k) * (2.0 / prob.m)
                        : conv_dt_base * std::pow(2.0, -k);
        dts.push_back(dt);
      }
      auto report = rkproj::bench::run_convergence(
          prob, split_list(conv_tableaus), split_list(conv_methods), dts,
          conv_o.tf, conv_o.target, conv_dt_ref);
      OutStream os(conv_o.out_path);
      if (conv_o.format == "json")
        *os.os << rkproj::bench::convergence_json(report);
      else
        rkproj::bench::write_convergence_csv(report, *os.os);
      for (const auto& s : report.series)
        for (const auto& pt : s.points)
          if (pt.failed) {
            std::cerr << "converge: " << s.tableau << "/" << s.method
                      << " failed at dt=" << pt.dt << "\n";
            return 2;
          }
      return 0;
    }

    if (cmp->parsed()) {
      apply_config(cmp, cmp_o.config_path);
      finish_common(cmp_o);
      auto prob = rkproj::make_problem(cmp_o.problem, cmp_o.burgers_n);
      auto tab = rkproj::find_tableau(cmp_o.tableau);
      OutStream os(cmp_o.out_path);
      bool ok = rkproj::bench::run_comparison(
          prob, tab, split_list(cmp_methods), resolve_dt(cmp_o, prob), cmp_o.tf,
          cmp_channel, cmp_o.target, cmp_o.embedded, *os.os);
      return ok ? 0 : 2;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
