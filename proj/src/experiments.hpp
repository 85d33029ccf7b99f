#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "rkproj/fit.hpp"
#include "rkproj/integrate.hpp"
#include "rkproj/projection.hpp"
#include "rkproj/tableau.hpp"

namespace rkproj::bench {

/// Map CLI method/target/embedded strings onto a projection config for the
/// given tableau; "plain" yields no config. Throws std::invalid_argument for
/// unknown names (a usage error, not a numerical failure).
std::optional<ProjectionConfig<double>> resolve_method(
    const std::string& method, const std::string& target,
    std::optional<bool> weighted_override, const std::string& embedded,
    const ButcherTableau<double>& tab,
    const std::vector<std::vector<double>>& embedded_weight_sets = {});

struct EvolutionResult {
  bool ok = true;
  int failure_step = -1;
  double failure_time = 0;
  std::string reason;
};

/// One CSV row per accepted step (plus the initial state); a failure ends the
/// stream with a trailer line and ok = false.
EvolutionResult run_evolution(const OdeProblem<double>& problem,
                              const ButcherTableau<double>& tab,
                              const std::optional<ProjectionConfig<double>>& projection,
                              double dt, double t_final, std::ostream& out);

struct SweepRow {
  double dt;
  std::string method;
  bool solvable;
  double ratio;   // effective_dt / dt, NaN when unsolvable
  double delta_g; // first-step energy change, NaN when unsolvable
};

/// One projected step per dt per method with the dissipative target;
/// solver failures are recorded, not raised.
std::vector<SweepRow> run_solvability_sweep(const OdeProblem<double>& problem,
                                            const ButcherTableau<double>& tab,
                                            const std::vector<double>& dt_grid,
                                            const std::vector<std::string>& methods,
                                            bool weighted = true);

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);

struct SeriesPoint {
  double dt;
  double error;  // NaN when the run failed
  bool failed = false;
  bool used = false;  // inside the fitted window
};

struct ConvergenceSeries {
  std::string tableau;
  std::string method;
  int order = 0;
  double slope = 0;
  int window_points = 0;
  double window_dt_max = 0;
  double window_dt_min = 0;
  std::vector<SeriesPoint> points;
};

struct ConvergenceReport {
  std::string problem;
  double t_final = 0;
  double floor = 0;  // 100x the reference uncertainty
  std::vector<ConvergenceSeries> series;
};

/// Errors at t_final against the exact solution (when the problem has one) or
/// a fine DP(7,5) reference, with windowed log-log slope fits per series.
/// dt_ref = 0 picks the default reference step (1e-3, scaled by dx for
/// Burgers).
ConvergenceReport run_convergence(const OdeProblem<double>& problem,
                                  const std::vector<std::string>& tableaus,
                                  const std::vector<std::string>& methods,
                                  const std::vector<double>& dts, double t_final,
                                  const std::string& target = "conservative",
                                  double dt_ref = 0);

void write_convergence_csv(const ConvergenceReport& report, std::ostream& out);
std::string convergence_json(const ConvergenceReport& report);

/// Long-format (time, method, value) CSV for one diagnostic channel across
/// several methods on identical inputs. Returns false when any method failed.
bool run_comparison(const OdeProblem<double>& problem,
                    const ButcherTableau<double>& tab,
                    const std::vector<std::string>& methods, double dt,
                    double t_final, const std::string& channel,
                    const std::string& target, const std::string& embedded,
                    std::ostream& out);

}  // namespace rkproj::bench
