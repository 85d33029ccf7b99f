#include "experiments.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csv.hpp"
#include "json.hpp"
#include "problems.hpp"

namespace rkproj::bench {

namespace {

ProjectionMethod parse_method_name(const std::string& method) {
  if (method == "orthogonal") return ProjectionMethod::Orthogonal;
  if (method == "relaxation") return ProjectionMethod::Relaxation;
  if (method == "directional") return ProjectionMethod::Directional;
  if (method == "quasi-orthogonal") return ProjectionMethod::QuasiOrthogonal;
  throw std::invalid_argument(
      "unknown method: " + method +
      " (valid: plain, orthogonal, relaxation, directional, quasi-orthogonal)");
}

}  // namespace

std::optional<ProjectionConfig<double>> resolve_method(
    const std::string& method, const std::string& target,
    std::optional<bool> weighted_override, const std::string& embedded,
    const ButcherTableau<double>& tab,
    const std::vector<std::vector<double>>& embedded_weight_sets) {
  if (method == "plain") return std::nullopt;

  ProjectionConfig<double> cfg;
  cfg.method = parse_method_name(method);
  if (target == "conservative") {
    cfg.target = TargetKind::Conservative;
  } else if (target == "dissipative") {
    cfg.target = TargetKind::DissipativeEstimate;
    cfg.dissipative_weighted = true;
  } else if (target == "dissipative-unweighted") {
    cfg.target = TargetKind::DissipativeEstimate;
    cfg.dissipative_weighted = false;
  } else {
    throw std::invalid_argument(
        "unknown target: " + target +
        " (valid: conservative, dissipative, dissipative-unweighted)");
  }
  if (weighted_override) cfg.dissipative_weighted = *weighted_override;

  if (cfg.method == ProjectionMethod::Directional) {
    Eigen::VectorXd bt;
    if (embedded.empty() || embedded == "euler") {
      bt = tab.euler_embedded();
    } else {
      auto donor = find_tableau(embedded);
      if (!donor.b_embedded)
        throw std::invalid_argument("tableau " + embedded +
                                    " has no embedded weights");
      if (donor.b_embedded->size() != tab.s)
        throw std::invalid_argument("embedded weights of " + embedded +
                                    " do not fit tableau " + tab.name);
      bt = *donor.b_embedded;
    }
    if (std::abs(bt.sum() - 1.0) > 1e-14)
      throw std::invalid_argument("embedded weights must sum to 1");
    if ((tab.b - bt).lpNorm<Eigen::Infinity>() == 0.0)
      throw std::invalid_argument("embedded weights equal the base weights");
    cfg.embedded_weights = bt;
    for (const auto& ws : embedded_weight_sets) {
      if (int(ws.size()) != tab.s)
        throw std::invalid_argument(
            "embedded weight set length does not match the stage count");
      cfg.embedded_weight_sets.push_back(
          Eigen::Map<const Eigen::VectorXd>(ws.data(), long(ws.size())));
    }
  }
  return cfg;
}

EvolutionResult run_evolution(const OdeProblem<double>& problem,
                              const ButcherTableau<double>& tab,
                              const std::optional<ProjectionConfig<double>>& projection,
                              double dt, double t_final, std::ostream& out) {
  const bool projected = projection.has_value();

  out << "step,t,t_eff";
  for (const auto& inv : problem.invariants) out << ",G_" << inv.label;
  for (const auto& inv : problem.invariants) out << ",dG_" << inv.label;
  if (projected) {
    for (const auto& inv : problem.invariants) out << ",lambda_" << inv.label;
    out << ",projection_length";
    for (const auto& inv : problem.invariants) out << ",angle_" << inv.label;
    out << ",eff_ratio,rank,skipped,newton_iters";
  }
  out << "\n";

  Trajectory<double> traj = integrate(problem, tab, dt, t_final, projection);
  const auto& g0 = traj.points.front().invariant_values;
  const int l = int(problem.invariants.size());
  for (const auto& pt : traj.points) {
    out << fmt(pt.step) << "," << fmt(pt.t_nominal) << "," << fmt(pt.t_effective);
    for (int j = 0; j < l; ++j) out << "," << fmt(pt.invariant_values[j]);
    for (int j = 0; j < l; ++j) out << "," << fmt(pt.invariant_values[j] - g0[j]);
    if (projected) {
      for (int j = 0; j < l; ++j)
        out << "," << fmt(pt.proj && j < pt.proj->lambdas.size()
                              ? pt.proj->lambdas(j)
                              : 0.0);
      out << "," << fmt(pt.proj ? pt.proj->projection_length : 0.0);
      for (int j = 0; j < l; ++j)
        out << ","
            << fmt(pt.proj ? pt.proj->angle_deg[j]
                           : std::numeric_limits<double>::quiet_NaN());
      out << "," << fmt(pt.proj ? pt.proj->effective_dt / pt.h : 1.0);
      out << "," << fmt(pt.proj ? pt.proj->rank : -1);
      out << "," << fmt(pt.proj ? pt.proj->skipped : false);
      out << "," << fmt(pt.proj ? pt.proj->newton_iters : 0);
    }
    out << "\n";
  }

  EvolutionResult res;
  if (traj.failed) {
    res.ok = false;
    res.failure_step = traj.failure_step;
    res.failure_time = traj.failure_time;
    res.reason = traj.failure_reason;
    out << "# failure step=" << fmt(traj.failure_step)
        << " t=" << fmt(traj.failure_time) << " reason=" << traj.failure_reason
        << "\n";
  }
  return res;
}

std::vector<SweepRow> run_solvability_sweep(const OdeProblem<double>& problem,
                                            const ButcherTableau<double>& tab,
                                            const std::vector<double>& dt_grid,
                                            const std::vector<std::string>& methods,
                                            bool weighted) {
  const double g0 = problem.invariants.at(0).value(problem.q0);
  std::vector<SweepRow> rows;
  for (double dt : dt_grid) {
    for (const auto& method : methods) {
      auto cfg = resolve_method(method,
                                weighted ? "dissipative" : "dissipative-unweighted",
                                std::nullopt, "euler", tab);
      SweepRow row{dt, method, false, std::numeric_limits<double>::quiet_NaN(),
                   std::numeric_limits<double>::quiet_NaN()};
      try {
        StepRecord<double> rec = rk_step(problem, tab, 0.0, problem.q0, dt);
        ProjectedStep<double> ps = project_step(rec, problem, *cfg);
        row.solvable = true;
        row.ratio = ps.effective_dt / dt;
        row.delta_g = problem.invariants[0].value(ps.q_hat) - g0;
      } catch (const ProjectionError&) {
      } catch (const StepFailure&) {
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  out << "dt,method,solvable,eff_ratio,dG\n";
  for (const auto& r : rows)
    out << fmt(r.dt) << "," << r.method << "," << fmt(r.solvable) << ","
        << fmt(r.ratio) << "," << fmt(r.delta_g) << "\n";
}

ConvergenceReport run_convergence(const OdeProblem<double>& problem,
                                  const std::vector<std::string>& tableaus,
                                  const std::vector<std::string>& methods,
                                  const std::vector<double>& dts, double t_final,
                                  const std::string& target, double dt_ref) {
  if (dts.size() < 4)
    throw std::invalid_argument("convergence ladder needs at least 4 points");

  ConvergenceReport report;
  report.problem = problem.name;
  report.t_final = t_final;

  // Reference state and its uncertainty: exact solution when available,
  // otherwise a fine DP(7,5) run with a Richardson error estimate.
  Eigen::VectorXd ref;
  double u;
  if (problem.exact) {
    ref = problem.exact(t_final);
    u = 1e-15 * std::max(1.0, ref.norm());
  } else {
    if (dt_ref <= 0) dt_ref = problem.name == "burgers" ? 1e-3 * (2.0 / problem.m) : 1e-3;
    auto fine = integrate(problem, find_tableau("dp75"), dt_ref, t_final);
    auto coarse = integrate(problem, find_tableau("dp75"), 2 * dt_ref, t_final);
    if (fine.failed || coarse.failed)
      throw std::runtime_error("convergence reference run failed");
    ref = fine.final_state();
    u = (ref - coarse.final_state()).norm() / 31.0 + 1e-15 * ref.norm();
  }
  report.floor = 1e2 * u;

  for (const auto& tname : tableaus) {
    const auto tab = find_tableau(tname);
    for (const auto& method : methods) {
      auto cfg = resolve_method(method, target, std::nullopt, "euler", tab);
      ConvergenceSeries series;
      series.tableau = tname;
      series.method = method;
      series.order = tab.p;
      for (double dt : dts) {
        SeriesPoint pt{dt, std::numeric_limits<double>::quiet_NaN(), false, false};
        Trajectory<double> traj = integrate(problem, tab, dt, t_final, cfg);
        if (traj.failed)
          pt.failed = true;
        else
          pt.error = (traj.final_state() - ref).norm();
        series.points.push_back(pt);
      }

      std::vector<double> fd, fe;
      std::vector<int> idx;
      for (int i = 0; i < int(series.points.size()); ++i) {
        const auto& pt = series.points[i];
        if (!pt.failed && std::isfinite(pt.error)) {
          fd.push_back(pt.dt);
          fe.push_back(pt.error);
          idx.push_back(i);
        }
      }
      FitWindow w = fit_loglog_slope(fd, fe, double(tab.p), report.floor);
      series.slope = w.slope;
      series.window_points = w.count;
      if (w.count >= 2) {
        series.window_dt_max = fd[w.begin];
        series.window_dt_min = fd[w.end - 1];
        for (int k = w.begin; k < w.end; ++k) series.points[idx[k]].used = true;
      }
      report.series.push_back(std::move(series));
    }
  }
  return report;
}

void write_convergence_csv(const ConvergenceReport& report, std::ostream& out) {
  out << "tableau,method,order,dt,error,failed,used_in_fit,slope\n";
  for (const auto& s : report.series)
    for (const auto& pt : s.points)
      out << s.tableau << "," << s.method << "," << fmt(s.order) << "," << fmt(pt.dt)
          << "," << fmt(pt.error) << "," << fmt(pt.failed) << "," << fmt(pt.used)
          << "," << fmt(s.slope) << "\n";
}

std::string convergence_json(const ConvergenceReport& report) {
  nlohmann::json j;
  j["problem"] = report.problem;
  j["t_final"] = report.t_final;
  j["error_floor"] = report.floor;
  j["series"] = nlohmann::json::array();
  for (const auto& s : report.series) {
    nlohmann::json js;
    js["tableau"] = s.tableau;
    js["method"] = s.method;
    js["order"] = s.order;
    js["slope"] = s.slope;
    js["window"] = {{"points", s.window_points},
                    {"dt_max", s.window_dt_max},
                    {"dt_min", s.window_dt_min}};
    js["points"] = nlohmann::json::array();
    for (const auto& pt : s.points) {
      nlohmann::json jp;
      jp["dt"] = pt.dt;
      if (std::isfinite(pt.error))
        jp["error"] = pt.error;
      else
        jp["error"] = nullptr;
      jp["failed"] = pt.failed;
      jp["used_in_fit"] = pt.used;
      js["points"].push_back(jp);
    }
    j["series"].push_back(js);
  }
  return j.dump(2) + "\n";
}

bool run_comparison(const OdeProblem<double>& problem,
                    const ButcherTableau<double>& tab,
                    const std::vector<std::string>& methods, double dt,
                    double t_final, const std::string& channel,
                    const std::string& target, const std::string& embedded,
                    std::ostream& out) {
  if (channel != "projection_length" && channel != "angle_deg")
    throw std::invalid_argument(
        "unknown channel: " + channel +
        " (valid: projection_length, angle_deg)");
  out << "t,method," << channel << "\n";
  bool all_ok = true;
  for (const auto& method : methods) {
    auto cfg = resolve_method(method, target, std::nullopt, embedded, tab);
    if (!cfg)
      throw std::invalid_argument("channel " + channel +
                                  " requires a projection method, not plain");
    Trajectory<double> traj = integrate(problem, tab, dt, t_final, cfg);
    for (const auto& pt : traj.points) {
      if (!pt.proj) continue;
      const double v = channel == "projection_length" ? pt.proj->projection_length
                                                      : pt.proj->angle_deg[0];
      out << fmt(pt.t_nominal) << "," << method << "," << fmt(v) << "\n";
    }
    if (traj.failed) {
      all_ok = false;
      out << "# method " << method << " failed at t=" << fmt(traj.failure_time)
          << ": " << traj.failure_reason << "\n";
    }
  }
  return all_ok;
}

}  // namespace rkproj::bench
