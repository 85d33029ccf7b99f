#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "rkproj/ode.hpp"
#include "rkproj/projection.hpp"
#include "rkproj/tableau.hpp"

namespace rkproj {

template <class Scalar>
struct TrajectoryPoint {
  int step = 0;  // 0 is the initial state
  Scalar t_nominal{};
  Scalar t_effective{};
  Scalar h{};  // input step size that produced this point, 0 for the initial one
  Vec<Scalar> q;
  std::vector<Scalar> invariant_values;
  std::optional<ProjectedStep<Scalar>> proj;  // empty for plain runs / initial point
};

template <class Scalar>
struct Trajectory {
  std::vector<TrajectoryPoint<Scalar>> points;
  bool failed = false;
  int failure_step = -1;
  Scalar failure_time{};
  std::string failure_reason;

  const Vec<Scalar>& final_state() const { return points.back().q; }
};

namespace detail {

template <class Scalar>
std::vector<Scalar> invariant_values(const OdeProblem<Scalar>& problem,
                                     const Vec<Scalar>& q) {
  std::vector<Scalar> vals;
  vals.reserve(problem.invariants.size());
  for (const auto& inv : problem.invariants) vals.push_back(inv.value(q));
  return vals;
}

}  // namespace detail

/// Number of fixed steps covering [0, t_final]: the last step shrinks to land
/// on t_final exactly, and near-multiples snap to the exact count so no
/// degenerate micro-step is appended.
template <class Scalar>
int step_count(Scalar t_final, Scalar dt) {
  return std::max(1, int(std::ceil(double(t_final / dt) - 1e-9)));
}

/// Drive rk_step (plus an optional projection) from 0 to t_final. Step and
/// solver failures are captured on the trajectory rather than thrown, so
/// solvability experiments can treat them as data.
template <class Scalar>
Trajectory<Scalar> integrate(const OdeProblem<Scalar>& problem,
                             const ButcherTableau<Scalar>& tab, Scalar dt,
                             Scalar t_final,
                             const std::optional<ProjectionConfig<Scalar>>& projection =
                                 std::nullopt) {
  if (!(dt > Scalar(0)) || !(t_final >= Scalar(0)))
    throw std::invalid_argument("integrate: need dt > 0 and t_final >= 0");

  Trajectory<Scalar> traj;
  Vec<Scalar> q = problem.q0;
  traj.points.push_back({0, Scalar(0), Scalar(0), Scalar(0), q,
                         detail::invariant_values(problem, q), std::nullopt});
  if (t_final == Scalar(0)) return traj;

  const bool relaxation =
      projection && projection->method == ProjectionMethod::Relaxation;

  auto capture = [&](int step, Scalar t, const std::exception& e) {
    traj.failed = true;
    traj.failure_step = step;
    traj.failure_time = t;
    traj.failure_reason = e.what();
  };

  if (!relaxation) {
    const int n = step_count(t_final, dt);
    for (int i = 0; i < n; ++i) {
      const Scalar t = Scalar(i) * dt;
      const Scalar h = (i == n - 1) ? t_final - Scalar(n - 1) * dt : dt;
      try {
        StepRecord<Scalar> rec = rk_step(problem, tab, t, q, h);
        TrajectoryPoint<Scalar> pt;
        pt.step = i + 1;
        pt.h = h;
        pt.t_nominal = (i == n - 1) ? t_final : Scalar(i + 1) * dt;
        pt.t_effective = pt.t_nominal;
        if (projection) {
          pt.proj = project_step(rec, problem, *projection);
          q = pt.proj->q_hat;
        } else {
          q = rec.q_next;
        }
        pt.q = q;
        pt.invariant_values = detail::invariant_values(problem, q);
        traj.points.push_back(std::move(pt));
      } catch (const StepFailure& e) {
        capture(i, t, e);
        break;
      } catch (const ProjectionError& e) {
        capture(i, t, e);
        break;
      }
    }
    return traj;
  }

  // Relaxation advances the effective time by gamma*h per step, so the run is
  // gap-driven: keep stepping with h = min(dt, remaining gap) until the
  // effective time lands on t_final. Gaps below sqrt(eps)*dt are snapped
  // instead of stepped: on such a step the scalar solve for gamma is pure
  // rounding noise.
  const Scalar gap_tol =
      std::max(Scalar(1e-10) * dt,
               std::sqrt(std::numeric_limits<Scalar>::epsilon()) * dt);
  const int cap = 1000 + 100 * step_count(t_final, dt);
  Scalar t_nom = Scalar(0), t_eff = Scalar(0);
  for (int i = 0; i < cap; ++i) {
    Scalar gap = t_final - t_eff;
    if (gap <= gap_tol) break;
    const Scalar h = std::min(dt, gap);
    try {
      StepRecord<Scalar> rec = rk_step(problem, tab, t_eff, q, h);
      TrajectoryPoint<Scalar> pt;
      pt.step = i + 1;
      pt.h = h;
      pt.proj = project_step(rec, problem, *projection);
      q = pt.proj->q_hat;
      t_nom += h;
      t_eff += pt.proj->effective_dt;
      if (t_final - t_eff <= gap_tol) t_eff = t_final;
      pt.t_nominal = t_nom;
      pt.t_effective = t_eff;
      pt.q = q;
      pt.invariant_values = detail::invariant_values(problem, q);
      traj.points.push_back(std::move(pt));
    } catch (const StepFailure& e) {
      capture(i, t_eff, e);
      break;
    } catch (const ProjectionError& e) {
      // A catch-up step only polishes the effective time. If the gamma solve
      // degenerates there the state is conservative to rounding already, so
      // land on t_final instead of failing the run.
      if (h <= Scalar(1e-6) * dt) {
        t_eff = t_final;
        if (!traj.points.empty()) traj.points.back().t_effective = t_eff;
        break;
      }
      capture(i, t_eff, e);
      break;
    }
    if (i == cap - 1 && t_final - t_eff > gap_tol) {
      traj.failed = true;
      traj.failure_step = i;
      traj.failure_time = t_eff;
      traj.failure_reason = "relaxation run exceeded the iteration cap";
    }
  }
  return traj;
}

}  // namespace rkproj
