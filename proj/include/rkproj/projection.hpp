#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include "rkproj/ode.hpp"
#include "rkproj/subspace.hpp"

namespace rkproj {

struct ProjectionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ProjectionMethod { Orthogonal, Relaxation, Directional, QuasiOrthogonal };

enum class TargetKind { Conservative, DissipativeEstimate };

struct SolverConfig {
  double newton_tol = 1e-13;
  int max_iter = 50;
  double fallback_bracket_halfwidth_scale = 2.0;
  int polish_iters = 2;  // extra Newton sweeps after meeting the tolerance
};

template <class Scalar>
struct ProjectionConfig {
  ProjectionMethod method = ProjectionMethod::QuasiOrthogonal;
  TargetKind target = TargetKind::Conservative;
  bool dissipative_weighted = true;
  std::optional<Vec<Scalar>> embedded_weights;      // Directional, single invariant
  std::vector<Vec<Scalar>> embedded_weight_sets;    // Directional, one per invariant
  SolverConfig solver;
  Scalar degenerate_tol = Scalar(1e-12);
  Scalar drop_tol = Scalar(1e-10);
};

template <class Scalar>
struct ProjectedStep {
  Vec<Scalar> q_hat;
  Vec<Scalar> lambdas;      // per invariant; gamma for relaxation
  Scalar effective_dt{};
  Scalar projection_length{};
  std::vector<Scalar> angle_deg;  // per invariant, NaN when skipped
  int rank = -1;                  // stage-subspace rank, -1 when no basis was built
  bool skipped = false;
  int newton_iters = 0;
};

struct DegenerateDirection : ProjectionError {
  using ProjectionError::ProjectionError;
};

struct Unsolvable : ProjectionError {
  double discriminant;
  explicit Unsolvable(const std::string& what,
                      double disc = std::numeric_limits<double>::quiet_NaN())
      : ProjectionError(what), discriminant(disc) {}
};

// ---------------------------------------------------------------------------
// Search directions

template <class Scalar>
Vec<Scalar> direction_orthogonal(const StepRecord<Scalar>& rec,
                                 const Invariant<Scalar>& inv) {
  Vec<Scalar> g = inv.gradient(rec.q_next);
  Scalar n = g.norm();
  if (!(n > Scalar(0)))
    throw DegenerateDirection("orthogonal direction: zero gradient at q_next (" +
                              inv.label + ")");
  return g / n;
}

template <class Scalar>
Vec<Scalar> direction_relaxation(const StepRecord<Scalar>& rec) {
  Vec<Scalar> d = rec.q_next - rec.q_n;
  if (!(d.norm() > Scalar(0)))
    throw DegenerateDirection("relaxation direction: stationary step");
  return d;
}

template <class Scalar>
Vec<Scalar> direction_directional(const StepRecord<Scalar>& rec,
                                  const Vec<Scalar>& b_embedded) {
  if (b_embedded.size() != int(rec.stage_derivs.size()))
    throw std::invalid_argument("embedded weights: wrong length");
  Vec<Scalar> d = Vec<Scalar>::Zero(rec.q_n.size());
  for (int j = 0; j < b_embedded.size(); ++j) {
    Scalar w = rec.b(j) - b_embedded(j);
    if (w != Scalar(0)) d += w * rec.stage_derivs[j];
  }
  Scalar n = d.norm();
  if (!(n > Scalar(0)))
    throw DegenerateDirection("directional direction: embedded weights equal b");
  return d / n;
}

template <class Scalar>
struct QuasiOrthogonalDirection {
  Vec<Scalar> phi;   // unit vector, empty when skipped
  int rank = 0;
  bool skip = false;
};

template <class Scalar>
QuasiOrthogonalDirection<Scalar> direction_quasi_orthogonal(
    const StepRecord<Scalar>& rec, const Invariant<Scalar>& inv, Scalar drop_tol,
    Scalar degenerate_tol) {
  QuasiOrthogonalDirection<Scalar> out;
  StageBasis<Scalar> basis = orthonormalize(rec.stage_derivs, drop_tol);
  out.rank = basis.rank;
  Vec<Scalar> g = inv.gradient(rec.q_next);
  if (basis.rank == 0) {
    out.skip = true;
    return out;
  }
  GradientSplit<Scalar> split = decompose(g, basis);
  if (split.g_s_norm <= degenerate_tol * g.norm()) {
    out.skip = true;
    return out;
  }
  out.phi = split.g_s / split.g_s_norm;
  return out;
}

// ---------------------------------------------------------------------------
// Targets

template <class Scalar>
Scalar conservative_target(const Invariant<Scalar>& inv, const Vec<Scalar>& q_n) {
  return inv.value(q_n);
}

/// First-order estimate of G at the end of a dissipative step. The weighted
/// form is the quadrature-consistent one; the unweighted form drops the b_i.
template <class Scalar>
Scalar dissipative_target(const StepRecord<Scalar>& rec, const Invariant<Scalar>& inv,
                          bool weighted) {
  Scalar acc = Scalar(0);
  for (size_t i = 0; i < rec.stage_derivs.size(); ++i) {
    Scalar term = inv.gradient(rec.stage_states[i]).dot(rec.stage_derivs[i]);
    acc += weighted ? rec.b(int(i)) * term : term;
  }
  return inv.value(rec.q_n) + rec.dt * acc;
}

/// Slope of the target in the relaxation parameter: the dissipative estimate
/// evaluated at the effective step gamma*dt rather than the nominal dt.
template <class Scalar>
Scalar dissipative_slope(const StepRecord<Scalar>& rec, const Invariant<Scalar>& inv,
                         bool weighted) {
  return dissipative_target(rec, inv, weighted) - inv.value(rec.q_n);
}

// ---------------------------------------------------------------------------
// Scalar solves

namespace detail {

/// Roots of a*x^2 + b*x + c = 0 via the numerically stable split. Throws
/// Unsolvable on negative discriminant.
template <class Scalar>
std::pair<Scalar, Scalar> quadratic_roots(Scalar a, Scalar b, Scalar c,
                                          const char* context) {
  if (a == Scalar(0)) {
    if (b == Scalar(0)) {
      if (c == Scalar(0)) return {Scalar(0), Scalar(0)};
      throw Unsolvable(std::string(context) + ": degenerate constant equation");
    }
    Scalar r = -c / b;
    return {r, r};
  }
  Scalar disc = b * b - Scalar(4) * a * c;
  if (disc < Scalar(0)) {
    std::ostringstream os;
    os << context << ": negative discriminant " << double(disc);
    throw Unsolvable(os.str(), double(disc));
  }
  Scalar sd = std::sqrt(disc);
  Scalar qq = -(b + std::copysign(sd, b)) / Scalar(2);
  if (qq == Scalar(0)) return {Scalar(0), Scalar(0)};
  return {qq / a, c / qq};
}

}  // namespace detail

template <class Scalar>
struct ScalarSolve {
  Scalar lambda{};
  int iters = 0;
};

/// Solve G(q_next + lambda*phi) = target. QuadraticForm invariants get the
/// closed-form root of smallest magnitude; General invariants use Newton from
/// zero with a bisection fallback on +-bracket_halfwidth.
template <class Scalar>
ScalarSolve<Scalar> solve_scalar(const Invariant<Scalar>& inv,
                                 const Vec<Scalar>& q_next, const Vec<Scalar>& phi,
                                 Scalar target, const SolverConfig& solver,
                                 Scalar bracket_halfwidth) {
  const Scalar tol = Scalar(solver.newton_tol) * std::max(Scalar(1), std::abs(target));

  if (inv.kind == InvariantKind::QuadraticForm) {
    Vec<Scalar> Sphi = inv.S * phi;
    Scalar a = phi.dot(Sphi);
    Scalar b = Scalar(2) * q_next.dot(Sphi);
    Scalar c = q_next.dot(inv.S * q_next) - target;
    auto [r1, r2] = detail::quadratic_roots(a, b, c, "scalar projection solve");
    return {std::abs(r1) <= std::abs(r2) ? r1 : r2, 0};
  }

  auto f = [&](Scalar lam) { return inv.value(q_next + lam * phi) - target; };
  auto fp = [&](Scalar lam) { return inv.gradient(q_next + lam * phi).dot(phi); };

  Scalar lam = Scalar(0);
  Scalar best_lam = lam;
  Scalar best_res = std::abs(f(lam));
  int iters = 0;
  int polish_left = -1;
  std::vector<double> history;
  bool newton_ok = false;
  for (; iters < solver.max_iter; ++iters) {
    Scalar r = f(lam);
    history.push_back(double(std::abs(r)));
    if (std::abs(r) < best_res) {
      best_res = std::abs(r);
      best_lam = lam;
    }
    if (std::abs(r) <= tol && polish_left < 0) polish_left = solver.polish_iters;
    if (polish_left == 0) {
      newton_ok = true;
      break;
    }
    if (polish_left > 0) --polish_left;
    Scalar d = fp(lam);
    if (!(std::abs(d) > Scalar(0)) || !std::isfinite(double(d))) break;
    Scalar next = lam - r / d;
    if (!std::isfinite(double(next))) break;
    lam = next;
  }
  if (polish_left >= 0) newton_ok = true;  // tolerance met, loop exhausted polishing
  if (newton_ok || best_res <= tol) return {best_lam, iters};

  // Bisection fallback on a bracket proportional to the step displacement.
  Scalar lo = -bracket_halfwidth, hi = bracket_halfwidth;
  Scalar flo = f(lo), fhi = f(hi);
  if (std::abs(flo) <= tol) return {lo, iters};
  if (std::abs(fhi) <= tol) return {hi, iters};
  if (flo * fhi > Scalar(0)) {
    std::ostringstream os;
    os << "scalar projection solve: Newton stalled and bracket [" << double(lo) << ", "
       << double(hi) << "] has no sign change; residuals:";
    for (double h : history) os << " " << h;
    throw Unsolvable(os.str());
  }
  for (int k = 0; k < 200; ++k) {
    Scalar mid = (lo + hi) / Scalar(2);
    Scalar fm = f(mid);
    ++iters;
    if (std::abs(fm) < best_res) {
      best_res = std::abs(fm);
      best_lam = mid;
    }
    if (std::abs(fm) <= tol) return {mid, iters};
    if (flo * fm <= Scalar(0)) {
      hi = mid;
      fhi = fm;
    } else {
      lo = mid;
      flo = fm;
    }
  }
  if (best_res <= tol) return {best_lam, iters};
  std::ostringstream os;
  os << "scalar projection solve: bisection fallback did not converge, best residual "
     << double(best_res);
  throw Unsolvable(os.str());
}

template <class Scalar>
struct RelaxationSolve {
  Scalar gamma{};
  int iters = 0;
};

/// Solve G(q_n + gamma*(q_next - q_n)) = target0 + gamma*target_slope.
/// The slope term carries the gamma-scaled dissipative estimate; it is zero
/// for conservative targets. Root closest to 1 (tie toward the larger root);
/// gamma <= 0 counts as unsolvable since the step would not advance.
template <class Scalar>
RelaxationSolve<Scalar> solve_relaxation(const StepRecord<Scalar>& rec,
                                         const Invariant<Scalar>& inv, Scalar target0,
                                         Scalar target_slope,
                                         const SolverConfig& solver) {
  Vec<Scalar> d = direction_relaxation(rec);
  const Scalar tol =
      Scalar(solver.newton_tol) * std::max(Scalar(1), std::abs(target0));

  auto pick_gamma = [&](Scalar r1, Scalar r2) {
    Scalar d1 = std::abs(r1 - Scalar(1)), d2 = std::abs(r2 - Scalar(1));
    Scalar g;
    if (d1 < d2)
      g = r1;
    else if (d2 < d1)
      g = r2;
    else
      g = std::max(r1, r2);
    if (!(g > Scalar(0)))
      throw Unsolvable("relaxation solve: parameter vanished (gamma = " +
                       std::to_string(double(g)) + ")");
    return g;
  };

  if (inv.kind == InvariantKind::QuadraticForm) {
    Vec<Scalar> Sd = inv.S * d;
    Scalar a = d.dot(Sd);
    Scalar b = Scalar(2) * rec.q_n.dot(Sd) - target_slope;
    Scalar c = inv.value(rec.q_n) - target0;
    auto [r1, r2] = detail::quadratic_roots(a, b, c, "relaxation solve");
    return {pick_gamma(r1, r2), 0};
  }

  auto f = [&](Scalar g) {
    return inv.value(rec.q_n + g * d) - target0 - g * target_slope;
  };
  auto fp = [&](Scalar g) {
    return inv.gradient(rec.q_n + g * d).dot(d) - target_slope;
  };
  Scalar g = Scalar(1);
  Scalar best_g = g;
  Scalar best_res = std::abs(f(g));
  int iters = 0;
  int polish_left = -1;
  for (; iters < solver.max_iter; ++iters) {
    Scalar r = f(g);
    if (std::abs(r) < best_res) {
      best_res = std::abs(r);
      best_g = g;
    }
    if (std::abs(r) <= tol && polish_left < 0) polish_left = solver.polish_iters;
    if (polish_left == 0) break;
    if (polish_left > 0) --polish_left;
    Scalar dr = fp(g);
    if (!(std::abs(dr) > Scalar(0)) || !std::isfinite(double(dr))) break;
    Scalar next = g - r / dr;
    if (!std::isfinite(double(next))) break;
    g = next;
  }
  if (best_res > tol)
    throw Unsolvable("relaxation solve: Newton residual " +
                     std::to_string(double(best_res)) + " above tolerance");
  if (!(best_g > Scalar(0)))
    throw Unsolvable("relaxation solve: parameter vanished (gamma = " +
                     std::to_string(double(best_g)) + ")");
  return {best_g, iters};
}

// ---------------------------------------------------------------------------
// Multi-invariant machinery

template <class Scalar>
struct MsMatrix {
  Mat<Scalar> m;
  Scalar cond{};
};

template <class Scalar>
MsMatrix<Scalar> ms_matrix(const StepRecord<Scalar>&,
                           const std::vector<Vec<Scalar>>& directions,
                           const std::vector<Vec<Scalar>>& gradients) {
  const int l = int(directions.size());
  MsMatrix<Scalar> out;
  out.m = Mat<Scalar>(l, l);
  for (int j = 0; j < l; ++j)
    for (int k = 0; k < l; ++k) out.m(j, k) = gradients[j].dot(directions[k]);
  Eigen::JacobiSVD<Mat<Scalar>> svd(out.m);
  Scalar smin = svd.singularValues()(l - 1);
  out.cond = smin > Scalar(0) ? svd.singularValues()(0) / smin
                              : std::numeric_limits<Scalar>::infinity();
  return out;
}

namespace detail {

template <class Scalar>
std::string format_matrix(const Mat<Scalar>& m) {
  std::ostringstream os;
  os << "[";
  for (int i = 0; i < m.rows(); ++i) {
    if (i) os << "; ";
    for (int j = 0; j < m.cols(); ++j) {
      if (j) os << ", ";
      os << double(m(i, j));
    }
  }
  os << "]";
  return os.str();
}

template <class Scalar>
Scalar angle_degrees(const Vec<Scalar>& g, const Vec<Scalar>& phi) {
  Scalar den = g.norm() * phi.norm();
  if (!(den > Scalar(0))) return std::numeric_limits<Scalar>::quiet_NaN();
  Scalar c = g.dot(phi) / den;
  c = std::clamp(c, Scalar(-1), Scalar(1));
  return std::acos(c) * Scalar(180) / Scalar(M_PI);
}

}  // namespace detail

/// Simultaneous projection onto several invariant manifolds. Directions come
/// from a single shared stage basis (quasi-orthogonal) or from per-invariant
/// embedded weight sets (directional); the coupling is handled by an
/// l-dimensional Newton iteration on the lambda vector.
template <class Scalar>
ProjectedStep<Scalar> project_multi(const StepRecord<Scalar>& rec,
                                    const std::vector<Invariant<Scalar>>& invariants,
                                    const ProjectionConfig<Scalar>& config) {
  const int l = int(invariants.size());
  const int m = int(rec.q_n.size());

  std::vector<Vec<Scalar>> gradients(l), directions(l);
  for (int j = 0; j < l; ++j) gradients[j] = invariants[j].gradient(rec.q_next);

  int rank = -1;
  if (config.method == ProjectionMethod::QuasiOrthogonal) {
    StageBasis<Scalar> basis = orthonormalize(rec.stage_derivs, config.drop_tol);
    rank = basis.rank;
    for (int j = 0; j < l; ++j) {
      GradientSplit<Scalar> split = decompose(gradients[j], basis);
      if (split.g_s_norm <= config.degenerate_tol * gradients[j].norm())
        throw DegenerateDirection(
            "multi-invariant projection: subspace gradient degenerate for invariant " +
            invariants[j].label);
      directions[j] = split.g_s / split.g_s_norm;
    }
  } else if (config.method == ProjectionMethod::Directional) {
    if (int(config.embedded_weight_sets.size()) != l)
      throw std::invalid_argument(
          "multi-invariant directional projection needs one embedded weight set per "
          "invariant");
    for (int j = 0; j < l; ++j) {
      directions[j] = direction_directional(rec, config.embedded_weight_sets[j]);
      if (gradients[j].dot(directions[j]) < Scalar(0)) directions[j] = -directions[j];
    }
  } else {
    throw std::invalid_argument(
        "multi-invariant projection supports quasi-orthogonal and directional "
        "methods only");
  }
  if (config.target != TargetKind::Conservative)
    throw std::invalid_argument(
        "multi-invariant projection supports conservative targets only");

  Vec<Scalar> targets(l), scales(l);
  for (int j = 0; j < l; ++j) {
    targets(j) = invariants[j].value(rec.q_n);
    scales(j) = std::max(Scalar(1), std::abs(targets(j)));
  }

  auto residual = [&](const Vec<Scalar>& lam, Vec<Scalar>& r, Vec<Scalar>& q_hat) {
    q_hat = rec.q_next;
    for (int k = 0; k < l; ++k) q_hat += lam(k) * directions[k];
    for (int j = 0; j < l; ++j) r(j) = invariants[j].value(q_hat) - targets(j);
  };

  const Scalar tol = Scalar(config.solver.newton_tol);
  Vec<Scalar> lam = Vec<Scalar>::Zero(l);
  Vec<Scalar> r(l), q_hat(m);
  Vec<Scalar> best_lam = lam;
  Scalar best_res = std::numeric_limits<Scalar>::infinity();
  int iters = 0;
  int polish_left = -1;
  for (; iters <= config.solver.max_iter; ++iters) {
    residual(lam, r, q_hat);
    Scalar scaled = (r.cwiseQuotient(scales)).template lpNorm<Eigen::Infinity>();
    if (scaled < best_res) {
      best_res = scaled;
      best_lam = lam;
    }
    if (scaled <= tol && polish_left < 0) polish_left = config.solver.polish_iters;
    if (polish_left == 0) break;
    if (polish_left > 0) --polish_left;
    if (iters == config.solver.max_iter) break;
    Mat<Scalar> J(l, l);
    for (int j = 0; j < l; ++j) {
      Vec<Scalar> gj = invariants[j].gradient(q_hat);
      for (int k = 0; k < l; ++k) J(j, k) = gj.dot(directions[k]);
    }
    Eigen::JacobiSVD<Mat<Scalar>> svd(J, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Scalar smin = svd.singularValues()(l - 1);
    if (!(smin > Scalar(0)) || svd.singularValues()(0) / smin > Scalar(1e12)) break;
    lam -= svd.solve(r);
  }

  if (best_res > tol) {
    MsMatrix<Scalar> ms = ms_matrix(rec, directions, gradients);
    std::ostringstream os;
    os << "multi-invariant projection: Newton failed (best scaled residual "
       << double(best_res) << "), M_s = " << detail::format_matrix(ms.m)
       << ", cond = " << double(ms.cond);
    throw Unsolvable(os.str());
  }

  residual(best_lam, r, q_hat);
  ProjectedStep<Scalar> out;
  out.q_hat = q_hat;
  out.lambdas = best_lam;
  out.effective_dt = rec.dt;
  out.projection_length = (q_hat - rec.q_next).norm();
  out.rank = rank;
  out.newton_iters = iters;
  out.angle_deg.resize(l);
  for (int j = 0; j < l; ++j)
    out.angle_deg[j] = detail::angle_degrees(gradients[j], directions[j]);
  return out;
}

/// One projected step: build the search direction, pick the target, solve for
/// the projection parameter, and assemble diagnostics.
template <class Scalar>
ProjectedStep<Scalar> project_step(const StepRecord<Scalar>& rec,
                                   const OdeProblem<Scalar>& problem,
                                   const ProjectionConfig<Scalar>& config) {
  const int l = int(problem.invariants.size());
  if (l == 0) throw std::invalid_argument("project_step: problem has no invariants");
  if (l > 1) {
    if (config.method == ProjectionMethod::Relaxation ||
        config.method == ProjectionMethod::Orthogonal)
      throw std::invalid_argument(
          "relaxation/orthogonal projection does not support multiple invariants");
    return project_multi(rec, problem.invariants, config);
  }

  const Invariant<Scalar>& inv = problem.invariants[0];
  const bool dissip = config.target == TargetKind::DissipativeEstimate;
  const Scalar target0 = conservative_target(inv, rec.q_n);
  const Scalar slope =
      dissip ? dissipative_slope(rec, inv, config.dissipative_weighted) : Scalar(0);

  ProjectedStep<Scalar> out;
  out.lambdas = Vec<Scalar>::Zero(1);
  out.angle_deg.assign(1, std::numeric_limits<Scalar>::quiet_NaN());
  Vec<Scalar> grad_next = inv.gradient(rec.q_next);

  if (config.method == ProjectionMethod::Relaxation) {
    auto sol = solve_relaxation(rec, inv, target0, slope, config.solver);
    Vec<Scalar> d = rec.q_next - rec.q_n;
    out.q_hat = rec.q_n + sol.gamma * d;
    out.lambdas(0) = sol.gamma;
    out.effective_dt = sol.gamma * rec.dt;
    out.newton_iters = sol.iters;
    out.projection_length = (out.q_hat - rec.q_next).norm();
    out.angle_deg[0] = detail::angle_degrees(grad_next, d);
    return out;
  }

  Vec<Scalar> phi;
  switch (config.method) {
    case ProjectionMethod::Orthogonal:
      phi = direction_orthogonal(rec, inv);
      break;
    case ProjectionMethod::Directional: {
      if (!config.embedded_weights)
        throw std::invalid_argument("directional projection needs embedded weights");
      phi = direction_directional(rec, *config.embedded_weights);
      if (grad_next.dot(phi) < Scalar(0)) phi = -phi;
      break;
    }
    case ProjectionMethod::QuasiOrthogonal: {
      auto qo = direction_quasi_orthogonal(rec, inv, config.drop_tol,
                                           config.degenerate_tol);
      out.rank = qo.rank;
      if (qo.skip) {
        out.q_hat = rec.q_next;
        out.effective_dt = rec.dt;
        out.skipped = true;
        return out;
      }
      phi = qo.phi;
      break;
    }
    default:
      throw std::invalid_argument("project_step: unknown method");
  }

  const Scalar bracket = Scalar(config.solver.fallback_bracket_halfwidth_scale) *
                         (rec.q_next - rec.q_n).norm();
  auto sol = solve_scalar(inv, rec.q_next, phi, target0 + slope, config.solver,
                          bracket);
  out.q_hat = rec.q_next + sol.lambda * phi;
  out.lambdas(0) = sol.lambda;
  out.effective_dt = rec.dt;
  out.newton_iters = sol.iters;
  out.projection_length = std::abs(sol.lambda);
  out.angle_deg[0] = detail::angle_degrees(grad_next, phi);
  return out;
}

}  // namespace rkproj
