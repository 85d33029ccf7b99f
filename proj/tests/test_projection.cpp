#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cfloat>
#include <cmath>

#include "problems.hpp"
#include "rkproj/fit.hpp"
#include "rkproj/integrate.hpp"
#include "rkproj/projection.hpp"

using namespace rkproj;

namespace {

StepRecord<double> raw_record(const Vec<double>& q_n,
                              const std::vector<Vec<double>>& derivs,
                              const Vec<double>& b, double dt) {
  StepRecord<double> rec;
  rec.t = 0.0;
  rec.dt = dt;
  rec.q_n = q_n;
  rec.stage_derivs = derivs;
  rec.stage_states.assign(derivs.size(), q_n);
  rec.b = b;
  rec.q_next = q_n;
  for (size_t j = 0; j < derivs.size(); ++j) rec.q_next += dt * b(int(j)) * derivs[j];
  return rec;
}

Invariant<double> unit_sphere() {
  return Invariant<double>::quadratic("energy", Eigen::MatrixXd::Identity(2, 2));
}

}  // namespace

TEST_CASE("orthogonal direction normalizes the endpoint gradient") {
  auto inv = unit_sphere();
  StepRecord<double> rec;
  rec.q_n = Eigen::Vector2d(1, 0);
  rec.q_next = Eigen::Vector2d(3, 4);
  auto phi = direction_orthogonal(rec, inv);
  CHECK((phi - Eigen::Vector2d(0.6, 0.8)).norm() < 1e-15);

  auto rigid = make_rigid_body();
  StepRecord<double> rec3;
  rec3.q_next = Eigen::Vector3d(0, 1, 1);
  auto phi2 = direction_orthogonal(rec3, rigid.invariants[1]);
  Eigen::Vector3d g(0, 2 * rigid.invariants[1].S(1, 1), 2 * rigid.invariants[1].S(2, 2));
  CHECK((phi2 - g.normalized()).norm() < 1e-15);

  rec.q_next = Eigen::Vector2d(0, 0);
  CHECK_THROWS_AS(direction_orthogonal(rec, inv), DegenerateDirection);
}

TEST_CASE("relaxation direction is the raw displacement") {
  StepRecord<double> rec;
  rec.q_n = Eigen::Vector2d(1, 2);
  rec.q_next = Eigen::Vector2d(4, 6);
  auto d = direction_relaxation(rec);
  CHECK((d - Eigen::Vector2d(3, 4)).norm() == 0.0);  // deliberately unnormalized

  rec.q_next = rec.q_n;
  CHECK_THROWS_AS(direction_relaxation(rec), DegenerateDirection);
}

TEST_CASE("directional direction combines stages with b - b_embedded") {
  auto rec = raw_record(Eigen::Vector2d(0, 0),
                        {Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)},
                        Eigen::Vector2d(0.5, 0.5), 0.1);
  Vec<double> bt = Eigen::Vector2d(1.0, 0.0);
  auto phi = direction_directional(rec, bt);
  const double r2 = 1.0 / std::sqrt(2.0);
  CHECK((phi - Eigen::Vector2d(-r2, r2)).norm() < 1e-15);  // no sign flip here

  CHECK_THROWS_AS(direction_directional(rec, rec.b), DegenerateDirection);
  Vec<double> wrong = Eigen::Vector3d(1, 0, 0);
  CHECK_THROWS_AS(direction_directional(rec, wrong), std::invalid_argument);
}

TEST_CASE("quasi-orthogonal direction") {
  SUBCASE("full-rank stage space reduces to the orthogonal direction") {
    auto prob = make_nonlinear_oscillator();
    auto rec = rk_step(prob, find_tableau("rk44"), 0.0, prob.q0, 0.3);
    auto qo = direction_quasi_orthogonal(rec, prob.invariants[0], 1e-10, 1e-12);
    CHECK(!qo.skip);
    CHECK(qo.rank == 2);
    auto phi = direction_orthogonal(rec, prob.invariants[0]);
    CHECK((qo.phi - phi).norm() < 1e-12);
  }

  SUBCASE("single stage direction") {
    auto rec = raw_record(Eigen::Vector3d(1, 2, 2), {Eigen::Vector3d(2, 0, 0)},
                          Vec<double>::Ones(1), 0.0);
    auto inv = Invariant<double>::quadratic("g", Eigen::MatrixXd::Identity(3, 3));
    auto qo = direction_quasi_orthogonal(rec, inv, 1e-10, 1e-12);
    CHECK(qo.rank == 1);
    CHECK((qo.phi - Eigen::Vector3d(1, 0, 0)).norm() < 1e-15);
  }

  SUBCASE("zero stage derivatives skip") {
    auto rec = raw_record(Eigen::Vector2d(1, 0), {Eigen::Vector2d(0, 0)},
                          Vec<double>::Ones(1), 0.1);
    auto qo = direction_quasi_orthogonal(rec, unit_sphere(), 1e-10, 1e-12);
    CHECK(qo.skip);
    CHECK(qo.rank == 0);
  }

  SUBCASE("gradient normal to the stage space skips") {
    auto rec = raw_record(Eigen::Vector3d(0, 0, 1), {Eigen::Vector3d(1, 0, 0)},
                          Vec<double>::Ones(1), 0.1);
    Eigen::MatrixXd s = Eigen::Vector3d(0, 0, 1).asDiagonal();
    auto inv = Invariant<double>::quadratic("gz", s);
    auto qo = direction_quasi_orthogonal(rec, inv, 1e-10, 1e-12);
    CHECK(qo.skip);
    CHECK(qo.rank == 1);
  }
}

TEST_CASE("targets") {
  auto rigid = make_rigid_body();
  const double s = std::sqrt(1.51);
  const double expect = (1.0 + 1.0 / s) + (1.0 - 0.51 / s);
  CHECK(conservative_target(rigid.invariants[1], rigid.q0) ==
        doctest::Approx(expect).epsilon(1e-15));

  SUBCASE("conservative rhs makes the dissipative estimate collapse") {
    auto prob = make_nonlinear_oscillator();
    auto rec = rk_step(prob, find_tableau("rk44"), 0.0, prob.q0, 0.4);
    const double g0 = prob.invariants[0].value(prob.q0);
    // grad.dot(rhs) is zero only up to rounding, so the estimates match g0
    // to machine precision rather than bitwise.
    CHECK(dissipative_target(rec, prob.invariants[0], true) ==
          doctest::Approx(g0).epsilon(1e-15));
    CHECK(dissipative_target(rec, prob.invariants[0], false) ==
          doctest::Approx(g0).epsilon(1e-15));
    CHECK(std::abs(dissipative_slope(rec, prob.invariants[0], true)) < 1e-14);
  }

  SUBCASE("dissipative estimate drops below the start value") {
    auto prob = make_linear_dissipative();
    auto rec = rk_step(prob, find_tableau("rk44"), 0.0, prob.q0, 0.5);
    const auto& inv = prob.invariants[0];
    const double g0 = inv.value(prob.q0);
    const double weighted = dissipative_target(rec, inv, true);
    const double unweighted = dissipative_target(rec, inv, false);
    CHECK(weighted < g0);
    CHECK(unweighted < g0);
    CHECK(weighted != unweighted);
    CHECK(dissipative_slope(rec, inv, true) == doctest::Approx(weighted - g0));

    // independent recompute from the record
    double acc = 0;
    for (size_t i = 0; i < rec.stage_derivs.size(); ++i)
      acc += rec.b(int(i)) *
             (2.0 * rec.stage_states[i]).dot(rec.stage_derivs[i]);
    CHECK(weighted == doctest::Approx(g0 + 0.5 * acc).epsilon(1e-14));
  }
}

TEST_CASE("closed-form scalar solve") {
  auto inv = unit_sphere();
  SolverConfig solver;

  auto sol = solve_scalar<double>(inv, Eigen::Vector2d(1.1, 0.0),
                                  Eigen::Vector2d(1.0, 0.0), 1.0, solver, 1.0);
  CHECK(sol.lambda == doctest::Approx(-0.1).epsilon(1e-14));
  CHECK(sol.iters == 0);

  sol = solve_scalar<double>(inv, Eigen::Vector2d(1.1, 0.0),
                             Eigen::Vector2d(1.0, 0.0), 1.1 * 1.1, solver, 1.0);
  CHECK(sol.lambda == 0.0);

  try {
    solve_scalar<double>(inv, Eigen::Vector2d(0.0, 1.1), Eigen::Vector2d(1.0, 0.0),
                         1.0, solver, 1.0);
    FAIL("expected Unsolvable");
  } catch (const Unsolvable& e) {
    CHECK(e.discriminant == doctest::Approx(-0.84).epsilon(1e-12));
  }
}

TEST_CASE("general solve agrees with the closed form") {
  Invariant<double> gen;
  gen.label = "energy";
  gen.kind = InvariantKind::General;
  gen.value = [](const Vec<double>& q) { return q.squaredNorm(); };
  gen.gradient = [](const Vec<double>& q) -> Vec<double> { return 2 * q; };
  SolverConfig solver;

  Vec<double> q_next = Eigen::Vector2d(1.07, -0.31);
  Vec<double> phi = Eigen::Vector2d(0.8, 0.6);
  auto exact = solve_scalar<double>(unit_sphere(), q_next, phi, 1.0, solver, 1.0);
  auto newton = solve_scalar<double>(gen, q_next, phi, 1.0, solver, 1.0);
  CHECK(newton.lambda == doctest::Approx(exact.lambda).epsilon(1e-12));
  CHECK(newton.iters > 0);
}

TEST_CASE("newton stall falls back to bisection") {
  Invariant<double> cubic;
  cubic.label = "q0_cubed";
  cubic.kind = InvariantKind::General;
  cubic.value = [](const Vec<double>& q) { return q(0) * q(0) * q(0); };
  cubic.gradient = [](const Vec<double>& q) -> Vec<double> {
    return Eigen::Vector2d(3 * q(0) * q(0), 0.0);
  };
  SolverConfig solver;
  Vec<double> q_next = Eigen::Vector2d(0.0, 1.0);
  Vec<double> phi = Eigen::Vector2d(1.0, 0.0);

  // f'(0) = 0, so Newton cannot leave the origin; the bracket picks it up.
  auto sol = solve_scalar<double>(cubic, q_next, phi, 0.008, solver, 0.5);
  CHECK(sol.lambda == doctest::Approx(0.2).epsilon(1e-10));

  try {
    solve_scalar<double>(cubic, q_next, phi, 1.0, solver, 0.5);
    FAIL("expected Unsolvable");
  } catch (const Unsolvable& e) {
    CHECK(std::string(e.what()).find("no sign change") != std::string::npos);
    CHECK(std::string(e.what()).find("residuals:") != std::string::npos);
  }
}

TEST_CASE("relaxation solve") {
  auto inv = unit_sphere();
  SolverConfig solver;

  SUBCASE("on-manifold step needs no damping") {
    StepRecord<double> rec;
    rec.q_n = Eigen::Vector2d(1, 0);
    rec.q_next = Eigen::Vector2d(std::cos(0.3), std::sin(0.3));
    rec.dt = 0.3;
    auto sol = solve_relaxation(rec, inv, 1.0, 0.0, solver);
    CHECK(sol.gamma == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("conservative problem, real step") {
    auto prob = make_nonlinear_oscillator();
    auto rec = rk_step(prob, find_tableau("rk44"), 0.0, prob.q0, 0.5);
    auto sol = solve_relaxation(rec, prob.invariants[0], 1.0, 0.0, solver);
    CHECK(sol.gamma > 0.9);
    CHECK(sol.gamma < 1.1);
    CHECK(sol.gamma != 1.0);
    Vec<double> q_hat = rec.q_n + sol.gamma * (rec.q_next - rec.q_n);
    CHECK(q_hat.squaredNorm() == doctest::Approx(1.0).epsilon(1e-13));
  }

  SUBCASE("gamma-scaled dissipative target") {
    auto prob = make_linear_dissipative();
    auto rec = rk_step(prob, find_tableau("rk44"), 0.0, prob.q0, 0.5);
    const auto& inv0 = prob.invariants[0];
    const double t0 = conservative_target(inv0, rec.q_n);
    const double slope = dissipative_slope(rec, inv0, true);
    auto sol = solve_relaxation(rec, inv0, t0, slope, solver);
    CHECK(sol.gamma > 0.85);
    CHECK(sol.gamma < 0.91);
    Vec<double> q_hat = rec.q_n + sol.gamma * (rec.q_next - rec.q_n);
    CHECK(inv0.value(q_hat) ==
          doctest::Approx(t0 + sol.gamma * slope).epsilon(1e-12));
  }

  SUBCASE("only non-positive roots is unsolvable") {
    StepRecord<double> rec;
    rec.q_n = Eigen::Vector2d(1, 0);
    rec.q_next = Eigen::Vector2d(2, 0);
    rec.dt = 1.0;
    CHECK_THROWS_AS(solve_relaxation(rec, inv, 0.25, 0.0, solver), Unsolvable);
  }

  SUBCASE("general kind matches the quadratic path") {
    Invariant<double> gen;
    gen.kind = InvariantKind::General;
    gen.value = [](const Vec<double>& q) { return q.squaredNorm(); };
    gen.gradient = [](const Vec<double>& q) -> Vec<double> { return 2 * q; };
    auto prob = make_nonlinear_oscillator();
    auto rec = rk_step(prob, find_tableau("rk44"), 0.0, prob.q0, 0.5);
    auto a = solve_relaxation(rec, inv, 1.0, 0.0, solver);
    auto b = solve_relaxation(rec, gen, 1.0, 0.0, solver);
    CHECK(b.gamma == doctest::Approx(a.gamma).epsilon(1e-12));
  }
}

TEST_CASE("project_step on the oscillator, every method") {
  auto prob = make_nonlinear_oscillator();
  auto tab = find_tableau("rk44");
  auto rec = rk_step(prob, tab, 0.0, prob.q0, 0.3);

  ProjectionConfig<double> cfg;

  SUBCASE("orthogonal") {
    cfg.method = ProjectionMethod::Orthogonal;
    auto ps = project_step(rec, prob, cfg);
    CHECK(ps.q_hat.squaredNorm() == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(ps.effective_dt == 0.3);
    CHECK(ps.rank == -1);
    CHECK(!ps.skipped);
    CHECK(ps.projection_length == doctest::Approx(std::abs(ps.lambdas(0))));
    CHECK(ps.angle_deg[0] < 1e-6);
    CHECK((ps.q_hat - rec.q_next).norm() ==
          doctest::Approx(ps.projection_length).epsilon(1e-12));
  }

  SUBCASE("quasi-orthogonal, full rank") {
    cfg.method = ProjectionMethod::QuasiOrthogonal;
    auto ps = project_step(rec, prob, cfg);
    CHECK(ps.q_hat.squaredNorm() == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(ps.rank == 2);
    CHECK(ps.angle_deg[0] < 1e-6);  // spans all of R^2, so same as orthogonal
  }

  SUBCASE("directional with Euler weights") {
    cfg.method = ProjectionMethod::Directional;
    cfg.embedded_weights = tab.euler_embedded();
    auto ps = project_step(rec, prob, cfg);
    CHECK(ps.q_hat.squaredNorm() == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(ps.angle_deg[0] >= 0.0);
    CHECK(ps.angle_deg[0] <= 90.0);  // sign-oriented toward the gradient
  }

  SUBCASE("directional without weights") {
    cfg.method = ProjectionMethod::Directional;
    CHECK_THROWS_AS(project_step(rec, prob, cfg), std::invalid_argument);
  }

  SUBCASE("relaxation") {
    cfg.method = ProjectionMethod::Relaxation;
    auto ps = project_step(rec, prob, cfg);
    CHECK(ps.q_hat.squaredNorm() == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(ps.effective_dt == doctest::Approx(ps.lambdas(0) * 0.3));
    CHECK(ps.effective_dt != 0.3);
    CHECK(ps.angle_deg[0] >= 0.0);
    CHECK(ps.angle_deg[0] <= 180.0);
    CHECK(ps.projection_length ==
          doctest::Approx((ps.q_hat - rec.q_next).norm()).epsilon(1e-12));
  }

  SUBCASE("no invariants") {
    OdeProblem<double> bare = prob;
    bare.invariants.clear();
    CHECK_THROWS_AS(project_step(rec, bare, cfg), std::invalid_argument);
  }
}

TEST_CASE("quasi-orthogonal dominates other in-span directions") {
  // On Burgers the stage space is a thin slice of R^50, so the methods
  // genuinely differ: the in-span gradient component is maximal for the
  // quasi-orthogonal direction, and its correction is the shortest.
  auto prob = make_burgers();
  auto tab = find_tableau("rk33");
  const double dt = 0.3 * (2.0 / 50);
  auto rec = rk_step(prob, tab, 0.0, prob.q0, dt);
  const auto& inv = prob.invariants[0];
  Vec<double> g = inv.gradient(rec.q_next);

  auto qo = direction_quasi_orthogonal(rec, inv, 1e-10, 1e-12);
  REQUIRE(!qo.skip);
  CHECK(qo.rank == 3);
  Vec<double> phi_dir = direction_directional(rec, tab.euler_embedded());
  Vec<double> d_rel = direction_relaxation(rec).normalized();
  CHECK(std::abs(g.dot(qo.phi)) >= std::abs(g.dot(phi_dir)) - 1e-12);
  CHECK(std::abs(g.dot(qo.phi)) >= std::abs(g.dot(d_rel)) - 1e-12);

  ProjectionConfig<double> cfg;
  cfg.method = ProjectionMethod::QuasiOrthogonal;
  auto ps_qo = project_step(rec, prob, cfg);
  cfg.method = ProjectionMethod::Directional;
  cfg.embedded_weights = tab.euler_embedded();
  auto ps_dir = project_step(rec, prob, cfg);
  cfg.method = ProjectionMethod::Relaxation;
  cfg.embedded_weights.reset();
  auto ps_rel = project_step(rec, prob, cfg);

  const double e0 = inv.value(prob.q0);
  CHECK(std::abs(inv.value(ps_qo.q_hat) - e0) < 1e-12);
  CHECK(std::abs(inv.value(ps_dir.q_hat) - e0) < 1e-12);
  CHECK(std::abs(inv.value(ps_rel.q_hat) - e0) < 1e-12);

  CHECK(ps_qo.projection_length <= ps_dir.projection_length * 1.0001 + 1e-15);
  CHECK(ps_qo.projection_length <= ps_rel.projection_length * 1.0001 + 1e-14);

  // angles: quasi-orthogonal is closest to the gradient by construction
  CHECK(ps_qo.angle_deg[0] > 0.0);
  CHECK(ps_qo.angle_deg[0] < 90.0);
  CHECK(ps_qo.angle_deg[0] <= ps_dir.angle_deg[0] + 1e-9);
}

TEST_CASE("quasi-orthogonal skip paths") {
  ProjectionConfig<double> cfg;

  SUBCASE("frozen field") {
    OdeProblem<double> prob;
    prob.m = 2;
    prob.rhs = [](double, const Vec<double>&) { return Vec<double>::Zero(2); };
    prob.q0 = Eigen::Vector2d(1.0, 0.0);
    prob.invariants.push_back(unit_sphere());
    auto rec = rk_step(prob, find_tableau("rk33"), 0.0, prob.q0, 0.1);
    auto ps = project_step(rec, prob, cfg);
    CHECK(ps.skipped);
    CHECK(ps.rank == 0);
    CHECK((ps.q_hat - rec.q_next).norm() == 0.0);
    CHECK(ps.effective_dt == 0.1);
    CHECK(ps.projection_length == 0.0);
    CHECK(std::isnan(ps.angle_deg[0]));
  }

  SUBCASE("gradient normal to the stage space") {
    OdeProblem<double> prob;
    prob.m = 3;
    prob.rhs = [](double, const Vec<double>& q) -> Vec<double> {
      return Eigen::Vector3d(q(1), -q(0), 0.0);
    };
    prob.q0 = Eigen::Vector3d(1.0, 0.5, 1.0);
    Eigen::MatrixXd s = Eigen::Vector3d(0, 0, 1).asDiagonal();
    prob.invariants.push_back(Invariant<double>::quadratic("gz", s));
    auto rec = rk_step(prob, find_tableau("rk33"), 0.0, prob.q0, 0.1);
    auto ps = project_step(rec, prob, cfg);
    CHECK(ps.skipped);
    CHECK(ps.rank == 2);
    CHECK((ps.q_hat - rec.q_next).norm() == 0.0);
  }
}

TEST_CASE("projection magnitude scales like dt^(p+1)") {
  // Long double so the fine end of the ladder stays above rounding noise.
  OdeProblem<long double> prob;
  prob.m = 2;
  prob.rhs = [](long double, const Vec<long double>& q) -> Vec<long double> {
    const long double n2 = q.squaredNorm();
    Vec<long double> r(2);
    r << -q(1) / n2, q(0) / n2;
    return r;
  };
  prob.q0 = Vec<long double>(2);
  prob.q0 << 1.0L, 0.0L;
  prob.invariants.push_back(
      Invariant<long double>::quadratic("energy", Mat<long double>::Identity(2, 2)));

  ProjectionConfig<long double> cfg;

  // rk44's leading energy defect on this flow sits one order higher than the
  // generic p+1 bound, so the expected exponent is per-tableau.
  const std::pair<const char*, double> cases[] = {{"rk33", 4.0}, {"rk44", 6.0}};
  for (const auto& [name, expo] : cases) {
    auto tab = find_tableau<long double>(name);
    CAPTURE(name);
    std::vector<double> dts, lams;
    for (int k = 0; k < 6; ++k) {
      const long double dt = 0.1L / (1 << k);
      auto rec = rk_step(prob, tab, 0.0L, prob.q0, dt);
      auto ps = project_step(rec, prob, cfg);
      dts.push_back(double(dt));
      lams.push_back(double(std::abs(ps.lambdas(0))));
    }
    auto w = fit_loglog_slope(dts, lams, expo, 100.0 * double(LDBL_EPSILON));
    CHECK(w.count >= 4);
    CHECK(w.slope > tab.p + 0.75);
    CHECK(w.slope > expo - 0.25);
    CHECK(w.slope < expo + 0.25);
  }
}

TEST_CASE("multi-invariant projection") {
  auto rigid = make_rigid_body();
  ProjectionConfig<double> cfg;

  SUBCASE("both invariants restored after one step") {
    auto rec = rk_step(rigid, find_tableau("rk44"), 0.0, rigid.q0, 0.1);
    auto ps = project_step(rec, rigid, cfg);
    REQUIRE(ps.lambdas.size() == 2);
    for (int j = 0; j < 2; ++j) {
      const double g0 = rigid.invariants[j].value(rigid.q0);
      CHECK(std::abs(rigid.invariants[j].value(ps.q_hat) - g0) < 1e-13);
      CHECK(ps.angle_deg[j] >= 0.0);
      CHECK(ps.angle_deg[j] <= 90.0);
    }
    CHECK(ps.effective_dt == 0.1);
    CHECK(ps.rank >= 2);
    CHECK(ps.projection_length ==
          doctest::Approx((ps.q_hat - rec.q_next).norm()).epsilon(1e-12));
  }

  SUBCASE("lambdas match a finite-difference oracle") {
    auto rec = rk_step(rigid, find_tableau("rk44"), 0.0, rigid.q0, 0.1);
    auto ps = project_step(rec, rigid, cfg);

    // Independent 2D Newton with finite-difference Jacobian on the same
    // shared-basis directions.
    auto basis = orthonormalize(rec.stage_derivs, cfg.drop_tol);
    std::vector<Vec<double>> dirs(2);
    for (int j = 0; j < 2; ++j) {
      auto split = decompose(rigid.invariants[j].gradient(rec.q_next), basis);
      dirs[j] = split.g_s / split.g_s_norm;
    }
    auto res = [&](const Eigen::Vector2d& lam) -> Eigen::Vector2d {
      Vec<double> q = rec.q_next + lam(0) * dirs[0] + lam(1) * dirs[1];
      return Eigen::Vector2d(
          rigid.invariants[0].value(q) - rigid.invariants[0].value(rigid.q0),
          rigid.invariants[1].value(q) - rigid.invariants[1].value(rigid.q0));
    };
    Eigen::Vector2d lam(0, 0);
    const double h = 1e-7;
    for (int it = 0; it < 40; ++it) {
      Eigen::Vector2d r = res(lam);
      if (r.cwiseAbs().maxCoeff() < 1e-14) break;
      Eigen::Matrix2d j;
      for (int k = 0; k < 2; ++k) {
        Eigen::Vector2d lp = lam, lm = lam;
        lp(k) += h;
        lm(k) -= h;
        j.col(k) = (res(lp) - res(lm)) / (2 * h);
      }
      lam -= j.fullPivLu().solve(r);
    }
    CHECK(std::abs(ps.lambdas(0) - lam(0)) < 1e-8);
    CHECK(std::abs(ps.lambdas(1) - lam(1)) < 1e-8);
  }

  SUBCASE("short trajectory keeps both invariants parked") {
    auto traj = integrate(rigid, find_tableau("heun33"), 0.04, 5.0,
                          std::optional<ProjectionConfig<double>>(cfg));
    REQUIRE(!traj.failed);
    const auto& g0 = traj.points.front().invariant_values;
    for (const auto& pt : traj.points)
      for (int j = 0; j < 2; ++j)
        CHECK(std::abs(pt.invariant_values[j] - g0[j]) < 1e-12);
  }

  SUBCASE("two stages still solve the coupled system") {
    // A generic state: at the symmetric initial point the two in-span
    // gradients are nearly collinear and the 2x2 system is ill-conditioned.
    Vec<double> q(3);
    q << 0.4, 0.9, 1.1;
    auto rec = rk_step(rigid, find_tableau("ssprk22"), 0.0, q, 0.05);
    auto ps = project_step(rec, rigid, cfg);
    for (int j = 0; j < 2; ++j)
      CHECK(std::abs(rigid.invariants[j].value(ps.q_hat) -
                     rigid.invariants[j].value(q)) < 1e-13);
  }

  SUBCASE("duplicated invariant makes the system singular") {
    OdeProblem<double> dup = rigid;
    dup.invariants = {rigid.invariants[0], rigid.invariants[0]};
    auto rec = rk_step(dup, find_tableau("rk44"), 0.0, dup.q0, 0.1);
    try {
      project_step(rec, dup, cfg);
      FAIL("expected Unsolvable");
    } catch (const Unsolvable& e) {
      CHECK(std::string(e.what()).find("M_s") != std::string::npos);
      CHECK(std::string(e.what()).find("cond") != std::string::npos);
    }
  }

  SUBCASE("gradient outside the stage space names the invariant") {
    OdeProblem<double> prob;
    prob.m = 3;
    prob.rhs = [](double, const Vec<double>& q) -> Vec<double> {
      return Eigen::Vector3d(q(1), -q(0), 0.0);
    };
    prob.q0 = Eigen::Vector3d(1.0, 0.5, 1.0);
    prob.invariants.push_back(
        Invariant<double>::quadratic("g1", Eigen::MatrixXd::Identity(3, 3)));
    Eigen::MatrixXd s = Eigen::Vector3d(0, 0, 1).asDiagonal();
    prob.invariants.push_back(Invariant<double>::quadratic("gz", s));
    auto rec = rk_step(prob, find_tableau("rk44"), 0.0, prob.q0, 0.1);
    try {
      project_step(rec, prob, cfg);
      FAIL("expected DegenerateDirection");
    } catch (const DegenerateDirection& e) {
      CHECK(std::string(e.what()).find("gz") != std::string::npos);
    }
  }

  SUBCASE("relaxation and orthogonal reject multiple invariants") {
    auto rec = rk_step(rigid, find_tableau("rk44"), 0.0, rigid.q0, 0.1);
    cfg.method = ProjectionMethod::Relaxation;
    CHECK_THROWS_AS(project_step(rec, rigid, cfg), std::invalid_argument);
    cfg.method = ProjectionMethod::Orthogonal;
    CHECK_THROWS_AS(project_step(rec, rigid, cfg), std::invalid_argument);
  }

  SUBCASE("dissipative targets are rejected") {
    auto rec = rk_step(rigid, find_tableau("rk44"), 0.0, rigid.q0, 0.1);
    cfg.target = TargetKind::DissipativeEstimate;
    CHECK_THROWS_AS(project_step(rec, rigid, cfg), std::invalid_argument);
  }

  SUBCASE("directional with per-invariant weight sets") {
    auto tab = find_tableau("dp75");
    auto rec = rk_step(rigid, tab, 0.0, rigid.q0, 0.1);
    cfg.method = ProjectionMethod::Directional;
    cfg.embedded_weight_sets = {*tab.b_embedded, tab.euler_embedded()};
    auto ps = project_step(rec, rigid, cfg);
    for (int j = 0; j < 2; ++j)
      CHECK(std::abs(rigid.invariants[j].value(ps.q_hat) -
                     rigid.invariants[j].value(rigid.q0)) < 1e-12);
    CHECK(ps.rank == -1);

    cfg.embedded_weight_sets = {tab.euler_embedded()};
    CHECK_THROWS_AS(project_step(rec, rigid, cfg), std::invalid_argument);
  }
}

TEST_CASE("ms_matrix") {
  StepRecord<double> rec;

  SUBCASE("single invariant") {
    Vec<double> g = Eigen::Vector3d(3, 0, 4);
    std::vector<Vec<double>> dirs = {g.normalized()};
    std::vector<Vec<double>> grads = {g};
    auto ms = ms_matrix(rec, dirs, grads);
    REQUIRE(ms.m.rows() == 1);
    CHECK(ms.m(0, 0) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(ms.cond == doctest::Approx(1.0));
  }

  SUBCASE("proportional gradients blow up the condition number") {
    Vec<double> g = Eigen::Vector3d(1, 2, 2);
    std::vector<Vec<double>> dirs = {g.normalized(), g.normalized()};
    std::vector<Vec<double>> grads = {g, 2 * g};
    auto ms = ms_matrix(rec, dirs, grads);
    CHECK(ms.cond > 1e15);
  }

  SUBCASE("entries are gradient-direction inner products") {
    Vec<double> g1 = Eigen::Vector3d(1, 0, 0), g2 = Eigen::Vector3d(1, 1, 0);
    Vec<double> d1 = Eigen::Vector3d(0, 1, 0), d2 = Eigen::Vector3d(1, 0, 0);
    auto ms = ms_matrix<double>(rec, {d1, d2}, {g1, g2});
    CHECK(ms.m(0, 0) == 0.0);
    CHECK(ms.m(0, 1) == 1.0);
    CHECK(ms.m(1, 0) == 1.0);
    CHECK(ms.m(1, 1) == 1.0);
  }
}

TEST_CASE("dissipative quasi-orthogonal step hits the estimated target") {
  auto prob = make_linear_dissipative();
  auto tab = find_tableau("rk44");
  auto rec = rk_step(prob, tab, 0.0, prob.q0, 0.5);
  const auto& inv = prob.invariants[0];

  ProjectionConfig<double> cfg;
  cfg.target = TargetKind::DissipativeEstimate;
  auto ps = project_step(rec, prob, cfg);
  const double target = conservative_target(inv, rec.q_n) +
                        dissipative_slope(rec, inv, true);
  CHECK(inv.value(ps.q_hat) == doctest::Approx(target).epsilon(1e-13));
  CHECK(inv.value(ps.q_hat) < inv.value(prob.q0));  // still dissipating
}
