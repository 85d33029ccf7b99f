#include "problems.hpp"

#include <cmath>
#include <stdexcept>

namespace rkproj {

Eigen::MatrixXd stability_polynomial_rk44(const Eigen::MatrixXd& z) {
  const int n = int(z.rows());
  Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd p = id;
  p = id + z * p / 4;
  p = id + z * p / 3;
  p = id + z * p / 2;
  p = id + z * p;
  return p;
}

Eigen::MatrixXd expm(const Eigen::MatrixXd& a) {
  const int n = int(a.rows());
  double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = int(std::ceil(std::log2(norm / 0.5)));
  Eigen::MatrixXd b = a / std::ldexp(1.0, squarings);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n);
  for (int k = 1; k <= 60; ++k) {
    term = (term * b) / double(k);
    sum += term;
    if (term.cwiseAbs().maxCoeff() <= 1e-15 * sum.cwiseAbs().maxCoeff()) break;
  }
  for (int k = 0; k < squarings; ++k) sum = sum * sum;
  return sum;
}

Eigen::VectorXd dominant_right_singular_vector(const Eigen::MatrixXd& a) {
  const int n = int(a.cols());
  Eigen::MatrixXd g = a.transpose() * a;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double scale = g.cwiseAbs().maxCoeff();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off = std::max(off, std::abs(g(p, q)));
    if (off <= 1e-14 * scale) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(g(p, q)) <= 1e-300) continue;
        const double theta = (g(q, q) - g(p, p)) / (2 * g(p, q));
        const double t = std::copysign(1.0, theta) /
                         (std::abs(theta) + std::sqrt(1 + theta * theta));
        const double c = 1 / std::sqrt(1 + t * t);
        const double s = t * c;
        Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(n, n);
        rot(p, p) = c;
        rot(q, q) = c;
        rot(p, q) = s;
        rot(q, p) = -s;
        g = rot.transpose() * g * rot;
        v = v * rot;
      }
    }
  }
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (g(i, i) > g(best, best)) best = i;
  Eigen::VectorXd vec = v.col(best);
  vec /= vec.norm();
  for (int i = 0; i < n; ++i) {
    if (std::abs(vec(i)) > 1e-14) {
      if (vec(i) < 0) vec = -vec;
      break;
    }
  }
  return vec;
}

OdeProblem<double> make_linear_dissipative() {
  Eigen::MatrixXd l(3, 3);
  l << -1, -2, -2, 0, -1, -2, 0, 0, -1;

  OdeProblem<double> prob;
  prob.name = "lindiss";
  prob.m = 3;
  prob.rhs = [l](double, const Eigen::VectorXd& q) -> Eigen::VectorXd {
    return l * q;
  };
  prob.q0 = dominant_right_singular_vector(stability_polynomial_rk44(0.5 * l));
  prob.invariants.push_back(
      Invariant<double>::quadratic("energy", Eigen::MatrixXd::Identity(3, 3)));
  prob.dissipative = true;
  prob.exact = [l, q0 = prob.q0](double t) -> Eigen::VectorXd {
    return expm(t * l) * q0;
  };
  return prob;
}

OdeProblem<double> make_nonlinear_oscillator() {
  OdeProblem<double> prob;
  prob.name = "oscillator";
  prob.m = 2;
  prob.rhs = [](double, const Eigen::VectorXd& q) -> Eigen::VectorXd {
    const double n2 = q.squaredNorm();
    if (n2 == 0.0)
      throw StepFailure("nonlinear oscillator rhs is singular at q = 0");
    Eigen::VectorXd r(2);
    r << -q(1) / n2, q(0) / n2;
    return r;
  };
  prob.q0 = Eigen::Vector2d(1.0, 0.0);
  prob.invariants.push_back(
      Invariant<double>::quadratic("energy", Eigen::MatrixXd::Identity(2, 2)));
  prob.exact = [](double t) -> Eigen::VectorXd {
    return Eigen::Vector2d(std::cos(t), std::sin(t));
  };
  return prob;
}

OdeProblem<double> make_burgers(int n) {
  if (n < 4) throw std::invalid_argument("burgers: need n >= 4");
  const double dx = 2.0 / n;

  OdeProblem<double> prob;
  prob.name = "burgers";
  prob.m = n;
  prob.rhs = [n, dx](double, const Eigen::VectorXd& q) -> Eigen::VectorXd {
    // F_{i+1/2} = (q_i^2 + q_i q_{i+1} + q_{i+1}^2)/6 with periodic wraparound
    Eigen::VectorXd flux(n);
    for (int i = 0; i < n; ++i) {
      const double a = q(i), b = q((i + 1) % n);
      flux(i) = (a * a + a * b + b * b) / 6.0;
    }
    Eigen::VectorXd r(n);
    for (int i = 0; i < n; ++i) r(i) = -(flux(i) - flux((i + n - 1) % n)) / dx;
    return r;
  };
  prob.q0 = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) {
    const double x = -1.0 + i * dx;
    prob.q0(i) = std::exp(-30.0 * x * x);
  }
  Invariant<double> energy;
  energy.label = "energy";
  energy.kind = InvariantKind::General;
  energy.value = [](const Eigen::VectorXd& q) { return q.squaredNorm(); };
  energy.gradient = [](const Eigen::VectorXd& q) -> Eigen::VectorXd { return 2 * q; };
  prob.invariants.push_back(std::move(energy));
  prob.linear_invariants.push_back(Eigen::VectorXd::Ones(n));
  return prob;
}

OdeProblem<double> make_rigid_body() {
  const double s = std::sqrt(1.51);
  const double alpha = 1.0 + 1.0 / s;
  const double beta = 1.0 - 0.51 / s;

  OdeProblem<double> prob;
  prob.name = "rigidbody";
  prob.m = 3;
  prob.rhs = [alpha, beta](double, const Eigen::VectorXd& q) -> Eigen::VectorXd {
    Eigen::VectorXd r(3);
    r << (alpha - beta) * q(1) * q(2), (1 - alpha) * q(2) * q(0),
        (beta - 1) * q(0) * q(1);
    return r;
  };
  prob.q0 = Eigen::Vector3d(0.0, 1.0, 1.0);
  prob.invariants.push_back(
      Invariant<double>::quadratic("G1", Eigen::MatrixXd::Identity(3, 3)));
  Eigen::MatrixXd s2 = Eigen::Vector3d(1.0, beta, alpha).asDiagonal();
  prob.invariants.push_back(Invariant<double>::quadratic("G2", s2));
  return prob;
}

OdeProblem<double> make_problem(const std::string& name, int burgers_n) {
  if (name == "lindiss") return make_linear_dissipative();
  if (name == "oscillator") return make_nonlinear_oscillator();
  if (name == "burgers") return make_burgers(burgers_n);
  if (name == "rigidbody") return make_rigid_body();
  throw std::invalid_argument(
      "unknown problem: " + name +
      " (valid: lindiss, oscillator, burgers, rigidbody)");
}

}  // namespace rkproj
