#pragma once

#include <Eigen/Dense>
#include <string>

#include "rkproj/ode.hpp"

namespace rkproj {

OdeProblem<double> make_linear_dissipative();
OdeProblem<double> make_nonlinear_oscillator();
OdeProblem<double> make_burgers(int n = 50);
OdeProblem<double> make_rigid_body();

/// CLI lookup: "lindiss", "oscillator", "burgers", "rigidbody".
OdeProblem<double> make_problem(const std::string& name, int burgers_n = 50);

/// P(z) = 1 + z + z^2/2 + z^3/6 + z^4/24, the RK(4,4) stability polynomial.
template <class T>
  requires(!std::is_base_of_v<Eigen::MatrixBase<T>, T>)
T stability_polynomial_rk44(T z) {
  return T(1) + z * (T(1) + z * (T(1) / T(2) + z * (T(1) / T(6) + z / T(24))));
}

Eigen::MatrixXd stability_polynomial_rk44(const Eigen::MatrixXd& z);

/// Matrix exponential by scaling and squaring of the Taylor series,
/// terms summed until they fall below 1e-15 relative.
Eigen::MatrixXd expm(const Eigen::MatrixXd& a);

/// Right singular vector for the largest singular value, computed by Jacobi
/// iteration on the symmetric Gram matrix A^T A. Sign convention: first
/// component above 1e-14 in magnitude is positive.
Eigen::VectorXd dominant_right_singular_vector(const Eigen::MatrixXd& a);

}  // namespace rkproj
