#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rkproj/tableau.hpp"

namespace rkproj {

enum class InvariantKind { QuadraticForm, General };

/// Scalar functional G with analytic gradient. QuadraticForm means
/// G(q) = q^T S q with symmetric S, which unlocks the closed-form
/// projection solve.
template <class Scalar>
struct Invariant {
  std::string label;
  std::function<Scalar(const Vec<Scalar>&)> value;
  std::function<Vec<Scalar>(const Vec<Scalar>&)> gradient;
  InvariantKind kind = InvariantKind::General;
  Mat<Scalar> S;  // only meaningful for QuadraticForm

  static Invariant quadratic(std::string label, Mat<Scalar> S) {
    Invariant inv;
    inv.label = std::move(label);
    inv.kind = InvariantKind::QuadraticForm;
    inv.S = std::move(S);
    inv.value = [M = inv.S](const Vec<Scalar>& q) { return Scalar(q.dot(M * q)); };
    inv.gradient = [M = inv.S](const Vec<Scalar>& q) -> Vec<Scalar> {
      return Scalar(2) * (M * q);
    };
    return inv;
  }
};

template <class Scalar>
struct OdeProblem {
  std::string name;
  int m = 0;
  std::function<Vec<Scalar>(Scalar, const Vec<Scalar>&)> rhs;
  Vec<Scalar> q0;
  std::vector<Invariant<Scalar>> invariants;
  bool dissipative = false;
  std::function<Vec<Scalar>(Scalar)> exact;  // empty when unavailable
  std::vector<Vec<Scalar>> linear_invariants;
};

/// Everything the projection layer needs from one base RK step, including the
/// quadrature weights so embedded updates and weighted estimates can be
/// reassembled without the tableau.
template <class Scalar>
struct StepRecord {
  Scalar t{};
  Scalar dt{};
  Vec<Scalar> q_n;
  std::vector<Vec<Scalar>> stage_states;
  std::vector<Vec<Scalar>> stage_derivs;
  Vec<Scalar> b;
  Vec<Scalar> q_next;
};

struct StepFailure : std::runtime_error {
  int stage;  // failing stage index, -1 when not stage-specific
  explicit StepFailure(const std::string& what, int stage_index = -1)
      : std::runtime_error(what), stage(stage_index) {}
};

template <class Scalar>
StepRecord<Scalar> rk_step(const OdeProblem<Scalar>& problem,
                           const ButcherTableau<Scalar>& tab, Scalar time,
                           const Vec<Scalar>& q, Scalar dt) {
  StepRecord<Scalar> rec;
  rec.t = time;
  rec.dt = dt;
  rec.q_n = q;
  rec.b = tab.b;
  rec.stage_states.resize(tab.s);
  rec.stage_derivs.resize(tab.s);
  for (int i = 0; i < tab.s; ++i) {
    Vec<Scalar> qi = q;
    for (int j = 0; j < i; ++j)
      if (tab.a(i, j) != Scalar(0)) qi += dt * tab.a(i, j) * rec.stage_derivs[j];
    rec.stage_states[i] = qi;
    Vec<Scalar> ri = problem.rhs(time + tab.c(i) * dt, qi);
    if (!ri.allFinite())
      throw StepFailure("non-finite stage derivative at stage " + std::to_string(i) +
                            " (t=" + std::to_string(double(time)) + ")",
                        i);
    rec.stage_derivs[i] = std::move(ri);
  }
  rec.q_next = q;
  for (int j = 0; j < tab.s; ++j)
    if (tab.b(j) != Scalar(0)) rec.q_next += dt * tab.b(j) * rec.stage_derivs[j];
  return rec;
}

}  // namespace rkproj
