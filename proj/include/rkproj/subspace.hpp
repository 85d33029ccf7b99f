#pragma once

#include <Eigen/Dense>
#include <vector>

#include "rkproj/ode.hpp"

namespace rkproj {

/// Orthonormal basis of span{R_1..R_s}. `coeffs` row i expresses n_i as a
/// linear combination of the original stage derivatives, so subspace
/// quantities can be mapped back to stage space.
template <class Scalar>
struct StageBasis {
  std::vector<Vec<Scalar>> vectors;
  int rank = 0;
  Scalar source_norm_scale{};
  Mat<Scalar> coeffs;  // rank x s, n_i = sum_j coeffs(i,j) R_j
};

/// Modified Gram-Schmidt with one full re-orthogonalization pass. A candidate
/// is dropped when its residual falls below drop_tol relative to the largest
/// input norm.
template <class Scalar>
StageBasis<Scalar> orthonormalize(const std::vector<Vec<Scalar>>& stage_derivs,
                                  Scalar drop_tol) {
  const int s = int(stage_derivs.size());
  StageBasis<Scalar> basis;
  basis.source_norm_scale = Scalar(0);
  for (const auto& r : stage_derivs)
    basis.source_norm_scale = std::max(basis.source_norm_scale, Scalar(r.norm()));
  if (basis.source_norm_scale == Scalar(0)) {
    basis.coeffs = Mat<Scalar>::Zero(0, s);
    return basis;
  }
  const Scalar tol = drop_tol * basis.source_norm_scale;

  std::vector<Vec<Scalar>> combos;
  for (int j = 0; j < s; ++j) {
    Vec<Scalar> v = stage_derivs[j];
    Vec<Scalar> combo = Vec<Scalar>::Zero(s);
    combo(j) = Scalar(1);
    for (int pass = 0; pass < 2; ++pass) {
      for (int i = 0; i < basis.rank; ++i) {
        Scalar proj = basis.vectors[i].dot(v);
        v -= proj * basis.vectors[i];
        combo -= proj * combos[i];
      }
    }
    Scalar nrm = v.norm();
    if (nrm <= tol) continue;
    basis.vectors.push_back(v / nrm);
    combos.push_back(combo / nrm);
    ++basis.rank;
  }
  basis.coeffs = Mat<Scalar>::Zero(basis.rank, s);
  for (int i = 0; i < basis.rank; ++i) basis.coeffs.row(i) = combos[i].transpose();
  return basis;
}

/// Orthogonal split of a gradient against the stage subspace: g = g_s + g_n
/// with g_s in S and g_n normal to it. `combo` expresses g_s over the
/// original stage derivatives.
template <class Scalar>
struct GradientSplit {
  Vec<Scalar> g_s;
  Vec<Scalar> g_n;
  Scalar g_s_norm{};
  Vec<Scalar> combo;  // length s
};

template <class Scalar>
GradientSplit<Scalar> decompose(const Vec<Scalar>& gradient,
                                const StageBasis<Scalar>& basis) {
  GradientSplit<Scalar> split;
  split.g_s = Vec<Scalar>::Zero(gradient.size());
  split.combo = Vec<Scalar>::Zero(basis.coeffs.cols());
  for (int i = 0; i < basis.rank; ++i) {
    Scalar proj = gradient.dot(basis.vectors[i]);
    split.g_s += proj * basis.vectors[i];
    split.combo += proj * basis.coeffs.row(i).transpose();
  }
  split.g_n = gradient - split.g_s;
  split.g_s_norm = split.g_s.norm();
  return split;
}

}  // namespace rkproj
