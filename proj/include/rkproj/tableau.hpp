#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rkproj {

template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Explicit Runge-Kutta coefficients with an optional embedded weight set.
template <class Scalar>
struct ButcherTableau {
  std::string name;
  int s = 0;            // stage count
  Mat<Scalar> a;        // strictly lower triangular
  Vec<Scalar> b;
  Vec<Scalar> c;
  int p = 0;            // claimed order
  std::optional<Vec<Scalar>> b_embedded;
  int embedded_order = 0;

  /// First-order Euler weights (1, 0, ..., 0), usable with any tableau.
  Vec<Scalar> euler_embedded() const {
    Vec<Scalar> bt = Vec<Scalar>::Zero(s);
    bt(0) = Scalar(1);
    return bt;
  }
};

template <class Scalar>
void check_structure(const ButcherTableau<Scalar>& t) {
  if (t.s <= 0 || t.a.rows() != t.s || t.a.cols() != t.s || t.b.size() != t.s ||
      t.c.size() != t.s)
    throw std::invalid_argument("tableau " + t.name + ": inconsistent sizes");
  for (int i = 0; i < t.s; ++i)
    for (int j = i; j < t.s; ++j)
      if (t.a(i, j) != Scalar(0))
        throw std::invalid_argument("tableau " + t.name + ": not explicit");
  for (int i = 0; i < t.s; ++i)
    if (std::abs(double(t.a.row(i).sum() - t.c(i))) > 1e-14)
      throw std::invalid_argument("tableau " + t.name + ": row sum != c");
  if (std::abs(double(t.b.sum() - Scalar(1))) > 1e-14)
    throw std::invalid_argument("tableau " + t.name + ": sum(b) != 1");
  if (t.b_embedded && t.b_embedded->size() != t.s)
    throw std::invalid_argument("tableau " + t.name + ": embedded size");
}

struct ConditionResidual {
  int order;
  std::string id;
  double residual;
};

/// All rooted-tree order conditions through order 5, evaluated for the given
/// weight vector (pass t.b or an embedded weight set).
template <class Scalar>
std::vector<ConditionResidual> order_condition_residuals(
    const ButcherTableau<Scalar>& t, const Vec<Scalar>& w, int up_to) {
  if (up_to > 5) throw std::invalid_argument("order conditions enumerated up to 5");
  const auto& a = t.a;
  const Vec<Scalar>& c = t.c;
  auto had = [](const Vec<Scalar>& u, const Vec<Scalar>& v) -> Vec<Scalar> {
    return u.cwiseProduct(v);
  };
  auto dot = [&](const Vec<Scalar>& v) { return double(w.dot(v)); };
  const Vec<Scalar> e = Vec<Scalar>::Ones(t.s);
  const Vec<Scalar> c2 = had(c, c), c3 = had(c2, c), c4 = had(c3, c);
  const Vec<Scalar> Ac = a * c;

  std::vector<ConditionResidual> out;
  auto add = [&](int o, const char* id, double lhs, double rhs) {
    if (o <= up_to) out.push_back({o, id, std::abs(lhs - rhs)});
  };
  add(1, "b.e", dot(e), 1.0);
  add(2, "b.c", dot(c), 1.0 / 2);
  add(3, "b.c2", dot(c2), 1.0 / 3);
  add(3, "b.Ac", dot(Ac), 1.0 / 6);
  add(4, "b.c3", dot(c3), 1.0 / 4);
  add(4, "b.(c*Ac)", dot(had(c, Ac)), 1.0 / 8);
  add(4, "b.A(c2)", dot(a * c2), 1.0 / 12);
  add(4, "b.AAc", dot(a * Ac), 1.0 / 24);
  add(5, "b.c4", dot(c4), 1.0 / 5);
  add(5, "b.(c2*Ac)", dot(had(c2, Ac)), 1.0 / 10);
  add(5, "b.(Ac)2", dot(had(Ac, Ac)), 1.0 / 20);
  add(5, "b.(c*A(c2))", dot(had(c, a * c2)), 1.0 / 15);
  add(5, "b.(c*AAc)", dot(had(c, a * Ac)), 1.0 / 30);
  add(5, "b.A(c3)", dot(a * c3), 1.0 / 20);
  add(5, "b.A(c*Ac)", dot(a * had(c, Ac)), 1.0 / 40);
  add(5, "b.AA(c2)", dot(a * (a * c2)), 1.0 / 60);
  add(5, "b.AAAc", dot(a * (a * Ac)), 1.0 / 120);
  return out;
}

template <class Scalar>
std::vector<ConditionResidual> verify_order_conditions(const ButcherTableau<Scalar>& t,
                                                       int up_to) {
  return order_condition_residuals(t, t.b, up_to);
}

template <class Scalar>
double max_residual_at_order(const ButcherTableau<Scalar>& t, const Vec<Scalar>& w,
                             int order) {
  double m = 0;
  for (const auto& r : order_condition_residuals(t, w, order))
    if (r.order == order) m = std::max(m, r.residual);
  return m;
}

namespace detail {

template <class Scalar>
ButcherTableau<Scalar> make(const std::string& name, int p,
                            std::initializer_list<std::initializer_list<double>> a,
                            std::initializer_list<double> b,
                            std::initializer_list<double> c) {
  ButcherTableau<Scalar> t;
  t.name = name;
  t.p = p;
  t.s = int(b.size());
  t.a = Mat<Scalar>::Zero(t.s, t.s);
  int i = 0;
  for (auto& row : a) {
    int j = 0;
    for (double v : row) t.a(i, j++) = Scalar(v);
    ++i;
  }
  t.b = Vec<Scalar>(t.s);
  t.c = Vec<Scalar>(t.s);
  int k = 0;
  for (double v : b) t.b(k++) = Scalar(v);
  k = 0;
  for (double v : c) t.c(k++) = Scalar(v);
  return t;
}

template <class Scalar>
void set_embedded(ButcherTableau<Scalar>& t, std::initializer_list<double> bt, int q) {
  Vec<Scalar> v(t.s);
  int k = 0;
  for (double x : bt) v(k++) = Scalar(x);
  t.b_embedded = v;
  t.embedded_order = q;
}

}  // namespace detail

/// The six methods used throughout the benchmarks. Coefficients are written as
/// integer fractions so the order-condition tests see the exact rationals.
template <class Scalar = double>
std::vector<ButcherTableau<Scalar>> builtin_tableaux() {
  using detail::make;
  std::vector<ButcherTableau<Scalar>> out;

  out.push_back(make<Scalar>("ssprk22", 2,
                             {{}, {1.0}},
                             {1.0 / 2, 1.0 / 2},
                             {0.0, 1.0}));

  out.push_back(make<Scalar>("rk33", 3,
                             {{}, {1.0 / 2}, {-1.0, 2.0}},
                             {1.0 / 6, 2.0 / 3, 1.0 / 6},
                             {0.0, 1.0 / 2, 1.0}));

  out.push_back(make<Scalar>("heun33", 3,
                             {{}, {1.0 / 3}, {0.0, 2.0 / 3}},
                             {1.0 / 4, 0.0, 3.0 / 4},
                             {0.0, 1.0 / 3, 2.0 / 3}));

  out.push_back(make<Scalar>("rk44", 4,
                             {{}, {1.0 / 2}, {0.0, 1.0 / 2}, {0.0, 0.0, 1.0}},
                             {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6},
                             {0.0, 1.0 / 2, 1.0 / 2, 1.0}));

  auto dp = make<Scalar>(
      "dp75", 5,
      {{},
       {1.0 / 5},
       {3.0 / 40, 9.0 / 40},
       {44.0 / 45, -56.0 / 15, 32.0 / 9},
       {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
       {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
       {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}},
      {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0},
      {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0});
  detail::set_embedded(dp,
                       {5179.0 / 57600, 0.0, 7571.0 / 16695, 393.0 / 640,
                        -92097.0 / 339200, 187.0 / 2100, 1.0 / 40},
                       4);
  out.push_back(dp);

  auto bs = make<Scalar>(
      "bsrk85", 5,
      {{},
       {1.0 / 6},
       {2.0 / 27, 4.0 / 27},
       {183.0 / 1372, -162.0 / 343, 1053.0 / 1372},
       {68.0 / 297, -4.0 / 11, 42.0 / 143, 1960.0 / 3861},
       {597.0 / 22528, 81.0 / 352, 63099.0 / 585728, 58653.0 / 366080, 4617.0 / 20480},
       {174197.0 / 959244, -30942.0 / 79937, 8152137.0 / 19744439, 666106.0 / 1039181,
        -29421.0 / 29068, 482048.0 / 414219},
       {587.0 / 8064, 0.0, 4440339.0 / 15491840, 24353.0 / 124800, 387.0 / 44800,
        2152.0 / 5985, 7267.0 / 94080}},
      {587.0 / 8064, 0.0, 4440339.0 / 15491840, 24353.0 / 124800, 387.0 / 44800,
       2152.0 / 5985, 7267.0 / 94080, 0.0},
      {0.0, 1.0 / 6, 2.0 / 9, 3.0 / 7, 2.0 / 3, 3.0 / 4, 1.0, 1.0});
  detail::set_embedded(bs,
                       {2479.0 / 34992, 0.0, 123.0 / 416, 612941.0 / 3411720,
                        43.0 / 1440, 2272.0 / 6561, 79937.0 / 1113912,
                        3293.0 / 556956},
                       4);
  out.push_back(bs);

  return out;
}

template <class Scalar = double>
ButcherTableau<Scalar> find_tableau(const std::string& name) {
  for (auto& t : builtin_tableaux<Scalar>())
    if (t.name == name) return t;
  throw std::invalid_argument("unknown tableau: " + name);
}

}  // namespace rkproj
