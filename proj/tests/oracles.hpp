#pragma once

// Independent reference computations used only by the tests.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "overtrain/core.hpp"

namespace oracle {

using overtrain::Matrix;
using overtrain::Vector;

struct FdReport {
  double worst_relative = 0.0;
  std::string worst_name;
  int checked = 0;
};

/// Central differences of `loss` against an analytic gradient, entry by
/// entry over every tensor the visitor exposes. Entries whose gradient
/// magnitude is below `floor` are compared in absolute terms.
template <class Params, class LossFn>
FdReport finite_difference(Params params, const Params& grad, LossFn&& loss, double step = 1e-5,
                           double floor = 1e-6) {
  FdReport r;
  std::vector<std::pair<std::string, Matrix>> grads;
  Params g = grad;
  g.for_each([&](const std::string& name, Eigen::Ref<Matrix> t) { grads.emplace_back(name, t); });
  std::size_t tensor = 0;
  params.for_each([&](const std::string& name, Eigen::Ref<Matrix> t) {
    const Matrix& analytic = grads[tensor++].second;
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) {
        const double saved = t(i, j);
        t(i, j) = saved + step;
        const double up = loss(params);
        t(i, j) = saved - step;
        const double down = loss(params);
        t(i, j) = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic(i, j);
        const double err = std::abs(a) > floor ? std::abs(numeric - a) / std::max(std::abs(a), std::abs(numeric))
                                               : std::abs(numeric - a);
        ++r.checked;
        if (err > r.worst_relative) {
          r.worst_relative = err;
          r.worst_name = name + "(" + std::to_string(i) + "," + std::to_string(j) + ")";
        }
      }
  });
  return r;
}

struct HardMargin {
  Vector w;
  double b = 0.0;
  double margin = 0.0;
};

/// Hard-margin SVM by enumerating candidate active sets: for every non-empty
/// subset S of points, minimize |w|^2 subject to y_i (w.x_i + b) = 1 on S
/// (minimum-norm solution of the linear system), keep it if all points
/// satisfy y_i (w.x_i + b) >= 1, and return the feasible solution with the
/// smallest |w|. Exponential, meant for a handful of points.
inline std::optional<HardMargin> svm_by_enumeration(const Matrix& X, const Vector& y) {
  const int n = static_cast<int>(X.rows());
  const int d = static_cast<int>(X.cols());
  std::optional<HardMargin> best;
  for (int mask = 1; mask < (1 << n); ++mask) {
    std::vector<int> S;
    for (int i = 0; i < n; ++i)
      if (mask & (1 << i)) S.push_back(i);
    // Minimize |w|^2 s.t. A [w; b] = 1 where A_i = y_i [x_i, 1]; the norm
    // excludes b, so solve the KKT system of the equality-constrained QP.
    const int m = static_cast<int>(S.size());
    const int dim = d + 1 + m;
    Matrix K = Matrix::Zero(dim, dim);
    Vector rhs = Vector::Zero(dim);
    K.topLeftCorner(d, d) = 2.0 * Matrix::Identity(d, d);
    for (int r = 0; r < m; ++r) {
      const int i = S[static_cast<std::size_t>(r)];
      Vector a(d + 1);
      a.head(d) = y(i) * X.row(i).transpose();
      a(d) = y(i);
      K.block(0, d + 1 + r, d + 1, 1) = a;
      K.block(d + 1 + r, 0, 1, d + 1) = a.transpose();
      rhs(d + 1 + r) = 1.0;
    }
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(K);
    const Vector sol = cod.solve(rhs);
    if ((K * sol - rhs).norm() > 1e-8) continue;  // inconsistent active set
    const Vector w = sol.head(d);
    const double b = sol(d);
    bool feasible = true;
    for (int i = 0; i < n && feasible; ++i) feasible = y(i) * (X.row(i).dot(w) + b) >= 1.0 - 1e-9;
    if (!feasible || w.norm() == 0.0) continue;
    if (!best || w.norm() < best->w.norm()) best = HardMargin{w, b, 1.0 / w.norm()};
  }
  return best;
}

/// Time for the phase-1 mean-field solution to reach f (0 < f < 1), from
/// t(f) = int_0^f du / (2 sqrt(1 + g^2 u^2) (1 - u)), by composite Simpson.
inline double phase1_time_to(double gamma0, double f, int intervals = 20000) {
  auto integrand = [&](double u) { return 1.0 / (2.0 * std::sqrt(1.0 + gamma0 * gamma0 * u * u) * (1.0 - u)); };
  const double h = f / intervals;
  double s = integrand(0.0) + integrand(f);
  for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0 : 2.0) * integrand(i * h);
  return s * h / 3.0;
}

/// Eigenvalues of a symmetric 2x2 matrix, descending, from the
/// characteristic polynomial.
inline std::pair<double, double> eig2(double a, double b, double d) {
  const double tr = a + d, det = a * d - b * b;
  const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
  return {tr / 2.0 + disc, tr / 2.0 - disc};
}

/// Pearson correlation of two equal-length vectors, computed directly.
inline double pearson(const Vector& a, const Vector& b) {
  const double ma = a.mean(), mb = b.mean();
  double sab = 0, saa = 0, sbb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// Spearman rank correlation (no ties expected).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    Vector r(static_cast<Eigen::Index>(v.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) r(static_cast<Eigen::Index>(idx[k])) = static_cast<double>(k);
    return r;
  };
  return pearson(ranks(a), ranks(b));
}

}  // namespace oracle
