#pragma once

// Linear max-margin classifier and the margin statistics built on it.
//
// The soft-margin dual
//   min_a  1/2 a'Qa - 1'a   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j x_i.x_j
// is solved by SMO with second-order working-set selection. With C above the
// largest dual variable of a separable problem the solution is the hard-margin
// SVM and margin = 1 / |w|.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "overtrain/popanalysis.hpp"

namespace overtrain {

struct SvmOptions {
  std::string positive = kTarget;
  std::string negative = kNontarget;
  double penalty = 1e4;        // C of the soft-margin relaxation
  double tolerance = 1e-6;     // maximal KKT violation at exit
  long max_iterations = 0;     // 0: 10^6 + 1000 * trials
};

struct MarginReport {
  Vector w;
  double b = 0.0;
  double margin = 0.0;                 // 1 / |w|
  std::vector<double> distances;       // signed y_i (w.x_i + b) / |w|, ascending
  double mean_closest_1pct = 0.0;
  double mean_closest_5pct = 0.0;
  long iterations = 0;
  double kkt_gap = 0.0;
};

/// Signed distances y_i (w.x_i + b) / |w| in trial order.
inline std::vector<double> signed_distances(const Vector& w, double b, const Matrix& X, const Vector& y) {
  const double norm = w.norm();
  std::vector<double> d(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    d[static_cast<std::size_t>(i)] = y(i) * (X.row(i).dot(w) + b) / norm;
  return d;
}

/// Mean of the ceil(p% * n) smallest distances; ties broken by trial index.
inline double mean_closest(const std::vector<double>& distances, double percent) {
  require(!distances.empty(), ErrorKind::invalid_parameter, "no distances");
  require(percent > 0 && percent <= 100, ErrorKind::invalid_parameter, "percent must lie in (0, 100]");
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  const auto count = static_cast<std::size_t>(
      std::ceil(percent / 100.0 * static_cast<double>(distances.size()) - 1e-9));
  const std::size_t take = std::clamp<std::size_t>(count, 1, distances.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < take; ++i) sum += distances[order[i]];
  return sum / static_cast<double>(take);
}

namespace detail {

struct SvmProblem {
  Matrix X;
  Vector y;
};

inline SvmProblem svm_problem(const PopulationMatrix& pop, const SvmOptions& opts) {
  SvmProblem p;
  std::vector<Eigen::Index> rows;
  std::vector<double> ys;
  for (std::size_t i = 0; i < pop.labels.size(); ++i) {
    if (pop.labels[i] == opts.positive) {
      rows.push_back(static_cast<Eigen::Index>(i));
      ys.push_back(1.0);
    } else if (pop.labels[i] == opts.negative) {
      rows.push_back(static_cast<Eigen::Index>(i));
      ys.push_back(-1.0);
    }
  }
  p.X = pop.select(rows);
  p.y = Eigen::Map<Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  return p;
}

}  // namespace detail

/// Linear SVM on raw inputs with labels +1 / -1.
inline MarginReport svm_fit(const Matrix& X, const Vector& y, const SvmOptions& opts = {}) {
  const Eigen::Index n = X.rows();
  require(y.size() == n, ErrorKind::invalid_parameter, "label count does not match trial count");
  require((y.array() > 0).any() && (y.array() < 0).any(), ErrorKind::class_size,
          "svm_fit needs at least one trial per class");
  require(opts.penalty > 0 && opts.tolerance > 0, ErrorKind::invalid_parameter,
          "svm penalty and tolerance must be positive");
  const double C = opts.penalty;
  constexpr double kTau = 1e-12;

  const Matrix K = X * X.transpose();
  Vector alpha = Vector::Zero(n);
  Vector G = Vector::Constant(n, -1.0);  // gradient Q alpha - 1

  auto in_up = [&](Eigen::Index t) { return (y(t) > 0 && alpha(t) < C) || (y(t) < 0 && alpha(t) > 0); };
  auto in_low = [&](Eigen::Index t) { return (y(t) > 0 && alpha(t) > 0) || (y(t) < 0 && alpha(t) < C); };

  const long cap = opts.max_iterations > 0 ? opts.max_iterations : 1'000'000L + 1000L * static_cast<long>(n);
  long iter = 0;
  double gap = std::numeric_limits<double>::infinity();
  for (; iter < cap; ++iter) {
    // Maximal violating index i, then second-order choice of j.
    Eigen::Index i = -1;
    double gmax = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t)
      if (in_up(t) && -y(t) * G(t) > gmax) {
        gmax = -y(t) * G(t);
        i = t;
      }
    double gmin = std::numeric_limits<double>::infinity();
    Eigen::Index j = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      const double v = -y(t) * G(t);
      gmin = std::min(gmin, v);
      if (i < 0) continue;
      const double bdiff = gmax - v;
      if (bdiff > 0) {
        double quad = K(i, i) + K(t, t) - 2.0 * K(i, t);
        if (quad <= 0) quad = kTau;
        const double obj = -bdiff * bdiff / quad;
        if (obj < best) {
          best = obj;
          j = t;
        }
      }
    }
    gap = gmax - gmin;
    if (i < 0 || j < 0 || gap < opts.tolerance) break;

    const double old_i = alpha(i), old_j = alpha(j);
    const double Qij = y(i) * y(j) * K(i, j);
    if (y(i) != y(j)) {
      double quad = K(i, i) + K(j, j) + 2.0 * Qij;
      if (quad <= 0) quad = kTau;
      const double delta = (-G(i) - G(j)) / quad;
      const double diff = alpha(i) - alpha(j);
      alpha(i) += delta;
      alpha(j) += delta;
      if (diff > 0) {
        if (alpha(j) < 0) { alpha(j) = 0; alpha(i) = diff; }
      } else if (alpha(i) < 0) {
        alpha(i) = 0;
        alpha(j) = -diff;
      }
      if (diff > 0) {
        if (alpha(i) > C) { alpha(i) = C; alpha(j) = C - diff; }
      } else if (alpha(j) > C) {
        alpha(j) = C;
        alpha(i) = C + diff;
      }
    } else {
      double quad = K(i, i) + K(j, j) - 2.0 * Qij;
      if (quad <= 0) quad = kTau;
      const double delta = (G(i) - G(j)) / quad;
      const double sum = alpha(i) + alpha(j);
      alpha(i) -= delta;
      alpha(j) += delta;
      if (sum > C) {
        if (alpha(i) > C) { alpha(i) = C; alpha(j) = sum - C; }
      } else if (alpha(j) < 0) {
        alpha(j) = 0;
        alpha(i) = sum;
      }
      if (sum > C) {
        if (alpha(j) > C) { alpha(j) = C; alpha(i) = sum - C; }
      } else if (alpha(i) < 0) {
        alpha(i) = 0;
        alpha(j) = sum;
      }
    }
    const double di = alpha(i) - old_i, dj = alpha(j) - old_j;
    G += (y(i) * di) * (y.array() * K.col(i).array()).matrix() +
         (y(j) * dj) * (y.array() * K.col(j).array()).matrix();
  }
  if (!(gap < opts.tolerance))
    throw Error(ErrorKind::convergence, "SMO did not converge in " + std::to_string(iter) +
                                            " iterations; final KKT gap " + format_double(gap));

  MarginReport r;
  r.iterations = iter;
  r.kkt_gap = gap;
  r.w = X.transpose() * (alpha.array() * y.array()).matrix();

  // Bias from free support vectors, else the midpoint of the feasible range.
  double sum_free = 0.0;
  int free = 0;
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = y(t) * G(t);
    if (alpha(t) > 0 && alpha(t) < C) {
      sum_free += yg;
      ++free;
    } else if ((alpha(t) >= C && y(t) < 0) || (alpha(t) <= 0 && y(t) > 0)) {
      ub = std::min(ub, yg);
    } else {
      lb = std::max(lb, yg);
    }
  }
  const double rho = free > 0 ? sum_free / free : (ub + lb) / 2.0;
  r.b = -rho;

  const double norm = r.w.norm();
  require(norm > 0, ErrorKind::singularity, "SVM weight vector vanished (classes indistinguishable)");
  r.margin = 1.0 / norm;
  std::vector<double> d = signed_distances(r.w, r.b, X, y);
  r.mean_closest_1pct = mean_closest(d, 1.0);
  r.mean_closest_5pct = mean_closest(d, 5.0);
  std::sort(d.begin(), d.end());
  r.distances = std::move(d);
  return r;
}

inline MarginReport svm_fit(const PopulationMatrix& pop, const SvmOptions& opts = {}) {
  auto prob = detail::svm_problem(pop, opts);
  return svm_fit(prob.X, prob.y, opts);
}

/// Mean distance of the closest p% of trials for each requested p.
inline std::map<double, double> margin_percentiles(const MarginReport& report, const PopulationMatrix& pop,
                                                   const std::vector<double>& percents = {1.0, 5.0},
                                                   const SvmOptions& opts = {}) {
  auto prob = detail::svm_problem(pop, opts);
  const auto d = signed_distances(report.w, report.b, prob.X, prob.y);
  std::map<double, double> out;
  for (double p : percents) out[p] = mean_closest(d, p);
  return out;
}

struct MarginSeries {
  std::vector<MarginReport> reports;
  std::vector<double> normalized;  // margin / first margin
};

/// Independent max-margin fit per snapshot; the series is normalized by its
/// first value.
inline MarginSeries margin_track(const std::vector<PopulationMatrix>& snapshots, const SvmOptions& opts = {}) {
  require(!snapshots.empty(), ErrorKind::invalid_parameter, "margin_track needs at least one snapshot");
  MarginSeries s;
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    require(snapshots[i].unit_count() == snapshots.front().unit_count() &&
                snapshots[i].labels == snapshots.front().labels,
            ErrorKind::invalid_parameter, "snapshots must share units and labels");
    try {
      s.reports.push_back(svm_fit(snapshots[i], opts));
    } catch (const Error& e) {
      throw Error(e.kind(), "snapshot " + std::to_string(i) + ": " + e.what());
    }
  }
  for (const auto& r : s.reports) s.normalized.push_back(r.margin / s.reports.front().margin);
  return s;
}

}  // namespace overtrain
