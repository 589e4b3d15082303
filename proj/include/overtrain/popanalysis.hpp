#pragma once

// Statistics over a trials x units matrix: z-scoring, representational
// similarity, PCA, LDA decoding with stratified k-fold cross-validation,
// the two-class Fisher discriminant, and the mean-matched random baseline.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "overtrain/core.hpp"

namespace overtrain {

inline const std::string kTarget = "target";
inline const std::string kNontarget = "nontarget";

inline std::string probe_label(int level) { return "probe_" + std::to_string(level); }

struct PopulationMatrix {
  Matrix X;                         // trials x units
  std::vector<std::string> labels;  // one tag per trial
  bool zscored = false;
  std::vector<int> units;           // original column index of each kept unit
  std::vector<int> dropped_units;   // constant columns removed by zscore

  Eigen::Index trials() const { return X.rows(); }
  Eigen::Index unit_count() const { return X.cols(); }

  static PopulationMatrix raw(Matrix X, std::vector<std::string> labels) {
    require(static_cast<Eigen::Index>(labels.size()) == X.rows(), ErrorKind::invalid_parameter,
            "label count does not match trial count");
    PopulationMatrix p;
    p.units.resize(static_cast<std::size_t>(X.cols()));
    std::iota(p.units.begin(), p.units.end(), 0);
    p.X = std::move(X);
    p.labels = std::move(labels);
    return p;
  }

  std::vector<Eigen::Index> rows_of(const std::string& label) const {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) rows.push_back(static_cast<Eigen::Index>(i));
    return rows;
  }

  Matrix select(const std::vector<Eigen::Index>& rows) const {
    Matrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
    return out;
  }

  /// Rows whose labels are in `keep`, in original order.
  PopulationMatrix subset(const std::vector<std::string>& keep) const {
    PopulationMatrix p;
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (std::find(keep.begin(), keep.end(), labels[i]) != keep.end()) {
        rows.push_back(static_cast<Eigen::Index>(i));
        p.labels.push_back(labels[i]);
      }
    p.X = select(rows);
    p.zscored = zscored;
    p.units = units;
    p.dropped_units = dropped_units;
    return p;
  }
};

// ---------------------------------------------------------------------------
// z-scoring
// ---------------------------------------------------------------------------

/// Per-unit standardization across trials (population sd). Constant columns
/// are dropped and listed in `dropped_units`.
inline PopulationMatrix zscore(const Matrix& X, std::vector<std::string> labels) {
  require(X.rows() >= 2, ErrorKind::invalid_parameter, "zscore needs at least 2 trials");
  require(static_cast<Eigen::Index>(labels.size()) == X.rows(), ErrorKind::invalid_parameter,
          "label count does not match trial count");
  const double n = static_cast<double>(X.rows());
  PopulationMatrix p;
  p.labels = std::move(labels);
  p.zscored = true;
  std::vector<Eigen::Index> keep;
  std::vector<double> means, sds;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double mean = X.col(j).sum() / n;
    const double sd = std::sqrt((X.col(j).array() - mean).square().sum() / n);
    if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
      p.dropped_units.push_back(static_cast<int>(j));
      continue;
    }
    keep.push_back(j);
    means.push_back(mean);
    sds.push_back(sd);
  }
  if (keep.empty()) throw Error(ErrorKind::empty_matrix, "every unit column is constant");
  p.X.resize(X.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    p.X.col(static_cast<Eigen::Index>(c)) = (X.col(keep[c]).array() - means[c]) / sds[c];
    p.units.push_back(static_cast<int>(keep[c]));
  }
  return p;
}

inline PopulationMatrix zscore(const PopulationMatrix& pop) {
  PopulationMatrix z = zscore(pop.X, pop.labels);
  // Map back to the caller's unit ids.
  if (!pop.units.empty()) {
    for (int& u : z.units) u = pop.units[static_cast<std::size_t>(u)];
    for (int& u : z.dropped_units) u = pop.units[static_cast<std::size_t>(u)];
    z.dropped_units.insert(z.dropped_units.begin(), pop.dropped_units.begin(), pop.dropped_units.end());
  }
  return z;
}

// ---------------------------------------------------------------------------
// Representational similarity
// ---------------------------------------------------------------------------

/// Rows centered and scaled to unit length; zero-variance rows map to zero.
inline Matrix normalized_rows(const Matrix& X) {
  Matrix Z = X.colwise() - X.rowwise().mean();
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double norm = Z.row(i).norm();
    if (norm > 0) Z.row(i) /= norm;
  }
  return Z;
}

/// Pearson correlation between every pair of rows; diagonal fixed to 1.
inline Matrix row_correlations(const Matrix& X) {
  const Matrix Z = normalized_rows(X);
  Matrix R = Z * Z.transpose();
  R = (R + R.transpose()) / 2.0;
  R.diagonal().setOnes();
  return R;
}

struct SimilaritySummary {
  double mean_within_a = 0.0;  // NaN when class a has a single trial
  double mean_within_b = 0.0;
  double mean_cross = 0.0;
  std::optional<Matrix> correlations;  // rows ordered as in the input
};

struct RsaOptions {
  std::string class_a = kTarget;
  std::string class_b = kNontarget;
  // Classes with fewer trials raise a class-size error. Lowering this to 1
  // reports NaN within-class means for singleton classes.
  int min_class_trials = 2;
  bool keep_matrix = false;
};

namespace detail {
// Mean over i < j of z_i . z_j for normalized rows.
inline double mean_offdiag(const Matrix& Z) {
  const double n = static_cast<double>(Z.rows());
  if (Z.rows() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double total = Z.colwise().sum().squaredNorm();
  const double diag = Z.rowwise().squaredNorm().sum();
  return (total - diag) / (n * (n - 1));
}
}  // namespace detail

/// Cross-class mean correlation only; used for null draws.
inline double mean_cross_correlation(const Matrix& A, const Matrix& B) {
  const Matrix Za = normalized_rows(A);
  const Matrix Zb = normalized_rows(B);
  return Za.colwise().sum().dot(Zb.colwise().sum()) /
         (static_cast<double>(A.rows()) * static_cast<double>(B.rows()));
}

inline SimilaritySummary rsa(const PopulationMatrix& pop, const RsaOptions& opts = {}) {
  const auto rows_a = pop.rows_of(opts.class_a);
  const auto rows_b = pop.rows_of(opts.class_b);
  const int min_trials = std::max(1, opts.min_class_trials);
  for (const auto& [name, rows] : {std::pair{opts.class_a, rows_a}, std::pair{opts.class_b, rows_b}})
    require(static_cast<int>(rows.size()) >= min_trials, ErrorKind::class_size,
            "class '" + name + "' has " + std::to_string(rows.size()) + " trials, need " +
                std::to_string(min_trials));
  const Matrix Za = normalized_rows(pop.select(rows_a));
  const Matrix Zb = normalized_rows(pop.select(rows_b));
  SimilaritySummary s;
  s.mean_within_a = detail::mean_offdiag(Za);
  s.mean_within_b = detail::mean_offdiag(Zb);
  s.mean_cross = Za.colwise().sum().dot(Zb.colwise().sum()) /
                 (static_cast<double>(Za.rows()) * static_cast<double>(Zb.rows()));
  if (opts.keep_matrix) s.correlations = row_correlations(pop.X);
  return s;
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaResult {
  Matrix scores;             // trials x dims
  Matrix components;         // units x dims, unit length
  Vector eigenvalues;        // covariance eigenvalues (population convention), dims
  Vector explained;          // fractions of total variance, dims
  bool reduced_rank = false; // fewer than dims nonzero components; rest zero-filled
};

inline PcaResult pca_project(const Matrix& X, int dims = 2) {
  require(dims >= 1, ErrorKind::invalid_parameter, "PCA dims must be >= 1");
  require(X.rows() > dims, ErrorKind::invalid_parameter, "PCA needs more trials than dims");
  const Matrix centered = X.rowwise() - X.colwise().mean();
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();
  const double n = static_cast<double>(X.rows());
  const double total = s.squaredNorm();
  const double tol = s.size() > 0 ? s(0) * 1e-12 * static_cast<double>(std::max(X.rows(), X.cols())) : 0.0;

  PcaResult r;
  r.scores = Matrix::Zero(X.rows(), dims);
  r.components = Matrix::Zero(X.cols(), dims);
  r.eigenvalues = Vector::Zero(dims);
  r.explained = Vector::Zero(dims);
  for (int d = 0; d < dims; ++d) {
    if (d >= s.size() || s(d) <= tol || total <= 0) {
      r.reduced_rank = true;
      continue;
    }
    Vector comp = svd.matrixV().col(d);
    Eigen::Index arg = 0;
    comp.cwiseAbs().maxCoeff(&arg);
    if (comp(arg) < 0) comp = -comp;
    r.components.col(d) = comp;
    r.scores.col(d) = centered * comp;
    r.eigenvalues(d) = s(d) * s(d) / n;
    r.explained(d) = s(d) * s(d) / total;
  }
  return r;
}

inline PcaResult pca_project(const PopulationMatrix& pop, int dims = 2) { return pca_project(pop.X, dims); }

// ---------------------------------------------------------------------------
// Covariance shrinkage
// ---------------------------------------------------------------------------

struct ShrinkageOptions {
  double alpha = 0.1;
  // Shrink only when trials < trials_per_unit * units.
  double trials_per_unit = 5.0;
};

inline Matrix shrink_covariance(const Matrix& S, Eigen::Index trials, const ShrinkageOptions& opts) {
  const auto units = S.rows();
  if (static_cast<double>(trials) >= opts.trials_per_unit * static_cast<double>(units)) return S;
  const double scale = S.trace() / static_cast<double>(units);
  Matrix out = (1.0 - opts.alpha) * S;
  out.diagonal().array() += opts.alpha * scale;
  return out;
}

namespace detail {
inline Eigen::LLT<Matrix> checked_cholesky(const Matrix& S, const std::string& what) {
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-13))
    throw Error(ErrorKind::singularity, what + " is singular even after shrinkage");
  return llt;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Linear discriminant analysis
// ---------------------------------------------------------------------------

/// Gaussian equal-covariance classifier:
///   delta_k(x) = x' S^-1 m_k - m_k' S^-1 m_k / 2 + log pi_k
class LdaModel {
 public:
  LdaModel(std::vector<std::string> classes, Matrix means, Matrix covariance, Vector log_priors)
      : classes_(std::move(classes)),
        means_(std::move(means)),
        cov_(std::move(covariance)),
        log_priors_(std::move(log_priors)),
        llt_(detail::checked_cholesky(cov_, "pooled covariance")) {
    solved_means_ = llt_.solve(means_.transpose());  // units x K
    offsets_.resize(static_cast<Eigen::Index>(classes_.size()));
    for (Eigen::Index k = 0; k < offsets_.size(); ++k)
      offsets_(k) = -0.5 * means_.row(k).dot(solved_means_.col(k)) + log_priors_(k);
  }

  const std::vector<std::string>& classes() const { return classes_; }
  const Matrix& means() const { return means_; }
  const Matrix& covariance() const { return cov_; }
  const Vector& log_priors() const { return log_priors_; }

  /// One row of discriminant values per row of X.
  Matrix discriminants(const Matrix& X) const {
    Matrix d = X * solved_means_;
    d.rowwise() += offsets_.transpose();
    return d;
  }

  /// Softmax of the discriminants.
  Matrix posteriors(const Matrix& X) const {
    Matrix d = discriminants(X);
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      const double mx = d.row(i).maxCoeff();
      d.row(i) = (d.row(i).array() - mx).exp();
      d.row(i) /= d.row(i).sum();
    }
    return d;
  }

  std::vector<std::string> predict(const Matrix& X) const {
    const Matrix d = discriminants(X);
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(d.rows()));
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      Eigen::Index arg = 0;
      d.row(i).maxCoeff(&arg);
      out.push_back(classes_[static_cast<std::size_t>(arg)]);
    }
    return out;
  }

  Eigen::Index class_index(const std::string& label) const {
    auto it = std::find(classes_.begin(), classes_.end(), label);
    require(it != classes_.end(), ErrorKind::invalid_parameter, "unknown class '" + label + "'");
    return it - classes_.begin();
  }

 private:
  std::vector<std::string> classes_;
  Matrix means_;  // K x units
  Matrix cov_;
  Vector log_priors_;
  Eigen::LLT<Matrix> llt_;
  Matrix solved_means_;
  Vector offsets_;
};

/// Class means, pooled within-class covariance (divisor N - K) with shrinkage,
/// empirical priors. Classes are ordered by first appearance.
inline LdaModel lda_fit(const Matrix& X, const std::vector<std::string>& labels,
                        const ShrinkageOptions& shrink = {}) {
  require(static_cast<Eigen::Index>(labels.size()) == X.rows(), ErrorKind::invalid_parameter,
          "label count does not match trial count");
  std::vector<std::string> classes;
  for (const auto& l : labels)
    if (std::find(classes.begin(), classes.end(), l) == classes.end()) classes.push_back(l);
  const auto K = static_cast<Eigen::Index>(classes.size());
  require(K >= 2, ErrorKind::class_size, "LDA needs at least two classes");
  require(X.rows() > K, ErrorKind::class_size, "LDA needs more trials than classes");

  Matrix means = Matrix::Zero(K, X.cols());
  Vector counts = Vector::Zero(K);
  std::vector<Eigen::Index> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    idx[i] = std::find(classes.begin(), classes.end(), labels[i]) - classes.begin();
    means.row(idx[i]) += X.row(static_cast<Eigen::Index>(i));
    counts(idx[i]) += 1.0;
  }
  for (Eigen::Index k = 0; k < K; ++k) means.row(k) /= counts(k);
  Matrix centered = X;
  for (std::size_t i = 0; i < labels.size(); ++i)
    centered.row(static_cast<Eigen::Index>(i)) -= means.row(idx[i]);
  Matrix cov = centered.transpose() * centered / static_cast<double>(X.rows() - K);
  cov = shrink_covariance(cov, X.rows(), shrink);
  Vector log_priors = (counts.array() / static_cast<double>(X.rows())).log();
  return LdaModel(std::move(classes), std::move(means), std::move(cov), std::move(log_priors));
}

// ---------------------------------------------------------------------------
// k-fold decoding
// ---------------------------------------------------------------------------

struct DecodeOptions {
  int folds = 10;
  int iterations = 20;
  std::string class_a = kTarget;
  std::string class_b = kNontarget;
  ShrinkageOptions shrink{};
};

struct DecodeResult {
  double mean_accuracy = 0.0;
  double standard_error = 0.0;
  std::vector<double> fold_accuracies;  // iteration-major, folds within
  std::vector<double> trial_posteriors; // posterior of the correct class, per trial
  double mean_posterior = 0.0;
  double posterior_standard_error = 0.0;
};

namespace detail {
inline std::pair<double, double> mean_and_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}
}  // namespace detail

/// Stratified k-fold LDA decoding, reshuffled every iteration. Each iteration
/// draws from its own child stream of `rng`.
inline DecodeResult kfold_decode(const PopulationMatrix& pop, const Rng& rng, const DecodeOptions& opts = {}) {
  require(opts.folds >= 2 && opts.iterations >= 1, ErrorKind::invalid_parameter,
          "kfold_decode needs folds >= 2 and iterations >= 1");
  const PopulationMatrix data = pop.subset({opts.class_a, opts.class_b});
  const std::vector<std::vector<Eigen::Index>> by_class = {data.rows_of(opts.class_a),
                                                           data.rows_of(opts.class_b)};
  for (std::size_t c = 0; c < 2; ++c)
    require(static_cast<int>(by_class[c].size()) >= opts.folds, ErrorKind::fold_infeasible,
            "class '" + (c == 0 ? opts.class_a : opts.class_b) + "' has " +
                std::to_string(by_class[c].size()) + " trials, fewer than " +
                std::to_string(opts.folds) + " folds");

  const auto n = static_cast<std::size_t>(data.trials());
  DecodeResult r;
  std::vector<double> posterior_sum(n, 0.0);
  std::vector<int> posterior_count(n, 0);
  for (int it = 0; it < opts.iterations; ++it) {
    Rng local = rng.split(static_cast<std::uint64_t>(it));
    std::vector<int> fold_of(n, 0);
    for (const auto& rows : by_class) {
      std::vector<Eigen::Index> shuffled = rows;
      std::shuffle(shuffled.begin(), shuffled.end(), local);
      for (std::size_t p = 0; p < shuffled.size(); ++p)
        fold_of[static_cast<std::size_t>(shuffled[p])] = static_cast<int>(p % static_cast<std::size_t>(opts.folds));
    }
    for (int f = 0; f < opts.folds; ++f) {
      std::vector<Eigen::Index> train_rows, test_rows;
      std::vector<std::string> train_labels;
      for (std::size_t i = 0; i < n; ++i) {
        if (fold_of[i] == f) {
          test_rows.push_back(static_cast<Eigen::Index>(i));
        } else {
          train_rows.push_back(static_cast<Eigen::Index>(i));
          train_labels.push_back(data.labels[i]);
        }
      }
      const LdaModel model = lda_fit(data.select(train_rows), train_labels, opts.shrink);
      const Matrix test = data.select(test_rows);
      const auto predicted = model.predict(test);
      const Matrix post = model.posteriors(test);
      int correct = 0;
      for (std::size_t t = 0; t < test_rows.size(); ++t) {
        const auto row = static_cast<std::size_t>(test_rows[t]);
        if (predicted[t] == data.labels[row]) ++correct;
        posterior_sum[row] += post(static_cast<Eigen::Index>(t), model.class_index(data.labels[row]));
        ++posterior_count[row];
      }
      r.fold_accuracies.push_back(static_cast<double>(correct) / static_cast<double>(test_rows.size()));
    }
  }
  std::tie(r.mean_accuracy, r.standard_error) = detail::mean_and_se(r.fold_accuracies);
  r.trial_posteriors.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.trial_posteriors[i] = posterior_sum[i] / posterior_count[i];
  std::tie(r.mean_posterior, r.posterior_standard_error) = detail::mean_and_se(r.trial_posteriors);
  return r;
}

// ---------------------------------------------------------------------------
// Fisher discriminant
// ---------------------------------------------------------------------------

struct FisherOptions {
  std::string class_a = kTarget;
  std::string class_b = kNontarget;
  int min_class_trials = 2;
  ShrinkageOptions shrink{};
};

struct FisherResult {
  Vector direction;  // unit length, points from class b toward class a
  double J = 0.0;
  Matrix within;   // S_w = cov_a + cov_b (after shrinkage)
  Matrix between;  // S_b = (m_a - m_b)(m_a - m_b)'
};

/// J(w) = w' S_b w / w' S_w w.
inline double fisher_criterion(const Vector& w, const Matrix& between, const Matrix& within) {
  return w.dot(between * w) / w.dot(within * w);
}

/// Two-class Fisher discriminant. Within-class scatter uses per-class
/// covariances, so J is the squared projected mean gap over the summed
/// projected variances.
inline FisherResult fisher_discriminant(const PopulationMatrix& pop, const FisherOptions& opts = {}) {
  const auto rows_a = pop.rows_of(opts.class_a);
  const auto rows_b = pop.rows_of(opts.class_b);
  const int min_trials = std::max(1, opts.min_class_trials);
  require(static_cast<int>(rows_a.size()) >= min_trials && static_cast<int>(rows_b.size()) >= min_trials,
          ErrorKind::class_size,
          "Fisher discriminant needs >= " + std::to_string(min_trials) + " trials per class");
  const Matrix A = pop.select(rows_a);
  const Matrix B = pop.select(rows_b);
  const RowVector ma = A.colwise().mean();
  const RowVector mb = B.colwise().mean();
  const Matrix ca = A.rowwise() - ma;
  const Matrix cb = B.rowwise() - mb;
  Matrix within = ca.transpose() * ca / static_cast<double>(A.rows()) +
                  cb.transpose() * cb / static_cast<double>(B.rows());
  within = shrink_covariance(within, A.rows() + B.rows(), opts.shrink);
  const Vector diff = (ma - mb).transpose();

  FisherResult r;
  r.between = diff * diff.transpose();
  const auto llt = detail::checked_cholesky(within, "within-class scatter");
  Vector w = llt.solve(diff);
  const double norm = w.norm();
  if (norm > 0) w /= norm;
  r.direction = w;
  r.J = norm > 0 ? fisher_criterion(w, r.between, within) : 0.0;
  r.within = std::move(within);
  return r;
}

// ---------------------------------------------------------------------------
// Mean-matched random baseline
// ---------------------------------------------------------------------------

struct BaselineResult {
  std::vector<double> null_values;
  double null_mean = 0.0;
  double null_sd = 0.0;
  double observed = 0.0;
  double z = 0.0;  // (observed - null_mean) / null_sd
};

struct BaselineOptions {
  int draws = 500;
  std::string class_a = kTarget;
  std::string class_b = kNontarget;
};

/// Null distribution of the cross-class mean correlation over Gaussian
/// matrices whose column means match `pop` (unit variance). A z-scored `pop`
/// gets z-scored null matrices. Draw d uses child stream d of `rng`.
inline BaselineResult meanmatched_baseline(const PopulationMatrix& pop, const Rng& rng,
                                           const BaselineOptions& opts = {}) {
  require(opts.draws >= 2, ErrorKind::invalid_parameter, "baseline needs at least 2 draws");
  const auto rows_a = pop.rows_of(opts.class_a);
  const auto rows_b = pop.rows_of(opts.class_b);
  require(!rows_a.empty() && !rows_b.empty(), ErrorKind::class_size,
          "baseline needs trials of both classes");
  const Matrix A = pop.select(rows_a);
  const Matrix B = pop.select(rows_b);
  const RowVector col_means = pop.X.colwise().mean();

  BaselineResult r;
  r.observed = mean_cross_correlation(A, B);
  r.null_values.resize(static_cast<std::size_t>(opts.draws));
  for (int d = 0; d < opts.draws; ++d) {
    Rng local = rng.split(static_cast<std::uint64_t>(d));
    Matrix G = local.normal_matrix(pop.trials(), pop.unit_count());
    G.rowwise() += col_means;
    if (pop.zscored) {
      const RowVector mu = G.colwise().mean();
      G.rowwise() -= mu;
      const RowVector sd = (G.colwise().squaredNorm() / static_cast<double>(G.rows())).cwiseSqrt();
      for (Eigen::Index j = 0; j < G.cols(); ++j)
        if (sd(j) > 0) G.col(j) /= sd(j);
    }
    Matrix Ga(static_cast<Eigen::Index>(rows_a.size()), G.cols());
    Matrix Gb(static_cast<Eigen::Index>(rows_b.size()), G.cols());
    for (std::size_t i = 0; i < rows_a.size(); ++i) Ga.row(static_cast<Eigen::Index>(i)) = G.row(rows_a[i]);
    for (std::size_t i = 0; i < rows_b.size(); ++i) Gb.row(static_cast<Eigen::Index>(i)) = G.row(rows_b[i]);
    r.null_values[static_cast<std::size_t>(d)] = mean_cross_correlation(Ga, Gb);
  }
  const double n = static_cast<double>(opts.draws);
  r.null_mean = std::accumulate(r.null_values.begin(), r.null_values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : r.null_values) ss += (v - r.null_mean) * (v - r.null_mean);
  r.null_sd = std::sqrt(ss / (n - 1.0));
  r.z = r.null_sd > 0 ? (r.observed - r.null_mean) / r.null_sd : 0.0;
  return r;
}

}  // namespace overtrain
