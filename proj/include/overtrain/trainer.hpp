#pragma once

// Full-batch gradient descent on the odor task with per-epoch logging,
// hidden-layer snapshots and the CE / hinge ablation pair.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "overtrain/nets.hpp"
#include "overtrain/odortask.hpp"
#include "overtrain/popanalysis.hpp"
#include "overtrain/svm.hpp"

namespace overtrain {

inline constexpr double kDivergenceLoss = 1e6;

/// Which class a probe is scored against. Probes are held-out odors that
/// should be rejected like nontargets; the alternative counts a probe as
/// correct when the network calls it the target.
enum class ProbeScoring { as_nontarget, as_target };

struct TrainConfig {
  int epochs = 10000;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
  LossSpec loss{};
  std::vector<int> snapshot_epochs;
  int eval_every = 1;
  double target_upweight = 200.0;
  double weight_decay = 0.0;
  ProbeScoring probe_scoring = ProbeScoring::as_nontarget;
  // Also snapshot at the first epoch with train accuracy 1 and the first
  // epoch with zero train loss.
  bool auto_snapshots = true;
  // Epochs at which margin and Fisher columns are filled (besides snapshots).
  std::vector<int> analysis_epochs;
};

inline void validate(const TrainConfig& c) {
  require(c.epochs >= 0, ErrorKind::invalid_parameter, "epochs must be >= 0");
  require(c.learning_rate >= 0 && std::isfinite(c.learning_rate), ErrorKind::invalid_parameter,
          "learning rate must be finite and >= 0");
  require(c.eval_every >= 1, ErrorKind::invalid_parameter, "eval_every must be >= 1");
  require(c.target_upweight > 0, ErrorKind::invalid_parameter, "target_upweight must be > 0");
  require(c.weight_decay >= 0, ErrorKind::invalid_parameter, "weight_decay must be >= 0");
  require(c.loss.C > 0, ErrorKind::invalid_parameter, "hinge margin C must be > 0");
  require(std::is_sorted(c.snapshot_epochs.begin(), c.snapshot_epochs.end()), ErrorKind::invalid_parameter,
          "snapshot_epochs must be sorted");
  for (int e : c.snapshot_epochs)
    require(e >= 0 && e <= c.epochs, ErrorKind::invalid_parameter,
            "snapshot epoch " + std::to_string(e) + " outside [0, epochs]");
}

struct LogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double probe_loss = 0.0;
  std::map<int, double> probe_accuracy;
  std::optional<double> margin;
  std::map<int, double> fisher;
};

struct TrainLog {
  std::vector<LogRow> rows;
  std::optional<int> convergence_epoch;  // first epoch with train accuracy 1
  std::optional<int> zero_loss_epoch;    // first epoch with train loss exactly 0

  const LogRow* at_epoch(int epoch) const {
    for (const auto& r : rows)
      if (r.epoch == epoch) return &r;
    return nullptr;
  }
};

struct RepresentationSnapshot {
  int epoch = 0;
  Matrix activations;  // examples x hidden units
  std::vector<std::string> labels;

  PopulationMatrix population() const { return PopulationMatrix::raw(activations, labels); }
  /// Rows of the training set only (target and nontargets).
  PopulationMatrix train_population() const { return population().subset({kTarget, kNontarget}); }
};

// ---------------------------------------------------------------------------
// Model adapters
// ---------------------------------------------------------------------------

template <class Params>
struct ModelOps;

template <>
struct ModelOps<MlpParams> {
  static Vector logits(const MlpParams& p, const Matrix& X) { return mlp_forward_batch(p, X).logits; }
  static Matrix hidden(const MlpParams& p, const Matrix& X) { return mlp_forward_batch(p, X).hidden; }

  /// Logits and gradient of sum_i dloss_i * logit_i for the given dloss.
  template <class LossGrad>
  static std::pair<Vector, MlpParams> step(const MlpParams& p, const Matrix& X, Rng&, LossGrad&& dloss) {
    MlpPass pass = mlp_forward_batch(p, X);
    const Vector d = dloss(pass.logits);
    return {pass.logits, mlp_gradient(p, X, pass, d)};
  }
};

template <>
struct ModelOps<BioNetParams> {
  static Vector logits(const BioNetParams& p, const Matrix& X) {
    return bio_forward_batch(p, X, {Mode::eval}).logits;
  }
  static Matrix hidden(const BioNetParams& p, const Matrix& X) {
    return bio_forward_batch(p, X, {Mode::eval}).a3;
  }

  template <class LossGrad>
  static std::pair<Vector, BioNetParams> step(const BioNetParams& p, const Matrix& X, Rng& rng,
                                              LossGrad&& dloss) {
    BioPass pass = bio_forward_batch(p, X, {Mode::train}, &rng);
    const Vector d = dloss(pass.logits);
    return {pass.logits, bio_gradient(p, X, pass, d)};
  }
};

// ---------------------------------------------------------------------------
// Evaluation helpers
// ---------------------------------------------------------------------------

inline double probe_label_sign(ProbeScoring s) { return s == ProbeScoring::as_nontarget ? -1.0 : 1.0; }

inline bool correct(double output, double signed_label) { return predicts_target(output) == (signed_label > 0); }

/// Accuracy per overlap level; empty levels are omitted.
template <class Params>
std::map<int, double> evaluate_probes(const Params& p, const EmbeddedTask& task,
                                      ProbeScoring scoring = ProbeScoring::as_nontarget) {
  std::map<int, double> out;
  const double y = probe_label_sign(scoring);
  for (const auto& [j, X] : task.probe_inputs) {
    if (X.rows() == 0) continue;
    const Vector f = ModelOps<Params>::logits(p, X);
    int hits = 0;
    for (Eigen::Index i = 0; i < f.size(); ++i) hits += correct(f(i), y) ? 1 : 0;
    out[j] = static_cast<double>(hits) / static_cast<double>(f.size());
  }
  return out;
}

/// Per-example weights summing to 1: the target rows carry `upweight` times
/// the weight of a nontarget row.
inline Vector example_weights(const Vector& labels, double upweight) {
  Vector w = labels.unaryExpr([&](double y) { return y > 0 ? upweight : 1.0; });
  return w / w.sum();
}

/// Hidden activations of train and probe inputs with class tags.
template <class Params>
RepresentationSnapshot take_snapshot(const Params& p, const EmbeddedTask& task, int epoch) {
  RepresentationSnapshot s;
  s.epoch = epoch;
  Eigen::Index rows = task.train_count() + task.probe_count();
  Matrix all(rows, task.train_inputs.cols());
  all.topRows(task.train_count()) = task.train_inputs;
  Eigen::Index r = task.train_count();
  for (Eigen::Index i = 0; i < task.train_count(); ++i) s.labels.push_back(task.labels(i) > 0 ? kTarget : kNontarget);
  for (const auto& [j, X] : task.probe_inputs) {
    all.middleRows(r, X.rows()) = X;
    r += X.rows();
    for (Eigen::Index i = 0; i < X.rows(); ++i) s.labels.push_back(probe_label(j));
  }
  s.activations = ModelOps<Params>::hidden(p, all);
  return s;
}

/// Max-margin of the train rows and Fisher J between target and each probe
/// level on a snapshot.
inline void analyze_snapshot(const RepresentationSnapshot& s, const std::vector<int>& levels, LogRow& row) {
  const PopulationMatrix pop = s.population();
  try {
    row.margin = svm_fit(pop).margin;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::singularity && e.kind() != ErrorKind::convergence) throw;
  }
  for (int j : levels) {
    FisherOptions fo;
    fo.class_a = kTarget;
    fo.class_b = probe_label(j);
    fo.min_class_trials = 1;
    try {
      row.fisher[j] = fisher_discriminant(pop, fo).J;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::singularity) throw;
    }
  }
}

template <class Params>
struct TrainResult {
  Params model;
  TrainLog log;
  std::vector<RepresentationSnapshot> snapshots;
};

/// Full-batch GD: theta <- theta - lr * (weighted mean gradient + wd * theta).
/// Probes are evaluated but never enter the gradient.
template <class Params>
TrainResult<Params> train(Params model, const EmbeddedTask& task, const TrainConfig& cfg) {
  validate(cfg);
  require(task.train_count() >= 1, ErrorKind::invalid_parameter, "empty training set");
  using Ops = ModelOps<Params>;
  const Matrix& X = task.train_inputs;
  const Vector& y = task.labels;
  const Vector weights = example_weights(y, cfg.target_upweight);
  const double probe_y = probe_label_sign(cfg.probe_scoring);
  std::vector<int> levels;
  for (const auto& [j, P] : task.probe_inputs)
    if (P.rows() > 0) levels.push_back(j);

  TrainResult<Params> out;
  const Rng root(cfg.seed);
  auto wants = [](const std::vector<int>& v, int e) { return std::binary_search(v.begin(), v.end(), e); };
  std::vector<int> analysis = cfg.analysis_epochs;
  std::sort(analysis.begin(), analysis.end());

  for (int epoch = 0; epoch <= cfg.epochs; ++epoch) {
    Rng rng = root.split(static_cast<std::uint64_t>(epoch));
    double loss = 0.0;
    auto dloss = [&](const Vector& f) {
      Vector d(f.size());
      loss = 0.0;
      for (Eigen::Index i = 0; i < f.size(); ++i) {
        const LossValue lv = signed_loss(cfg.loss, f(i), y(i));
        loss += weights(i) * lv.loss;
        d(i) = weights(i) * lv.grad;
      }
      return d;
    };
    auto [train_logits, grad] = Ops::step(model, X, rng, dloss);
    if (!std::isfinite(loss) || loss > kDivergenceLoss)
      throw Error(ErrorKind::divergence, "training diverged at epoch " + std::to_string(epoch) +
                                             " (train loss " + format_double(loss) + ")");

    // Eval-mode quantities (identical to the step's logits for the MLP).
    const Vector f_eval = std::is_same_v<Params, MlpParams> ? train_logits : Ops::logits(model, X);
    int hits = 0;
    for (Eigen::Index i = 0; i < f_eval.size(); ++i) hits += correct(f_eval(i), y(i)) ? 1 : 0;
    const double acc = static_cast<double>(hits) / static_cast<double>(f_eval.size());

    bool snap = wants(cfg.snapshot_epochs, epoch);
    if (acc == 1.0 && !out.log.convergence_epoch) {
      out.log.convergence_epoch = epoch;
      snap = snap || cfg.auto_snapshots;
    }
    if (loss == 0.0 && !out.log.zero_loss_epoch) {
      out.log.zero_loss_epoch = epoch;
      snap = snap || cfg.auto_snapshots;
    }

    const bool log_now = epoch % cfg.eval_every == 0 || epoch == cfg.epochs || snap || wants(analysis, epoch);
    if (log_now) {
      LogRow row;
      row.epoch = epoch;
      row.train_loss = loss;
      row.train_accuracy = acc;
      double ploss = 0.0;
      Eigen::Index pcount = 0;
      for (const auto& [j, P] : task.probe_inputs) {
        if (P.rows() == 0) continue;
        const Vector f = Ops::logits(model, P);
        int ph = 0;
        for (Eigen::Index i = 0; i < f.size(); ++i) {
          ploss += signed_loss(cfg.loss, f(i), probe_y).loss;
          ph += correct(f(i), probe_y) ? 1 : 0;
        }
        pcount += f.size();
        row.probe_accuracy[j] = static_cast<double>(ph) / static_cast<double>(f.size());
      }
      row.probe_loss = pcount > 0 ? ploss / static_cast<double>(pcount) : 0.0;
      if (snap || wants(analysis, epoch)) {
        RepresentationSnapshot s = take_snapshot(model, task, epoch);
        analyze_snapshot(s, levels, row);
        if (snap) out.snapshots.push_back(std::move(s));
      }
      out.log.rows.push_back(std::move(row));
    }

    if (epoch == cfg.epochs) break;
    if (cfg.weight_decay > 0) grad.axpy(cfg.weight_decay, model);
    model.axpy(-cfg.learning_rate, grad);
    if (!model.finite())
      throw Error(ErrorKind::divergence, "non-finite parameters after epoch " + std::to_string(epoch));
  }
  out.model = std::move(model);
  return out;
}

template <class Params>
struct AblationPair {
  TrainResult<Params> ce;
  TrainResult<Params> hinge;
};

/// Same initialization and data, cross-entropy vs hinge objective.
template <class Params>
AblationPair<Params> ablate_hinge(const Params& init, const EmbeddedTask& task, const TrainConfig& config_ce,
                                  const TrainConfig& config_hinge) {
  require(config_ce.loss.kind == LossKind::cross_entropy && config_hinge.loss.kind == LossKind::hinge,
          ErrorKind::invalid_parameter, "ablation needs a cross-entropy and a hinge config");
  TrainConfig a = config_ce, b = config_hinge;
  a.loss = b.loss;
  require(a.epochs == b.epochs && a.learning_rate == b.learning_rate && a.seed == b.seed &&
              a.snapshot_epochs == b.snapshot_epochs && a.target_upweight == b.target_upweight &&
              a.weight_decay == b.weight_decay,
          ErrorKind::invalid_parameter, "ablation configs must differ only in the loss");
  return {train(init, task, config_ce), train(init, task, config_hinge)};
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string csv_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

inline void write_trainlog_csv(const TrainLog& log, const std::vector<int>& levels, std::ostream& out) {
  out << "epoch,train_loss,train_acc,probe_loss";
  for (int j : levels) out << ",probe_acc_j" << j;
  out << ",margin";
  for (int j : levels) out << ",fisher_j" << j;
  out << '\n';
  for (const auto& r : log.rows) {
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_accuracy) << ','
        << format_double(r.probe_loss);
    for (int j : levels) {
      auto it = r.probe_accuracy.find(j);
      out << ',' << (it == r.probe_accuracy.end() ? std::string() : format_double(it->second));
    }
    out << ',' << csv_cell(r.margin);
    for (int j : levels) {
      auto it = r.fisher.find(j);
      out << ',' << (it == r.fisher.end() ? std::string() : format_double(it->second));
    }
    out << '\n';
  }
}

inline void write_labels_csv(const RepresentationSnapshot& s, std::ostream& out) {
  out << "row,label\n";
  for (std::size_t i = 0; i < s.labels.size(); ++i) out << i << ',' << s.labels[i] << '\n';
}

/// Epoch at which the accuracy of level j first reaches `threshold`.
inline std::optional<int> first_epoch_reaching(const TrainLog& log, int j, double threshold = 0.9) {
  for (const auto& r : log.rows) {
    auto it = r.probe_accuracy.find(j);
    if (it != r.probe_accuracy.end() && it->second >= threshold) return r.epoch;
  }
  return std::nullopt;
}

}  // namespace overtrain
