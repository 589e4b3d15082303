#pragma once

// Experiment drivers behind the command-line tool. Each driver collects its
// artifacts in memory and writes them, together with a manifest of content
// hashes, only after every step has succeeded.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "overtrain/config.hpp"
#include "overtrain/ingest.hpp"
#include "overtrain/nets.hpp"
#include "overtrain/odortask.hpp"
#include "overtrain/popanalysis.hpp"
#include "overtrain/reversal.hpp"
#include "overtrain/svm.hpp"
#include "overtrain/trainer.hpp"

namespace overtrain {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitValidation = 3, kExitNumeric = 4, kExitExcluded = 5 };

inline int exit_code_for(const Error& e) { return e.is_numeric() ? kExitNumeric : kExitValidation; }

class Artifacts {
 public:
  std::ostringstream& open(const std::string& name) {
    order_.push_back(name);
    return files_[name];
  }
  void put(const std::string& name, const std::string& content) { open(name) << content; }
  void put_json(const std::string& name, const nlohmann::json& j) { put(name, j.dump(2) + "\n"); }

  std::vector<std::string> names() const { return order_; }
  std::string content(const std::string& name) const { return files_.at(name).str(); }

  /// Writes every artifact plus manifest.json into `dir`.
  void flush(const std::filesystem::path& dir, const std::string& command, std::uint64_t seed,
             const nlohmann::json& config_echo) const {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["command"] = command;
    manifest["seed"] = seed;
    manifest["config_hash"] = hex64(fnv1a64(config_echo.dump()));
    manifest["artifacts"] = nlohmann::json::object();
    for (const auto& name : order_) {
      const std::string bytes = files_.at(name).str();
      write_file(dir / name, bytes);
      manifest["artifacts"][name] = {{"fnv1a64", hex64(fnv1a64(bytes))}, {"bytes", bytes.size()}};
    }
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  static void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::validation, "cannot write " + path.string());
    out << bytes;
    require(static_cast<bool>(out), ErrorKind::validation, "write failed for " + path.string());
  }

  std::vector<std::string> order_;
  std::map<std::string, std::ostringstream> files_;
};

inline std::string fmt(double v) { return format_double(v); }

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthSetup {
  TaskDataset dataset;
  EmbeddedTask task;
  TrainConfig train;
};

/// Task, embedding and training config derived from one seed.
inline SynthSetup synth_setup(const ExperimentConfig& cfg) {
  const Rng root(cfg.train.seed);
  SynthSetup s;
  Rng task_rng = root.split(1);
  s.dataset = gen_task(cfg.task.k, cfg.task.n, cfg.task.m_nontargets, cfg.task.probes, task_rng);
  s.dataset.seed = cfg.train.seed;
  const ProjectionMap proj(cfg.task.d_embed, cfg.task.k, root.split(2).seed());
  s.task = embed_task(s.dataset, proj);
  s.train = cfg.train;
  if (s.train.snapshot_epochs.empty()) {
    const int step = std::max(1, s.train.epochs / 10);
    for (int e = 0; e <= s.train.epochs; e += step) s.train.snapshot_epochs.push_back(e);
    if (s.train.snapshot_epochs.back() != s.train.epochs) s.train.snapshot_epochs.push_back(s.train.epochs);
  }
  return s;
}

inline MlpParams init_mlp(const ExperimentConfig& cfg) {
  Rng rng = Rng(cfg.train.seed).split(3);
  return MlpParams::init(cfg.model.widths.at(0), cfg.task.d_embed, rng, cfg.model.init_scale);
}

inline BioNetParams init_bio(const ExperimentConfig& cfg) {
  Rng rng = Rng(cfg.train.seed).split(3);
  return BioNetParams::init(cfg.model.widths.at(0), cfg.model.widths.at(1), cfg.task.d_embed, rng,
                            cfg.model.init_scale, cfg.model.noise_std);
}

struct SynthOutcome {
  TrainLog log;
  std::vector<RepresentationSnapshot> snapshots;
  MarginSeries margins;
  BaselineResult baseline;
  std::vector<int> levels;
};

template <class Params>
SynthOutcome run_synth(const ExperimentConfig& cfg, const SynthSetup& setup, Params init, Artifacts& out) {
  TrainResult<Params> result = train(std::move(init), setup.task, setup.train);
  SynthOutcome o;
  o.log = std::move(result.log);
  o.snapshots = std::move(result.snapshots);
  for (const auto& [j, P] : setup.task.probe_inputs)
    if (P.rows() > 0) o.levels.push_back(j);
  require(!o.snapshots.empty(), ErrorKind::validation, "no snapshots were taken");

  write_trainlog_csv(o.log, o.levels, out.open("trainlog.csv"));

  std::vector<PopulationMatrix> train_pops;
  for (const auto& s : o.snapshots) train_pops.push_back(s.train_population());
  o.margins = margin_track(train_pops);
  {
    auto& f = out.open("margins.csv");
    f << "epoch,margin,normalized_margin";
    for (double p : cfg.analysis.percentiles) f << ",mean_closest_" << fmt(p) << "pct";
    f << ",kkt_gap\n";
    for (std::size_t i = 0; i < o.snapshots.size(); ++i) {
      const auto& r = o.margins.reports[i];
      f << o.snapshots[i].epoch << ',' << fmt(r.margin) << ',' << fmt(o.margins.normalized[i]);
      const auto pct = margin_percentiles(r, train_pops[i], cfg.analysis.percentiles);
      for (double p : cfg.analysis.percentiles) f << ',' << fmt(pct.at(p));
      f << ',' << fmt(r.kkt_gap) << '\n';
    }
  }

  {
    auto& f = out.open("rsa.csv");
    f << "epoch,class_a,class_b,mean_within_a,mean_within_b,mean_cross\n";
    for (const auto& s : o.snapshots) {
      const PopulationMatrix z = zscore(s.population());
      std::vector<std::pair<std::string, std::string>> pairs{{kTarget, kNontarget}};
      for (int j : o.levels) pairs.emplace_back(kTarget, probe_label(j));
      for (int j : o.levels) pairs.emplace_back(kNontarget, probe_label(j));
      for (const auto& [a, b] : pairs) {
        RsaOptions ro;
        ro.class_a = a;
        ro.class_b = b;
        ro.min_class_trials = 1;
        const auto r = rsa(z, ro);
        f << s.epoch << ',' << a << ',' << b << ',' << fmt(r.mean_within_a) << ',' << fmt(r.mean_within_b)
          << ',' << fmt(r.mean_cross) << '\n';
      }
    }
  }

  for (const auto& s : o.snapshots) {
    const auto pca = pca_project(s.population(), 2);
    auto& f = out.open("pca_epoch" + std::to_string(s.epoch) + ".csv");
    f << "row,label,pc1,pc2\n";
    for (Eigen::Index i = 0; i < pca.scores.rows(); ++i)
      f << i << ',' << s.labels[static_cast<std::size_t>(i)] << ',' << fmt(pca.scores(i, 0)) << ','
        << fmt(pca.scores(i, 1)) << '\n';
    out.put("snapshot_epoch" + std::to_string(s.epoch) + ".json",
            named_arrays_to_json({{"activations", s.activations}}).dump() + "\n");
    write_labels_csv(s, out.open("snapshot_epoch" + std::to_string(s.epoch) + "_labels.csv"));
  }

  BaselineOptions bo;
  bo.draws = cfg.analysis.baseline_draws;
  o.baseline = meanmatched_baseline(zscore(o.snapshots.back().train_population()), Rng(cfg.train.seed).split(5), bo);
  out.put_json("baseline.json", {{"epoch", o.snapshots.back().epoch},
                                 {"observed", o.baseline.observed},
                                 {"null_mean", o.baseline.null_mean},
                                 {"null_sd", o.baseline.null_sd},
                                 {"z", o.baseline.z},
                                 {"draws", bo.draws}});

  nlohmann::json summary;
  summary["convergence_epoch"] = o.log.convergence_epoch ? nlohmann::json(*o.log.convergence_epoch) : nlohmann::json();
  summary["zero_loss_epoch"] = o.log.zero_loss_epoch ? nlohmann::json(*o.log.zero_loss_epoch) : nlohmann::json();
  for (int j : o.levels) {
    const auto e = first_epoch_reaching(o.log, j, 0.9);
    summary["first_epoch_probe_acc_0.9"][std::to_string(j)] = e ? nlohmann::json(*e) : nlohmann::json();
  }
  out.put_json("summary.json", summary);
  out.put("model_final.json", save_checkpoint(result.model).dump() + "\n");
  return o;
}

/// Runs the synthetic experiment and returns the artifacts without writing.
inline Artifacts synth_artifacts(const ExperimentConfig& cfg, SynthOutcome* outcome = nullptr) {
  Artifacts out;
  const SynthSetup setup = synth_setup(cfg);
  out.put_json("task.json", to_json(setup.dataset));
  SynthOutcome o;
  switch (cfg.model.kind) {
    case ModelKind::mlp: o = run_synth(cfg, setup, init_mlp(cfg), out); break;
    case ModelKind::bio: o = run_synth(cfg, setup, init_bio(cfg), out); break;
    case ModelKind::linear2:
      throw Error(ErrorKind::validation, "synth trains mlp or bio models; linear2 belongs to reversal");
  }
  out.put_json("config.json", to_json(cfg));
  if (outcome) *outcome = std::move(o);
  return out;
}

inline int cmd_synth(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  Artifacts out = synth_artifacts(cfg);
  out.flush(out_dir, "synth", cfg.train.seed, to_json(cfg));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// reversal
// ---------------------------------------------------------------------------

inline double relative_rmse(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && !a.empty(), ErrorKind::invalid_parameter, "series lengths differ");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num / static_cast<double>(a.size()));
}

struct ReversalOutcome {
  ReversalSweep sweep;
  double phase1_rmse = 0.0;
  double kernel_fraction = 0.0;
  double max_lazy_diff_phase1 = 0.0;
  double max_lazy_diff_phase2 = 0.0;
};

inline Artifacts reversal_artifacts(const ExperimentConfig& cfg, ReversalOutcome* outcome = nullptr) {
  const auto& r = cfg.reversal;
  Artifacts out;
  ReversalOutcome o;
  const long stride = std::max(1L, std::lround(0.01 / r.dt));

  // Theory, phase 1 up to the longest pretraining time.
  const double T_max = r.T_list.back();
  const auto p1 = integrate_phase1(r.gamma0, T_max, r.dt);
  {
    auto& f = out.open("theory_phase1.csv");
    f << "t,f_y,K_y,f_y_lazy\n";
    for (std::size_t i = 0; i < p1.size(); ++i) {
      const double lazy = lazy_phase1(p1[i].t);
      o.max_lazy_diff_phase1 = std::max(o.max_lazy_diff_phase1, std::abs(p1[i].f_y - lazy));
      if (static_cast<long>(i) % stride == 0 || i + 1 == p1.size())
        f << fmt(p1[i].t) << ',' << fmt(p1[i].f_y) << ',' << fmt(p1[i].K_y) << ',' << fmt(lazy) << '\n';
    }
  }

  o.sweep = sweep_pretraining(r.gamma0, r.T_list, r.dt, r.eps, r.horizon);
  {
    auto& f = out.open("theory_phase2.csv");
    f << "T,K_yT,t,f_rev,f_rev_lazy\n";
    for (const auto& row : o.sweep.rows) {
      const auto p2 = integrate_phase2(row.K_yT, r.gamma0, r.dt, 1.0, r.horizon, r.eps);
      for (std::size_t i = 0; i < p2.times.size(); ++i) {
        const double lazy = lazy_phase2(p2.times[i], row.K_yT);
        o.max_lazy_diff_phase2 = std::max(o.max_lazy_diff_phase2, std::abs(p2.f_rev_values[i] - lazy));
        if (static_cast<long>(i) % stride == 0 || i + 1 == p2.times.size())
          f << fmt(row.T) << ',' << fmt(row.K_yT) << ',' << fmt(p2.times[i]) << ',' << fmt(p2.f_rev_values[i])
            << ',' << fmt(lazy) << '\n';
      }
    }
  }
  {
    auto& f = out.open("sweep.csv");
    f << "T,K_yT,reversal_time\n";
    for (const auto& row : o.sweep.rows)
      f << fmt(row.T) << ',' << fmt(row.K_yT) << ',' << (row.reversal_time ? fmt(*row.reversal_time) : "") << '\n';
  }

  // Finite-width network against the theory at the same gamma0.
  const WhitenedTask task = four_odor_task();
  EmpiricalOptions eo;
  eo.width = r.N;
  eo.gamma0 = r.empirical_gamma0;
  eo.lr = r.lr;
  eo.pretrain_steps = std::lround(r.empirical_T / r.lr);
  eo.horizon_steps = std::lround(r.empirical_horizon / r.lr);
  eo.seed = Rng(cfg.train.seed).split(6).seed();
  eo.eps = r.eps;
  for (double t : r.pca_times) eo.checkpoints.push_back(std::lround(t / r.lr));
  std::sort(eo.checkpoints.begin(), eo.checkpoints.end());
  eo.checkpoints.erase(std::unique(eo.checkpoints.begin(), eo.checkpoints.end()), eo.checkpoints.end());
  const EmpiricalReversal emp = empirical_reversal(task, eo);

  const auto th1 = integrate_phase1(r.empirical_gamma0, static_cast<double>(eo.pretrain_steps) * r.lr, r.lr);
  std::vector<double> theory_f, emp_f;
  {
    auto& f = out.open("empirical_phase1.csv");
    f << "step,t,f_y,f_y_theory,K_y,K_y_theory,loss\n";
    for (std::size_t s = 0; s < emp.t.size(); ++s) {
      f << s << ',' << fmt(emp.t[s]) << ',' << fmt(emp.f_y[s]) << ',' << fmt(th1[s].f_y) << ',' << fmt(emp.K_y[s])
        << ',' << fmt(th1[s].K_y) << ',' << fmt(emp.loss[s]) << '\n';
      theory_f.push_back(th1[s].f_y);
      emp_f.push_back(emp.f_y[s]);
    }
  }
  o.phase1_rmse = relative_rmse(emp_f, theory_f);
  std::optional<double> theory_rev;
  if (eo.horizon_steps > 0) {
    const auto th2 = integrate_phase2(th1.back().K_y, r.empirical_gamma0, r.lr, 1.0,
                                      static_cast<double>(eo.horizon_steps) * r.lr, r.eps);
    theory_rev = th2.time_to_threshold;
    auto& f = out.open("empirical_phase2.csv");
    f << "step,t,f_rev,f_rev_theory,loss\n";
    for (std::size_t s = 0; s < emp.t_rev.size(); ++s)
      f << s << ',' << fmt(emp.t_rev[s]) << ',' << fmt(emp.f_rev[s]) << ',' << fmt(th2.f_rev_values[s]) << ','
        << fmt(emp.loss_rev[s]) << '\n';
  }
  const Vector y_hat = task.y / task.y.norm();
  o.kernel_fraction = kernel_direction_fraction(emp.initial_kernel, emp.final_kernel, y_hat);
  {
    auto& f = out.open("kernel.csv");
    f << "step,t,K_y,yy_fraction\n";
    for (const auto& c : emp.checkpoints)
      f << c.step << ',' << fmt(static_cast<double>(c.step) * r.lr) << ',' << fmt(label_alignment(c.kernel, task.y))
        << ',' << fmt(kernel_direction_fraction(emp.initial_kernel, c.kernel, y_hat)) << '\n';
  }
  {
    auto& f = out.open("hidden_pca.csv");
    f << "step,t,input,label,pc1,pc2\n";
    for (const auto& c : emp.checkpoints) {
      const auto pca = pca_project(c.hidden, 2);
      for (Eigen::Index i = 0; i < pca.scores.rows(); ++i)
        f << c.step << ',' << fmt(static_cast<double>(c.step) * r.lr) << ',' << i << ',' << fmt(task.y(i)) << ','
          << fmt(pca.scores(i, 0)) << ',' << fmt(pca.scores(i, 1)) << '\n';
    }
  }
  nlohmann::json summary;
  summary["phase1_relative_rmse"] = o.phase1_rmse;
  summary["kernel_yy_fraction"] = o.kernel_fraction;
  summary["max_abs_diff_lazy_phase1"] = o.max_lazy_diff_phase1;
  summary["max_abs_diff_lazy_phase2"] = o.max_lazy_diff_phase2;
  summary["empirical_reversal_time"] =
      emp.reversal_steps ? nlohmann::json(static_cast<double>(*emp.reversal_steps) * r.lr) : nlohmann::json();
  summary["theory_reversal_time"] = theory_rev ? nlohmann::json(*theory_rev) : nlohmann::json();
  out.put_json("reversal_summary.json", summary);
  out.put_json("config.json", to_json(cfg));
  if (outcome) *outcome = std::move(o);
  return out;
}

inline int cmd_reversal(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  Artifacts out = reversal_artifacts(cfg);
  out.flush(out_dir, "reversal", cfg.train.seed, to_json(cfg));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// decode
// ---------------------------------------------------------------------------

struct DecodeOutcome {
  DecodeResult decode;
  SimilaritySummary similarity;
  MarginReport margin;
  BaselineResult baseline;
  std::vector<std::string> dropped;
};

/// Count matrix -> z-scored population -> decoding, similarity, margin and
/// baseline statistics.
inline DecodeOutcome analyze_counts(const CountMatrix& counts, const AnalysisSection& a, std::uint64_t seed) {
  DecodeOutcome o;
  DropResult dr = drop_unresponsive(counts, a.min_spikes);
  o.dropped = dr.dropped;
  const PopulationMatrix z = zscore(to_population(dr.filtered));
  const Rng root(seed);
  DecodeOptions d;
  d.folds = a.folds;
  d.iterations = a.iterations;
  o.decode = kfold_decode(z, root.split(10), d);
  o.similarity = rsa(z);
  o.margin = svm_fit(z);
  BaselineOptions bo;
  bo.draws = a.baseline_draws;
  o.baseline = meanmatched_baseline(z, root.split(11), bo);
  return o;
}

inline bool excluded(const SpikeSession& s, const std::vector<std::string>& exclude) {
  return std::find(exclude.begin(), exclude.end(), s.session_id) != exclude.end();
}

inline int cmd_decode(const std::string& spike_file, const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                      const std::vector<std::string>& extra_exclude = {}) {
  const SpikeSession session = parse_spike_file(spike_file);
  std::vector<std::string> exclude = cfg.analysis.exclude_sessions;
  exclude.insert(exclude.end(), extra_exclude.begin(), extra_exclude.end());
  if (excluded(session, exclude)) return kExitExcluded;

  const auto& a = cfg.analysis;
  const CountMatrix counts = window_counts(session, a.window_start_ms, a.window_end_ms);
  const DecodeOutcome o = analyze_counts(counts, a, cfg.train.seed);
  const DropResult dr = drop_unresponsive(counts, a.min_spikes);

  Artifacts out;
  {
    auto& f = out.open("counts.csv");
    f << "trial,label";
    for (const auto& id : counts.neuron_ids) f << ',' << id;
    f << '\n';
    for (Eigen::Index i = 0; i < counts.counts.rows(); ++i) {
      f << counts.trial_ids[static_cast<std::size_t>(i)] << ',' << counts.labels[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < counts.counts.cols(); ++j) f << ',' << counts.counts(i, j);
      f << '\n';
    }
  }
  {
    auto& f = out.open("decode.csv");
    f << "trial,label,posterior_correct\n";
    for (std::size_t i = 0; i < o.decode.trial_posteriors.size(); ++i)
      f << counts.trial_ids[i] << ',' << counts.labels[i] << ',' << fmt(o.decode.trial_posteriors[i]) << '\n';
  }
  out.put_json("decode.json", {{"session", session.session_id},
                               {"subject", session.subject_id},
                               {"accuracy", o.decode.mean_accuracy},
                               {"standard_error", o.decode.standard_error},
                               {"mean_posterior", o.decode.mean_posterior},
                               {"posterior_standard_error", o.decode.posterior_standard_error},
                               {"folds", a.folds},
                               {"iterations", a.iterations},
                               {"neurons_kept", dr.filtered.neuron_ids},
                               {"neurons_dropped", o.dropped}});
  out.put_json("rsa.json", {{"mean_within_target", o.similarity.mean_within_a},
                            {"mean_within_nontarget", o.similarity.mean_within_b},
                            {"mean_cross", o.similarity.mean_cross}});
  nlohmann::json margin = {{"margin", o.margin.margin}, {"bias", o.margin.b}, {"kkt_gap", o.margin.kkt_gap}};
  for (double p : a.percentiles) margin["mean_closest_pct"][fmt(p)] = mean_closest(o.margin.distances, p);
  out.put_json("margin.json", margin);
  out.put_json("baseline.json", {{"observed", o.baseline.observed},
                                 {"null_mean", o.baseline.null_mean},
                                 {"null_sd", o.baseline.null_sd},
                                 {"sigma_position", o.baseline.z},
                                 {"draws", a.baseline_draws},
                                 {"null_values", o.baseline.null_values}});
  out.put_json("config.json", to_json(cfg));
  out.flush(out_dir, "decode", cfg.train.seed, to_json(cfg));
  return kExitOk;
}

// ---------------------------------------------------------------------------
// surrogate
// ---------------------------------------------------------------------------

inline SurrogateSpec load_surrogate_spec(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::invalid_parameter, "cannot open surrogate spec " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_parameter, "surrogate spec " + path + ": " + e.what());
  }
  return surrogate_spec_from_json(j);
}

inline int cmd_surrogate(const SurrogateSpec& spec, const std::filesystem::path& out_path) {
  const SpikeSession s = surrogate_session(spec);
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  write_spike_file(s, out_path.string());
  return kExitOk;
}

}  // namespace overtrain
