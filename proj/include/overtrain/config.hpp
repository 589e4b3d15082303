#pragma once

// Experiment configuration: one JSON document with task, model, train,
// analysis and reversal sections. Unknown keys and out-of-range values are
// rejected at load time.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "overtrain/core.hpp"
#include "overtrain/trainer.hpp"

namespace overtrain {

struct TaskSection {
  int k = 100;
  int n = 10;
  int m_nontargets = 200;
  std::map<int, int> probes{{1, 20}, {2, 20}, {3, 20}};
  int d_embed = 50;
};

enum class ModelKind { mlp, bio, linear2 };

struct ModelSection {
  ModelKind kind = ModelKind::mlp;
  std::vector<int> widths{512};  // mlp: {h}; bio: {h1, h3}; linear2: {N}
  double init_scale = 1.0;
  double noise_std = 0.1;        // bio only
};

struct AnalysisSection {
  int folds = 10;
  int iterations = 20;
  int baseline_draws = 500;
  std::vector<double> percentiles{1.0, 5.0};
  double window_start_ms = 2000.0;
  double window_end_ms = 2500.0;
  int min_spikes = 4;
  std::vector<std::string> exclude_sessions;
};

struct ReversalSection {
  double gamma0 = 2.0;
  double dt = 1e-3;
  std::vector<double> T_list{0.1, 0.5, 1.0, 2.0, 4.0};
  double eps = 0.1;
  double horizon = 50.0;
  int N = 4000;
  double lr = 0.01;
  double empirical_gamma0 = 1.0;
  double empirical_T = 3.0;
  double empirical_horizon = 3.0;
  std::vector<double> pca_times{0.0, 0.5, 1.0, 3.0};
};

struct ExperimentConfig {
  TaskSection task;
  ModelSection model;
  TrainConfig train;
  AnalysisSection analysis;
  ReversalSection reversal;
};

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::mlp: return "mlp";
    case ModelKind::bio: return "bio";
    case ModelKind::linear2: return "linear2";
  }
  return "?";
}

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
  require(j.is_object(), ErrorKind::validation, "config section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items())
    require(allowed.count(key) > 0, ErrorKind::validation,
            "unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void bound(bool ok, const std::string& what) { require(ok, ErrorKind::validation, "config: " + what); }

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  using detail::bound;
  const auto& t = c.task;
  bound(t.k >= 1 && t.n >= 1 && t.n <= t.k, "task requires 1 <= n <= k");
  bound(t.m_nontargets >= 1, "task.m_nontargets must be >= 1");
  bound(t.d_embed >= 1, "task.d_embed must be >= 1");
  for (const auto& [j, count] : t.probes)
    bound(j >= 1 && j < t.n && count >= 0, "task.probes levels must lie in [1, n-1] with counts >= 0");

  const auto& m = c.model;
  bound(m.init_scale > 0 && std::isfinite(m.init_scale), "model.init_scale must be positive");
  bound(m.noise_std >= 0, "model.noise_std must be >= 0");
  for (int w : m.widths) bound(w >= 1, "model.widths must be positive");
  if (m.kind == ModelKind::mlp) bound(m.widths.size() == 1, "mlp takes one width");
  if (m.kind == ModelKind::bio) bound(m.widths.size() == 2 && m.widths[1] < m.widths[0], "bio takes widths [h1, h3] with h3 < h1");
  if (m.kind == ModelKind::linear2) bound(m.widths.size() == 1, "linear2 takes one width");

  try {
    validate(c.train);
  } catch (const Error& e) {
    throw Error(ErrorKind::validation, std::string("config: train: ") + e.what());
  }

  const auto& a = c.analysis;
  bound(a.folds >= 2, "analysis.folds must be >= 2");
  bound(a.iterations >= 1, "analysis.iterations must be >= 1");
  bound(a.baseline_draws >= 2, "analysis.baseline_draws must be >= 2");
  for (double p : a.percentiles) bound(p > 0 && p <= 100, "analysis.percentiles must lie in (0, 100]");
  bound(a.window_start_ms >= 0 && a.window_start_ms < a.window_end_ms && a.window_end_ms <= 2500.0,
        "analysis count window must satisfy 0 <= start < end <= 2500");
  bound(a.min_spikes >= 0, "analysis.min_spikes must be >= 0");

  const auto& r = c.reversal;
  bound(r.gamma0 > 0 && r.empirical_gamma0 > 0, "reversal gamma0 values must be positive");
  bound(r.dt > 0 && r.dt <= 1.0, "reversal.dt must lie in (0, 1]");
  bound(!r.T_list.empty() && std::is_sorted(r.T_list.begin(), r.T_list.end()) && r.T_list.front() > 0,
        "reversal.T_list must be non-empty, positive and sorted");
  bound(r.eps > 0 && r.eps < 1, "reversal.eps must lie in (0, 1)");
  bound(r.horizon > 0, "reversal.horizon must be positive");
  bound(r.N >= 1, "reversal.N must be >= 1");
  bound(r.lr > 0, "reversal.lr must be positive");
  bound(r.empirical_T > 0 && r.empirical_horizon >= 0, "reversal empirical durations must be positive");
  for (double t : r.pca_times) bound(t >= 0 && t <= r.empirical_T, "reversal.pca_times must lie in [0, empirical_T]");
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read;
  ExperimentConfig c;
  try {
    check_keys(j, "", {"task", "model", "train", "analysis", "reversal"});
    if (j.contains("task")) {
      const auto& s = j.at("task");
      check_keys(s, "task", {"k", "n", "m_nontargets", "probes", "d_embed"});
      read(s, "k", c.task.k);
      read(s, "n", c.task.n);
      read(s, "m_nontargets", c.task.m_nontargets);
      read(s, "d_embed", c.task.d_embed);
      if (s.contains("probes")) {
        c.task.probes.clear();
        for (const auto& [key, value] : s.at("probes").items()) {
          std::size_t used = 0;
          int level = 0;
          try {
            level = std::stoi(key, &used);
          } catch (const std::exception&) {
            used = 0;
          }
          require(used == key.size() && !key.empty(), ErrorKind::validation,
                  "task.probes keys must be integers, got '" + key + "'");
          c.task.probes[level] = value.get<int>();
        }
      }
    }
    if (j.contains("model")) {
      const auto& s = j.at("model");
      check_keys(s, "model", {"kind", "widths", "init_scale", "noise_std"});
      if (s.contains("kind")) {
        const auto kind = s.at("kind").get<std::string>();
        if (kind == "mlp") c.model.kind = ModelKind::mlp;
        else if (kind == "bio") c.model.kind = ModelKind::bio;
        else if (kind == "linear2") c.model.kind = ModelKind::linear2;
        else throw Error(ErrorKind::validation, "model.kind must be mlp, bio or linear2, got '" + kind + "'");
        if (!s.contains("widths")) {
          if (c.model.kind == ModelKind::bio) c.model.widths = {256, 64};
          if (c.model.kind == ModelKind::linear2) c.model.widths = {4000};
        }
      }
      read(s, "widths", c.model.widths);
      read(s, "init_scale", c.model.init_scale);
      read(s, "noise_std", c.model.noise_std);
    }
    if (j.contains("train")) {
      const auto& s = j.at("train");
      check_keys(s, "train", {"epochs", "lr", "loss", "C", "seed", "snapshot_epochs", "target_upweight",
                              "weight_decay", "eval_every", "probe_scoring", "analysis_epochs"});
      read(s, "epochs", c.train.epochs);
      read(s, "lr", c.train.learning_rate);
      read(s, "seed", c.train.seed);
      read(s, "snapshot_epochs", c.train.snapshot_epochs);
      read(s, "analysis_epochs", c.train.analysis_epochs);
      read(s, "target_upweight", c.train.target_upweight);
      read(s, "weight_decay", c.train.weight_decay);
      read(s, "eval_every", c.train.eval_every);
      read(s, "C", c.train.loss.C);
      if (s.contains("loss")) {
        const auto loss = s.at("loss").get<std::string>();
        if (loss == "ce" || loss == "cross_entropy") c.train.loss.kind = LossKind::cross_entropy;
        else if (loss == "hinge") c.train.loss.kind = LossKind::hinge;
        else throw Error(ErrorKind::validation, "train.loss must be 'ce' or 'hinge', got '" + loss + "'");
      }
      if (s.contains("probe_scoring")) {
        const auto ps = s.at("probe_scoring").get<std::string>();
        if (ps == "nontarget") c.train.probe_scoring = ProbeScoring::as_nontarget;
        else if (ps == "target") c.train.probe_scoring = ProbeScoring::as_target;
        else throw Error(ErrorKind::validation, "train.probe_scoring must be 'nontarget' or 'target'");
      }
    }
    if (j.contains("analysis")) {
      const auto& s = j.at("analysis");
      check_keys(s, "analysis", {"folds", "iterations", "baseline_draws", "percentiles", "window_start_ms",
                                 "window_end_ms", "min_spikes", "exclude_sessions"});
      read(s, "folds", c.analysis.folds);
      read(s, "iterations", c.analysis.iterations);
      read(s, "baseline_draws", c.analysis.baseline_draws);
      read(s, "percentiles", c.analysis.percentiles);
      read(s, "window_start_ms", c.analysis.window_start_ms);
      read(s, "window_end_ms", c.analysis.window_end_ms);
      read(s, "min_spikes", c.analysis.min_spikes);
      read(s, "exclude_sessions", c.analysis.exclude_sessions);
    }
    if (j.contains("reversal")) {
      const auto& s = j.at("reversal");
      check_keys(s, "reversal", {"gamma0", "dt", "T_list", "eps", "horizon", "N", "lr", "empirical_gamma0",
                                 "empirical_T", "empirical_horizon", "pca_times"});
      read(s, "gamma0", c.reversal.gamma0);
      read(s, "dt", c.reversal.dt);
      read(s, "T_list", c.reversal.T_list);
      read(s, "eps", c.reversal.eps);
      read(s, "horizon", c.reversal.horizon);
      read(s, "N", c.reversal.N);
      read(s, "lr", c.reversal.lr);
      read(s, "empirical_gamma0", c.reversal.empirical_gamma0);
      read(s, "empirical_T", c.reversal.empirical_T);
      read(s, "empirical_horizon", c.reversal.empirical_horizon);
      read(s, "pca_times", c.reversal.pca_times);
    }
    const bool lr_given = j.contains("train") && j.at("train").contains("lr");
    if (c.model.kind == ModelKind::bio && !lr_given) c.train.learning_rate = 1e-2;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::validation, std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::validation, "cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::validation, "config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

/// Normalized echo of the effective configuration (every field, defaults
/// filled in).
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json probes = nlohmann::json::object();
  for (const auto& [j, n] : c.task.probes) probes[std::to_string(j)] = n;
  return {
      {"task", {{"k", c.task.k}, {"n", c.task.n}, {"m_nontargets", c.task.m_nontargets}, {"probes", probes},
                {"d_embed", c.task.d_embed}}},
      {"model", {{"kind", to_string(c.model.kind)}, {"widths", c.model.widths}, {"init_scale", c.model.init_scale},
                 {"noise_std", c.model.noise_std}}},
      {"train", {{"epochs", c.train.epochs}, {"lr", c.train.learning_rate},
                 {"loss", c.train.loss.kind == LossKind::hinge ? "hinge" : "ce"}, {"C", c.train.loss.C},
                 {"seed", c.train.seed}, {"snapshot_epochs", c.train.snapshot_epochs},
                 {"analysis_epochs", c.train.analysis_epochs}, {"target_upweight", c.train.target_upweight},
                 {"weight_decay", c.train.weight_decay}, {"eval_every", c.train.eval_every},
                 {"probe_scoring", c.train.probe_scoring == ProbeScoring::as_target ? "target" : "nontarget"}}},
      {"analysis", {{"folds", c.analysis.folds}, {"iterations", c.analysis.iterations},
                    {"baseline_draws", c.analysis.baseline_draws}, {"percentiles", c.analysis.percentiles},
                    {"window_start_ms", c.analysis.window_start_ms}, {"window_end_ms", c.analysis.window_end_ms},
                    {"min_spikes", c.analysis.min_spikes}, {"exclude_sessions", c.analysis.exclude_sessions}}},
      {"reversal", {{"gamma0", c.reversal.gamma0}, {"dt", c.reversal.dt}, {"T_list", c.reversal.T_list},
                    {"eps", c.reversal.eps}, {"horizon", c.reversal.horizon}, {"N", c.reversal.N},
                    {"lr", c.reversal.lr}, {"empirical_gamma0", c.reversal.empirical_gamma0},
                    {"empirical_T", c.reversal.empirical_T}, {"empirical_horizon", c.reversal.empirical_horizon},
                    {"pca_times", c.reversal.pca_times}}},
  };
}

}  // namespace overtrain
