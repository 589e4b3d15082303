#pragma once

// Spike recordings: NDJSON session files, windowed spike counts, removal of
// unresponsive neurons, a Poisson surrogate generator, and sliding-window
// smoothing of session series.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "overtrain/core.hpp"
#include "overtrain/popanalysis.hpp"

namespace overtrain {

inline constexpr double kResponseWindowMs = 2500.0;

struct SpikeTrial {
  long trial_id = 0;
  std::string label;  // "target" | "nontarget"
  std::map<std::string, std::vector<double>> spikes_ms;

  friend bool operator==(const SpikeTrial&, const SpikeTrial&) = default;
};

struct SpikeSession {
  std::string session_id;
  std::string subject_id;
  std::vector<SpikeTrial> trials;

  std::vector<std::string> neuron_ids() const {
    std::vector<std::string> ids;
    if (trials.empty()) return ids;
    for (const auto& [id, _] : trials.front().spikes_ms) ids.push_back(id);
    return ids;
  }

  friend bool operator==(const SpikeSession&, const SpikeSession&) = default;
};

/// Throws a validation error describing the first violated invariant.
inline void validate(const SpikeSession& s) {
  require(!s.trials.empty(), ErrorKind::validation, "session has no trials (at least 1 required)");
  const auto ids = s.neuron_ids();
  for (const auto& t : s.trials) {
    const std::string where = "trial " + std::to_string(t.trial_id);
    require(t.label == kTarget || t.label == kNontarget, ErrorKind::validation,
            where + ": label must be 'target' or 'nontarget', got '" + t.label + "'");
    std::vector<std::string> mine;
    for (const auto& [id, times] : t.spikes_ms) {
      mine.push_back(id);
      require(std::is_sorted(times.begin(), times.end()), ErrorKind::validation,
              where + ", neuron " + id + ": spike times are not sorted ascending");
      for (double v : times)
        require(std::isfinite(v) && v >= 0.0 && v <= kResponseWindowMs, ErrorKind::validation,
                where + ", neuron " + id + ": spike time " + format_double(v) +
                    " ms outside the response window [0, 2500] ms");
    }
    require(mine == ids, ErrorKind::validation, where + ": neuron ids differ from the first trial");
  }
}

inline nlohmann::json trial_to_json(const SpikeSession& s, const SpikeTrial& t) {
  nlohmann::json j;
  j["session"] = s.session_id;
  j["subject"] = s.subject_id;
  j["trial"] = t.trial_id;
  j["label"] = t.label;
  j["spikes_ms"] = nlohmann::json::object();
  for (const auto& [id, times] : t.spikes_ms) j["spikes_ms"][id] = times;
  return j;
}

/// One JSON object per line, LF endings.
inline void write_spike_file(const SpikeSession& s, std::ostream& out) {
  for (const auto& t : s.trials) out << trial_to_json(s, t).dump() << '\n';
}

inline void write_spike_file(const SpikeSession& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::invalid_parameter, "cannot write " + path);
  write_spike_file(s, out);
}

inline SpikeSession parse_spike_stream(std::istream& in) {
  SpikeSession s;
  std::string line;
  long line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse, where + ": " + e.what());
    }
    try {
      require(j.is_object(), ErrorKind::parse, where + ": expected a JSON object");
      for (const auto& [key, _] : j.items())
        require(key == "session" || key == "subject" || key == "trial" || key == "label" || key == "spikes_ms",
                ErrorKind::parse, where + ": unknown field '" + key + "'");
      SpikeTrial t;
      const auto session = j.at("session").get<std::string>();
      const auto subject = j.at("subject").get<std::string>();
      if (first) {
        s.session_id = session;
        s.subject_id = subject;
        first = false;
      }
      require(session == s.session_id && subject == s.subject_id, ErrorKind::validation,
              where + ": session/subject differ from the first line");
      t.trial_id = j.at("trial").get<long>();
      t.label = j.at("label").get<std::string>();
      require(j.at("spikes_ms").is_object(), ErrorKind::parse, where + ": spikes_ms must be an object");
      for (const auto& [id, times] : j.at("spikes_ms").items())
        t.spikes_ms[id] = times.get<std::vector<double>>();
      s.trials.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse, where + ": " + e.what());
    }
  }
  validate(s);
  return s;
}

inline SpikeSession parse_spike_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::parse, "cannot open spike file " + path);
  return parse_spike_stream(in);
}

// ---------------------------------------------------------------------------
// Counting and filtering
// ---------------------------------------------------------------------------

struct CountMatrix {
  Eigen::MatrixXi counts;  // trials x neurons
  double start_ms = 2000.0;
  double end_ms = 2500.0;
  std::vector<std::string> neuron_ids;
  std::vector<long> trial_ids;
  std::vector<std::string> labels;
};

/// Spikes of each neuron in [start_ms, end_ms).
inline CountMatrix window_counts(const SpikeSession& s, double start_ms = 2000.0, double end_ms = 2500.0) {
  require(start_ms >= 0.0 && end_ms <= kResponseWindowMs, ErrorKind::invalid_parameter,
          "count window must lie within [0, 2500] ms");
  require(start_ms < end_ms, ErrorKind::invalid_parameter, "count window is empty or inverted");
  CountMatrix m;
  m.start_ms = start_ms;
  m.end_ms = end_ms;
  m.neuron_ids = s.neuron_ids();
  m.counts = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(s.trials.size()),
                                   static_cast<Eigen::Index>(m.neuron_ids.size()));
  for (std::size_t i = 0; i < s.trials.size(); ++i) {
    const auto& t = s.trials[i];
    m.trial_ids.push_back(t.trial_id);
    m.labels.push_back(t.label);
    for (std::size_t j = 0; j < m.neuron_ids.size(); ++j) {
      const auto& times = t.spikes_ms.at(m.neuron_ids[j]);
      const auto lo = std::lower_bound(times.begin(), times.end(), start_ms);
      const auto hi = std::lower_bound(times.begin(), times.end(), end_ms);
      m.counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<int>(hi - lo);
    }
  }
  return m;
}

struct DropResult {
  CountMatrix filtered;
  std::vector<std::string> dropped;
};

/// Removes neurons whose total count over all trials is below `min_total`.
inline DropResult drop_unresponsive(const CountMatrix& m, int min_total = 4) {
  DropResult r;
  r.filtered = m;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < m.counts.cols(); ++j) {
    if (m.counts.col(j).sum() >= min_total) {
      keep.push_back(j);
    } else {
      r.dropped.push_back(m.neuron_ids[static_cast<std::size_t>(j)]);
    }
  }
  if (keep.empty()) throw Error(ErrorKind::empty_matrix, "every neuron is below the spike-count threshold");
  r.filtered.counts.resize(m.counts.rows(), static_cast<Eigen::Index>(keep.size()));
  r.filtered.neuron_ids.clear();
  for (std::size_t c = 0; c < keep.size(); ++c) {
    r.filtered.counts.col(static_cast<Eigen::Index>(c)) = m.counts.col(keep[c]);
    r.filtered.neuron_ids.push_back(m.neuron_ids[static_cast<std::size_t>(keep[c])]);
  }
  return r;
}

inline PopulationMatrix to_population(const CountMatrix& m) {
  return PopulationMatrix::raw(m.counts.cast<double>(), m.labels);
}

// ---------------------------------------------------------------------------
// Surrogate sessions
// ---------------------------------------------------------------------------

struct SurrogateSpec {
  std::string session_id = "surrogate";
  std::string subject_id = "S0";
  int n_target = 100;
  int n_nontarget = 100;
  std::vector<double> rates_target_hz;     // per neuron
  std::vector<double> rates_nontarget_hz;  // per neuron
  double separation = 1.0;                 // scales the between-class rate difference
  std::uint64_t seed = 0;

  int neurons() const { return static_cast<int>(rates_nontarget_hz.size()); }
};

/// Class rates after scaling the difference around the class midpoint,
/// clamped at zero.
inline std::pair<std::vector<double>, std::vector<double>> class_rates(const SurrogateSpec& spec) {
  std::vector<double> target(spec.rates_target_hz.size()), nontarget(target.size());
  for (std::size_t j = 0; j < target.size(); ++j) {
    const double mid = 0.5 * (spec.rates_target_hz[j] + spec.rates_nontarget_hz[j]);
    const double half = 0.5 * (spec.rates_target_hz[j] - spec.rates_nontarget_hz[j]) * spec.separation;
    target[j] = std::max(0.0, mid + half);
    nontarget[j] = std::max(0.0, mid - half);
  }
  return {target, nontarget};
}

inline void validate(const SurrogateSpec& spec) {
  require(spec.n_target >= 0 && spec.n_nontarget >= 0 && spec.n_target + spec.n_nontarget >= 1,
          ErrorKind::invalid_parameter, "surrogate needs at least one trial");
  require(!spec.rates_target_hz.empty() && spec.rates_target_hz.size() == spec.rates_nontarget_hz.size(),
          ErrorKind::invalid_parameter, "rate vectors must be non-empty and of equal length");
  for (std::size_t j = 0; j < spec.rates_target_hz.size(); ++j)
    require(spec.rates_target_hz[j] >= 0 && spec.rates_nontarget_hz[j] >= 0 &&
                std::isfinite(spec.rates_target_hz[j]) && std::isfinite(spec.rates_nontarget_hz[j]),
            ErrorKind::invalid_parameter, "rates must be finite and non-negative");
  require(spec.separation >= 0 && std::isfinite(spec.separation), ErrorKind::invalid_parameter,
          "separation must be non-negative");
}

/// Poisson spike counts over the full 2.5 s response window with spike times
/// uniform in [0, 2500) ms. Target trials come first, then nontargets.
inline SpikeSession surrogate_session(const SurrogateSpec& spec) {
  validate(spec);
  const auto [target_rates, nontarget_rates] = class_rates(spec);
  Rng rng(spec.seed);
  SpikeSession s;
  s.session_id = spec.session_id;
  s.subject_id = spec.subject_id;
  const int width = static_cast<int>(std::to_string(std::max(spec.neurons() - 1, 0)).size());
  auto neuron_id = [&](int j) {
    std::string id = std::to_string(j);
    return "n" + std::string(static_cast<std::size_t>(width) - id.size(), '0') + id;
  };
  long trial_id = 0;
  for (int cls = 0; cls < 2; ++cls) {
    const auto& rates = cls == 0 ? target_rates : nontarget_rates;
    const int count = cls == 0 ? spec.n_target : spec.n_nontarget;
    for (int t = 0; t < count; ++t) {
      SpikeTrial trial;
      trial.trial_id = trial_id++;
      trial.label = cls == 0 ? kTarget : kNontarget;
      for (int j = 0; j < spec.neurons(); ++j) {
        const long k = rng.poisson(rates[static_cast<std::size_t>(j)] * kResponseWindowMs / 1000.0);
        std::vector<double> times(static_cast<std::size_t>(k));
        for (auto& v : times) v = rng.uniform(0.0, kResponseWindowMs);
        std::sort(times.begin(), times.end());
        trial.spikes_ms.emplace(neuron_id(j), std::move(times));
      }
      s.trials.push_back(std::move(trial));
    }
  }
  return s;
}

inline SurrogateSpec surrogate_spec_from_json(const nlohmann::json& j) {
  try {
    SurrogateSpec spec;
    for (const auto& [key, _] : j.items())
      require(key == "session" || key == "subject" || key == "n_target" || key == "n_nontarget" ||
                  key == "rates_target_hz" || key == "rates_nontarget_hz" || key == "separation" ||
                  key == "seed",
              ErrorKind::invalid_parameter, "unknown surrogate spec key '" + key + "'");
    spec.session_id = j.value("session", spec.session_id);
    spec.subject_id = j.value("subject", spec.subject_id);
    spec.n_target = j.value("n_target", spec.n_target);
    spec.n_nontarget = j.value("n_nontarget", spec.n_nontarget);
    spec.rates_target_hz = j.at("rates_target_hz").get<std::vector<double>>();
    spec.rates_nontarget_hz = j.at("rates_nontarget_hz").get<std::vector<double>>();
    spec.separation = j.value("separation", spec.separation);
    spec.seed = j.value("seed", spec.seed);
    validate(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::invalid_parameter, std::string("surrogate spec: ") + e.what());
  }
}

inline nlohmann::json to_json(const SurrogateSpec& spec) {
  return {{"session", spec.session_id},
          {"subject", spec.subject_id},
          {"n_target", spec.n_target},
          {"n_nontarget", spec.n_nontarget},
          {"rates_target_hz", spec.rates_target_hz},
          {"rates_nontarget_hz", spec.rates_nontarget_hz},
          {"separation", spec.separation},
          {"seed", spec.seed}};
}

// ---------------------------------------------------------------------------
// Smoothing
// ---------------------------------------------------------------------------

struct SmoothedSeries {
  std::vector<double> values;
  std::vector<double> standard_errors;
};

/// Centered moving average, truncated at the edges. The window for index i
/// covers [i - (L-1)/2, i + L/2]; SE is the sample sd within the window over
/// sqrt(window size used). Outputs are produced every `stride` inputs.
inline SmoothedSeries smooth_series(const std::vector<double>& values, int window_len, int stride = 1) {
  require(window_len >= 1, ErrorKind::invalid_parameter, "window_len must be >= 1");
  require(stride >= 1, ErrorKind::invalid_parameter, "stride must be >= 1");
  SmoothedSeries out;
  const long n = static_cast<long>(values.size());
  const long left = (window_len - 1) / 2;
  const long right = window_len / 2;
  for (long i = 0; i < n; i += stride) {
    const long lo = std::max(0L, i - left);
    const long hi = std::min(n - 1, i + right);
    const double m = static_cast<double>(hi - lo + 1);
    double sum = 0.0;
    for (long k = lo; k <= hi; ++k) sum += values[static_cast<std::size_t>(k)];
    const double mean = sum / m;
    double ss = 0.0;
    for (long k = lo; k <= hi; ++k) ss += (values[static_cast<std::size_t>(k)] - mean) * (values[static_cast<std::size_t>(k)] - mean);
    out.values.push_back(mean);
    out.standard_errors.push_back(m > 1 ? std::sqrt(ss / (m - 1.0)) / std::sqrt(m) : 0.0);
  }
  return out;
}

}  // namespace overtrain
