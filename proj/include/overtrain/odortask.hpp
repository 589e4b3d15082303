#pragma once

// Synthetic odor-discrimination task: n-hot odors over k odorants, a fixed
// Gaussian random projection, and a dataset of one target, zero-overlap
// nontargets and overlap-graded held-out probes.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "overtrain/core.hpp"

namespace overtrain {

/// An n-hot binary vector of length k, stored as its sorted support.
class OdorVector {
 public:
  OdorVector() = default;

  OdorVector(int k, std::vector<int> odorants) : k_(k), odorants_(std::move(odorants)) {
    std::sort(odorants_.begin(), odorants_.end());
    require(k_ >= 1, ErrorKind::invalid_parameter, "odor length k must be positive");
    require(!odorants_.empty() && static_cast<int>(odorants_.size()) <= k_,
            ErrorKind::invalid_parameter, "odor must have 1 <= n <= k active odorants");
    require(std::adjacent_find(odorants_.begin(), odorants_.end()) == odorants_.end(),
            ErrorKind::invalid_parameter, "odorant indices must be distinct");
    require(odorants_.front() >= 0 && odorants_.back() < k_, ErrorKind::invalid_parameter,
            "odorant index out of range [0, k)");
  }

  int k() const noexcept { return k_; }
  int n() const noexcept { return static_cast<int>(odorants_.size()); }
  const std::vector<int>& odorants() const noexcept { return odorants_; }

  Vector bits() const {
    Vector v = Vector::Zero(k_);
    for (int i : odorants_) v(i) = 1.0;
    return v;
  }

  bool contains(int odorant) const {
    return std::binary_search(odorants_.begin(), odorants_.end(), odorant);
  }

  friend bool operator==(const OdorVector&, const OdorVector&) = default;
  friend auto operator<=>(const OdorVector& a, const OdorVector& b) {
    return a.odorants_ <=> b.odorants_;
  }

 private:
  int k_ = 0;
  std::vector<int> odorants_;
};

/// Number of shared odorants.
inline int overlap(const OdorVector& a, const OdorVector& b) {
  std::vector<int> common;
  std::set_intersection(a.odorants().begin(), a.odorants().end(), b.odorants().begin(),
                        b.odorants().end(), std::back_inserter(common));
  return static_cast<int>(common.size());
}

inline int hamming(const OdorVector& a, const OdorVector& b) {
  return a.n() + b.n() - 2 * overlap(a, b);
}

// Draws n distinct entries of `pool` uniformly at random.
inline std::vector<int> sample_without_replacement(const std::vector<int>& pool, int n, Rng& rng) {
  std::vector<int> scratch = pool;
  // Partial Fisher-Yates.
  for (int i = 0; i < n; ++i) {
    std::size_t j = i + rng.index(scratch.size() - i);
    std::swap(scratch[i], scratch[j]);
  }
  scratch.resize(n);
  return scratch;
}

inline OdorVector gen_odor(int k, int n, Rng& rng) {
  require(k >= 1, ErrorKind::invalid_parameter, "k must be >= 1");
  require(n >= 1 && n <= k, ErrorKind::invalid_parameter,
          "n must satisfy 1 <= n <= k (got n=" + std::to_string(n) + ", k=" + std::to_string(k) +
              ")");
  std::vector<int> all(k);
  std::iota(all.begin(), all.end(), 0);
  return OdorVector(k, sample_without_replacement(all, n, rng));
}

/// Binomial coefficient saturated at `cap` (avoids overflow for large k).
inline std::uint64_t choose_capped(int n, int r, std::uint64_t cap = 1ULL << 62) {
  if (r < 0 || r > n) return 0;
  r = std::min(r, n - r);
  long double acc = 1.0L;
  for (int i = 1; i <= r; ++i) {
    acc = acc * (n - r + i) / i;
    if (acc >= static_cast<long double>(cap)) return cap;
  }
  return static_cast<std::uint64_t>(acc + 0.5L);
}

/// Immutable d_embed x k Gaussian projection with entries N(0, 1/k).
class ProjectionMap {
 public:
  ProjectionMap(int d_embed, int k, std::uint64_t seed) : seed_(seed) {
    require(d_embed >= 1 && k >= 1, ErrorKind::invalid_parameter,
            "projection dimensions must be positive");
    Rng rng(seed);
    matrix_ = rng.normal_matrix(d_embed, k, 1.0 / std::sqrt(static_cast<double>(k)));
  }

  const Matrix& matrix() const noexcept { return matrix_; }
  std::uint64_t seed() const noexcept { return seed_; }
  int d_embed() const noexcept { return static_cast<int>(matrix_.rows()); }
  int k() const noexcept { return static_cast<int>(matrix_.cols()); }

 private:
  Matrix matrix_;
  std::uint64_t seed_;
};

inline Vector embed(const Vector& bits, const ProjectionMap& proj) {
  require(bits.size() == proj.k(), ErrorKind::invalid_parameter,
          "embedding dimension mismatch: odor length " + std::to_string(bits.size()) +
              " vs projection columns " + std::to_string(proj.k()));
  return proj.matrix() * bits;
}

inline Vector embed(const OdorVector& odor, const ProjectionMap& proj) {
  return embed(odor.bits(), proj);
}

struct TaskDataset {
  int k = 0;
  int n = 0;
  std::uint64_t seed = 0;
  OdorVector target;
  std::vector<OdorVector> nontargets;
  std::map<int, std::vector<OdorVector>> probes;  // overlap level j -> probes

  friend bool operator==(const TaskDataset&, const TaskDataset&) = default;
};

inline constexpr int kMaxRejections = 1'000'000;

/// Draws distinct odors with `make` until `count` are collected.
template <typename Make>
std::vector<OdorVector> draw_distinct(std::size_t count, Make&& make, const std::string& what) {
  std::set<OdorVector> seen;
  std::vector<OdorVector> out;
  out.reserve(count);
  int rejections = 0;
  while (out.size() < count) {
    OdorVector o = make();
    if (seen.insert(o).second) {
      out.push_back(std::move(o));
    } else if (++rejections > kMaxRejections) {
      throw Error(ErrorKind::capacity,
                  "rejection sampling for " + what + " exceeded " +
                      std::to_string(kMaxRejections) + " retries");
    }
  }
  return out;
}

/// Builds the task. Nontargets avoid all target odorants; a level-j probe holds
/// j target odorants plus n-j odorants from the nontarget pool.
inline TaskDataset gen_task(int k, int n, int m_nontargets,
                            const std::map<int, int>& probes_per_level, Rng& rng) {
  require(k >= 1 && n >= 1 && n <= k, ErrorKind::invalid_parameter,
          "task requires 1 <= n <= k");
  require(m_nontargets >= 0, ErrorKind::invalid_parameter, "m_nontargets must be >= 0");
  const std::uint64_t nontarget_cap = choose_capped(k - n, n);
  require(static_cast<std::uint64_t>(m_nontargets) <= nontarget_cap, ErrorKind::capacity,
          "m_nontargets <= C(k-n, n) violated: " + std::to_string(m_nontargets) + " > " +
              std::to_string(nontarget_cap));
  for (const auto& [j, count] : probes_per_level) {
    require(j >= 1 && j <= n, ErrorKind::invalid_parameter,
            "probe overlap level must satisfy 1 <= j <= n (got " + std::to_string(j) + ")");
    require(count >= 0, ErrorKind::invalid_parameter, "probe count must be >= 0");
    const std::uint64_t cap = choose_capped(n, j) * choose_capped(k - n, n - j);
    require(static_cast<std::uint64_t>(count) <= cap, ErrorKind::capacity,
            "probes at level " + std::to_string(j) + " <= C(n,j)*C(k-n,n-j) violated: " +
                std::to_string(count) + " > " + std::to_string(cap));
  }

  TaskDataset ds;
  ds.k = k;
  ds.n = n;
  ds.seed = rng.seed();
  ds.target = gen_odor(k, n, rng);

  std::vector<int> pool;
  for (int i = 0; i < k; ++i)
    if (!ds.target.contains(i)) pool.push_back(i);

  ds.nontargets = draw_distinct(
      m_nontargets, [&] { return OdorVector(k, sample_without_replacement(pool, n, rng)); },
      "nontargets");

  for (const auto& [j, count] : probes_per_level) {
    ds.probes[j] = draw_distinct(
        count,
        [&, j = j] {
          auto shared = sample_without_replacement(ds.target.odorants(), j, rng);
          auto rest = sample_without_replacement(pool, n - j, rng);
          shared.insert(shared.end(), rest.begin(), rest.end());
          return OdorVector(k, std::move(shared));
        },
        "probes at level " + std::to_string(j));
  }
  return ds;
}

/// Training and probe inputs after projection. Row 0 of `train_inputs` is the
/// target; labels are +1 (target) / -1 (nontarget).
struct EmbeddedTask {
  Matrix train_inputs;
  Vector labels;
  std::map<int, Matrix> probe_inputs;

  Eigen::Index train_count() const { return train_inputs.rows(); }
  Eigen::Index probe_count() const {
    Eigen::Index total = 0;
    for (const auto& [j, m] : probe_inputs) total += m.rows();
    return total;
  }
  Eigen::Index input_dim() const { return train_inputs.cols(); }
};

inline EmbeddedTask embed_task(const TaskDataset& ds, const ProjectionMap& proj) {
  EmbeddedTask out;
  const auto rows = static_cast<Eigen::Index>(1 + ds.nontargets.size());
  out.train_inputs.resize(rows, proj.d_embed());
  out.labels.resize(rows);
  out.train_inputs.row(0) = embed(ds.target, proj).transpose();
  out.labels(0) = 1.0;
  for (std::size_t i = 0; i < ds.nontargets.size(); ++i) {
    out.train_inputs.row(static_cast<Eigen::Index>(i + 1)) =
        embed(ds.nontargets[i], proj).transpose();
    out.labels(static_cast<Eigen::Index>(i + 1)) = -1.0;
  }
  for (const auto& [j, list] : ds.probes) {
    if (list.empty()) continue;
    Matrix m(static_cast<Eigen::Index>(list.size()), proj.d_embed());
    for (std::size_t i = 0; i < list.size(); ++i)
      m.row(static_cast<Eigen::Index>(i)) = embed(list[i], proj).transpose();
    out.probe_inputs.emplace(j, std::move(m));
  }
  return out;
}

// JSON: odors are sorted odorant-index lists.
inline nlohmann::json to_json(const TaskDataset& ds) {
  nlohmann::json j;
  j["k"] = ds.k;
  j["n"] = ds.n;
  j["seed"] = ds.seed;
  j["target"] = ds.target.odorants();
  j["nontargets"] = nlohmann::json::array();
  for (const auto& o : ds.nontargets) j["nontargets"].push_back(o.odorants());
  j["probes"] = nlohmann::json::object();
  for (const auto& [level, list] : ds.probes) {
    auto& arr = j["probes"][std::to_string(level)];
    arr = nlohmann::json::array();
    for (const auto& o : list) arr.push_back(o.odorants());
  }
  return j;
}

inline TaskDataset task_from_json(const nlohmann::json& j) {
  try {
    TaskDataset ds;
    ds.k = j.at("k").get<int>();
    ds.n = j.at("n").get<int>();
    ds.seed = j.at("seed").get<std::uint64_t>();
    auto odor = [&](const nlohmann::json& v) {
      OdorVector o(ds.k, v.get<std::vector<int>>());
      require(o.n() == ds.n, ErrorKind::validation, "odor does not have n active odorants");
      return o;
    };
    ds.target = odor(j.at("target"));
    for (const auto& v : j.at("nontargets")) {
      ds.nontargets.push_back(odor(v));
      require(overlap(ds.nontargets.back(), ds.target) == 0, ErrorKind::validation,
              "nontarget shares odorants with the target");
    }
    for (const auto& [key, list] : j.at("probes").items()) {
      const int level = std::stoi(key);
      auto& dest = ds.probes[level];
      for (const auto& v : list) {
        dest.push_back(odor(v));
        require(overlap(dest.back(), ds.target) == level, ErrorKind::validation,
                "probe overlap does not match its level " + key);
      }
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("task dataset JSON: ") + e.what());
  }
}

}  // namespace overtrain
