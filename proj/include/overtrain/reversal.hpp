#pragma once

// Mean-field dynamics of a wide two-layer linear network trained on whitened
// data with squared error, and the matching finite-width simulation.
//
// Phase 1 (original labels, 0 <= t <= T):
//   K_y = sqrt(1 + g^2 f_y^2),   d/dt f_y = 2 sqrt(1 + g^2 f_y^2) (y - f_y)
// Phase 2 (fresh readout on reversed labels, K_y(T) frozen):
//   d/dt f_rev = sqrt((K_y(T) + 1)^2 + 4 g^2 f_rev^2) (-y - f_rev)
//
// Both equations are integrated with classical RK4; K_y in phase 1 is always
// derived from the algebraic constraint, never integrated.

#include <cmath>
#include <optional>
#include <vector>

#include "overtrain/nets.hpp"
#include "overtrain/popanalysis.hpp"

namespace overtrain {

inline constexpr long kMaxOdeSteps = 100'000'000;

template <typename F>
double rk4_step(F&& rhs, double x, double h) {
  const double k1 = rhs(x);
  const double k2 = rhs(x + 0.5 * h * k1);
  const double k3 = rhs(x + 0.5 * h * k2);
  const double k4 = rhs(x + h * k3);
  return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace detail {
inline long step_count(double horizon, double dt) {
  require(dt > 0 && std::isfinite(dt), ErrorKind::invalid_parameter, "dt must be positive");
  require(horizon > 0 && std::isfinite(horizon), ErrorKind::invalid_parameter, "integration horizon must be positive");
  const double steps = std::ceil(horizon / dt - 1e-9);
  if (steps > static_cast<double>(kMaxOdeSteps))
    throw Error(ErrorKind::budget, "ODE needs " + format_double(steps) + " steps, more than the 1e8 budget");
  return static_cast<long>(steps);
}
}  // namespace detail

struct MeanFieldState {
  double t = 0.0;
  double f_y = 0.0;
  double K_y = 1.0;
  double gamma0 = 1.0;
};

inline double phase1_alignment(double gamma0, double f_y) { return std::sqrt(1.0 + gamma0 * gamma0 * f_y * f_y); }

inline double phase1_rate(double gamma0, double f_y, double y) {
  return 2.0 * phase1_alignment(gamma0, f_y) * (y - f_y);
}

inline double phase2_rate(double K_yT, double gamma0, double f_rev, double y) {
  const double a = K_yT + 1.0;
  return std::sqrt(a * a + 4.0 * gamma0 * gamma0 * f_rev * f_rev) * (-y - f_rev);
}

/// Phase-1 trajectory from f_y(0) = 0 to time T; the last step is shortened
/// so the trajectory ends exactly at T.
inline std::vector<MeanFieldState> integrate_phase1(double gamma0, double T, double dt = 1e-3, double y = 1.0) {
  require(gamma0 > 0, ErrorKind::invalid_parameter, "gamma0 must be positive");
  const long steps = detail::step_count(T, dt);
  std::vector<MeanFieldState> traj;
  traj.reserve(static_cast<std::size_t>(steps + 1));
  double f = 0.0;
  traj.push_back({0.0, f, phase1_alignment(gamma0, f), gamma0});
  for (long s = 1; s <= steps; ++s) {
    const double t_prev = static_cast<double>(s - 1) * dt;
    const double t = s == steps ? T : static_cast<double>(s) * dt;
    f = rk4_step([&](double v) { return phase1_rate(gamma0, v, y); }, f, t - t_prev);
    traj.push_back({t, f, phase1_alignment(gamma0, f), gamma0});
  }
  return traj;
}

/// gamma0 -> 0 limits: f_y = y (1 - e^{-2t}) and f_rev = -y (1 - e^{-(K_y(T) + 1) t}).
inline double lazy_phase1(double t, double y = 1.0) { return y * -std::expm1(-2.0 * t); }
inline double lazy_phase2(double t, double K_yT, double y = 1.0) { return y * std::expm1(-(K_yT + 1.0) * t); }

struct ReversalTrajectory {
  std::vector<double> times;
  std::vector<double> f_rev_values;
  double K_yT = 1.0;
  std::optional<double> time_to_threshold;
};

/// Phase-2 trajectory from f_rev(0) = 0. The threshold time is the first
/// crossing of y * f_rev <= -(1 - eps), linearly interpolated within a step.
inline ReversalTrajectory integrate_phase2(double K_yT, double gamma0, double dt = 1e-3, double y = 1.0,
                                           double horizon = 50.0, double eps = 0.1) {
  require(K_yT >= 1.0, ErrorKind::invalid_parameter, "K_y(T) must be >= 1");
  require(gamma0 > 0, ErrorKind::invalid_parameter, "gamma0 must be positive");
  require(eps > 0 && eps < 1, ErrorKind::invalid_parameter, "threshold eps must lie in (0, 1)");
  const long steps = detail::step_count(horizon, dt);
  const double level = -(1.0 - eps);
  ReversalTrajectory r;
  r.K_yT = K_yT;
  r.times.reserve(static_cast<std::size_t>(steps + 1));
  r.f_rev_values.reserve(static_cast<std::size_t>(steps + 1));
  double f = 0.0;
  r.times.push_back(0.0);
  r.f_rev_values.push_back(f);
  for (long s = 1; s <= steps; ++s) {
    const double t_prev = static_cast<double>(s - 1) * dt;
    const double t = s == steps ? horizon : static_cast<double>(s) * dt;
    const double f_prev = f;
    f = rk4_step([&](double v) { return phase2_rate(K_yT, gamma0, v, y); }, f, t - t_prev);
    r.times.push_back(t);
    r.f_rev_values.push_back(f);
    if (!r.time_to_threshold && y * f <= level) {
      const double a = y * f_prev, b = y * f;
      const double frac = a == b ? 1.0 : (a - level) / (a - b);
      r.time_to_threshold = t_prev + frac * (t - t_prev);
    }
  }
  return r;
}

struct SweepRow {
  double T = 0.0;
  double K_yT = 1.0;
  std::optional<double> reversal_time;
};

struct ReversalSweep {
  std::vector<SweepRow> rows;
};

inline ReversalSweep sweep_pretraining(double gamma0, const std::vector<double>& T_list, double dt = 1e-3,
                                       double eps = 0.1, double horizon = 50.0) {
  require(std::is_sorted(T_list.begin(), T_list.end()), ErrorKind::invalid_parameter,
          "pretraining durations must be sorted increasing");
  ReversalSweep sweep;
  for (double T : T_list) {
    const double K = integrate_phase1(gamma0, T, dt).back().K_y;
    const auto rev = integrate_phase2(K, gamma0, dt, 1.0, horizon, eps);
    sweep.rows.push_back({T, K, rev.time_to_threshold});
  }
  return sweep;
}

// ---------------------------------------------------------------------------
// Finite-width simulation
// ---------------------------------------------------------------------------

/// Orthonormal inputs with labels (+1, +1, -1, -1).
struct WhitenedTask {
  Matrix X;  // P x d, orthonormal rows
  Vector y;  // +1 / -1

  Vector unit_labels() const { return y / y.norm(); }
};

inline WhitenedTask four_odor_task() {
  WhitenedTask t;
  t.X = Matrix::Identity(4, 4);
  t.y = Vector(4);
  t.y << 1.0, 1.0, -1.0, -1.0;
  return t;
}

struct EmpiricalOptions {
  int width = 4000;
  double gamma0 = 1.0;
  double lr = 0.01;              // theory time per step
  long pretrain_steps = 300;     // phase-1 steps
  long horizon_steps = 0;        // phase-2 steps (0 skips phase 2)
  std::uint64_t seed = 0;
  double eps = 0.1;
  bool update_W1_in_reversal = true;
  std::vector<long> checkpoints;  // phase-1 steps at which hidden states are kept
};

struct HiddenCheckpoint {
  long step = 0;
  Matrix hidden;  // P x N
  Matrix kernel;  // P x P
};

struct EmpiricalReversal {
  // Phase 1, one entry per step 0..pretrain_steps.
  std::vector<double> t;
  std::vector<double> f_y;
  std::vector<double> K_y;
  std::vector<double> loss;
  // Phase 2, one entry per step 0..horizon_steps.
  std::vector<double> t_rev;
  std::vector<double> f_rev;
  std::vector<double> loss_rev;
  std::optional<long> reversal_steps;  // first phase-2 step with f_rev <= -(1 - eps)
  Matrix initial_kernel;
  Matrix final_kernel;  // end of phase 1
  std::vector<HiddenCheckpoint> checkpoints;
};

/// Full-batch gradient descent on L = 1/2 |y_hat - f|^2 where y_hat is the
/// unit-norm label vector, so f_y = y_hat . f converges to 1. Parameters move
/// by lr * gamma0^2 * N * grad, which maps step s onto theory time lr * s.
inline EmpiricalReversal empirical_reversal(const WhitenedTask& task, const EmpiricalOptions& opts) {
  require(opts.width >= 1 && opts.gamma0 > 0 && opts.lr > 0, ErrorKind::invalid_parameter,
          "empirical reversal needs width >= 1, gamma0 > 0, lr > 0");
  require(opts.pretrain_steps >= 0 && opts.horizon_steps >= 0, ErrorKind::invalid_parameter,
          "step counts must be non-negative");
  Rng rng(opts.seed);
  Linear2Params p = Linear2Params::init(opts.width, static_cast<int>(task.X.cols()), opts.gamma0, rng);
  const Vector yhat = task.unit_labels();
  const double N = static_cast<double>(opts.width);
  const double scale = N * opts.gamma0;
  const double eta = opts.lr * opts.gamma0 * opts.gamma0 * N;

  EmpiricalReversal out;
  auto guard = [](const Linear2Params& q, long step) {
    if (!q.W1.allFinite() || !q.w2.allFinite() || !q.v.allFinite())
      throw Error(ErrorKind::divergence, "linear network diverged at step " + std::to_string(step));
  };

  for (long s = 0;; ++s) {
    const Matrix H = linear2_hidden(p, task.X);  // P x N
    const Vector f = H * p.w2 / scale;
    const Vector resid = yhat - f;
    const Matrix K = H * H.transpose() / N;
    out.t.push_back(opts.lr * static_cast<double>(s));
    out.f_y.push_back(yhat.dot(f));
    out.K_y.push_back(label_alignment(K, yhat));
    out.loss.push_back(0.5 * resid.squaredNorm());
    if (s == 0) out.initial_kernel = K;
    if (std::find(opts.checkpoints.begin(), opts.checkpoints.end(), s) != opts.checkpoints.end())
      out.checkpoints.push_back({s, H, K});
    if (s == opts.pretrain_steps) {
      out.final_kernel = K;
      break;
    }
    const Linear2Params g = linear2_gradient(p, task.X, yhat, Phase::original);
    p.w2 -= eta * g.w2;
    p.W1 -= eta * g.W1;
    guard(p, s + 1);
    if (!std::isfinite(out.loss.back()) || out.loss.back() > 1e6)
      throw Error(ErrorKind::divergence, "phase-1 loss diverged at step " + std::to_string(s));
  }

  if (opts.horizon_steps == 0) return out;
  const Vector target = -yhat;
  for (long s = 0;; ++s) {
    const Matrix H = linear2_hidden(p, task.X);
    const Vector f = H * p.v / scale;
    const Vector resid = target - f;
    out.t_rev.push_back(opts.lr * static_cast<double>(s));
    out.f_rev.push_back(yhat.dot(f));
    out.loss_rev.push_back(0.5 * resid.squaredNorm());
    if (!out.reversal_steps && out.f_rev.back() <= -(1.0 - opts.eps)) out.reversal_steps = s;
    if (s == opts.horizon_steps) break;
    const Linear2Params g = linear2_gradient(p, task.X, target, Phase::reversal);
    p.v -= eta * g.v;
    if (opts.update_W1_in_reversal) p.W1 -= eta * g.W1;
    guard(p, opts.pretrain_steps + s + 1);
    if (!std::isfinite(out.loss_rev.back()) || out.loss_rev.back() > 1e6)
      throw Error(ErrorKind::divergence, "phase-2 loss diverged at step " + std::to_string(s));
  }
  return out;
}

/// Fraction of the squared Frobenius change K - K0 lying along the rank-one
/// label direction y y' / |y|^2. Defined as 1 when the kernel has not moved.
inline double kernel_direction_fraction(const Matrix& K0, const Matrix& K, const Vector& y) {
  const Matrix dK = K - K0;
  const double total = dK.squaredNorm();
  if (total == 0.0) return 1.0;
  const Vector u = y / y.norm();
  const double along = u.dot(dK * u);
  return along * along / total;
}

inline std::vector<double> kernel_direction_check(const std::vector<Matrix>& kernels, const Vector& y) {
  require(!kernels.empty(), ErrorKind::invalid_parameter, "kernel history is empty");
  std::vector<double> out;
  for (const auto& K : kernels) out.push_back(kernel_direction_fraction(kernels.front(), K, y));
  return out;
}

}  // namespace overtrain
