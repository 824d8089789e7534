#pragma once

// Gradient contract, finite-difference oracle, Adam, per-frame fitting and
// sequence tracking.

#include "evtrack/errors.hpp"
#include "evtrack/events.hpp"
#include "evtrack/objective.hpp"

#include <Eigen/SparseCholesky>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace evtrack {

/// Analytic gradient of a differentiable objective. `f(theta, &grad)` must
/// return the value and fill the gradient.
template <typename F>
std::vector<double> gradient(F&& f, std::span<const double> theta) {
  std::vector<double> g(theta.size(), 0.0);
  const double value = f(theta, &g);
  detail::check_finite("objective", value, g);
  return g;
}

/// Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h.
template <typename F>
std::vector<double> fd_gradient(F&& f, std::span<const double> theta, double h) {
  std::vector<double> x(theta.begin(), theta.end());
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(std::span<const double>(x));
    x[i] = orig - h;
    const double fm = f(std::span<const double>(x));
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

struct AdamOptions {
  double step_size = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamOptions options;
  std::vector<double> m, v;
  std::int64_t iteration = 0;

  explicit OptimizerState(std::size_t dim, AdamOptions opt = {})
      : options(opt), m(dim, 0.0), v(dim, 0.0) {}
};

/// One bias-corrected Adam update. Coordinates with active[i] == 0 are left
/// untouched (their moments included).
inline std::vector<double> adam_step(OptimizerState& s, std::span<const double> theta, std::span<const double> grad,
                                     std::span<const std::uint8_t> active = {}) {
  if (theta.size() != s.m.size() || grad.size() != s.m.size())
    throw ShapeError("adam_step: dimension mismatch with optimizer state");
  if (!active.empty() && active.size() != theta.size()) throw ShapeError("adam_step: mask dimension mismatch");
  ++s.iteration;
  const auto& o = s.options;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.iteration));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.iteration));
  std::vector<double> out(theta.begin(), theta.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!active.empty() && !active[i]) continue;
    s.m[i] = o.beta1 * s.m[i] + (1.0 - o.beta1) * grad[i];
    s.v[i] = o.beta2 * s.v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
    const double mhat = s.m[i] / c1;
    const double vhat = s.v[i] / c2;
    out[i] -= o.step_size * mhat / (std::sqrt(vhat) + o.epsilon);
  }
  return out;
}

struct FitSchedule {
  int rigid_iters = 50;
  int full_iters = 200;
  double rel_tol = 1e-6;  // early stop when relative decrease over `patience` iterations is below this
  int patience = 10;
  AdamOptions adam;
  double smoothing = 0.0;  // Laplacian reparameterization strength for free vertices; 0 disables
};

/// Free-vertex reparameterization u = (I + s L) x with L the uniform graph
/// Laplacian of the template. Adam steps in u damp high-frequency vertex
/// noise while leaving the objective untouched.
class VertexSmoother {
 public:
  VertexSmoother(const Adjacency& adj, double strength, std::size_t offset = kRigidDim)
      : offset_(offset), n_(adj.size()) {
    if (!(strength > 0.0)) throw InvalidInputError("vertex smoother: strength must be positive");
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t i = 0; i < n_; ++i) {
      const auto& nb = adj[i];
      trip.emplace_back(i, i, 1.0 + strength * static_cast<double>(nb.size()));
      for (int j : nb) trip.emplace_back(i, j, -strength);
    }
    m_.resize(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
    m_.setFromTriplets(trip.begin(), trip.end());
    llt_.compute(m_);
    if (llt_.info() != Eigen::Success) throw InvalidInputError("vertex smoother: factorization failed");
  }

  /// x -> u on the vertex block; other entries are copied.
  std::vector<double> forward(std::span<const double> x) const {
    std::vector<double> out(x.begin(), x.end());
    Eigen::MatrixX3d v = block(x);
    Eigen::MatrixX3d u = m_ * v;
    store(u, out);
    return out;
  }
  /// u -> x, and likewise pulls a gradient in x back to u (M is symmetric).
  std::vector<double> inverse(std::span<const double> u) const {
    std::vector<double> out(u.begin(), u.end());
    Eigen::MatrixX3d x = llt_.solve(block(u));
    store(x, out);
    return out;
  }

 private:
  Eigen::MatrixX3d block(std::span<const double> x) const {
    if (x.size() != offset_ + 3 * n_) throw ShapeError("vertex smoother: parameter size mismatch");
    Eigen::MatrixX3d v(static_cast<Eigen::Index>(n_), 3);
    for (std::size_t i = 0; i < n_; ++i)
      for (int a = 0; a < 3; ++a) v(static_cast<Eigen::Index>(i), a) = x[offset_ + 3 * i + a];
    return v;
  }
  void store(const Eigen::MatrixX3d& v, std::vector<double>& out) const {
    for (std::size_t i = 0; i < n_; ++i)
      for (int a = 0; a < 3; ++a) out[offset_ + 3 * i + a] = v(static_cast<Eigen::Index>(i), a);
  }

  std::size_t offset_;
  std::size_t n_;
  Eigen::SparseMatrix<double> m_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt_;
};

struct FitResult {
  std::vector<double> params;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  int rigid_iterations = 0;
  int full_iterations = 0;
};

/// Optional progress sink for `frame=<i> phase=<p> iter=<k> E=<value>` lines.
struct FitLog {
  std::FILE* stream = nullptr;
  int frame = 0;
  int every = 1;
};

/// Objective closure for one frame.
struct FrameObjective {
  const FrameContext* ctx;
  double operator()(std::span<const double> theta, std::vector<double>* grad = nullptr) const {
    return evaluate_objective(*ctx, theta, grad).total;
  }
};

/// Rigid-only iterations followed by full iterations; returns the best
/// iterate seen. Adam moments are reset at the start of each phase.
template <typename F>
FitResult fit(F&& objective, std::span<const double> theta_init, const FitSchedule& schedule, const FitLog& log = {},
              const VertexSmoother* smoother = nullptr) {
  const std::size_t dim = theta_init.size();
  FitResult res;
  std::vector<double> theta(theta_init.begin(), theta_init.end());
  std::vector<double> grad;
  const double e0 = objective(std::span<const double>(theta), &grad);
  if (!std::isfinite(e0)) throw NonFiniteError("objective", "objective is non-finite at the initial parameters");
  res.initial_objective = e0;
  double best = e0;
  std::vector<double> best_theta = theta;

  auto run_phase = [&](const char* name, int iters, std::span<const std::uint8_t> active) {
    OptimizerState state(dim, schedule.adam);
    std::vector<double> history;
    double value = objective(std::span<const double>(theta), &grad);
    // Adam runs on u; theta is always the matching point in x.
    std::vector<double> u = smoother ? smoother->forward(theta) : theta;
    int done = 0;
    for (int k = 0; k < iters; ++k) {
      if (smoother) {
        u = adam_step(state, u, smoother->inverse(grad), active);
        theta = smoother->inverse(u);
      } else {
        theta = adam_step(state, theta, grad, active);
      }
      value = objective(std::span<const double>(theta), &grad);
      ++done;
      if (!std::isfinite(value)) break;
      if (value < best) {
        best = value;
        best_theta = theta;
      }
      if (log.stream && (k % log.every == 0 || k + 1 == iters))
        std::fprintf(log.stream, "frame=%d phase=%s iter=%d E=%.10g\n", log.frame, name, k, value);
      history.push_back(value);
      if (static_cast<int>(history.size()) > schedule.patience) {
        const double old = history[history.size() - 1 - schedule.patience];
        if ((old - value) < schedule.rel_tol * std::abs(old)) break;
      }
    }
    // Continue the next phase from the best iterate.
    theta = best_theta;
    return done;
  };

  std::vector<std::uint8_t> rigid_mask(dim, 0);
  for (std::size_t i = 0; i < std::min(dim, kRigidDim); ++i) rigid_mask[i] = 1;
  res.rigid_iterations = run_phase("rigid", schedule.rigid_iters, rigid_mask);
  res.full_iterations = run_phase("full", schedule.full_iters, {});
  res.params = best_theta;
  res.final_objective = best;
  return res;
}

/// Smoother for the free-vertex branch, or nothing when disabled.
inline std::unique_ptr<VertexSmoother> make_smoother(const SequenceContext& seq, const FitSchedule& schedule) {
  if (schedule.smoothing <= 0.0 || seq.branch != Branch::kMesh) return nullptr;
  return std::make_unique<VertexSmoother>(seq.adjacency, schedule.smoothing);
}

inline FitResult fit_frame(const FrameContext& ctx, std::span<const double> theta_init, const FitSchedule& schedule,
                           const FitLog& log = {}, const VertexSmoother* smoother = nullptr) {
  std::unique_ptr<VertexSmoother> local;
  if (!smoother && (local = make_smoother(*ctx.seq, schedule))) smoother = local.get();
  return fit(FrameObjective{&ctx}, theta_init, schedule, log, smoother);
}

struct TrackResult {
  std::vector<std::vector<double>> params;  // one per frame
  std::vector<double> initial_objective;    // at the warm start
  std::vector<double> final_objective;
  std::vector<int> iterations;
  std::vector<bool> failed;
  std::vector<std::string> errors;
  double wall_seconds = 0.0;

  std::size_t size() const { return params.size(); }
};

/// Frame-wise fitting with warm starts: the previous estimate initializes the
/// next frame and serves as the reference state for rendering and E_reg.
inline TrackResult track_sequence(const SequenceContext& seq, const std::vector<EventFrame>& frames,
                                  std::span<const double> theta0, const FitSchedule& schedule,
                                  std::FILE* log_stream = nullptr, int log_every = 10) {
  const auto t_start = std::chrono::steady_clock::now();
  TrackResult res;
  std::vector<double> prev(theta0.begin(), theta0.end());
  const auto smoother = make_smoother(seq, schedule);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    try {
      const FrameContext fc = FrameContext::make(seq, prev, frames[i]);
      const FitResult fr = fit_frame(fc, prev, schedule, FitLog{log_stream, static_cast<int>(i), log_every},
                                     smoother.get());
      prev = fr.params;
      res.initial_objective.push_back(fr.initial_objective);
      res.final_objective.push_back(fr.final_objective);
      res.iterations.push_back(fr.rigid_iterations + fr.full_iterations);
      res.failed.push_back(false);
      res.errors.emplace_back();
    } catch (const Error& e) {
      res.initial_objective.push_back(std::numeric_limits<double>::quiet_NaN());
      res.final_objective.push_back(std::numeric_limits<double>::quiet_NaN());
      res.iterations.push_back(0);
      res.failed.push_back(true);
      res.errors.emplace_back(e.what());
      if (log_stream) std::fprintf(log_stream, "frame=%zu failed: %s\n", i, e.what());
    }
    res.params.push_back(prev);
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

}  // namespace evtrack
