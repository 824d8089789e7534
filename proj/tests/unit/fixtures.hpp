#pragma once

// Small shared fixtures: a 6x6 sheet seen by a 32x32 camera, and a short
// articulated chain. Both stay under 60 vertices so finite differences are
// cheap.

#include "evtrack/pipeline.hpp"

#include <memory>
#include <random>
#include <vector>

namespace evtrack::testing {

inline RunConfig small_sheet_config() {
  RunConfig cfg;
  cfg.scene = "sheet";
  cfg.sheet_vertices = 6;
  cfg.width = cfg.height = 32;
  cfg.fx = cfg.fy = 60.0;
  cfg.cx = cfg.cy = 15.5;
  cfg.steps = 30;
  cfg.window = 100;
  cfg.rigid_iters = 10;
  cfg.full_iters = 20;
  return cfg;
}

inline Camera small_camera() { return small_sheet_config().camera(); }

/// Normalized event frame from the difference of two renderings.
inline EventFrame frame_between(const DeformableModel& model, std::span<const double> a, std::span<const double> b,
                                const Camera& cam, const RasterSettings& rs, double contrast = 10.0 / 255.0) {
  const GrayImage ia = render_gray(model.world_vertices(a), model.faces(), cam, rs);
  const GrayImage ib = render_gray(model.world_vertices(b), model.faces(), cam, rs);
  EventStream s;
  s.width = cam.width;
  s.height = cam.height;
  s.events = synth_events_from_images(ia, ib, contrast, 1);
  if (s.events.empty()) throw InvalidInputError("fixture produced no events");
  return accumulate(s, 0, s.size());
}

inline std::vector<double> jitter(std::vector<double> x, double amount, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amount, amount);
  for (double& v : x) v += u(rng);
  return x;
}

/// Mesh-branch context for the small sheet, holding the frame context alive.
struct SheetFixture {
  RunConfig cfg = small_sheet_config();
  SimulationRun sim;
  std::unique_ptr<SequenceContext> seq;
  std::unique_ptr<FrameContext> fc;
  std::vector<double> theta;  // perturbed ground truth

  explicit SheetFixture(ObjectiveWeights w = {}) {
    cfg.weights = w;
    sim = simulate(cfg);
    seq = std::make_unique<SequenceContext>(SequenceContext::make(sim.scene.model, cfg.camera(), cfg.raster(),
                                                                  cfg.threshold(), cfg.weights, Branch::kMesh));
    fc = std::make_unique<FrameContext>(FrameContext::make(*seq, sim.initial_params, sim.frames.front()));
    theta = jitter(sim.initial_params, 0.01, 7);
  }
};

inline ArticulatedModel small_chain() {
  FingerChainOptions o;
  o.joints = 3;
  o.rings_per_segment = 2;
  o.ring_vertices = 6;
  return make_finger_chain(o);
}

/// Parametric-branch context on a short chain viewed by the 32x32 camera.
struct ChainFixture {
  std::shared_ptr<const DeformableModel> model;
  Camera cam;
  RasterSettings rs;
  std::unique_ptr<SequenceContext> seq;
  std::unique_ptr<FrameContext> fc;
  std::vector<double> prev, theta;

  explicit ChainFixture(ObjectiveWeights w = {}) {
    model = std::make_shared<DeformableModel>(DeformableModel::parametric(small_chain()));
    cam = small_camera();
    RigidTransform r;
    r.t = Vec3(-0.3, -0.1, 1.6);
    prev = flatten(model->rest_params(r));
    std::vector<double> next = prev;
    next[kRigidDim + 5] += 0.3;  // bend the second joint about z
    next[kRigidDim + 8] += 0.2;
    seq = std::make_unique<SequenceContext>(SequenceContext::make(model, cam, rs, ThresholdParams::for_contrast(10.0 / 255.0),
                                                                  w, Branch::kParametric));
    fc = std::make_unique<FrameContext>(FrameContext::make(*seq, prev, frame_between(*model, prev, next, cam, rs)));
    theta = jitter(next, 0.01, 11);
  }
};

/// max |analytic - central difference| / max |central difference|.
template <typename F>
double grad_rel_error(F&& f, const std::vector<double>& x, double h = 1e-6) {
  std::vector<double> g(x.size(), 0.0);
  f(std::span<const double>(x), &g);
  const auto fd = fd_gradient([&](std::span<const double> y) { return f(y, nullptr); }, x, h);
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    diff = std::max(diff, std::abs(g[i] - fd[i]));
    scale = std::max(scale, std::abs(fd[i]));
  }
  return diff / std::max(scale, 1e-12);
}

}  // namespace evtrack::testing
