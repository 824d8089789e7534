#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace evtrack;
using namespace evtrack::testing;

namespace {

double quadratic(std::span<const double> x, std::vector<double>* g, const std::vector<double>& c) {
  double e = 0;
  if (g) g->resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    e += (x[i] - c[i]) * (x[i] - c[i]);
    if (g) (*g)[i] = 2 * (x[i] - c[i]);
  }
  return e;
}

}  // namespace

TEST(Gradient, ConstantAndQuadratic) {
  const std::vector<double> x{1, 2, 3};
  const auto g0 = gradient([](std::span<const double>, std::vector<double>*) { return 4.0; }, x);
  EXPECT_EQ(g0, (std::vector<double>(3, 0.0)));
  const std::vector<double> c{0, 1, 5};
  const auto g = gradient([&](std::span<const double> t, std::vector<double>* gr) { return quadratic(t, gr, c); }, x);
  EXPECT_EQ(g, (std::vector<double>{2, 2, -4}));
}

TEST(Gradient, NonFiniteObjectiveRaises) {
  const std::vector<double> x{1.0};
  EXPECT_THROW(gradient([](std::span<const double>, std::vector<double>*) { return std::nan(""); }, x), NonFiniteError);
}

TEST(FiniteDifferences, LinearIsExact) {
  const std::vector<double> a{0.5, -2, 3}, x{1, 1, 1};
  const auto g = fd_gradient([&](std::span<const double> t) { return a[0] * t[0] + a[1] * t[1] + a[2] * t[2]; }, x,
                             1e-4);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(g[i], a[i], 1e-8);
}

TEST(FiniteDifferences, SecondOrderDecay) {
  const std::vector<double> x{0.3};
  auto f = [](std::span<const double> t) { return std::sin(3 * t[0]); };
  const double exact = 3 * std::cos(0.9);
  double prev = std::abs(fd_gradient(f, x, 1e-2)[0] - exact);
  for (double h : {1e-3, 1e-4}) {
    const double err = std::abs(fd_gradient(f, x, h)[0] - exact);
    EXPECT_LT(err, prev / 50.0);  // ~100x per decade
    prev = err;
  }
}

TEST(Adam, ZeroGradientIsNoOp) {
  OptimizerState s(3);
  const std::vector<double> x{1, 2, 3};
  EXPECT_EQ(adam_step(s, x, std::vector<double>(3, 0.0)), x);
}

TEST(Adam, FirstStepHasStepSizeMagnitude) {
  AdamOptions o;
  o.step_size = 0.1;
  OptimizerState s(2, o);
  const auto y = adam_step(s, std::vector<double>{0, 0}, std::vector<double>{3.0, -0.002});
  EXPECT_NEAR(y[0], -0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_NEAR(y[1], 0.1 * 0.002 / (0.002 + 1e-8), 1e-15);
}

TEST(Adam, TwoStepsReduceQuadratic) {
  AdamOptions o;
  o.step_size = 0.1;
  OptimizerState s(1, o);
  const std::vector<double> c{0.0};
  std::vector<double> x{1.0}, g(1);
  const double e0 = quadratic(x, &g, c);
  x = adam_step(s, x, g);
  quadratic(x, &g, c);
  x = adam_step(s, x, g);
  EXPECT_LT(quadratic(x, nullptr, c), e0);
}

TEST(Adam, MaskFreezesCoordinates) {
  OptimizerState s(2);
  const std::vector<std::uint8_t> mask{0, 1};
  const auto y = adam_step(s, std::vector<double>{1, 1}, std::vector<double>{5, 5}, mask);
  EXPECT_EQ(y[0], 1.0);
  EXPECT_LT(y[1], 1.0);
  EXPECT_EQ(s.m[0], 0.0);
  EXPECT_THROW(adam_step(s, std::vector<double>{1}, std::vector<double>{1}), ShapeError);
}

TEST(Fit, ConvergesOnQuadraticAndKeepsBest) {
  const std::vector<double> c{0.1, -0.2, 0.3, 0.0, 0.05, 0.0, 1.0, 2.0};
  FitSchedule sch;
  sch.adam.step_size = 0.01;
  sch.rigid_iters = 100;
  sch.full_iters = 1500;
  sch.patience = 10000;  // Adam oscillates near the optimum; run the full budget
  const std::vector<double> x0(8, 0.0);
  const auto r = fit([&](std::span<const double> t, std::vector<double>* g) { return quadratic(t, g, c); }, x0, sch);
  EXPECT_LT(r.final_objective, 1e-3);
  EXPECT_LE(r.final_objective, r.initial_objective);
  EXPECT_DOUBLE_EQ(quadratic(r.params, nullptr, c), r.final_objective);
}

TEST(Fit, ZeroFullIterationsMovesOnlyRigid) {
  const std::vector<double> c(9, 1.0);
  FitSchedule sch;
  sch.full_iters = 0;
  sch.adam.step_size = 0.05;
  const std::vector<double> x0(9, 0.0);
  const auto r = fit([&](std::span<const double> t, std::vector<double>* g) { return quadratic(t, g, c); }, x0, sch);
  for (std::size_t i = 0; i < kRigidDim; ++i) EXPECT_GT(r.params[i], 0.0);
  for (std::size_t i = kRigidDim; i < 9; ++i) EXPECT_EQ(r.params[i], 0.0);
  EXPECT_EQ(r.full_iterations, 0);
}

TEST(Fit, EarlyStopOnPlateau) {
  FitSchedule sch;
  sch.rel_tol = 1e-3;
  sch.patience = 5;
  const std::vector<double> x0(7, 0.0);
  const auto r = fit([](std::span<const double>, std::vector<double>* g) {
    if (g) g->assign(7, 0.0);
    return 1.0;
  }, x0, sch);
  EXPECT_EQ(r.rigid_iterations, 6);
  EXPECT_EQ(r.full_iterations, 6);
}

TEST(Smoother, ForwardInverseRoundTrip) {
  const Adjacency adj = build_adjacency(make_sheet(4, 4));
  const VertexSmoother sm(adj, 2.0);
  const auto x = jitter(std::vector<double>(kRigidDim + 48, 0.0), 1.0, 3);
  const auto back = sm.inverse(sm.forward(x));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-12);
  // the rigid block passes through untouched
  for (std::size_t i = 0; i < kRigidDim; ++i) EXPECT_EQ(sm.forward(x)[i], x[i]);
  EXPECT_THROW(sm.forward(std::vector<double>(10, 0.0)), ShapeError);
  EXPECT_THROW(VertexSmoother(adj, 0.0), InvalidInputError);
}

TEST(Smoother, ConstantFieldIsFixed) {
  // L annihilates constants, so M x = x for a translated vertex block.
  const Adjacency adj = build_adjacency(make_sheet(3, 3));
  const VertexSmoother sm(adj, 5.0);
  std::vector<double> x(kRigidDim, 0.0);
  for (int i = 0; i < 9; ++i) x.insert(x.end(), {0.5, -1.0, 2.0});
  const auto u = sm.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(u[i], x[i], 1e-12);
}

TEST(Smoother, DisabledMatchesPlainAdam) {
  SheetFixture fx;
  FitSchedule sch = fx.cfg.schedule();
  sch.smoothing = 0.0;
  EXPECT_EQ(make_smoother(*fx.seq, sch), nullptr);
  const auto a = fit_frame(*fx.fc, fx.sim.initial_params, sch);
  const auto b = fit(FrameObjective{fx.fc.get()}, fx.sim.initial_params, sch);
  EXPECT_EQ(a.params, b.params);
}

TEST(Smoother, SmoothedFitStillDescends) {
  SheetFixture fx;
  FitSchedule sch = fx.cfg.schedule();
  sch.smoothing = 2.0;
  const auto r = fit_frame(*fx.fc, fx.sim.initial_params, sch);
  EXPECT_LT(r.final_objective, r.initial_objective);
}

TEST(FitFrame, EmptyFrameBarelyMoves) {
  SheetFixture fx;
  EventFrame empty = fx.sim.frames.front();
  std::fill(empty.values.begin(), empty.values.end(), 0.0);
  const FrameContext fc = FrameContext::make(*fx.seq, fx.sim.initial_params, empty);
  const auto r = fit_frame(fc, fx.sim.initial_params, fx.cfg.schedule());
  double drift = 0;
  for (std::size_t i = 0; i < r.params.size(); ++i)
    drift = std::max(drift, std::abs(r.params[i] - fx.sim.initial_params[i]));
  EXPECT_LT(drift, 1e-3);
}

TEST(FitFrame, RecoversTwoPixelTranslation) {
  // Parametric chain shifted 2 px to the right; the fit should land within half a pixel.
  ChainFixture base;
  const auto& model = *base.model;
  const Camera cam = base.cam;
  std::vector<double> prev = base.prev, truth = base.prev;
  const double depth = prev[2];
  truth[0] += 2.0 * depth / cam.fx;
  ObjectiveWeights w;
  const auto seq = SequenceContext::make(base.model, cam, base.rs, ThresholdParams::for_contrast(10.0 / 255.0), w,
                                         Branch::kParametric);
  const FrameContext fc = FrameContext::make(seq, prev, frame_between(model, prev, truth, cam, base.rs));
  FitSchedule sch;
  sch.adam.step_size = 2e-3;
  sch.rigid_iters = 200;
  sch.full_iters = 0;
  const auto r = fit_frame(fc, prev, sch);
  const auto got = model.world_vertices(r.params);
  const auto want = model.world_vertices(truth);
  double worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i)
    worst = std::max(worst, (project_world(cam, got[i]) - project_world(cam, want[i])).norm());
  EXPECT_LT(worst, 0.5);
}

TEST(TrackSequence, SingleFrameEqualsFitFrame) {
  SheetFixture fx;
  const std::vector<EventFrame> one{fx.sim.frames.front()};
  const auto sch = fx.cfg.schedule();
  const auto tr = track_sequence(*fx.seq, one, fx.sim.initial_params, sch);
  const auto fr = fit_frame(*fx.fc, fx.sim.initial_params, sch);
  ASSERT_EQ(tr.size(), 1u);
  EXPECT_EQ(tr.params[0], fr.params);
  EXPECT_EQ(tr.final_objective[0], fr.final_objective);
}

TEST(TrackSequence, StaticSceneStaysPut) {
  RunConfig cfg = small_sheet_config();
  cfg.scene = "static";
  const auto sim = simulate(cfg);
  EXPECT_EQ(sim.sequence.stream.size(), 0u);
  EventFrame empty;
  empty.width = cfg.width;
  empty.height = cfg.height;
  empty.values.assign(cfg.width * cfg.height, 0.0);
  auto seq = SequenceContext::make(sim.scene.model, cfg.camera(), cfg.raster(), cfg.threshold(), cfg.weights,
                                   Branch::kMesh);
  const auto tr = track_sequence(seq, {empty, empty, empty}, sim.initial_params, cfg.schedule());
  for (const auto& p : tr.params)
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], sim.initial_params[i], 1e-3);
}

TEST(TrackSequence, ObjectiveNeverIncreases) {
  SheetFixture fx;
  const std::vector<EventFrame> frames(fx.sim.frames.begin(), fx.sim.frames.begin() + 3);
  const auto tr = track_sequence(*fx.seq, frames, fx.sim.initial_params, fx.cfg.schedule());
  for (std::size_t i = 0; i < tr.size(); ++i) {
    EXPECT_FALSE(tr.failed[i]);
    EXPECT_LE(tr.final_objective[i], tr.initial_objective[i]);
  }
}
