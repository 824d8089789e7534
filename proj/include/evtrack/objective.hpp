#pragma once

// Energy terms and the two total objectives.
//
// Parametric branch:  E = E_event + lambda1 E_no_event + lambda E_reg
// Mesh branch:        E = E_event + lambda_sil E_sil + lambda_top E_top
//                         + lambda_iso E_iso + lambda_geo E_geo + lambda_reg E_reg
//
// All gradients are with respect to the flat parameter vector (see params.hpp).
// Image terms flow through SoftRasterizer::backward and DeformableModel::pullback.
// The regularizers of the mesh branch act on the free (object-frame) vertices.

#include "evtrack/errors.hpp"
#include "evtrack/events.hpp"
#include "evtrack/geometry.hpp"
#include "evtrack/params.hpp"
#include "evtrack/render.hpp"
#include "evtrack/simulator.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace evtrack {

enum class Branch { kParametric, kMesh };

inline const char* to_string(Branch b) { return b == Branch::kParametric ? "parametric" : "mesh"; }

struct ObjectiveWeights {
  double lambda = 10.0;     // E_reg, parametric branch
  double lambda1 = 0.1;     // E_no_event
  double lambda_sil = 0.01;
  double lambda_top = 1.0;
  double lambda_iso = 1.0;
  double lambda_geo = 1.0;
  double lambda_reg = 10.0;  // E_reg, mesh branch

  void validate() const {
    for (double w : {lambda, lambda1, lambda_sil, lambda_top, lambda_iso, lambda_geo, lambda_reg})
      if (!(w >= 0.0)) throw InvalidInputError("objective weights must be non-negative");
  }
};

/// gamma(x) = 1 where the input frame has an event.
struct EventMask {
  int width = 0, height = 0;
  std::vector<std::uint8_t> gamma;

  static EventMask from_frame(const EventFrame& f) {
    EventMask m{f.width, f.height, std::vector<std::uint8_t>(f.values.size(), 0)};
    for (std::size_t i = 0; i < f.values.size(); ++i) m.gamma[i] = f.values[i] != 0.0 ? 1 : 0;
    return m;
  }
  double complement(std::size_t i) const { return 1.0 - gamma[i]; }
};

/// Everything fixed for a whole sequence.
struct SequenceContext {
  std::shared_ptr<const DeformableModel> model;
  Camera camera;
  RasterSettings raster;
  ThresholdParams threshold;
  ObjectiveWeights weights;
  Branch branch = Branch::kMesh;
  int noise_min_count = 3;
  double visibility_tol = 1e-3;
  // Mesh-branch regularizer data, computed on the template once.
  Adjacency adjacency;
  GeodesicTable geodesics;

  static SequenceContext make(std::shared_ptr<const DeformableModel> model, const Camera& cam,
                              const RasterSettings& rs, const ThresholdParams& tp, const ObjectiveWeights& w,
                              Branch branch, int geodesic_stride = 10) {
    SequenceContext ctx;
    cam.validate();
    rs.validate();
    tp.validate();
    w.validate();
    ctx.model = std::move(model);
    ctx.camera = cam;
    ctx.raster = rs;
    ctx.threshold = tp;
    ctx.weights = w;
    ctx.branch = branch;
    if (branch == Branch::kMesh && ctx.model->is_parametric())
      throw InvalidInputError("mesh objective requires a free-vertex model");
    const TriMesh& tmpl = ctx.model->template_mesh();
    ctx.adjacency = build_adjacency(tmpl);
    if (branch == Branch::kMesh && tmpl.num_vertices() > 0) {
      const auto samples = subsample_vertices(tmpl, geodesic_stride);
      ctx.geodesics = geodesic_distances(tmpl, samples);
    }
    return ctx;
  }
};

/// Everything fixed while fitting one event frame.
struct FrameContext {
  const SequenceContext* seq = nullptr;
  std::vector<double> prev_params;
  GrayImage prev_image;
  EventFrame input;
  EventMask mask;
  std::vector<Vec2> relevant_events;  // pixel coordinates surviving the noise filter

  static FrameContext make(const SequenceContext& seq, std::vector<double> prev_params, EventFrame input) {
    FrameContext fc;
    fc.seq = &seq;
    if (input.width != seq.camera.width || input.height != seq.camera.height)
      throw ShapeError("event frame size does not match the camera");
    fc.prev_params = std::move(prev_params);
    const auto prev_v = seq.model->world_vertices(fc.prev_params);
    fc.prev_image = render_gray(prev_v, seq.model->faces(), seq.camera, seq.raster);
    fc.mask = EventMask::from_frame(input);
    for (int pix : filter_noise(input, seq.noise_min_count))
      fc.relevant_events.emplace_back(pix % input.width, pix / input.width);
    fc.input = std::move(input);
    return fc;
  }
};

struct EnergyBreakdown {
  double event = 0, no_event = 0, sil = 0, top = 0, iso = 0, geo = 0, reg = 0;
  double total = 0;
};

namespace detail {

inline void add_scaled(std::vector<double>* grad, std::span<const double> g, double scale) {
  if (!grad) return;
  for (std::size_t i = 0; i < g.size(); ++i) (*grad)[i] += scale * g[i];
}

inline void check_finite(const std::string& term, double value, std::span<const double> grad = {}) {
  if (!std::isfinite(value)) throw NonFiniteError(term, "non-finite value in term " + term);
  for (double g : grad)
    if (!std::isfinite(g)) throw NonFiniteError(term, "non-finite gradient in term " + term);
}

inline void vertex_grad_to_flat(std::span<const Vec3> gv, std::vector<double>* grad, double scale) {
  if (!grad) return;
  for (std::size_t i = 0; i < gv.size(); ++i)
    for (int k = 0; k < 3; ++k) (*grad)[kRigidDim + 3 * i + k] += scale * gv[i](k);
}

inline std::vector<Vec3> free_vertices(std::span<const double> flat) {
  std::vector<Vec3> v((flat.size() - kRigidDim) / 3);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t o = kRigidDim + 3 * i;
    v[i] = Vec3(flat[o], flat[o + 1], flat[o + 2]);
  }
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Geometric regularizers on raw vertex arrays. Each sums over ordered
// neighbor pairs (i, j in N_i), so every undirected edge counts twice.

inline double e_top(std::span<const Vec3> v, std::span<const Vec3> tmpl, const Adjacency& adj,
                    std::vector<Vec3>* grad = nullptr) {
  double e = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int j : adj[i]) {
      const Vec3 r = (v[i] - v[j]) - (tmpl[i] - tmpl[j]);
      e += r.squaredNorm();
      if (grad) {
        (*grad)[i] += 2.0 * r;
        (*grad)[j] -= 2.0 * r;
      }
    }
  return e;
}

inline double e_iso(std::span<const Vec3> v, std::span<const Vec3> tmpl, const Adjacency& adj,
                    std::vector<Vec3>* grad = nullptr) {
  double e = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int j : adj[i]) {
      const Vec3 d = v[i] - v[j];
      const double len = d.norm();
      const double r = len - (tmpl[i] - tmpl[j]).norm();
      e += r * r;
      if (grad && len > 0.0) {
        const Vec3 g = 2.0 * r * d / len;
        (*grad)[i] += g;
        (*grad)[j] -= g;
      }
    }
  return e;
}

/// Geodesic preservation over sampled vertices. The current geodesic is the
/// length of the template's shortest edge path measured with current edge
/// lengths; disconnected pairs are skipped.
inline double e_geo(std::span<const Vec3> v, const GeodesicTable& geo, std::vector<Vec3>* grad = nullptr) {
  double e = 0.0;
  const std::size_t m = geo.samples.size();
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b) {
      const double d0 = geo.distance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      if (!std::isfinite(d0)) continue;
      const auto& path = geo.paths[geo.pair_index(a, b)];
      double len = 0.0;
      for (std::size_t k = 0; k + 1 < path.size(); ++k) len += (v[path[k]] - v[path[k + 1]]).norm();
      const double r = len - d0;
      e += 2.0 * r * r;  // ordered pairs (a, b) and (b, a)
      if (grad) {
        const double s = 4.0 * r;
        for (std::size_t k = 0; k + 1 < path.size(); ++k) {
          const Vec3 d = v[path[k]] - v[path[k + 1]];
          const double l = d.norm();
          if (l <= 0.0) continue;
          (*grad)[path[k]] += s * d / l;
          (*grad)[path[k + 1]] -= s * d / l;
        }
      }
    }
  return e;
}

/// ||theta - theta_prev||^2 over the flat vectors.
inline double e_reg(std::span<const double> theta, std::span<const double> prev, std::vector<double>* grad = nullptr,
                    double scale = 1.0) {
  if (theta.size() != prev.size()) throw ShapeError("e_reg: dimension mismatch");
  double e = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - prev[i];
    e += d * d;
    if (grad) (*grad)[i] += scale * 2.0 * d;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Image-space data terms.

struct DataTerms {
  double event = 0.0;
  double no_event = 0.0;
};

/// E_event and E_no_event from a single rendering. When `grad` is given it
/// receives event_scale * dE_event + no_event_scale * dE_no_event.
inline DataTerms data_terms(const FrameContext& fc, std::span<const double> theta, std::vector<double>* grad,
                            double event_scale, double no_event_scale) {
  const SequenceContext& seq = *fc.seq;
  const auto verts = seq.model->world_vertices(theta);
  const SoftRasterizer raster(verts, seq.model->faces(), seq.camera, seq.raster);
  const GrayImage img = raster.render();
  const GeneratedFrame gen = threshold_difference(img, fc.prev_image, seq.threshold);

  DataTerms out;
  GrayImage grad_img(img.width, img.height, 0.0);
  for (std::size_t i = 0; i < gen.values.size(); ++i) {
    const double e = gen.values[i];
    double de = 0.0;
    if (fc.mask.gamma[i]) {
      const double r = fc.input.values[i] - e;
      out.event += r * r;
      de += -2.0 * r * event_scale;
    } else {
      out.no_event += e * e;
      de += 2.0 * e * no_event_scale;
    }
    if (grad && de != 0.0) grad_img.data[i] = de * smooth_threshold_derivative(gen.diff[i], seq.threshold);
  }
  if (grad && (event_scale != 0.0 || no_event_scale != 0.0)) {
    const auto gw = raster.backward(grad_img);
    const auto gp = seq.model->pullback(theta, gw);
    detail::add_scaled(grad, gp, 1.0);
  }
  return out;
}

inline double e_event(const FrameContext& fc, std::span<const double> theta, std::vector<double>* grad = nullptr,
                      double scale = 1.0) {
  return data_terms(fc, theta, grad, scale, 0.0).event;
}

inline double e_no_event(const FrameContext& fc, std::span<const double> theta, std::vector<double>* grad = nullptr,
                         double scale = 1.0) {
  return data_terms(fc, theta, grad, 0.0, scale).no_event;
}

/// Nearest visible vertex (in 2D) for every relevant event; -1 entries never occur.
inline std::vector<int> silhouette_assignment(std::span<const Vec2> events, std::span<const Vec2> projected,
                                              const std::vector<bool>& visible) {
  std::vector<int> out(events.size(), -1);
  for (std::size_t b = 0; b < events.size(); ++b) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < projected.size(); ++i) {
      if (!visible[i]) continue;
      const double d = (projected[i] - events[b]).squaredNorm();
      if (d < best) {
        best = d;
        out[b] = static_cast<int>(i);
      }
    }
  }
  return out;
}

/// Silhouette term on world vertices. The nearest-vertex assignment is
/// recomputed here and treated as constant for the gradient.
inline double e_sil(std::span<const Vec3> world, std::span<const Face> faces, const Camera& cam,
                    std::span<const Vec2> events, std::vector<Vec3>* grad_world = nullptr, double visibility_tol = 1e-3,
                    const std::vector<int>* frozen_assignment = nullptr) {
  if (events.empty()) return 0.0;
  const Mat3 rot = cam.rotation();
  std::vector<Vec3> pc(world.size());
  std::vector<Vec2> uv(world.size(), Vec2::Zero());
  const auto visible = visible_vertices(world, faces, cam, visibility_tol);
  bool any = false;
  for (std::size_t i = 0; i < world.size(); ++i) {
    pc[i] = rot * world[i] + cam.world_to_camera.t;
    if (visible[i]) {
      uv[i] = project(cam, pc[i]);
      any = true;
    }
  }
  if (!any) throw InvalidInputError("e_sil: no visible vertices");
  const std::vector<int> assign = frozen_assignment ? *frozen_assignment : silhouette_assignment(events, uv, visible);
  double e = 0.0;
  for (std::size_t b = 0; b < events.size(); ++b) {
    const int i = assign[b];
    const Vec3& p = pc[i];
    const Vec2 proj(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
    const Vec2 r = proj - events[b];
    e += r.squaredNorm();
    if (grad_world) {
      const double iz = 1.0 / p.z();
      const Vec3 gc(2.0 * r.x() * cam.fx * iz, 2.0 * r.y() * cam.fy * iz,
                    -2.0 * r.x() * cam.fx * p.x() * iz * iz - 2.0 * r.y() * cam.fy * p.y() * iz * iz);
      (*grad_world)[i] += rot.transpose() * gc;
    }
  }
  return e;
}

inline double e_sil(const FrameContext& fc, std::span<const double> theta, std::vector<double>* grad = nullptr,
                    double scale = 1.0, const std::vector<int>* frozen_assignment = nullptr) {
  const SequenceContext& seq = *fc.seq;
  const auto verts = seq.model->world_vertices(theta);
  std::vector<Vec3> gw(grad ? verts.size() : 0, Vec3::Zero());
  const double e = e_sil(verts, seq.model->faces(), seq.camera, fc.relevant_events, grad ? &gw : nullptr,
                         seq.visibility_tol, frozen_assignment);
  if (grad) detail::add_scaled(grad, seq.model->pullback(theta, gw), scale);
  return e;
}

/// Current nearest-visible-vertex assignment for the frame's relevant events.
inline std::vector<int> silhouette_assignment(const FrameContext& fc, std::span<const double> theta) {
  const SequenceContext& seq = *fc.seq;
  const auto verts = seq.model->world_vertices(theta);
  const auto visible = visible_vertices(verts, seq.model->faces(), seq.camera, seq.visibility_tol);
  std::vector<Vec2> uv(verts.size(), Vec2::Zero());
  for (std::size_t i = 0; i < verts.size(); ++i)
    if (visible[i]) uv[i] = project_world(seq.camera, verts[i]);
  return silhouette_assignment(fc.relevant_events, uv, visible);
}

/// Evaluates the branch objective; `grad` (if non-null) is resized and filled.
inline EnergyBreakdown evaluate_objective(const FrameContext& fc, std::span<const double> theta,
                                          std::vector<double>* grad = nullptr) {
  const SequenceContext& seq = *fc.seq;
  const ObjectiveWeights& w = seq.weights;
  if (theta.size() != seq.model->dim()) throw ShapeError("objective: parameter dimension mismatch");
  if (grad) grad->assign(theta.size(), 0.0);
  EnergyBreakdown eb;

  std::vector<double> term_grad;
  auto run = [&](const char* name, auto&& fn) {
    if (grad) term_grad.assign(theta.size(), 0.0);
    const double v = fn(grad ? &term_grad : nullptr);
    detail::check_finite(name, v, term_grad);
    if (grad) detail::add_scaled(grad, term_grad, 1.0);
    return v;
  };

  if (seq.branch == Branch::kParametric) {
    DataTerms dt;
    run("data", [&](std::vector<double>* g) {
      dt = data_terms(fc, theta, g, 1.0, w.lambda1);
      return dt.event + dt.no_event;
    });
    detail::check_finite("event", dt.event);
    detail::check_finite("no_event", dt.no_event);
    eb.event = dt.event;
    eb.no_event = dt.no_event;
    eb.reg = run("reg", [&](std::vector<double>* g) { return e_reg(theta, fc.prev_params, g, w.lambda); });
    eb.total = eb.event + w.lambda1 * eb.no_event + w.lambda * eb.reg;
    return eb;
  }

  eb.event = run("event", [&](std::vector<double>* g) { return data_terms(fc, theta, g, 1.0, 0.0).event; });
  eb.sil = run("sil", [&](std::vector<double>* g) { return e_sil(fc, theta, g, w.lambda_sil); });
  const auto v = detail::free_vertices(theta);
  const auto& tmpl = seq.model->template_mesh().template_vertices();
  auto vertex_term = [&](const char* name, double weight, auto&& fn) {
    return run(name, [&](std::vector<double>* g) {
      std::vector<Vec3> gv(g ? v.size() : 0, Vec3::Zero());
      const double e = fn(g ? &gv : nullptr);
      detail::vertex_grad_to_flat(gv, g, weight);
      return e;
    });
  };
  eb.top = vertex_term("top", w.lambda_top, [&](std::vector<Vec3>* g) { return e_top(v, tmpl, seq.adjacency, g); });
  eb.iso = vertex_term("iso", w.lambda_iso, [&](std::vector<Vec3>* g) { return e_iso(v, tmpl, seq.adjacency, g); });
  eb.geo = vertex_term("geo", w.lambda_geo, [&](std::vector<Vec3>* g) { return e_geo(v, seq.geodesics, g); });
  eb.reg = run("reg", [&](std::vector<double>* g) { return e_reg(theta, fc.prev_params, g, w.lambda_reg); });
  eb.total = eb.event + w.lambda_sil * eb.sil + w.lambda_top * eb.top + w.lambda_iso * eb.iso +
             w.lambda_geo * eb.geo + w.lambda_reg * eb.reg;
  return eb;
}

}  // namespace evtrack
