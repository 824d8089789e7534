#pragma once

// Built-in deformation scripts and the synthetic event-stream generator.
//
// A scene maps normalized time s in [0, 1] to ground-truth parameters. The
// generator renders the scene at a sequence of timestamps (uniform or
// adaptive), differences consecutive renderings and thresholds them into
// events.

#include "evtrack/articulated.hpp"
#include "evtrack/errors.hpp"
#include "evtrack/events.hpp"
#include "evtrack/objective.hpp"
#include "evtrack/params.hpp"
#include "evtrack/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace evtrack {

/// nx x ny vertex grid of side `size` in the z = 0 plane, centered at the
/// origin, with faces wound so their normal points to -z.
inline TriMesh make_sheet(int nx = 10, int ny = 10, double size = 1.0) {
  if (nx < 2 || ny < 2) throw InvalidInputError("sheet needs at least 2x2 vertices");
  std::vector<Vec3> v;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      v.emplace_back(size * (static_cast<double>(i) / (nx - 1) - 0.5), size * (static_cast<double>(j) / (ny - 1) - 0.5),
                     0.0);
  std::vector<Face> f;
  for (int j = 0; j + 1 < ny; ++j)
    for (int i = 0; i + 1 < nx; ++i) {
      const int a = j * nx + i, b = a + 1, c = a + nx, d = c + 1;
      f.push_back({a, c, b});
      f.push_back({b, c, d});
    }
  return TriMesh(std::move(v), std::move(f));
}

/// Per-face albedo from a 3D checkerboard evaluated at template face
/// centroids. Dark cells get `albedo * (1 - contrast)`.
inline std::vector<double> checker_albedo(const TriMesh& mesh, double period, double albedo, double contrast) {
  if (!(period > 0.0)) throw InvalidInputError("checker period must be positive");
  if (contrast < 0.0 || contrast > 1.0) throw InvalidInputError("checker contrast outside [0,1]");
  const auto v = mesh.template_vertices();
  std::vector<double> out;
  out.reserve(mesh.faces().size());
  for (const Face& f : mesh.faces()) {
    const Vec3 c = (v[f[0]] + v[f[1]] + v[f[2]]) / 3.0;
    long parity = 0;
    for (int a = 0; a < 3; ++a) parity += static_cast<long>(std::floor(c(a) / period + 0.5));
    out.push_back(parity % 2 == 0 ? albedo : albedo * (1.0 - contrast));
  }
  return out;
}

/// Isometric cylindrical bend about the y axis with curvature `kappa`.
inline std::vector<Vec3> bend_sheet(std::span<const Vec3> flat, double kappa) {
  std::vector<Vec3> out(flat.begin(), flat.end());
  if (std::abs(kappa) < 1e-12) return out;
  for (Vec3& p : out) {
    const double x = p.x();
    p.x() = std::sin(kappa * x) / kappa;
    p.z() = (1.0 - std::cos(kappa * x)) / kappa;
  }
  return out;
}

/// Subdivided icosahedron projected onto a sphere, outward-facing faces.
inline TriMesh make_icosphere(int subdivisions = 1, double radius = 0.4) {
  const double g = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, g, 0}, {1, g, 0}, {-1, -g, 0}, {1, -g, 0}, {0, -1, g}, {0, 1, g},
                         {0, -1, -g}, {0, 1, -g}, {g, 0, -1}, {g, 0, 1}, {-g, 0, -1}, {-g, 0, 1}};
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                         {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                         {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (Vec3& p : v) p.normalize();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<Face> next;
    for (const Face& t : f) {
      const int ab = midpoint(t[0], t[1]), bc = midpoint(t[1], t[2]), ca = midpoint(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    f = std::move(next);
  }
  for (Face& t : f) {
    const Vec3 n = (v[t[1]] - v[t[0]]).cross(v[t[2]] - v[t[0]]);
    if (n.dot(v[t[0]] + v[t[1]] + v[t[2]]) < 0.0) std::swap(t[1], t[2]);
  }
  for (Vec3& p : v) p *= radius;
  return TriMesh(std::move(v), std::move(f));
}

struct Scene {
  std::string name;
  std::shared_ptr<const DeformableModel> model;
  Branch branch = Branch::kMesh;
  std::function<ParamSet(double)> state;  // ground truth at normalized time s
  int default_window = 1200;              // events per frame used for tracking
};

/// Isometric travelling wave along x: the profile's tangent angle is
/// `angle * sin(wavenumber * x - phase)`; x and z follow by integrating the
/// unit tangent from the sheet centre.
inline std::vector<Vec3> wave_sheet(std::span<const Vec3> flat, double angle, double wavenumber, double phase) {
  std::vector<Vec3> out(flat.begin(), flat.end());
  auto tangent = [&](double u) {
    const double a = angle * std::sin(wavenumber * u - phase);
    return Vec2(std::cos(a), std::sin(a));
  };
  for (Vec3& p : out) {
    const double u = p.x();
    const int n = 64;  // Simpson panels from 0 to u
    const double h = u / n;
    Vec2 acc = tangent(0.0) + tangent(u);
    for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * tangent(i * h);
    acc *= h / 3.0;
    p.x() = acc.x();
    p.z() = acc.y();
  }
  return out;
}

struct SceneOptions {
  double amplitude = 1.0;  // scales the deformation magnitude
  int sheet_vertices = 10;
  double sheet_tilt = 0.9;    // rest rotation about y (radians)
  double sheet_depth = 2.2;   // distance from the camera
  double sheet_cycles = 1.0;  // full bend oscillations over the sequence
};

/// Built-in scripts: "sheet" (sinusoidal isometric bend), "sphere"
/// (inflating ball), "chain" (articulated finger chain), "translate"
/// (rigidly translating sheet, constant speed).
inline Scene make_scene(const std::string& name, const SceneOptions& opt = {}) {
  Scene sc;
  sc.name = name;
  if (name == "sheet" || name == "wave" || name == "translate" || name == "static") {
    const TriMesh sheet = make_sheet(opt.sheet_vertices, opt.sheet_vertices, 1.0);
    sc.model = std::make_shared<DeformableModel>(DeformableModel::mesh_free(sheet));
    sc.branch = Branch::kMesh;
    const auto tmpl = sheet.template_vertices();
    RigidTransform base;
    base.r = Vec3(0.0, opt.sheet_tilt, 0.0);
    base.t = Vec3(0.0, 0.0, opt.sheet_depth);
    if (name == "sheet") {
      const double kappa_max = 3.0 * opt.amplitude;
      const double omega = 2.0 * std::numbers::pi * opt.sheet_cycles;
      sc.state = [tmpl, base, kappa_max, omega](double s) -> ParamSet {
        return MeshFreeParams{bend_sheet(tmpl, kappa_max * std::sin(omega * s)), base};
      };
    } else if (name == "wave") {
      const double angle = 0.5 * opt.amplitude;
      const double k = 2.0 * std::numbers::pi;
      const double omega = 2.0 * std::numbers::pi * opt.sheet_cycles;
      sc.state = [tmpl, base, angle, k, omega](double s) -> ParamSet {
        const double env = std::sin(std::numbers::pi * std::min(1.0, 4.0 * s) / 2.0);
        return MeshFreeParams{wave_sheet(tmpl, angle * env, k, omega * s), base};
      };
    } else if (name == "translate") {
      const double span = 0.4 * opt.amplitude;
      sc.state = [tmpl, base, span](double s) -> ParamSet {
        RigidTransform r = base;
        r.t.x() += span * (s - 0.5);
        return MeshFreeParams{tmpl, r};
      };
    } else {
      sc.state = [tmpl, base](double) -> ParamSet { return MeshFreeParams{tmpl, base}; };
    }
  } else if (name == "sphere") {
    const TriMesh ball = make_icosphere(2, 0.4);
    sc.model = std::make_shared<DeformableModel>(DeformableModel::mesh_free(ball));
    sc.branch = Branch::kMesh;
    const auto tmpl = ball.template_vertices();
    const double amp = 0.25 * opt.amplitude;
    sc.state = [tmpl, amp](double s) -> ParamSet {
      std::vector<Vec3> v = tmpl;
      const double k = amp * std::sin(std::numbers::pi * s);
      for (Vec3& p : v) {
        p.x() *= 1.0 + k;
        p.y() *= 1.0 - 0.5 * k;
      }
      RigidTransform r;
      r.t = Vec3(0.0, 0.0, 2.5);
      return MeshFreeParams{v, r};
    };
  } else if (name == "chain") {
    ArticulatedModel chain = make_finger_chain();
    sc.model = std::make_shared<DeformableModel>(DeformableModel::parametric(std::move(chain)));
    sc.branch = Branch::kParametric;
    sc.default_window = 400;
    const std::size_t nj = sc.model->articulated().num_joints();
    const double amp = 0.35 * opt.amplitude;
    sc.state = [nj, amp](double s) -> ParamSet {
      std::vector<double> theta(3 * nj, 0.0);
      for (std::size_t j = 1; j < nj; ++j) {
        const double phase = 0.6 * static_cast<double>(j);
        theta[3 * j + 2] = amp * std::sin(2.0 * std::numbers::pi * s + phase) * std::sin(std::numbers::pi * s);
        theta[3 * j + 0] = 0.3 * amp * std::sin(std::numbers::pi * s);
      }
      RigidTransform r;
      r.t = Vec3(-0.5, -0.2, 2.2);
      r.r = Vec3(0.3, 0.0, 0.0);
      return ParametricParams{theta, r};
    };
  } else {
    throw InvalidInputError("unknown scene '" + name + "' (expected sheet, wave, sphere, chain, translate, static)");
  }
  return sc;
}

struct SimulationOptions {
  int steps = 50;                     // rendered images (uniform) / initial interval divisor (adaptive)
  std::uint64_t duration_us = 1000000;
  double contrast = 10.0 / 255.0;     // on the [0,1] image scale
  bool adaptive = false;
  double adaptive_lambda = 2.0;
  int max_steps = 5000;               // safety cap for adaptive sampling
  int noise_per_step = 0;             // uniformly random extra events per step
  std::uint64_t seed = 1;
  bool keep_images = false;
};

struct SyntheticSequence {
  EventStream stream;
  std::vector<std::uint64_t> step_times;
  std::vector<ParamSet> step_params;
  std::vector<std::vector<Vec3>> step_vertices;  // world frame
  std::vector<GrayImage> images;                 // only with keep_images
  std::vector<double> max_step_change;           // max |I_k - I_{k-1}|, index k >= 1
  int adaptive_fallbacks = 0;
};

inline SyntheticSequence simulate_sequence(const Scene& scene, const Camera& cam, const RasterSettings& rs,
                                           const SimulationOptions& opt) {
  if (opt.steps < 1) throw InvalidInputError("simulation needs at least one step");
  if (opt.duration_us == 0) throw InvalidInputError("simulation duration must be positive");
  SyntheticSequence seq;
  seq.stream.width = cam.width;
  seq.stream.height = cam.height;
  std::mt19937_64 rng(opt.seed);

  auto render_at = [&](std::uint64_t t) {
    const double s = std::min(1.0, static_cast<double>(t) / static_cast<double>(opt.duration_us));
    ParamSet p = scene.state(s);
    auto verts = scene.model->world_vertices(p);
    GrayImage img = render_gray(verts, scene.model->faces(), cam, rs);
    seq.step_times.push_back(t);
    seq.step_params.push_back(std::move(p));
    seq.step_vertices.push_back(std::move(verts));
    return img;
  };

  GrayImage prev = render_at(0);
  if (opt.keep_images) seq.images.push_back(prev);
  seq.max_step_change.push_back(0.0);

  const std::uint64_t first_dt = std::max<std::uint64_t>(1, opt.duration_us / std::max(1, opt.steps - 1));
  std::uint64_t t_prev = 0;
  std::uint64_t t = opt.steps > 1 ? first_dt : opt.duration_us + 1;
  int k = 1;
  while (t <= opt.duration_us && (opt.adaptive ? k < opt.max_steps : k < opt.steps)) {
    if (!opt.adaptive) t = (opt.duration_us * static_cast<std::uint64_t>(k)) / static_cast<std::uint64_t>(opt.steps - 1);
    GrayImage cur = render_at(t);
    const GrayImage diff = difference(cur, prev);
    double peak = 0.0;
    for (double d : diff.data) peak = std::max(peak, std::abs(d));
    seq.max_step_change.push_back(peak);

    std::vector<Event> batch = synth_events_from_images(prev, cur, opt.contrast, t);
    if (opt.noise_per_step > 0) {
      std::uniform_int_distribution<int> px(0, cam.width - 1), py(0, cam.height - 1), pol(0, 1);
      for (int n = 0; n < opt.noise_per_step; ++n)
        batch.push_back({t, static_cast<std::uint16_t>(px(rng)), static_cast<std::uint16_t>(py(rng)),
                         static_cast<std::int8_t>(pol(rng) ? 1 : -1)});
      std::stable_sort(batch.begin(), batch.end(), [](const Event& a, const Event& b) {
        return a.y != b.y ? a.y < b.y : a.x < b.x;
      });
    }
    seq.stream.events.insert(seq.stream.events.end(), batch.begin(), batch.end());
    if (opt.keep_images) seq.images.push_back(cur);

    ++k;
    if (opt.adaptive) {
      const AdaptiveStep next = adaptive_next_timestamp(diff, t, t_prev, opt.adaptive_lambda, opt.contrast);
      seq.adaptive_fallbacks += next.fallback ? 1 : 0;
      t_prev = t;
      t = next.t_next;
    } else {
      t_prev = t;
      t = t + 1;  // recomputed from k at the top of the loop
    }
    prev = std::move(cur);
  }
  return seq;
}

/// Index of the rendered step whose timestamp closes each event window.
inline std::vector<std::size_t> frame_steps(const SyntheticSequence& seq, const std::vector<EventFrame>& frames) {
  std::vector<std::size_t> idx;
  for (const EventFrame& f : frames) {
    auto it = std::lower_bound(seq.step_times.begin(), seq.step_times.end(), f.t_last);
    if (it == seq.step_times.end() || *it != f.t_last)
      throw InvalidInputError("event window end does not match a rendered step");
    idx.push_back(static_cast<std::size_t>(it - seq.step_times.begin()));
  }
  return idx;
}

}  // namespace evtrack
