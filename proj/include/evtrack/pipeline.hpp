#pragma once

// End-to-end drivers behind the command-line tool: simulate a scene to an
// event stream, track a stream, evaluate reconstructions, check gradients.
// Each stage has an in-memory form and a directory form.

#include "evtrack/config.hpp"
#include "evtrack/event_io.hpp"
#include "evtrack/mesh_io.hpp"
#include "evtrack/metrics.hpp"
#include "evtrack/optim.hpp"
#include "evtrack/scenes.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace evtrack {

namespace fs = std::filesystem;

inline std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.obj", i);
  return buf;
}

inline Branch resolve_branch(const RunConfig& cfg, const DeformableModel& model) {
  if (cfg.branch == "mesh") return Branch::kMesh;
  if (cfg.branch == "parametric") {
    if (!model.is_parametric()) throw InvalidInputError("parametric branch needs an articulated scene");
    return Branch::kParametric;
  }
  return model.is_parametric() ? Branch::kParametric : Branch::kMesh;
}

inline std::size_t resolve_window(const RunConfig& cfg, const Scene& scene) {
  return static_cast<std::size_t>(cfg.window > 0 ? cfg.window : scene.default_window);
}

// ---------------------------------------------------------------- simulate

struct SimulationRun {
  Scene scene;
  SyntheticSequence sequence;
  std::vector<EventFrame> frames;          // windows of `window` events
  std::vector<std::size_t> frame_steps;    // rendered step closing each window
  std::vector<double> initial_params;      // ground truth at t = 0
  std::size_t window = 0;

  std::vector<std::vector<Vec3>> gt_vertices() const {
    std::vector<std::vector<Vec3>> out;
    for (std::size_t s : frame_steps) out.push_back(sequence.step_vertices[s]);
    return out;
  }
  std::vector<std::vector<Vec3>> gt_joints() const {
    std::vector<std::vector<Vec3>> out;
    const auto& model = *scene.model;
    for (std::size_t s : frame_steps)
      out.push_back(regress_joints(model.articulated(), sequence.step_vertices[s]));
    return out;
  }
};

inline SimulationRun simulate(const RunConfig& cfg) {
  cfg.validate();
  SimulationRun run;
  run.scene = make_scene(cfg.scene, cfg.scene_options());
  run.sequence = simulate_sequence(run.scene, cfg.camera(), cfg.raster_for(*run.scene.model), cfg.simulation());
  run.window = resolve_window(cfg, run.scene);
  run.frames = split_frames(run.sequence.stream, run.window);
  run.frame_steps = frame_steps(run.sequence, run.frames);
  run.initial_params = flatten(run.sequence.step_params.front());
  return run;
}

inline void write_params_line(std::ostream& out, std::span<const double> p) {
  char buf[40];
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.17g", i ? " " : "", p[i]);
    out << buf;
  }
  out << '\n';
}

inline std::vector<double> read_params(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<double> p;
  double x;
  while (in >> x) p.push_back(x);
  if (!in.eof()) throw IoError(path.string() + ": malformed parameter file");
  return p;
}

inline void write_joints_csv(const fs::path& path, const std::vector<std::vector<Vec3>>& joints) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "frame,joint,x,y,z\n";
  char buf[128];
  for (std::size_t f = 0; f < joints.size(); ++f)
    for (std::size_t j = 0; j < joints[f].size(); ++j) {
      const Vec3& p = joints[f][j];
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g\n", f, j, p.x(), p.y(), p.z());
      out << buf;
    }
}

inline std::vector<std::vector<Vec3>> read_joints_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "frame,joint,x,y,z") throw IoError(path.string() + ": unexpected joints header");
  std::vector<std::vector<Vec3>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t f = 0, j = 0;
    Vec3 p;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf", &f, &j, &p.x(), &p.y(), &p.z()) != 5)
      throw IoError(path.string() + ": malformed joints row: " + line);
    if (f >= out.size()) out.resize(f + 1);
    if (j != out[f].size()) throw IoError(path.string() + ": joints out of order");
    out[f].push_back(p);
  }
  return out;
}

inline fs::path events_path(const fs::path& dir, const RunConfig& cfg) {
  return dir / (cfg.event_format == "binary" ? "events.bin" : "events.txt");
}

inline void write_simulation(const fs::path& dir, const RunConfig& cfg, const SimulationRun& run) {
  fs::create_directories(dir / "gt");
  const auto& seq = run.sequence;
  const auto& model = *run.scene.model;
  write_events(events_path(dir, cfg), seq.stream, format_for(events_path(dir, cfg)));
  write_obj(dir / "template.obj", model.template_mesh());
  {
    std::ofstream out(dir / "init_params.txt");
    write_params_line(out, run.initial_params);
  }
  const auto gt = run.gt_vertices();
  for (std::size_t i = 0; i < gt.size(); ++i) write_obj(dir / "gt" / frame_name(i), gt[i], model.faces());
  if (model.is_parametric()) write_joints_csv(dir / "gt" / "joints.csv", run.gt_joints());
  {
    std::ofstream out(dir / "steps.csv");
    out << "step,t_us,max_change\n";
    char buf[96];
    for (std::size_t k = 0; k < seq.step_times.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%zu,%llu,%.9f\n", k, static_cast<unsigned long long>(seq.step_times[k]),
                    seq.max_step_change[k]);
      out << buf;
    }
  }
  if (cfg.write_images) {
    fs::create_directories(dir / "images");
    char name[32];
    for (std::size_t k = 0; k < seq.images.size(); ++k) {
      std::snprintf(name, sizeof name, "step_%04zu.pgm", k);
      write_pgm(dir / "images" / name, seq.images[k]);
    }
  }
  std::ofstream man(dir / "manifest.txt");
  write_config(man, cfg);
  man << "rendered_frames = " << seq.step_times.size() << '\n';
  man << "event_count = " << seq.stream.size() << '\n';
  man << "event_windows = " << run.frames.size() << '\n';
  man << "window_events = " << run.window << '\n';
  man << "adaptive_fallbacks = " << seq.adaptive_fallbacks << '\n';
  if (!man) throw IoError("cannot write manifest in " + dir.string());
}

// ------------------------------------------------------------------- track

struct TrackingRun {
  std::shared_ptr<const DeformableModel> model;
  Branch branch = Branch::kMesh;
  std::vector<EventFrame> frames;
  TrackResult result;

  std::vector<std::vector<Vec3>> vertices() const {
    std::vector<std::vector<Vec3>> out;
    for (const auto& p : result.params) out.push_back(model->world_vertices(p));
    return out;
  }
  std::vector<std::vector<Vec3>> joints() const {
    std::vector<std::vector<Vec3>> out;
    for (const auto& v : vertices()) out.push_back(regress_joints(model->articulated(), v));
    return out;
  }
};

/// Fits every window (or the first `cfg.frames`) starting from `theta0`.
inline TrackingRun track(const RunConfig& cfg, std::shared_ptr<const DeformableModel> model, const EventStream& stream,
                         std::span<const double> theta0, std::size_t window, std::FILE* log = nullptr) {
  cfg.validate();
  TrackingRun run;
  run.model = model;
  run.branch = resolve_branch(cfg, *model);
  if (stream.width != cfg.width || stream.height != cfg.height)
    throw ShapeError("event stream resolution does not match the configured camera");
  run.frames = split_frames(stream, window);
  if (cfg.frames > 0 && run.frames.size() > static_cast<std::size_t>(cfg.frames)) run.frames.resize(cfg.frames);
  SequenceContext seq = SequenceContext::make(model, cfg.camera(), cfg.raster_for(*model), cfg.threshold(), cfg.weights,
                                              run.branch, cfg.geodesic_stride);
  seq.noise_min_count = cfg.noise_min_count;
  run.result = track_sequence(seq, run.frames, theta0, cfg.schedule(), log, cfg.log_every);
  return run;
}

/// Model for tracking a directory written by `write_simulation`: the scene's
/// articulated model, or the stored template for free-vertex scenes.
inline std::shared_ptr<const DeformableModel> model_for(const RunConfig& cfg, const fs::path& input_dir) {
  Scene scene = make_scene(cfg.scene, cfg.scene_options());
  if (scene.model->is_parametric() || !fs::exists(input_dir / "template.obj")) return scene.model;
  TriMesh tmpl = read_obj(input_dir / "template.obj");
  return std::make_shared<DeformableModel>(DeformableModel::mesh_free(std::move(tmpl)));
}

inline fs::path find_events(const fs::path& dir) {
  for (const char* name : {"events.bin", "events.txt"})
    if (fs::exists(dir / name)) return dir / name;
  throw IoError("no events.txt or events.bin in " + dir.string());
}

inline void write_tracking(const fs::path& dir, const TrackingRun& run) {
  fs::create_directories(dir);
  const auto verts = run.vertices();
  for (std::size_t i = 0; i < verts.size(); ++i) write_obj(dir / frame_name(i), verts[i], run.model->faces());
  if (run.model->is_parametric()) write_joints_csv(dir / "joints.csv", run.joints());
  {
    std::ofstream out(dir / "params.csv");
    for (const auto& p : run.result.params) write_params_line(out, p);
  }
  std::ofstream out(dir / "frames.csv");
  out << "frame,t_first,t_last,events,initial_objective,final_objective,iterations,failed\n";
  char buf[256];
  const auto& r = run.result;
  for (std::size_t i = 0; i < r.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%llu,%llu,%zu,%.10g,%.10g,%d,%d\n", i,
                  static_cast<unsigned long long>(run.frames[i].t_first),
                  static_cast<unsigned long long>(run.frames[i].t_last), run.frames[i].count, r.initial_objective[i],
                  r.final_objective[i], r.iterations[i], r.failed[i] ? 1 : 0);
    out << buf;
  }
  if (!out) throw IoError("cannot write tracking output in " + dir.string());
}

// ---------------------------------------------------------------- evaluate

inline std::vector<std::vector<Vec3>> read_frame_meshes(const fs::path& dir) {
  std::vector<std::vector<Vec3>> out;
  for (std::size_t i = 0;; ++i) {
    const fs::path p = dir / frame_name(i);
    if (!fs::exists(p)) break;
    out.push_back(read_obj(p).vertices());
  }
  if (out.empty()) throw IoError("no frame_0000.obj in " + dir.string());
  return out;
}

/// Dense e_3d over frame meshes, or e_joint3d over joints.csv when `joints`.
inline MetricReport evaluate_dirs(const fs::path& recovered, const fs::path& ground_truth, bool joints) {
  if (joints) return e_joint3d(read_joints_csv(recovered / "joints.csv"), read_joints_csv(ground_truth / "joints.csv"));
  return e_3d(read_frame_meshes(recovered), read_frame_meshes(ground_truth));
}

// --------------------------------------------------------------- gradcheck

struct GradCheckRow {
  std::string term;
  double max_abs_diff = 0.0;
  double max_abs_grad = 0.0;
  double rel_error = 0.0;  // max_abs_diff / max(max_abs_grad, 1e-12)
};

/// Compares the analytic gradient of each objective term with central
/// differences at a perturbed ground-truth state of the first event window.
inline std::vector<GradCheckRow> gradcheck(const RunConfig& cfg, double h = 1e-6, double perturb = 0.01) {
  const SimulationRun sim = simulate(cfg);
  if (sim.frames.empty()) throw InvalidInputError("gradcheck: simulation produced no full event window");
  const Branch branch = resolve_branch(cfg, *sim.scene.model);
  SequenceContext seq = SequenceContext::make(sim.scene.model, cfg.camera(), cfg.raster_for(*sim.scene.model), cfg.threshold(),
                                              cfg.weights, branch, cfg.geodesic_stride);
  seq.noise_min_count = cfg.noise_min_count;
  const FrameContext fc = FrameContext::make(seq, sim.initial_params, sim.frames.front());
  std::vector<double> theta = sim.initial_params;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(-perturb, perturb);
  for (double& x : theta) x += u(rng);

  auto check = [&](const std::string& name, auto&& f) {
    std::vector<double> g(theta.size(), 0.0);
    f(std::span<const double>(theta), &g);
    const auto fd = fd_gradient([&](std::span<const double> x) { return f(x, nullptr); }, theta, h);
    GradCheckRow row{name};
    for (std::size_t i = 0; i < g.size(); ++i) {
      row.max_abs_diff = std::max(row.max_abs_diff, std::abs(g[i] - fd[i]));
      row.max_abs_grad = std::max(row.max_abs_grad, std::abs(fd[i]));
    }
    row.rel_error = row.max_abs_diff / std::max(row.max_abs_grad, 1e-12);
    return row;
  };

  std::vector<GradCheckRow> rows;
  rows.push_back(check("event", [&](std::span<const double> x, std::vector<double>* g) {
    return data_terms(fc, x, g, 1.0, 0.0).event;
  }));
  if (branch == Branch::kParametric) {
    rows.push_back(check("no_event", [&](std::span<const double> x, std::vector<double>* g) {
      return data_terms(fc, x, g, 0.0, 1.0).no_event;
    }));
  } else {
    // Freeze the nearest-vertex assignment so the piecewise term is smooth
    // in the neighborhood used by the differences.
    const auto assignment = silhouette_assignment(fc, theta);
    rows.push_back(check("sil", [&](std::span<const double> x, std::vector<double>* g) {
      return e_sil(fc, x, g, 1.0, &assignment);
    }));
  }
  rows.push_back(check("total", [&](std::span<const double> x, std::vector<double>* g) {
    return evaluate_objective(fc, x, g).total;
  }));
  return rows;
}

}  // namespace evtrack
