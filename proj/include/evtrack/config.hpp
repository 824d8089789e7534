#pragma once

// Flat `key = value` run configuration. `#` starts a comment. Unknown keys
// are rejected so typos do not silently fall back to defaults.

#include "evtrack/errors.hpp"
#include "evtrack/events.hpp"
#include "evtrack/objective.hpp"
#include "evtrack/optim.hpp"
#include "evtrack/render.hpp"
#include "evtrack/scenes.hpp"

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace evtrack {

struct RunConfig {
  // scene and simulation
  std::string scene = "sheet";
  double amplitude = 1.0;
  int sheet_vertices = 10;
  double sheet_tilt = 0.9;
  double sheet_depth = 2.2;
  double sheet_cycles = 1.0;
  int steps = 200;
  std::uint64_t duration_us = 1000000;
  bool adaptive = false;
  double adaptive_lambda = 2.0;
  int noise_per_step = 0;
  std::uint64_t seed = 1;
  std::string event_format = "text";  // text | binary
  bool write_images = false;

  // camera
  int width = 64, height = 64;
  double fx = 120.0, fy = 120.0, cx = 31.5, cy = 31.5;

  // renderer
  double sigma = 0.7, gamma = 1e-2, albedo = 0.9, background = 0.0;
  double light_x = 0.0, light_y = 0.0, light_z = -1.0;  // camera frame, toward the light
  double texture_period = 0.0;    // checkerboard cell size on the template; 0 disables
  double texture_contrast = 0.5;  // dark cells get albedo * (1 - contrast)

  // event model; contrast is given on the [0,255] intensity scale
  double contrast = 10.0;
  double threshold_w = 0.0;  // 0 selects 5 / C
  double threshold_eps = 1e-3;

  // tracking
  std::string branch = "auto";  // auto | mesh | parametric
  int window = 0;               // events per frame; 0 selects the scene default
  int frames = 0;               // 0 tracks every window
  ObjectiveWeights weights;
  double step_size = 5e-4;
  int rigid_iters = 50;
  int full_iters = 200;
  double rel_tol = 1e-6;
  int patience = 10;
  double smoothing = 0.0;
  int geodesic_stride = 10;
  int noise_min_count = 3;
  int log_every = 10;

  Camera camera() const {
    Camera c;
    c.fx = fx;
    c.fy = fy;
    c.cx = cx;
    c.cy = cy;
    c.width = width;
    c.height = height;
    c.validate();
    return c;
  }
  RasterSettings raster() const {
    RasterSettings r;
    r.sigma = sigma;
    r.gamma = gamma;
    r.albedo = albedo;
    r.background = background;
    r.light = Vec3(light_x, light_y, light_z);
    if (r.light.norm() == 0.0) throw InvalidInputError("config: light direction must be nonzero");
    r.light.normalize();
    r.validate();
    return r;
  }
  /// Raster settings with the checker texture laid out on `model`'s faces.
  RasterSettings raster_for(const DeformableModel& model) const {
    RasterSettings r = raster();
    if (texture_period > 0.0) r.face_albedo = checker_albedo(model.template_mesh(), texture_period, albedo, texture_contrast);
    return r;
  }
  double contrast_unit() const { return contrast / 255.0; }
  ThresholdParams threshold() const {
    ThresholdParams tp = ThresholdParams::for_contrast(contrast_unit(), threshold_eps);
    if (threshold_w > 0.0) tp.w = threshold_w;
    tp.validate();
    return tp;
  }
  FitSchedule schedule() const {
    FitSchedule s;
    s.rigid_iters = rigid_iters;
    s.full_iters = full_iters;
    s.rel_tol = rel_tol;
    s.patience = patience;
    s.adam.step_size = step_size;
    s.smoothing = smoothing;
    return s;
  }
  SceneOptions scene_options() const { return {amplitude, sheet_vertices, sheet_tilt, sheet_depth, sheet_cycles}; }
  SimulationOptions simulation() const {
    SimulationOptions o;
    o.steps = steps;
    o.duration_us = duration_us;
    o.contrast = contrast_unit();
    o.adaptive = adaptive;
    o.adaptive_lambda = adaptive_lambda;
    o.noise_per_step = noise_per_step;
    o.seed = seed;
    o.keep_images = write_images;
    return o;
  }

  void validate() const {
    if (!(contrast > 0.0) || contrast >= 255.0) throw InvalidInputError("config: contrast must be in (0, 255)");
    if (steps < 1) throw InvalidInputError("config: steps must be >= 1");
    if (window < 0 || frames < 0) throw InvalidInputError("config: window and frames must be >= 0");
    if (branch != "auto" && branch != "mesh" && branch != "parametric")
      throw InvalidInputError("config: branch must be auto, mesh or parametric");
    if (event_format != "text" && event_format != "binary")
      throw InvalidInputError("config: event_format must be text or binary");
    weights.validate();
  }

  /// Every key with its current value, in a stable order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  void set(const std::string& key, const std::string& value);
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw InvalidInputError("config: bad value for '" + key + "': " + v);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw InvalidInputError("config: bad boolean for '" + key + "': " + v);
}

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace detail

// Single table drives both parsing and echoing.
#define EVTRACK_CONFIG_FIELDS(X)                         \
  X(scene, str) X(amplitude, dbl) X(sheet_vertices, int) \
  X(sheet_tilt, dbl) X(sheet_depth, dbl) X(sheet_cycles, dbl) \
  X(steps, int) X(duration_us, u64) X(adaptive, bool)    \
  X(adaptive_lambda, dbl) X(noise_per_step, int)         \
  X(seed, u64) X(event_format, str) X(write_images, bool) \
  X(width, int) X(height, int) X(fx, dbl) X(fy, dbl)     \
  X(cx, dbl) X(cy, dbl) X(sigma, dbl) X(gamma, dbl)      \
  X(albedo, dbl) X(background, dbl) X(light_x, dbl)      \
  X(light_y, dbl) X(light_z, dbl) X(texture_period, dbl) \
  X(texture_contrast, dbl) X(contrast, dbl)               \
  X(threshold_w, dbl) X(threshold_eps, dbl)              \
  X(branch, str) X(window, int) X(frames, int)           \
  X(step_size, dbl) X(rigid_iters, int) X(full_iters, int) \
  X(rel_tol, dbl) X(patience, int) X(smoothing, dbl) X(geodesic_stride, int) \
  X(noise_min_count, int) X(log_every, int)

#define EVTRACK_WEIGHT_FIELDS(X) \
  X(lambda) X(lambda1) X(lambda_sil) X(lambda_top) X(lambda_iso) X(lambda_geo) X(lambda_reg)

namespace detail {
inline std::string show(const std::string& s) { return s; }
inline std::string show(double x) { return fmt(x); }
inline std::string show(int x) { return std::to_string(x); }
inline std::string show(std::uint64_t x) { return std::to_string(x); }
inline std::string show(bool b) { return b ? "true" : "false"; }
}  // namespace detail

inline std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
#define X(name, kind) out.emplace_back(#name, detail::show(name));
  EVTRACK_CONFIG_FIELDS(X)
#undef X
#define X(name) out.emplace_back(#name, detail::show(weights.name));
  EVTRACK_WEIGHT_FIELDS(X)
#undef X
  return out;
}

inline void RunConfig::set(const std::string& key, const std::string& value) {
#define PARSE_str(k, v) v
#define PARSE_dbl(k, v) detail::parse_number<double>(k, v)
#define PARSE_int(k, v) detail::parse_number<int>(k, v)
#define PARSE_u64(k, v) detail::parse_number<std::uint64_t>(k, v)
#define PARSE_bool(k, v) detail::parse_bool(k, v)
#define X(name, kind)                 \
  if (key == #name) {                 \
    name = PARSE_##kind(key, value);  \
    return;                           \
  }
  EVTRACK_CONFIG_FIELDS(X)
#undef X
#define X(name)                                         \
  if (key == #name) {                                   \
    weights.name = detail::parse_number<double>(key, value); \
    return;                                             \
  }
  EVTRACK_WEIGHT_FIELDS(X)
#undef X
#undef PARSE_str
#undef PARSE_dbl
#undef PARSE_int
#undef PARSE_u64
#undef PARSE_bool
  throw InvalidInputError("config: unknown key '" + key + "'");
}

#undef EVTRACK_CONFIG_FIELDS
#undef EVTRACK_WEIGHT_FIELDS

/// Applies `key = value` lines from `text` on top of `cfg`.
inline void parse_config_text(const std::string& text, RunConfig& cfg) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidInputError("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  parse_config_text(ss.str(), cfg);
  cfg.validate();
  return cfg;
}

inline void write_config(std::ostream& out, const RunConfig& cfg) {
  for (const auto& [k, v] : cfg.entries()) out << k << " = " << v << '\n';
}

}  // namespace evtrack
