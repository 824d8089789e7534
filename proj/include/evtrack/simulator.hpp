#pragma once

// Differentiable event-frame generation: render the previous and the current
// state, subtract, and pass the difference through the smooth threshold.

#include "evtrack/events.hpp"
#include "evtrack/params.hpp"
#include "evtrack/render.hpp"

#include <span>
#include <vector>

namespace evtrack {

/// Per-pixel generated event values in (-1, 1), row-major.
struct GeneratedFrame {
  int width = 0, height = 0;
  std::vector<double> values;
  std::vector<double> diff;  // current - previous rendering

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

inline GeneratedFrame threshold_difference(const GrayImage& current, const GrayImage& previous,
                                           const ThresholdParams& tp) {
  const GrayImage d = difference(current, previous);
  GeneratedFrame out;
  out.width = d.width;
  out.height = d.height;
  out.diff = d.data;
  out.values.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out.values[i] = smooth_threshold(d.data[i], tp);
  return out;
}

inline GeneratedFrame generate_event_frame(const ParamSet& previous, const ParamSet& current,
                                           const DeformableModel& model, const Camera& cam,
                                           const RasterSettings& rs, const ThresholdParams& tp) {
  if (previous.index() != current.index() || param_dim(previous) != param_dim(current))
    throw ShapeError("generate_event_frame: parameter sets differ in variant or dimension");
  const auto prev_v = model.world_vertices(previous);
  const auto cur_v = model.world_vertices(current);
  const GrayImage prev_img = render_gray(prev_v, model.faces(), cam, rs);
  const GrayImage cur_img = render_gray(cur_v, model.faces(), cam, rs);
  return threshold_difference(cur_img, prev_img, tp);
}

}  // namespace evtrack
