#pragma once

// Event data model, event-frame accumulation, the smooth threshold function,
// noise filtering, image-differencing event synthesis and adaptive sampling.

#include "evtrack/errors.hpp"
#include "evtrack/render.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace evtrack {

struct Event {
  std::uint64_t t = 0;  // microseconds
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // -1 or +1

  friend bool operator==(const Event&, const Event&) = default;
};

struct EventStream {
  int width = 0;
  int height = 0;
  std::vector<Event> events;

  std::size_t size() const { return events.size(); }

  void validate() const {
    if (width <= 0 || height <= 0) throw InvalidInputError("event stream: invalid sensor size");
    for (std::size_t i = 0; i < events.size(); ++i) {
      const Event& e = events[i];
      if (e.x >= width || e.y >= height) throw InvalidInputError("event " + std::to_string(i) + " outside sensor");
      if (e.p != 1 && e.p != -1) throw InvalidInputError("event " + std::to_string(i) + " has invalid polarity");
      if (i > 0 && e.t < events[i - 1].t)
        throw InvalidInputError("event " + std::to_string(i) + " breaks timestamp order");
    }
  }
};

struct EventFrame {
  int width = 0, height = 0;
  std::vector<double> values;  // row-major, in [-1, 1]
  std::uint64_t t_first = 0, t_last = 0;
  std::size_t count = 0;  // events in the window

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool has_event(std::size_t pix) const { return values[pix] != 0.0; }
};

/// Normalized polarity sum of events [start, start + count).
inline EventFrame accumulate(const EventStream& stream, std::size_t start, std::size_t count) {
  if (count == 0) throw InvalidInputError("accumulate: empty event window");
  if (start + count > stream.size()) throw InvalidInputError("accumulate: window exceeds stream length");
  EventFrame frame;
  frame.width = stream.width;
  frame.height = stream.height;
  frame.count = count;
  frame.t_first = stream.events[start].t;
  frame.t_last = stream.events[start + count - 1].t;
  std::vector<long long> sums(static_cast<std::size_t>(stream.width) * stream.height, 0);
  for (std::size_t i = start; i < start + count; ++i) {
    const Event& e = stream.events[i];
    sums[static_cast<std::size_t>(e.y) * stream.width + e.x] += e.p;
  }
  long long peak = 0;
  for (long long s : sums) peak = std::max(peak, s < 0 ? -s : s);
  frame.values.assign(sums.size(), 0.0);
  if (peak == 0) return frame;
  for (std::size_t i = 0; i < sums.size(); ++i)
    frame.values[i] = static_cast<double>(sums[i]) / static_cast<double>(peak);
  return frame;
}

/// Consecutive windows of `count` events; a trailing partial window is dropped.
inline std::vector<EventFrame> split_frames(const EventStream& stream, std::size_t count) {
  if (count == 0) throw InvalidInputError("split_frames: window size must be >= 1");
  std::vector<EventFrame> frames;
  for (std::size_t start = 0; start + count <= stream.size(); start += count)
    frames.push_back(accumulate(stream, start, count));
  return frames;
}

struct ThresholdParams {
  double C = 10.0 / 255.0;  // contrast sensitivity on the image scale
  double w = 5.0 / (10.0 / 255.0);
  double eps = 1e-3;

  /// Defaults tied to C: w = 5 / C.
  static ThresholdParams for_contrast(double c, double eps = 1e-3) { return {c, 5.0 / c, eps}; }

  void validate() const {
    if (!(C > 0.0) || !(w > 0.0) || !(eps > 0.0))
      throw InvalidInputError("threshold parameters must be positive");
  }
};

/// g(x) = ((x + eps) / (|x| + eps)) / (1 + exp(-w |x| + w C)).
inline double smooth_threshold(double x, const ThresholdParams& tp) {
  const double ax = std::abs(x);
  const double sign_part = (x + tp.eps) / (ax + tp.eps);
  return sign_part * detail::sigmoid(tp.w * (ax - tp.C));
}

/// dg/dx; at x = 0 the right-hand limit is used.
inline double smooth_threshold_derivative(double x, const ThresholdParams& tp) {
  const double ax = std::abs(x);
  const double s = detail::sigmoid(tp.w * (ax - tp.C));
  const double ds = tp.w * s * (1.0 - s);
  if (x >= 0.0) return ds;  // sign part is identically 1
  const double denom = tp.eps - x;
  const double sign_part = (x + tp.eps) / denom;
  const double d_sign = 2.0 * tp.eps / (denom * denom);
  return d_sign * s - sign_part * ds;
}

/// Pixels of nonzero frame value whose 5x5 neighborhood (clipped at the
/// border) holds at least `min_count` nonzero pixels, itself included.
inline std::vector<int> filter_noise(const EventFrame& frame, int min_count = 3, int window = 5) {
  if (min_count < 1) throw InvalidInputError("filter_noise: min_count must be >= 1");
  const int r = window / 2;
  const int w = frame.width, h = frame.height;
  // Summed-area table of the nonzero mask.
  std::vector<int> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      sat[(y + 1) * (w + 1) + x + 1] = (frame.values[y * w + x] != 0.0 ? 1 : 0) + sat[y * (w + 1) + x + 1] +
                                       sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
  std::vector<int> kept;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (frame.values[y * w + x] == 0.0) continue;
      const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r) + 1;
      const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r) + 1;
      const int n = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] + sat[y0 * (w + 1) + x0];
      if (n >= min_count) kept.push_back(y * w + x);
    }
  return kept;
}

/// One event per pixel with |cur - prev| >= C, stamped t_cur, row-major order.
inline std::vector<Event> synth_events_from_images(const GrayImage& prev, const GrayImage& cur, double contrast,
                                                   std::uint64_t t_cur) {
  if (prev.width != cur.width || prev.height != cur.height)
    throw ShapeError("synth_events: image sizes differ");
  if (!(contrast > 0.0)) throw InvalidInputError("synth_events: contrast must be positive");
  if (contrast >= 1.0)
    throw InvalidInputError("synth_events: contrast >= full intensity range; C must be on the [0,1] image scale");
  std::vector<Event> out;
  for (int y = 0; y < cur.height; ++y)
    for (int x = 0; x < cur.width; ++x) {
      const double d = cur.at(x, y) - prev.at(x, y);
      if (std::abs(d) >= contrast)
        out.push_back({t_cur, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                       static_cast<std::int8_t>(d > 0.0 ? 1 : -1)});
    }
  return out;
}

struct AdaptiveStep {
  std::uint64_t t_next = 0;
  bool fallback = false;  // difference image was all zero; previous interval doubled
};

/// Next sampling time: t_k + lambda * C / max_x |dL/dt|, with the rate taken
/// as |diff| / (t_k - t_km1).
inline AdaptiveStep adaptive_next_timestamp(const GrayImage& diff, std::uint64_t t_k, std::uint64_t t_km1,
                                            double lambda, double contrast) {
  if (t_k <= t_km1) throw InvalidInputError("adaptive sampling: t_k must exceed t_km1");
  if (!(lambda > 0.0)) throw InvalidInputError("adaptive sampling: lambda must be positive");
  if (!(contrast > 0.0)) throw InvalidInputError("adaptive sampling: contrast must be positive");
  double peak = 0.0;
  for (double d : diff.data) peak = std::max(peak, std::abs(d));
  const double interval = static_cast<double>(t_k - t_km1);
  if (peak == 0.0) return {t_k + 2 * (t_k - t_km1), true};
  const double rate = peak / interval;
  const double step = std::max(1.0, std::round(lambda * contrast / rate));
  return {t_k + static_cast<std::uint64_t>(step), false};
}

inline GrayImage difference(const GrayImage& cur, const GrayImage& prev) {
  if (prev.width != cur.width || prev.height != cur.height) throw ShapeError("difference: image sizes differ");
  GrayImage d(cur.width, cur.height);
  for (std::size_t i = 0; i < d.size(); ++i) d.data[i] = cur.data[i] - prev.data[i];
  return d;
}

}  // namespace evtrack
