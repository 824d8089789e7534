#pragma once

// Per-frame relative 3D error after rigid Procrustes alignment (no scale):
//   e = ||S_gt - align(S_rec)||_F / ||S_gt||_F,  averaged over frames.
// The same formula serves joints (e_joint3d) and dense meshes (e_3d).

#include "evtrack/errors.hpp"
#include "evtrack/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace evtrack {

struct MetricReport {
  std::vector<double> per_frame;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation over frames
};

inline double relative_aligned_error(std::span<const Vec3> recovered, std::span<const Vec3> ground_truth) {
  if (recovered.size() != ground_truth.size()) throw ShapeError("metric: point counts differ");
  double gt_norm2 = 0.0;
  for (const Vec3& p : ground_truth) gt_norm2 += p.squaredNorm();
  if (gt_norm2 == 0.0) throw InvalidInputError("metric: ground truth has zero Frobenius norm");
  const ProcrustesResult al = procrustes_align(recovered, ground_truth);
  return std::sqrt(al.residual) / std::sqrt(gt_norm2);
}

inline MetricReport sequence_error(const std::vector<std::vector<Vec3>>& recovered,
                                   const std::vector<std::vector<Vec3>>& ground_truth) {
  if (recovered.size() != ground_truth.size())
    throw ShapeError("metric: frame counts differ (" + std::to_string(recovered.size()) + " vs " +
                     std::to_string(ground_truth.size()) + ")");
  if (recovered.empty()) throw InvalidInputError("metric: no frames");
  MetricReport r;
  for (std::size_t i = 0; i < recovered.size(); ++i)
    r.per_frame.push_back(relative_aligned_error(recovered[i], ground_truth[i]));
  for (double e : r.per_frame) r.mean += e;
  r.mean /= static_cast<double>(r.per_frame.size());
  for (double e : r.per_frame) r.stddev += (e - r.mean) * (e - r.mean);
  r.stddev = std::sqrt(r.stddev / static_cast<double>(r.per_frame.size()));
  return r;
}

/// Average 3D joint error.
inline MetricReport e_joint3d(const std::vector<std::vector<Vec3>>& recovered,
                              const std::vector<std::vector<Vec3>>& ground_truth) {
  return sequence_error(recovered, ground_truth);
}

/// Average dense mesh error.
inline MetricReport e_3d(const std::vector<std::vector<Vec3>>& recovered,
                         const std::vector<std::vector<Vec3>>& ground_truth) {
  return sequence_error(recovered, ground_truth);
}

/// CSV: header `frame,<column>`, one row per frame, then `mean,std`.
inline void write_metric_csv(const std::filesystem::path& path, const MetricReport& r,
                             const std::string& column = "e3d") {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[96];
  out << "frame," << column << '\n';
  for (std::size_t i = 0; i < r.per_frame.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9f\n", i, r.per_frame[i]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%.9f,%.9f\n", r.mean, r.stddev);
  out << buf;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace evtrack
