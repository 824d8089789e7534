#pragma once

// A small linear-blend-skinned articulated model. Stands in for a parametric
// hand model: pose is one axis-angle rotation per joint, plus the global rigid
// transform carried by the parameter set.

#include "evtrack/errors.hpp"
#include "evtrack/geometry.hpp"

#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace evtrack {

struct Joint {
  int parent = -1;            // -1 for the root
  Vec3 offset = Vec3::Zero();  // rest position relative to the parent joint (root: absolute)
};

struct ArticulatedModel {
  TriMesh rest;
  std::vector<Joint> joints;
  /// skin_weights[i][j]: influence of joint j on vertex i.
  std::vector<std::vector<double>> skin_weights;
  /// regressor[j]: sparse (vertex, weight) list producing the reported joint j.
  std::vector<std::vector<std::pair<int, double>>> regressor;

  std::size_t num_joints() const { return joints.size(); }
  std::size_t pose_dim() const { return 3 * joints.size(); }

  /// Absolute rest positions of the joints.
  std::vector<Vec3> rest_joint_positions() const {
    std::vector<Vec3> p(joints.size());
    for (std::size_t j = 0; j < joints.size(); ++j)
      p[j] = joints[j].parent < 0 ? joints[j].offset : p[joints[j].parent] + joints[j].offset;
    return p;
  }

  void validate() const {
    if (joints.empty() || joints[0].parent != -1)
      throw InvalidInputError("articulated model: joint 0 must be the root");
    for (std::size_t j = 1; j < joints.size(); ++j)
      if (joints[j].parent < 0 || joints[j].parent >= static_cast<int>(j))
        throw InvalidInputError("articulated model: parents must precede children");
    if (skin_weights.size() != rest.num_vertices())
      throw InvalidInputError("articulated model: one skinning row per vertex required");
    for (const auto& row : skin_weights) {
      if (row.size() != joints.size())
        throw InvalidInputError("articulated model: skinning row has wrong length");
      double sum = 0.0;
      for (double w : row) {
        if (w < 0.0) throw InvalidInputError("articulated model: negative skinning weight");
        sum += w;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw InvalidInputError("articulated model: skinning row does not sum to 1");
    }
    if (regressor.size() != joints.size())
      throw InvalidInputError("articulated model: one regressor row per joint required");
  }
};

/// Linear blend skinning followed by the global rigid transform.
///
/// `pose` holds one axis-angle vector per joint, rotating about that joint in
/// its parent's frame.
template <typename T>
std::vector<Vec3T<T>> deform_articulated(const ArticulatedModel& model, std::span<const T> pose,
                                         const Vec3T<T>& rigid_r, const Vec3T<T>& rigid_t) {
  const std::size_t nj = model.num_joints();
  if (pose.size() != 3 * nj)
    throw ShapeError("deform_articulated: pose length " + std::to_string(pose.size()) +
                     " != 3 x " + std::to_string(nj) + " joints");

  const std::vector<Vec3> rest_joints = model.rest_joint_positions();
  std::vector<Mat3T<T>> rot(nj);
  std::vector<Vec3T<T>> pos(nj);
  for (std::size_t j = 0; j < nj; ++j) {
    const Vec3T<T> aa(pose[3 * j], pose[3 * j + 1], pose[3 * j + 2]);
    const Mat3T<T> local = rotation_matrix<T>(aa);
    const int parent = model.joints[j].parent;
    const Vec3T<T> offset = model.joints[j].offset.template cast<T>();
    if (parent < 0) {
      rot[j] = local;
      pos[j] = offset;
    } else {
      rot[j] = rot[parent] * local;
      pos[j] = pos[parent] + rot[parent] * offset;
    }
  }

  const Mat3T<T> global = rotation_matrix<T>(rigid_r);
  const auto& rest = model.rest.vertices();
  std::vector<Vec3T<T>> out(rest.size());
  // Written as rest + sum_j w_j * displacement_j so the zero pose reproduces
  // the rest vertices bit for bit.
  std::vector<Mat3T<T>> rot_minus_id(nj);
  std::vector<Vec3T<T>> shift(nj);
  for (std::size_t j = 0; j < nj; ++j) {
    rot_minus_id[j] = rot[j] - Mat3T<T>::Identity();
    shift[j] = pos[j] - rest_joints[j].template cast<T>();
  }
  for (std::size_t i = 0; i < rest.size(); ++i) {
    Vec3T<T> disp = Vec3T<T>::Zero();
    for (std::size_t j = 0; j < nj; ++j) {
      const double w = model.skin_weights[i][j];
      if (w == 0.0) continue;
      const Vec3T<T> local = (rest[i] - rest_joints[j]).template cast<T>();
      disp += w * (rot_minus_id[j] * local + shift[j]);
    }
    const Vec3T<T> acc = rest[i].template cast<T>() + disp;
    out[i] = global * acc + rigid_t;
  }
  return out;
}

inline std::vector<Vec3> deform_articulated(const ArticulatedModel& model, std::span<const double> pose,
                                            const RigidTransform& rigid) {
  return deform_articulated<double>(model, pose, rigid.r, rigid.t);
}

/// Reported joint positions for deformed vertices.
inline std::vector<Vec3> regress_joints(const ArticulatedModel& model, std::span<const Vec3> vertices) {
  std::vector<Vec3> joints;
  joints.reserve(model.regressor.size());
  for (const auto& row : model.regressor) {
    Vec3 p = Vec3::Zero();
    for (auto [idx, w] : row) p += w * vertices[idx];
    joints.push_back(p);
  }
  return joints;
}

struct FingerChainOptions {
  int joints = 4;
  double segment_length = 0.3;
  double radius = 0.07;
  double rest_curl = 0.25;  // rest bend per joint about +z (radians)
  int rings_per_segment = 4;
  int ring_vertices = 8;
};

/// Procedural capsule-like tube following a gently curled joint chain.
///
/// Joints sit on the centerline, each segment is a tube with
/// `rings_per_segment` rings, and both ends are closed by a cap vertex.
/// Skinning blends linearly between adjacent segments near every joint.
inline ArticulatedModel make_finger_chain(const FingerChainOptions& opt = {}) {
  if (opt.joints < 1 || opt.rings_per_segment < 1 || opt.ring_vertices < 3)
    throw InvalidInputError("finger chain: invalid options");
  const int nj = opt.joints;
  const double len = opt.segment_length;

  ArticulatedModel model;
  model.joints.resize(nj);
  std::vector<Vec3> dirs(nj + 1);
  for (int j = 0; j < nj; ++j) {
    const double angle = opt.rest_curl * j;
    dirs[j] = Vec3(std::cos(angle), std::sin(angle), 0.0);
    model.joints[j].parent = j - 1;
    model.joints[j].offset = j == 0 ? Vec3::Zero() : Vec3(len * dirs[j - 1]);
  }
  const std::vector<Vec3> jp = model.rest_joint_positions();
  const Vec3 tip = jp[nj - 1] + len * dirs[nj - 1];

  // Centerline samples with arc parameter u in [0, nj].
  struct Sample {
    Vec3 c, tangent;
    double u;
  };
  std::vector<Sample> samples;
  for (int j = 0; j < nj; ++j) {
    const Vec3 a = jp[j];
    const Vec3 b = j + 1 < nj ? jp[j + 1] : tip;
    for (int s = 0; s < opt.rings_per_segment; ++s) {
      const double f = static_cast<double>(s) / opt.rings_per_segment;
      Vec3 tangent = dirs[j];
      if (s == 0 && j > 0) tangent = (dirs[j] + dirs[j - 1]).normalized();
      samples.push_back({a + f * (b - a), tangent, j + f});
    }
  }
  samples.push_back({tip, dirs[nj - 1], static_cast<double>(nj)});

  const int m = opt.ring_vertices;
  const Vec3 binormal(0.0, 0.0, 1.0);
  std::vector<Vec3> verts;
  std::vector<double> arc;
  for (const auto& smp : samples) {
    const Vec3 normal = binormal.cross(smp.tangent).normalized();
    for (int k = 0; k < m; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / m;
      verts.push_back(smp.c + opt.radius * (std::cos(phi) * normal + std::sin(phi) * binormal));
      arc.push_back(smp.u);
    }
  }
  const int rings = static_cast<int>(samples.size());
  const int cap0 = static_cast<int>(verts.size());
  verts.push_back(jp[0] - 0.5 * opt.radius * dirs[0]);
  arc.push_back(0.0);
  const int cap1 = static_cast<int>(verts.size());
  verts.push_back(tip + 0.5 * opt.radius * dirs[nj - 1]);
  arc.push_back(static_cast<double>(nj));

  std::vector<Face> faces;
  for (int r = 0; r + 1 < rings; ++r)
    for (int k = 0; k < m; ++k) {
      const int a = r * m + k, b = r * m + (k + 1) % m;
      const int c = (r + 1) * m + k, d = (r + 1) * m + (k + 1) % m;
      faces.push_back({a, c, d});
      faces.push_back({a, d, b});
    }
  for (int k = 0; k < m; ++k) {
    faces.push_back({cap0, (k + 1) % m, k});
    faces.push_back({cap1, (rings - 1) * m + k, (rings - 1) * m + (k + 1) % m});
  }
  // Orient every face outward from the centerline.
  for (Face& f : faces) {
    const Vec3 centroid = (verts[f[0]] + verts[f[1]] + verts[f[2]]) / 3.0;
    const Vec3 n = (verts[f[1]] - verts[f[0]]).cross(verts[f[2]] - verts[f[0]]);
    double best = 1e300;
    Vec3 axis_point = jp[0];
    for (const auto& smp : samples) {
      const double d = (smp.c - centroid).squaredNorm();
      if (d < best) {
        best = d;
        axis_point = smp.c;
      }
    }
    if (n.dot(centroid - axis_point) < 0.0) std::swap(f[1], f[2]);
  }

  model.rest = TriMesh(verts, faces);
  model.skin_weights.assign(verts.size(), std::vector<double>(nj, 0.0));
  for (std::size_t i = 0; i < verts.size(); ++i) {
    const double u = arc[i];
    int k = std::min(static_cast<int>(std::floor(u)), nj - 1);
    const double frac = u - k;
    auto& w = model.skin_weights[i];
    if (frac < 0.25 && k > 0) {
      w[k] = 0.5 + 2.0 * frac;
      w[k - 1] = 1.0 - w[k];
    } else if (frac > 0.75 && k < nj - 1) {
      w[k + 1] = 2.0 * (frac - 0.75);
      w[k] = 1.0 - w[k + 1];
    } else {
      w[k] = 1.0;
    }
  }
  // Joint j reports the centroid of the ring that sits on it.
  model.regressor.resize(nj);
  for (int j = 0; j < nj; ++j) {
    const int ring = j * opt.rings_per_segment;
    for (int k = 0; k < m; ++k) model.regressor[j].emplace_back(ring * m + k, 1.0 / m);
  }
  model.validate();
  return model;
}

}  // namespace evtrack
