#pragma once

// Per-frame unknowns and the map from them to world-space vertices.
//
// Flattening order (fixed): t (3), r (3), then either the pose vector or the
// free vertices row-major (x0 y0 z0 x1 ...).

#include "evtrack/articulated.hpp"
#include "evtrack/errors.hpp"
#include "evtrack/geometry.hpp"
#include "evtrack/jet.hpp"

#include <span>
#include <string>
#include <variant>
#include <vector>

namespace evtrack {

inline constexpr std::size_t kRigidDim = 6;

struct ParametricParams {
  std::vector<double> theta;
  RigidTransform rigid;
};

struct MeshFreeParams {
  std::vector<Vec3> vertices;
  RigidTransform rigid;
};

using ParamSet = std::variant<ParametricParams, MeshFreeParams>;

inline const RigidTransform& rigid_of(const ParamSet& p) {
  return std::visit([](const auto& x) -> const RigidTransform& { return x.rigid; }, p);
}

inline std::size_t param_dim(const ParamSet& p) {
  if (const auto* pp = std::get_if<ParametricParams>(&p)) return kRigidDim + pp->theta.size();
  return kRigidDim + 3 * std::get<MeshFreeParams>(p).vertices.size();
}

inline std::vector<double> flatten(const ParamSet& p) {
  std::vector<double> out;
  out.reserve(param_dim(p));
  const RigidTransform& rigid = rigid_of(p);
  for (int k = 0; k < 3; ++k) out.push_back(rigid.t(k));
  for (int k = 0; k < 3; ++k) out.push_back(rigid.r(k));
  if (const auto* pp = std::get_if<ParametricParams>(&p)) {
    out.insert(out.end(), pp->theta.begin(), pp->theta.end());
  } else {
    for (const Vec3& v : std::get<MeshFreeParams>(p).vertices)
      for (int k = 0; k < 3; ++k) out.push_back(v(k));
  }
  return out;
}

/// Rebuilds a parameter set of the same variant and dimension as `like`.
inline ParamSet unflatten(std::span<const double> flat, const ParamSet& like) {
  if (flat.size() != param_dim(like))
    throw ShapeError("unflatten: expected " + std::to_string(param_dim(like)) + " values, got " +
                     std::to_string(flat.size()));
  RigidTransform rigid;
  rigid.t = Vec3(flat[0], flat[1], flat[2]);
  rigid.r = Vec3(flat[3], flat[4], flat[5]);
  const auto rest = flat.subspan(kRigidDim);
  if (std::holds_alternative<ParametricParams>(like))
    return ParametricParams{std::vector<double>(rest.begin(), rest.end()), rigid};
  MeshFreeParams out;
  out.rigid = rigid;
  out.vertices.resize(rest.size() / 3);
  for (std::size_t i = 0; i < out.vertices.size(); ++i)
    out.vertices[i] = Vec3(rest[3 * i], rest[3 * i + 1], rest[3 * i + 2]);
  return out;
}

/// Deformable object: either a free-vertex template mesh or an articulated model.
class DeformableModel {
 public:
  enum class Kind { kMeshFree, kParametric };

  static DeformableModel mesh_free(TriMesh tmpl) {
    DeformableModel m;
    m.kind_ = Kind::kMeshFree;
    m.mesh_ = std::move(tmpl);
    return m;
  }
  static DeformableModel parametric(ArticulatedModel model) {
    DeformableModel m;
    m.kind_ = Kind::kParametric;
    model.validate();
    m.mesh_ = model.rest;
    m.articulated_ = std::move(model);
    return m;
  }

  Kind kind() const { return kind_; }
  bool is_parametric() const { return kind_ == Kind::kParametric; }
  const TriMesh& template_mesh() const { return mesh_; }
  const std::vector<Face>& faces() const { return mesh_.faces(); }
  const ArticulatedModel& articulated() const { return articulated_; }
  std::size_t num_vertices() const { return mesh_.num_vertices(); }

  std::size_t dim() const {
    return kRigidDim + (is_parametric() ? articulated_.pose_dim() : 3 * mesh_.num_vertices());
  }

  /// Parameters of the undeformed template placed with `rigid`.
  ParamSet rest_params(const RigidTransform& rigid = {}) const {
    if (is_parametric()) return ParametricParams{std::vector<double>(articulated_.pose_dim(), 0.0), rigid};
    return MeshFreeParams{mesh_.template_vertices(), rigid};
  }

  ParamSet unflatten(std::span<const double> flat) const {
    check_dim(flat.size());
    return evtrack::unflatten(flat, rest_params());
  }

  /// Object-frame vertices before the global rigid transform.
  std::vector<Vec3> local_vertices(std::span<const double> flat) const {
    check_dim(flat.size());
    if (is_parametric()) {
      return deform_articulated<double>(articulated_, flat.subspan(kRigidDim), Vec3::Zero(),
                                        Vec3::Zero());
    }
    return vertex_block(flat);
  }

  /// World-space vertices.
  std::vector<Vec3> world_vertices(std::span<const double> flat) const {
    check_dim(flat.size());
    const Vec3 t(flat[0], flat[1], flat[2]);
    const Vec3 r(flat[3], flat[4], flat[5]);
    if (is_parametric()) return deform_articulated<double>(articulated_, flat.subspan(kRigidDim), r, t);
    const auto local = vertex_block(flat);
    return apply_rigid<double>(local, r, t);
  }

  std::vector<Vec3> world_vertices(const ParamSet& p) const {
    const auto flat = flatten(p);
    return world_vertices(flat);
  }

  /// Gradient with respect to the flat parameters of sum_i <grad_world[i], V_i(theta)>.
  std::vector<double> pullback(std::span<const double> flat, std::span<const Vec3> grad_world) const {
    check_dim(flat.size());
    if (grad_world.size() != num_vertices()) throw ShapeError("pullback: gradient size mismatch");
    return is_parametric() ? pullback_parametric(flat, grad_world) : pullback_mesh_free(flat, grad_world);
  }

 private:
  void check_dim(std::size_t n) const {
    if (n != dim())
      throw ShapeError("parameter dimension " + std::to_string(n) + " != model dimension " +
                       std::to_string(dim()));
  }

  static std::vector<Vec3> vertex_block(std::span<const double> flat) {
    std::vector<Vec3> v((flat.size() - kRigidDim) / 3);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::size_t o = kRigidDim + 3 * i;
      v[i] = Vec3(flat[o], flat[o + 1], flat[o + 2]);
    }
    return v;
  }

  std::vector<double> pullback_mesh_free(std::span<const double> flat,
                                         std::span<const Vec3> grad_world) const {
    std::vector<double> grad(flat.size(), 0.0);
    const auto local = vertex_block(flat);
    using J3 = Jet<3>;
    const Vec3T<J3> r(J3(flat[3], 0), J3(flat[4], 1), J3(flat[5], 2));
    const Mat3T<J3> rot = rotation_matrix<J3>(r);
    Mat3 rot_value;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) rot_value(a, b) = rot(a, b).a;

    Vec3 grad_t = Vec3::Zero();
    Mat3 outer = Mat3::Zero();  // sum_i g_i v_i^T
    for (std::size_t i = 0; i < local.size(); ++i) {
      grad_t += grad_world[i];
      outer += grad_world[i] * local[i].transpose();
      const Vec3 gv = rot_value.transpose() * grad_world[i];
      for (int k = 0; k < 3; ++k) grad[kRigidDim + 3 * i + k] = gv(k);
    }
    for (int k = 0; k < 3; ++k) {
      grad[k] = grad_t(k);
      double acc = 0.0;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) acc += rot(a, b).v[k] * outer(a, b);
      grad[3 + k] = acc;
    }
    return grad;
  }

  std::vector<double> pullback_parametric(std::span<const double> flat,
                                          std::span<const Vec3> grad_world) const {
    constexpr int kChunk = 6;
    using J = Jet<kChunk>;
    const std::size_t n = flat.size();
    std::vector<double> grad(n, 0.0);
    std::vector<J> x(n);
    for (std::size_t start = 0; start < n; start += kChunk) {
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = J(flat[i]);
        if (i >= start && i < start + kChunk) x[i].v[i - start] = 1.0;
      }
      const Vec3T<J> t(x[0], x[1], x[2]);
      const Vec3T<J> r(x[3], x[4], x[5]);
      const auto verts = deform_articulated<J>(articulated_, std::span<const J>(x).subspan(kRigidDim), r, t);
      for (std::size_t i = 0; i < verts.size(); ++i)
        for (int a = 0; a < 3; ++a) {
          const double g = grad_world[i](a);
          if (g == 0.0) continue;
          for (int k = 0; k < kChunk && start + k < n; ++k) grad[start + k] += g * verts[i](a).v[k];
        }
    }
    return grad;
  }

  Kind kind_ = Kind::kMeshFree;
  TriMesh mesh_;
  ArticulatedModel articulated_;
};

}  // namespace evtrack
