#pragma once

// Triangle meshes, rigid transforms, edge adjacency, edge-graph geodesics and
// Procrustes alignment.

#include "evtrack/errors.hpp"
#include "evtrack/jet.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace evtrack {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Face = std::array<int, 3>;

template <typename T>
using Vec3T = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Mat3T = Eigen::Matrix<T, 3, 3>;

class TriMesh {
 public:
  TriMesh() = default;

  /// The given vertices become both the current and the template positions.
  TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
      : vertices_(std::move(vertices)), faces_(std::move(faces)) {
    template_ = vertices_;
    validate();
  }

  TriMesh(std::vector<Vec3> vertices, std::vector<Face> faces,
          std::vector<Vec3> template_vertices)
      : vertices_(std::move(vertices)),
        faces_(std::move(faces)),
        template_(std::move(template_vertices)) {
    validate();
  }

  /// Copy sharing faces and template, with new current positions.
  TriMesh with_vertices(std::vector<Vec3> vertices) const {
    return TriMesh(std::move(vertices), faces_, template_);
  }

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  const std::vector<Vec3>& template_vertices() const { return template_; }
  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_faces() const { return faces_.size(); }

 private:
  void validate() const {
    if (template_.size() != vertices_.size())
      throw InvalidInputError("template and current vertex counts differ");
    const int n = static_cast<int>(vertices_.size());
    for (const Face& f : faces_) {
      for (int idx : f)
        if (idx < 0 || idx >= n) throw InvalidInputError("face index out of range");
      if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
        throw InvalidInputError("degenerate face");
    }
  }

  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
  std::vector<Vec3> template_;
};

/// Axis-angle rotation `r` (radians) followed by translation `t`.
struct RigidTransform {
  Vec3 t = Vec3::Zero();
  Vec3 r = Vec3::Zero();

  static RigidTransform identity() { return {}; }
};

/// Rodrigues formula, smooth through r = 0 (Taylor branch for tiny angles).
template <typename T>
Mat3T<T> rotation_matrix(const Vec3T<T>& r) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const T theta2 = r.squaredNorm();
  T a, b;  // R = I + a [r]x + b [r]x^2
  if (value_of(theta2) > 1e-12) {
    const T theta = sqrt(theta2);
    a = sin(theta) / theta;
    b = (T(1.0) - cos(theta)) / theta2;
  } else {
    a = T(1.0) - theta2 / 6.0;
    b = T(0.5) - theta2 / 24.0;
  }
  Mat3T<T> k;
  k << T(0.0), -r(2), r(1), r(2), T(0.0), -r(0), -r(1), r(0), T(0.0);
  Mat3T<T> rot = Mat3T<T>::Identity();
  rot += a * k;
  rot += b * (k * k);
  return rot;
}

inline Mat3 rotation_matrix(const Vec3& r) { return rotation_matrix<double>(r); }

/// Axis-angle vector of a rotation matrix.
inline Vec3 rotation_vector(const Mat3& rot) {
  Eigen::AngleAxisd aa(rot);
  return aa.angle() * aa.axis();
}

/// v' = R v + t for every vertex.
template <typename T>
std::vector<Vec3T<T>> apply_rigid(std::span<const Vec3T<T>> vertices, const Vec3T<T>& r,
                                  const Vec3T<T>& t) {
  const Mat3T<T> rot = rotation_matrix<T>(r);
  std::vector<Vec3T<T>> out;
  out.reserve(vertices.size());
  for (const auto& v : vertices) out.push_back(rot * v + t);
  return out;
}

inline std::vector<Vec3> apply_rigid(std::span<const Vec3> vertices, const RigidTransform& rigid) {
  return apply_rigid<double>(vertices, rigid.r, rigid.t);
}

/// Per-vertex sorted neighbor lists derived from face edges.
struct Adjacency {
  std::vector<std::vector<int>> neighbors;

  std::size_t size() const { return neighbors.size(); }
  const std::vector<int>& operator[](std::size_t i) const { return neighbors[i]; }
};

inline Adjacency build_adjacency(const TriMesh& mesh) {
  Adjacency adj;
  adj.neighbors.resize(mesh.num_vertices());
  for (const Face& f : mesh.faces()) {
    for (int k = 0; k < 3; ++k) {
      const int a = f[k];
      const int b = f[(k + 1) % 3];
      adj.neighbors[a].push_back(b);
      adj.neighbors[b].push_back(a);
    }
  }
  for (auto& n : adj.neighbors) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return adj;
}

/// Undirected edges (i < j) in lexicographic order.
inline std::vector<std::pair<int, int>> edge_list(const Adjacency& adj) {
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < static_cast<int>(adj.size()); ++i)
    for (int j : adj[i])
      if (i < j) edges.emplace_back(i, j);
  return edges;
}

/// Indices {0, stride, 2 stride, ...} below the vertex count.
inline std::vector<int> subsample_vertices(const TriMesh& mesh, int stride) {
  if (stride < 1) throw InvalidInputError("stride must be >= 1");
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(mesh.num_vertices()); i += stride) out.push_back(i);
  return out;
}

/// Pairwise edge-graph shortest paths between sampled template vertices.
///
/// Distances use template edge lengths. For every unordered sample pair the
/// vertex sequence of one shortest path is kept so the same path can be
/// re-measured on a deformed mesh.
struct GeodesicTable {
  std::vector<int> samples;
  Eigen::MatrixXd distance;  // samples x samples, +inf when disconnected
  std::vector<std::vector<int>> paths;  // indexed by pair_index(a, b), a < b

  std::size_t pair_index(std::size_t a, std::size_t b) const {
    if (a > b) std::swap(a, b);
    const std::size_t n = samples.size();
    return a * n - a * (a + 1) / 2 + (b - a - 1);
  }
};

inline GeodesicTable geodesic_distances(const TriMesh& mesh, std::span<const int> samples) {
  if (samples.empty()) throw InvalidInputError("geodesic sample set is empty");
  const int n = static_cast<int>(mesh.num_vertices());
  for (int s : samples)
    if (s < 0 || s >= n) throw InvalidInputError("geodesic sample index out of range");

  const Adjacency adj = build_adjacency(mesh);
  const auto& tmpl = mesh.template_vertices();
  constexpr double kInf = std::numeric_limits<double>::infinity();

  GeodesicTable table;
  table.samples.assign(samples.begin(), samples.end());
  const std::size_t m = samples.size();
  table.distance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  table.paths.resize(m * (m - 1) / 2);

  std::vector<double> dist(n);
  std::vector<int> prev(n);
  using Item = std::pair<double, int>;
  for (std::size_t a = 0; a < m; ++a) {
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(prev.begin(), prev.end(), -1);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[samples[a]] = 0.0;
    queue.emplace(0.0, samples[a]);
    while (!queue.empty()) {
      auto [d, u] = queue.top();
      queue.pop();
      if (d > dist[u]) continue;
      for (int w : adj[u]) {
        const double nd = d + (tmpl[u] - tmpl[w]).norm();
        if (nd < dist[w]) {
          dist[w] = nd;
          prev[w] = u;
          queue.emplace(nd, w);
        }
      }
    }
    for (std::size_t b = 0; b < m; ++b) {
      const double d = dist[samples[b]];
      table.distance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = d;
      if (b <= a || !std::isfinite(d)) continue;
      std::vector<int> path;
      for (int v = samples[b]; v != -1; v = prev[v]) path.push_back(v);
      std::reverse(path.begin(), path.end());
      table.paths[table.pair_index(a, b)] = std::move(path);
    }
  }
  // Dijkstra from either end gives the same length; make it bit-symmetric.
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b)
      table.distance(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) =
          table.distance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  return table;
}

struct ProcrustesResult {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  std::vector<Vec3> aligned;
  double residual = 0.0;  // sum of squared distances after alignment
};

/// Least-squares rotation + translation (no scale) mapping source onto target.
inline ProcrustesResult procrustes_align(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size())
    throw AlignmentError("procrustes: point counts differ");
  if (source.size() < 3) throw AlignmentError("procrustes: need at least 3 points");

  const double n = static_cast<double>(source.size());
  Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    cs += source[i];
    ct += target[i];
  }
  cs /= n;
  ct /= n;

  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i)
    cov += (target[i] - ct) * (source[i] - cs).transpose();

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0))
    throw AlignmentError("procrustes: rank-deficient cross-covariance");

  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;

  ProcrustesResult res;
  res.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  res.translation = ct - res.rotation * cs;
  res.aligned.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    res.aligned.push_back(res.rotation * source[i] + res.translation);
    res.residual += (res.aligned.back() - target[i]).squaredNorm();
  }
  return res;
}

}  // namespace evtrack
