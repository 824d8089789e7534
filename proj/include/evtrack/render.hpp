#pragma once

// Pinhole projection and a soft (differentiable) grayscale rasterizer.
//
// Pixel (x, y) is sampled at the continuous image coordinate (x, y). For a
// pixel p and face f:
//
//   coverage   D_f = prod_e sigmoid(s_e(p) / sigma)   s_e: signed distance to edge e,
//                                                     positive inside
//   depth      z_f = perspective-correct depth at p (barycentrics clamped to
//                    the triangle and renormalized)
//   weight     w_f = D_f * exp(-z_f / gamma)
//   shade      c_f = albedo_f * max(0, n_f . l) for front faces, 0 for back faces
//
//   color = sum_f w_f c_f / sum_f w_f
//   alpha = softmin(sum_f D_f, 1) = 1 - tau * softplus((1 - sum_f D_f) / tau)
//   I(p)  = clamp(alpha * color + (1 - alpha) * background, 0, 1)
//
// The depth softmax resolves occlusion smoothly, and the saturated coverage
// sum lets the background act as the farthest layer without darkening seams
// between adjacent faces. The gradient is computed with per-face Jet<9> over
// the projected vertex data (u, v, 1/z) and accumulated per pixel.

#include "evtrack/errors.hpp"
#include "evtrack/geometry.hpp"
#include "evtrack/jet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace evtrack {

struct Camera {
  double fx = 100.0, fy = 100.0;
  double cx = 31.5, cy = 31.5;
  int width = 64, height = 64;
  RigidTransform world_to_camera;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidInputError("camera: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw InvalidInputError("camera: resolution must be positive");
  }
  Mat3 rotation() const { return rotation_matrix(world_to_camera.r); }
  Vec3 to_camera(const Vec3& world) const { return rotation() * world + world_to_camera.t; }
};

/// Projects a camera-frame point to pixel coordinates.
inline Vec2 project(const Camera& cam, const Vec3& p) {
  if (!(p.z() > 0.0)) throw BehindCameraError("project: point at or behind the camera plane");
  return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

inline Vec2 project_world(const Camera& cam, const Vec3& world) { return project(cam, cam.to_camera(world)); }

struct GrayImage {
  int width = 0, height = 0;
  std::vector<double> data;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }
};

struct RasterSettings {
  double sigma = 0.7;   // edge softness (pixels)
  double gamma = 1e-2;  // depth softmax temperature (scene units)
  double albedo = 0.9;
  std::vector<double> face_albedo;  // optional per-face albedo; overrides `albedo` when non-empty
  Vec3 light = Vec3(0.0, 0.0, -1.0);  // camera frame, pointing toward the light
  double background = 0.0;
  double coverage_softness = 0.02;  // tau of the coverage saturation
  double cull_sigmas = 14.0;        // faces farther than this many sigmas are skipped

  void validate() const {
    if (!(sigma > 0.0)) throw InvalidInputError("raster: sigma must be positive");
    if (!(gamma > 0.0)) throw InvalidInputError("raster: gamma must be positive");
    if (!(coverage_softness > 0.0)) throw InvalidInputError("raster: coverage softness must be positive");
    if (background < 0.0 || background > 1.0) throw InvalidInputError("raster: background outside [0,1]");
    for (double a : face_albedo)
      if (!(a >= 0.0)) throw InvalidInputError("raster: negative face albedo");
  }
  double albedo_of(std::size_t face) const { return face_albedo.empty() ? albedo : face_albedo[face]; }
};

namespace detail {

inline double log_sigmoid(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

template <int N>
inline Jet<N> log_sigmoid(const Jet<N>& x) {
  return chain(x, log_sigmoid(x.a), sigmoid(-x.a));
}

/// Screen-space setup of one face: three edge functions as linear forms in
/// the pixel position, scaled for the coverage sigmoid and for barycentrics.
template <typename T>
struct FaceSetup {
  bool valid = false;
  std::array<T, 3> sa, sb, sc;  // sigmoid argument: sa x + sb y + sc
  std::array<T, 3> ba, bb, bc;  // barycentric of the opposite vertex
  std::array<T, 3> w;           // inverse depth at the vertices (indexed by vertex)
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
};

/// in: (u0, v0, w0, u1, v1, w1, u2, v2, w2)
template <typename T>
FaceSetup<T> setup_face(const std::array<T, 9>& in, double sigma) {
  FaceSetup<T> fs;
  const T& u0 = in[0];
  const T& v0 = in[1];
  const T& u1 = in[3];
  const T& v1 = in[4];
  const T& u2 = in[6];
  const T& v2 = in[7];
  const T area2 = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0);
  if (std::abs(value_of(area2)) < 1e-12) return fs;
  const double orient = value_of(area2) > 0.0 ? 1.0 : -1.0;
  using std::sqrt;
  for (int k = 0; k < 3; ++k) {
    const T& ua = in[3 * k];
    const T& va = in[3 * k + 1];
    const T& ub = in[3 * ((k + 1) % 3)];
    const T& vb = in[3 * ((k + 1) % 3) + 1];
    const T dx = ub - ua;
    const T dy = vb - va;
    // cross(d, p - a) = -dy * x + dx * y + (dy * ua - dx * va)
    const T ca = -dy;
    const T cb = dx;
    const T cc = dy * ua - dx * va;
    const T len = sqrt(dx * dx + dy * dy);
    const T s = orient / (len * sigma);
    fs.sa[k] = ca * s;
    fs.sb[k] = cb * s;
    fs.sc[k] = cc * s;
    const int opposite = (k + 2) % 3;
    fs.ba[opposite] = ca / area2;
    fs.bb[opposite] = cb / area2;
    fs.bc[opposite] = cc / area2;
    fs.w[k] = in[3 * k + 2];
  }
  fs.xmin = std::min({value_of(u0), value_of(u1), value_of(u2)});
  fs.xmax = std::max({value_of(u0), value_of(u1), value_of(u2)});
  fs.ymin = std::min({value_of(v0), value_of(v1), value_of(v2)});
  fs.ymax = std::max({value_of(v0), value_of(v1), value_of(v2)});
  fs.valid = true;
  return fs;
}

/// Log-coverage and depth logit (-z / gamma) of a face at pixel (x, y).
template <typename T>
void eval_face(const FaceSetup<T>& fs, double x, double y, double gamma, T& log_cov, T& depth_logit) {
  log_cov = log_sigmoid(fs.sa[0] * x + fs.sb[0] * y + fs.sc[0]);
  log_cov += log_sigmoid(fs.sa[1] * x + fs.sb[1] * y + fs.sc[1]);
  log_cov += log_sigmoid(fs.sa[2] * x + fs.sb[2] * y + fs.sc[2]);
  T lam_sum(0.0);
  T w_sum(0.0);
  for (int k = 0; k < 3; ++k) {
    const T lam = fs.ba[k] * x + fs.bb[k] * y + fs.bc[k];
    if (value_of(lam) <= 0.0) continue;
    lam_sum += lam;
    w_sum += lam * fs.w[k];
  }
  // depth = lam_sum / w_sum
  depth_logit = -(lam_sum / w_sum) / gamma;
}

/// Lambertian shade of a face from camera-frame vertices (9 values).
template <typename T>
T face_shade(const std::array<T, 9>& p, const RasterSettings& rs, double albedo) {
  const Vec3T<T> a(p[0], p[1], p[2]);
  const Vec3T<T> b(p[3], p[4], p[5]);
  const Vec3T<T> c(p[6], p[7], p[8]);
  Vec3T<T> n = (b - a).cross(c - a);
  using std::sqrt;
  const T len = sqrt(n.squaredNorm());
  if (value_of(len) <= 0.0) return T(0.0);
  n /= len;
  const Vec3T<T> centroid = (a + b + c) / 3.0;
  if (value_of(n.dot(centroid)) >= 0.0) return T(0.0);  // back-facing
  const T lambert = n(0) * rs.light(0) + n(1) * rs.light(1) + n(2) * rs.light(2);
  if (value_of(lambert) <= 0.0) return T(0.0);
  return albedo * lambert;
}

struct PixelBins {
  std::vector<int> offsets;  // size pixels + 1
  std::vector<int> faces;
};

}  // namespace detail

/// Soft rasterizer bound to one mesh state. Construct, then render() and
/// optionally backward() with per-pixel image gradients.
class SoftRasterizer {
 public:
  SoftRasterizer(std::span<const Vec3> world_vertices, std::span<const Face> faces, const Camera& cam,
                 const RasterSettings& rs)
      : faces_(faces.begin(), faces.end()), cam_(cam), rs_(rs) {
    cam_.validate();
    rs_.validate();
    if (!rs_.face_albedo.empty() && rs_.face_albedo.size() != faces_.size())
      throw InvalidInputError("render: face albedo count does not match face count");
    cam_rot_ = cam_.rotation();
    cam_vertices_.reserve(world_vertices.size());
    for (const Vec3& v : world_vertices) cam_vertices_.push_back(cam_rot_ * v + cam_.world_to_camera.t);
    for (const Face& f : faces_)
      for (int idx : f)
        if (idx < 0 || idx >= static_cast<int>(cam_vertices_.size()))
          throw InvalidInputError("render: face index out of range");
    setup_faces();
    bin_faces();
  }

  const std::vector<Vec3>& camera_vertices() const { return cam_vertices_; }

  GrayImage render() const {
    GrayImage img(cam_.width, cam_.height, rs_.background);
    std::vector<double> log_w, cov, shade;
    for (int y = 0; y < cam_.height; ++y)
      for (int x = 0; x < cam_.width; ++x) {
        const int pix = y * cam_.width + x;
        const int begin = bins_.offsets[pix], end = bins_.offsets[pix + 1];
        if (begin == end) continue;
        log_w.clear();
        cov.clear();
        shade.clear();
        for (int k = begin; k < end; ++k) {
          const int f = bins_.faces[k];
          double lc, dl;
          detail::eval_face(setup_d_[f], x, y, rs_.gamma, lc, dl);
          log_w.push_back(lc + dl);
          cov.push_back(std::exp(lc));
          shade.push_back(shade_d_[f]);
        }
        img.at(x, y) = aggregate(log_w, cov, shade, nullptr);
      }
    return img;
  }

  /// Gradient of sum_p grad_image(p) * I(p) with respect to world vertices.
  std::vector<Vec3> backward(const GrayImage& grad_image) const {
    if (grad_image.width != cam_.width || grad_image.height != cam_.height)
      throw ShapeError("render backward: gradient image size mismatch");
    using J = Jet<9>;
    std::vector<std::array<double, 9>> screen_grad(faces_.size(), std::array<double, 9>{});
    std::vector<double> shade_grad(faces_.size(), 0.0);

    std::vector<J> log_cov_j, depth_j;
    std::vector<double> log_w, cov, shade, adj_cov, adj_logw, adj_shade;
    for (int y = 0; y < cam_.height; ++y)
      for (int x = 0; x < cam_.width; ++x) {
        const int pix = y * cam_.width + x;
        const double g = grad_image.data[pix];
        const int begin = bins_.offsets[pix], end = bins_.offsets[pix + 1];
        if (g == 0.0 || begin == end) continue;
        const int n = end - begin;
        log_cov_j.resize(n);
        depth_j.resize(n);
        log_w.resize(n);
        cov.resize(n);
        shade.resize(n);
        for (int k = 0; k < n; ++k) {
          const int f = bins_.faces[begin + k];
          detail::eval_face(setup_j_[f], x, y, rs_.gamma, log_cov_j[k], depth_j[k]);
          log_w[k] = log_cov_j[k].a + depth_j[k].a;
          cov[k] = std::exp(log_cov_j[k].a);
          shade[k] = shade_d_[f];
        }
        Adjoint adj{&adj_cov, &adj_logw, &adj_shade};
        aggregate(log_w, cov, shade, &adj);
        for (int k = 0; k < n; ++k) {
          const int f = bins_.faces[begin + k];
          const double g_logcov = g * (adj_logw[k] + adj_cov[k] * cov[k]);
          const double g_depth = g * adj_logw[k];
          auto& sg = screen_grad[f];
          for (int i = 0; i < 9; ++i) sg[i] += g_logcov * log_cov_j[k].v[i] + g_depth * depth_j[k].v[i];
          shade_grad[f] += g * adj_shade[k];
        }
      }

    std::vector<Vec3> grad_cam(cam_vertices_.size(), Vec3::Zero());
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!setup_d_[f].valid) continue;
      const auto& sg = screen_grad[f];
      for (int c = 0; c < 3; ++c) {
        const Vec3& p = cam_vertices_[faces_[f][c]];
        const double iz = 1.0 / p.z();
        const double gu = sg[3 * c], gv = sg[3 * c + 1], gw = sg[3 * c + 2];
        Vec3& out = grad_cam[faces_[f][c]];
        out.x() += gu * cam_.fx * iz;
        out.y() += gv * cam_.fy * iz;
        out.z() += -gu * cam_.fx * p.x() * iz * iz - gv * cam_.fy * p.y() * iz * iz - gw * iz * iz;
      }
      if (shade_grad[f] != 0.0) {
        std::array<J, 9> in;
        for (int c = 0; c < 3; ++c)
          for (int a = 0; a < 3; ++a) in[3 * c + a] = J(cam_vertices_[faces_[f][c]](a), 3 * c + a);
        const J s = detail::face_shade(in, rs_, rs_.albedo_of(f));
        for (int c = 0; c < 3; ++c)
          for (int a = 0; a < 3; ++a) grad_cam[faces_[f][c]](a) += shade_grad[f] * s.v[3 * c + a];
      }
    }
    std::vector<Vec3> grad_world(grad_cam.size());
    for (std::size_t i = 0; i < grad_cam.size(); ++i) grad_world[i] = cam_rot_.transpose() * grad_cam[i];
    return grad_world;
  }

 private:
  struct Adjoint {
    std::vector<double>* cov;   // dI / dD_f
    std::vector<double>* logw;  // dI / dlog w_f
    std::vector<double>* shade; // dI / dc_f
  };

  double aggregate(const std::vector<double>& log_w, const std::vector<double>& cov,
                   const std::vector<double>& shade, Adjoint* adj) const {
    const std::size_t n = log_w.size();
    const double m = *std::max_element(log_w.begin(), log_w.end());
    double sum_e = 0.0, sum_ec = 0.0, sum_cov = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double e = std::exp(log_w[k] - m);
      sum_e += e;
      sum_ec += e * shade[k];
      sum_cov += cov[k];
    }
    const double color = sum_ec / sum_e;
    const double tau = rs_.coverage_softness;
    const double alpha = 1.0 - tau * detail::softplus((1.0 - sum_cov) / tau);
    const double raw = alpha * color + (1.0 - alpha) * rs_.background;
    const double out = std::clamp(raw, 0.0, 1.0);
    if (adj) {
      adj->cov->assign(n, 0.0);
      adj->logw->assign(n, 0.0);
      adj->shade->assign(n, 0.0);
      if (raw != out) return out;
      const double d_alpha = color - rs_.background;
      const double d_sum_cov = d_alpha * detail::sigmoid((1.0 - sum_cov) / tau);
      for (std::size_t k = 0; k < n; ++k) {
        const double p = std::exp(log_w[k] - m) / sum_e;
        (*adj->shade)[k] = alpha * p;
        (*adj->logw)[k] = alpha * p * (shade[k] - color);
        (*adj->cov)[k] = d_sum_cov;
      }
    }
    return out;
  }

  void setup_faces() {
    const std::size_t nf = faces_.size();
    setup_d_.resize(nf);
    setup_j_.resize(nf);
    shade_d_.assign(nf, 0.0);
    using J = Jet<9>;
    for (std::size_t f = 0; f < nf; ++f) {
      std::array<double, 9> scr{};
      std::array<double, 9> cam3{};
      bool ok = true;
      for (int c = 0; c < 3; ++c) {
        const Vec3& p = cam_vertices_[faces_[f][c]];
        if (!(p.z() > 1e-9)) {
          ok = false;
          break;
        }
        scr[3 * c] = cam_.fx * p.x() / p.z() + cam_.cx;
        scr[3 * c + 1] = cam_.fy * p.y() / p.z() + cam_.cy;
        scr[3 * c + 2] = 1.0 / p.z();
        for (int a = 0; a < 3; ++a) cam3[3 * c + a] = p(a);
      }
      if (!ok) continue;
      setup_d_[f] = detail::setup_face<double>(scr, rs_.sigma);
      std::array<J, 9> scr_j;
      for (int i = 0; i < 9; ++i) scr_j[i] = J(scr[i], i);
      setup_j_[f] = detail::setup_face<J>(scr_j, rs_.sigma);
      shade_d_[f] = detail::face_shade<double>(cam3, rs_, rs_.albedo_of(f));
    }
  }

  void bin_faces() {
    const int w = cam_.width, h = cam_.height;
    const double margin = rs_.cull_sigmas * rs_.sigma;
    std::vector<std::array<int, 4>> boxes(faces_.size(), {0, -1, 0, -1});
    std::vector<int> counts(static_cast<std::size_t>(w) * h + 1, 0);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& fs = setup_d_[f];
      if (!fs.valid) continue;
      const int x0 = std::max(0, static_cast<int>(std::ceil(fs.xmin - margin)));
      const int x1 = std::min(w - 1, static_cast<int>(std::floor(fs.xmax + margin)));
      const int y0 = std::max(0, static_cast<int>(std::ceil(fs.ymin - margin)));
      const int y1 = std::min(h - 1, static_cast<int>(std::floor(fs.ymax + margin)));
      boxes[f] = {x0, x1, y0, y1};
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) ++counts[y * w + x];
    }
    bins_.offsets.assign(counts.size(), 0);
    for (std::size_t i = 0; i + 1 < counts.size(); ++i) bins_.offsets[i + 1] = bins_.offsets[i] + counts[i];
    bins_.faces.assign(bins_.offsets.back(), 0);
    std::vector<int> cursor(bins_.offsets.begin(), bins_.offsets.end() - 1);
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& b = boxes[f];
      for (int y = b[2]; y <= b[3]; ++y)
        for (int x = b[0]; x <= b[1]; ++x) bins_.faces[cursor[y * w + x]++] = static_cast<int>(f);
    }
  }

  std::vector<Face> faces_;
  Camera cam_;
  RasterSettings rs_;
  Mat3 cam_rot_;
  std::vector<Vec3> cam_vertices_;
  std::vector<detail::FaceSetup<double>> setup_d_;
  std::vector<detail::FaceSetup<Jet<9>>> setup_j_;
  std::vector<double> shade_d_;
  detail::PixelBins bins_;
};

inline GrayImage render_gray(std::span<const Vec3> world_vertices, std::span<const Face> faces,
                             const Camera& cam, const RasterSettings& rs) {
  return SoftRasterizer(world_vertices, faces, cam, rs).render();
}

inline GrayImage render_gray(const TriMesh& mesh, const Camera& cam, const RasterSettings& rs) {
  return render_gray(mesh.vertices(), mesh.faces(), cam, rs);
}

/// Hard visibility test: a vertex is visible when it lies in front of the
/// camera and no face that does not contain it covers its projection at a
/// smaller depth (minus `tol`).
inline std::vector<bool> visible_vertices(std::span<const Vec3> world_vertices, std::span<const Face> faces,
                                          const Camera& cam, double tol = 1e-3) {
  const Mat3 rot = cam.rotation();
  const std::size_t n = world_vertices.size();
  std::vector<Vec3> pc(n);
  std::vector<Vec2> uv(n);
  std::vector<bool> in_front(n);
  for (std::size_t i = 0; i < n; ++i) {
    pc[i] = rot * world_vertices[i] + cam.world_to_camera.t;
    in_front[i] = pc[i].z() > 1e-9;
    if (in_front[i]) uv[i] = project(cam, pc[i]);
  }
  std::vector<bool> visible(in_front);
  for (const Face& f : faces) {
    if (!in_front[f[0]] || !in_front[f[1]] || !in_front[f[2]]) continue;
    const Vec2 &a = uv[f[0]], &b = uv[f[1]], &c = uv[f[2]];
    const double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
    if (std::abs(area) < 1e-12) continue;
    const double xmin = std::min({a.x(), b.x(), c.x()}), xmax = std::max({a.x(), b.x(), c.x()});
    const double ymin = std::min({a.y(), b.y(), c.y()}), ymax = std::max({a.y(), b.y(), c.y()});
    for (std::size_t i = 0; i < n; ++i) {
      if (!visible[i]) continue;
      const int ii = static_cast<int>(i);
      if (f[0] == ii || f[1] == ii || f[2] == ii) continue;
      const Vec2& p = uv[i];
      if (p.x() < xmin || p.x() > xmax || p.y() < ymin || p.y() > ymax) continue;
      const double l0 = ((b - p).x() * (c - p).y() - (b - p).y() * (c - p).x()) / area;
      const double l1 = ((c - p).x() * (a - p).y() - (c - p).y() * (a - p).x()) / area;
      const double l2 = 1.0 - l0 - l1;
      if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
      const double inv_z = l0 / pc[f[0]].z() + l1 / pc[f[1]].z() + l2 / pc[f[2]].z();
      if (1.0 / inv_z < pc[i].z() - tol) visible[i] = false;
    }
  }
  return visible;
}

/// Binary PGM (P5, 8-bit, row-major) dump of an image in [0, 1].
inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace evtrack
