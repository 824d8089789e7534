#pragma once

// Wavefront OBJ subset: `v x y z` and triangular `f i j k` (1-based). Face
// tokens of the form `i/t/n` are accepted; only the vertex index is used.

#include "evtrack/errors.hpp"
#include "evtrack/geometry.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace evtrack {

inline void write_obj(const std::filesystem::path& path, std::span<const Vec3> vertices,
                      std::span<const Face> faces) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  char buf[128];
  for (const Vec3& v : vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (const Face& f : faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_obj(const std::filesystem::path& path, const TriMesh& mesh) {
  write_obj(path, mesh.vertices(), mesh.faces());
}

inline TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x() >> v.y() >> v.z()))
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad vertex");
      vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) idx.push_back(std::stoi(tok.substr(0, tok.find('/'))) - 1);
      if (idx.size() != 3)
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": only triangles supported");
      faces.push_back({idx[0], idx[1], idx[2]});
    }
  }
  return TriMesh(std::move(vertices), std::move(faces));
}

}  // namespace evtrack
