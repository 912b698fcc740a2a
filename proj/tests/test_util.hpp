#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "unif/skeleton.hpp"
#include "unif/surface.hpp"
#include "unif/types.hpp"

namespace testutil {

using unif::Mat3;
using unif::Vec3;

inline Mat3 random_rotation(unif::Rng& rng) {
  const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
  const double angle = rng.uniform(0.0, M_PI);
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

/// Two-bone arm along +y: shoulder (root) -> elbow -> wrist.
inline unif::Skeleton two_bone_arm(double len1 = 0.35, double len2 = 0.3) {
  std::vector<unif::Joint> joints = {
      {"shoulder", -1, Vec3(0, 0, 0)},
      {"elbow", 0, Vec3(0, len1, 0)},
      {"wrist", 1, Vec3(0, len1 + len2, 0)},
  };
  std::vector<unif::Bone> bones = {{0, 1}, {1, 2}};
  return unif::Skeleton(std::move(joints), std::move(bones));
}

/// Three bones in a chain along +y.
inline unif::Skeleton three_bone_chain() {
  std::vector<unif::Joint> joints = {
      {"j0", -1, Vec3(0, 0, 0)},
      {"j1", 0, Vec3(0, 0.3, 0)},
      {"j2", 1, Vec3(0, 0.55, 0)},
      {"j3", 2, Vec3(0, 0.75, 0)},
  };
  std::vector<unif::Bone> bones = {{0, 1}, {1, 2}, {2, 3}};
  return unif::Skeleton(std::move(joints), std::move(bones));
}

/// One bone along +y (single part).
inline unif::Skeleton one_bone(double len = 0.3) {
  std::vector<unif::Joint> joints = {
      {"base", -1, Vec3(0, 0, 0)},
      {"tip", 0, Vec3(0, len, 0)},
  };
  std::vector<unif::Bone> bones = {{0, 1}};
  return unif::Skeleton(std::move(joints), std::move(bones));
}

/// Central finite difference of a scalar function of one scalar.
inline double fd_central(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  uint64_t h = 1469598103934665603ull;
  char c;
  while (in.get(c)) {
    h ^= uint8_t(c);
    h *= 1099511628211ull;
  }
  return h;
}

inline int euler_characteristic(const unif::Mesh& mesh) {
  std::set<std::pair<int, int>> edges;
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      const int a = t[e], b = t[(e + 1) % 3];
      edges.insert({std::min(a, b), std::max(a, b)});
    }
  }
  return mesh.vertex_count() - int(edges.size()) + mesh.triangle_count();
}

inline int connected_components(const unif::Mesh& mesh) {
  std::vector<int> parent(mesh.vertex_count());
  for (int i = 0; i < mesh.vertex_count(); ++i) parent[i] = i;
  std::function<int(int)> find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (const auto& t : mesh.triangles) {
    parent[find(t[0])] = find(t[1]);
    parent[find(t[1])] = find(t[2]);
  }
  std::set<int> roots;
  for (int i = 0; i < mesh.vertex_count(); ++i) roots.insert(find(i));
  return int(roots.size());
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
