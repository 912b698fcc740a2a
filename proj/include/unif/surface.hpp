#pragma once

// Isosurface extraction from the union field and mesh import/export.

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "unif/model.hpp"
#include "unif/types.hpp"

namespace unif {

struct Mesh {
  MatX vertices;  // 3 x V
  std::vector<std::array<int, 3>> triangles;
  std::vector<int> part_id;  // optional per-vertex label (argmin part)

  int vertex_count() const { return int(vertices.cols()); }
  int triangle_count() const { return int(triangles.size()); }
};

struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
};

/// Bounding box of the posed joints, padded by `margin` on every side.
Box pose_bounds(const Skeleton& skel, const Pose& pose, double margin);

struct GridField {
  Vec3 origin = Vec3::Zero();
  Vec3 spacing = Vec3::Zero();
  int nx = 0, ny = 0, nz = 0;     // node counts per axis (resolution + 1)
  std::vector<double> values;     // x-fastest
  std::vector<int> part;          // argmin part per node (may be empty)

  size_t index(int i, int j, int k) const {
    return size_t(i) + size_t(nx) * (size_t(j) + size_t(ny) * size_t(k));
  }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
  Vec3 position(int i, int j, int k) const {
    return origin + Vec3(i * spacing.x(), j * spacing.y(), k * spacing.z());
  }
  double cell_diagonal() const { return spacing.norm(); }
};

/// Samples the union field (hard minimum) on a regular grid with
/// `resolution` cells per axis. Deterministic.
GridField eval_grid(const PoseEval& pe, const Box& bbox, int resolution);

/// Same for a single part's field.
GridField eval_part_grid(const PoseEval& pe, int part, const Box& bbox, int resolution);

/// Samples any scalar field on a grid (analytic harnesses).
GridField eval_fn_grid(const std::function<double(const Vec3&)>& f, const Box& bbox,
                       int resolution);

/// Standard 256-case marching cubes with linear edge interpolation and
/// vertex welding. Fields without a zero crossing give an empty mesh.
Mesh marching_cubes(const GridField& grid, double iso = 0.0);

/// Union surface at a pose; labels vertices with the argmin part when
/// `with_labels` is set.
Mesh extract_union(const UnifModel& model, const Pose& pose, const Box& bbox,
                   int resolution, bool with_labels = false);

/// Zero level set of part n alone (label filled with n).
Mesh extract_part(const UnifModel& model, const Pose& pose, int n, const Box& bbox,
                  int resolution);

enum class MeshFormat { kObj, kPly };

/// ASCII OBJ (v/f lines, 9 significant digits) or binary little-endian PLY
/// (double coordinates, optional int part_id per vertex).
void export_mesh(const Mesh& mesh, const std::string& path, MeshFormat format);

/// Reads meshes written by export_mesh (and plain v/f OBJ files).
Mesh load_mesh(const std::string& path);

/// Flat float32 dump with a one-line text header.
void save_grid(const GridField& grid, const std::string& path);

}  // namespace unif
