#pragma once

// Evaluation metrics between scans and extracted meshes: point-to-surface
// distance, recall, Chamfer distance and F-score. Distances are reported in
// millimeters; inputs are in meters.

#include <vector>

#include "unif/surface.hpp"
#include "unif/types.hpp"

namespace unif {

struct MetricReport {
  double p2s_mm = 0.0;
  double chamfer_mm = 0.0;
  double recall_pct = 0.0;
  double precision_pct = 0.0;
  double f1_pct = 0.0;
};

/// Exact distance from a point to a triangle.
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c);

/// Exact nearest-triangle queries through a median-split AABB tree. Results
/// equal the brute-force minimum over all triangles.
class TriangleBvh {
 public:
  explicit TriangleBvh(const Mesh& mesh);
  double distance(const Vec3& p) const;

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf triangle range
  };
  int build(int begin, int end);

  const Mesh* mesh_;
  std::vector<int> order_;
  std::vector<Vec3> centroid_;
  std::vector<Node> nodes_;
};

/// Exact nearest-neighbor queries over a point set (median-split kd-tree).
class PointKdTree {
 public:
  explicit PointKdTree(const MatX& points);
  double nearest_distance(const Vec3& p) const;

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1, right = -1;
  };
  int build(int begin, int end, int depth);
  void query(int node, const Vec3& p, double& best) const;

  MatX points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// Area-weighted uniform surface sampling, deterministic per seed.
MatX sample_mesh(const Mesh& mesh, int count, uint64_t seed);

/// Mean scan-to-surface distance in millimeters (exact point-to-triangle).
double p2s(const MatX& scan_points, const Mesh& mesh);

/// Percentage of scan points within threshold_mm of the surface.
double recall(const MatX& scan_points, const Mesh& mesh, double threshold_mm = 1.0);

/// Chamfer distance (mean of scan-to-surface and surface-to-scan, in mm),
/// precision/recall at the threshold and their harmonic mean. The surface
/// side uses `sample_count` area-uniform samples drawn with `seed`.
MetricReport chamfer_and_f1(const MatX& scan_points, const Mesh& mesh,
                            double threshold_mm = 1.0, int sample_count = 100000,
                            uint64_t seed = 0);

}  // namespace unif
