#include "unif/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace unif {

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c) {
  // Ericson, Real-Time Collision Detection: closest point via voronoi regions.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return (p - a).norm();
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return (p - b).norm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return (p - (a + v * ab)).norm();
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return (p - c).norm();
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return (p - (a + w * ac)).norm();
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + w * (c - b))).norm();
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return (p - (a + v * ab + w * ac)).norm();
}

// ---------------------------------------------------------------------------
// TriangleBvh
// ---------------------------------------------------------------------------

TriangleBvh::TriangleBvh(const Mesh& mesh) : mesh_(&mesh) {
  if (mesh.triangle_count() == 0) throw InvalidInput("bvh: mesh has no triangles");
  order_.resize(mesh.triangle_count());
  std::iota(order_.begin(), order_.end(), 0);
  centroid_.resize(mesh.triangle_count());
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const auto& tr = mesh.triangles[t];
    centroid_[t] = (mesh.vertices.col(tr[0]) + mesh.vertices.col(tr[1]) +
                    mesh.vertices.col(tr[2])) /
                   3.0;
  }
  nodes_.reserve(2 * mesh.triangle_count());
  build(0, mesh.triangle_count());
}

int TriangleBvh::build(int begin, int end) {
  const int id = int(nodes_.size());
  nodes_.push_back({});
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int i = begin; i < end; ++i) {
    const auto& tr = mesh_->triangles[order_[i]];
    for (int e = 0; e < 3; ++e) {
      lo = lo.cwiseMin(mesh_->vertices.col(tr[e]));
      hi = hi.cwiseMax(mesh_->vertices.col(tr[e]));
    }
  }
  nodes_[id].lo = lo;
  nodes_[id].hi = hi;
  if (end - begin <= 4) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  int axis = 0;
  const Vec3 ext = hi - lo;
  if (ext.y() > ext.x()) axis = 1;
  if (ext.z() > ext[axis]) axis = 2;
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int ta, int tb) { return centroid_[ta][axis] < centroid_[tb][axis]; });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

namespace {
double aabb_distance(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  double d2 = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = std::max({lo[k] - p[k], 0.0, p[k] - hi[k]});
    d2 += d * d;
  }
  return std::sqrt(d2);
}
}  // namespace

double TriangleBvh::distance(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  int stack[64];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (aabb_distance(p, node.lo, node.hi) >= best) continue;
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const auto& tr = mesh_->triangles[order_[i]];
        best = std::min(best, point_triangle_distance(p, mesh_->vertices.col(tr[0]),
                                                      mesh_->vertices.col(tr[1]),
                                                      mesh_->vertices.col(tr[2])));
      }
      continue;
    }
    // Visit the nearer child first for tighter pruning.
    const double dl = aabb_distance(p, nodes_[node.left].lo, nodes_[node.left].hi);
    const double dr = aabb_distance(p, nodes_[node.right].lo, nodes_[node.right].hi);
    if (dl <= dr) {
      stack[top++] = node.right;
      stack[top++] = node.left;
    } else {
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// PointKdTree
// ---------------------------------------------------------------------------

PointKdTree::PointKdTree(const MatX& points) : points_(points) {
  if (points_.cols() == 0) throw InvalidInput("kdtree: empty point set");
  order_.resize(points_.cols());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(points_.cols());
  build(0, int(points_.cols()), 0);
}

int PointKdTree::build(int begin, int end, int depth) {
  if (begin >= end) return -1;
  const int axis = depth % 3;
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return points_(axis, a) < points_(axis, b); });
  const int id = int(nodes_.size());
  nodes_.push_back({order_[mid], axis, -1, -1});
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid + 1, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void PointKdTree::query(int node, const Vec3& p, double& best) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  best = std::min(best, (p - points_.col(n.point)).norm());
  const double delta = p[n.axis] - points_(n.axis, n.point);
  const int near = delta <= 0.0 ? n.left : n.right;
  const int far = delta <= 0.0 ? n.right : n.left;
  query(near, p, best);
  if (std::abs(delta) < best) query(far, p, best);
}

double PointKdTree::nearest_distance(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  query(0, p, best);
  return best;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

MatX sample_mesh(const Mesh& mesh, int count, uint64_t seed) {
  if (mesh.triangle_count() == 0) throw InvalidInput("sample_mesh: empty mesh");
  std::vector<double> cumulative(mesh.triangle_count());
  double total = 0.0;
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    const auto& tr = mesh.triangles[t];
    const Vec3 ab = mesh.vertices.col(tr[1]) - mesh.vertices.col(tr[0]);
    const Vec3 ac = mesh.vertices.col(tr[2]) - mesh.vertices.col(tr[0]);
    total += 0.5 * ab.cross(ac).norm();
    cumulative[t] = total;
  }
  if (total <= 0.0) throw InvalidInput("sample_mesh: mesh has zero area");
  Rng rng(seed);
  MatX out(3, count);
  for (int i = 0; i < count; ++i) {
    const double pick = rng.uniform(0.0, total);
    const int t = int(std::lower_bound(cumulative.begin(), cumulative.end(), pick) -
                      cumulative.begin());
    const auto& tr = mesh.triangles[std::min(t, mesh.triangle_count() - 1)];
    const double su = std::sqrt(rng.uniform());
    const double v = rng.uniform();
    const double wa = 1.0 - su, wb = su * (1.0 - v), wc = su * v;
    out.col(i) = wa * mesh.vertices.col(tr[0]) + wb * mesh.vertices.col(tr[1]) +
                 wc * mesh.vertices.col(tr[2]);
  }
  return out;
}

double p2s(const MatX& scan_points, const Mesh& mesh) {
  if (scan_points.cols() == 0) throw InvalidInput("p2s: no scan points");
  const TriangleBvh bvh(mesh);
  double sum = 0.0;
  for (int i = 0; i < scan_points.cols(); ++i) sum += bvh.distance(scan_points.col(i));
  return 1000.0 * sum / double(scan_points.cols());
}

double recall(const MatX& scan_points, const Mesh& mesh, double threshold_mm) {
  if (scan_points.cols() == 0) throw InvalidInput("recall: no scan points");
  const TriangleBvh bvh(mesh);
  long hits = 0;
  for (int i = 0; i < scan_points.cols(); ++i) {
    if (1000.0 * bvh.distance(scan_points.col(i)) < threshold_mm) ++hits;
  }
  return 100.0 * double(hits) / double(scan_points.cols());
}

MetricReport chamfer_and_f1(const MatX& scan_points, const Mesh& mesh,
                            double threshold_mm, int sample_count, uint64_t seed) {
  if (scan_points.cols() == 0) throw InvalidInput("chamfer: no scan points");
  const TriangleBvh bvh(mesh);
  MetricReport r;
  double sum = 0.0;
  long hits = 0;
  for (int i = 0; i < scan_points.cols(); ++i) {
    const double d = bvh.distance(scan_points.col(i));
    sum += d;
    if (1000.0 * d < threshold_mm) ++hits;
  }
  const double scan_to_surface = sum / double(scan_points.cols());
  r.p2s_mm = 1000.0 * scan_to_surface;
  r.recall_pct = 100.0 * double(hits) / double(scan_points.cols());

  const MatX samples = sample_mesh(mesh, sample_count, seed);
  const PointKdTree tree(scan_points);
  sum = 0.0;
  hits = 0;
  for (int i = 0; i < samples.cols(); ++i) {
    const double d = tree.nearest_distance(samples.col(i));
    sum += d;
    if (1000.0 * d < threshold_mm) ++hits;
  }
  const double surface_to_scan = sum / double(samples.cols());
  r.precision_pct = 100.0 * double(hits) / double(samples.cols());
  r.chamfer_mm = 0.5 * (r.p2s_mm + 1000.0 * surface_to_scan);
  r.f1_pct = (r.precision_pct + r.recall_pct) > 0.0
                 ? 2.0 * r.precision_pct * r.recall_pct /
                       (r.precision_pct + r.recall_pct)
                 : 0.0;
  return r;
}

}  // namespace unif
