#include <doctest.h>

#include <cmath>
#include <map>

#include "test_util.hpp"
#include "unif/metrics.hpp"

using namespace unif;

namespace {

Mesh unit_square() {
  Mesh m;
  m.vertices.resize(3, 4);
  m.vertices.col(0) = Vec3(0, 0, 0);
  m.vertices.col(1) = Vec3(1, 0, 0);
  m.vertices.col(2) = Vec3(1, 1, 0);
  m.vertices.col(3) = Vec3(0, 1, 0);
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

Mesh scaled_square(double side) {
  Mesh m = unit_square();
  m.vertices *= side;
  return m;
}

double brute_force_distance(const Vec3& p, const Mesh& mesh) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : mesh.triangles) {
    best = std::min(best, point_triangle_distance(p, mesh.vertices.col(t[0]),
                                                  mesh.vertices.col(t[1]),
                                                  mesh.vertices.col(t[2])));
  }
  return best;
}

Mesh icosphere_like(int res = 24) {
  // A marching-cubes sphere is a convenient irregular triangle soup.
  Mesh m;
  std::vector<Vec3> verts;
  (void)res;
  // Build a crude geodesic-ish sphere from an octahedron subdivision.
  std::vector<std::array<Vec3, 3>> tris = {
      {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)},
      {Vec3(0, 1, 0), Vec3(-1, 0, 0), Vec3(0, 0, 1)},
      {Vec3(-1, 0, 0), Vec3(0, -1, 0), Vec3(0, 0, 1)},
      {Vec3(0, -1, 0), Vec3(1, 0, 0), Vec3(0, 0, 1)},
      {Vec3(0, 1, 0), Vec3(1, 0, 0), Vec3(0, 0, -1)},
      {Vec3(-1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, -1)},
      {Vec3(0, -1, 0), Vec3(-1, 0, 0), Vec3(0, 0, -1)},
      {Vec3(1, 0, 0), Vec3(0, -1, 0), Vec3(0, 0, -1)},
  };
  for (int lvl = 0; lvl < 3; ++lvl) {
    std::vector<std::array<Vec3, 3>> next;
    for (const auto& t : tris) {
      const Vec3 ab = (t[0] + t[1]).normalized();
      const Vec3 bc = (t[1] + t[2]).normalized();
      const Vec3 ca = (t[2] + t[0]).normalized();
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    tris = std::move(next);
  }
  std::map<std::array<long, 3>, int> lookup;
  std::vector<std::array<int, 3>> faces;
  const auto key = [](const Vec3& v) {
    return std::array<long, 3>{long(std::llround(v.x() * 1e9)),
                               long(std::llround(v.y() * 1e9)),
                               long(std::llround(v.z() * 1e9))};
  };
  for (const auto& t : tris) {
    std::array<int, 3> f;
    for (int e = 0; e < 3; ++e) {
      auto it = lookup.find(key(t[e]));
      if (it == lookup.end()) {
        it = lookup.emplace(key(t[e]), int(verts.size())).first;
        verts.push_back(t[e]);
      }
      f[e] = it->second;
    }
    faces.push_back(f);
  }
  m.vertices.resize(3, verts.size());
  for (size_t v = 0; v < verts.size(); ++v) m.vertices.col(int(v)) = verts[v];
  m.triangles = std::move(faces);
  return m;
}

}  // namespace

TEST_CASE("point-triangle distance") {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  CHECK(point_triangle_distance(Vec3(0.2, 0.2, 0.5), a, b, c) ==
        doctest::Approx(0.5).epsilon(1e-14));
  CHECK(point_triangle_distance(Vec3(-1, -1, 0), a, b, c) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  CHECK(point_triangle_distance(Vec3(0.5, -0.3, 0), a, b, c) ==
        doctest::Approx(0.3).epsilon(1e-14));
  CHECK(point_triangle_distance(Vec3(0.2, 0.1, 0), a, b, c) < 1e-12);
}

TEST_CASE("mesh sampling") {
  const Mesh square = unit_square();

  SUBCASE("count honored and density uniform over quadrants") {
    const int n = 20000;
    const MatX pts = sample_mesh(square, n, 13);
    REQUIRE(pts.cols() == n);
    int counts[4] = {0, 0, 0, 0};
    for (int i = 0; i < n; ++i) {
      const int qx = pts(0, i) < 0.5 ? 0 : 1;
      const int qy = pts(1, i) < 0.5 ? 0 : 1;
      counts[2 * qy + qx]++;
    }
    double chi2 = 0.0;
    for (int q = 0; q < 4; ++q) chi2 += std::pow(counts[q] - n / 4.0, 2) / (n / 4.0);
    CHECK(chi2 < 11.345);  // chi-square(3) critical value at p = 0.01
  }

  SUBCASE("degenerate meshes are rejected") {
    Mesh flat;
    flat.vertices.resize(3, 3);
    flat.vertices.col(0) = Vec3(0, 0, 0);
    flat.vertices.col(1) = Vec3(1, 0, 0);
    flat.vertices.col(2) = Vec3(2, 0, 0);
    flat.triangles = {{0, 1, 2}};
    CHECK_THROWS_AS(sample_mesh(flat, 10, 1), InvalidInput);
    Mesh empty;
    empty.vertices.resize(3, 0);
    CHECK_THROWS_AS(sample_mesh(empty, 10, 1), InvalidInput);
  }

  SUBCASE("deterministic per seed") {
    const MatX a = sample_mesh(square, 100, 7);
    const MatX b = sample_mesh(square, 100, 7);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("p2s") {
  const Mesh square = scaled_square(10.0);  // large flat mesh

  SUBCASE("points on the mesh have zero distance") {
    const MatX pts = sample_mesh(square, 500, 3);
    CHECK(p2s(pts, square) < 1e-9);
  }

  SUBCASE("a point at height h reads h") {
    MatX pts(3, 1);
    pts.col(0) = Vec3(5.0, 5.0, 0.25);
    CHECK(p2s(pts, square) == doctest::Approx(250.0).epsilon(1e-12));  // mm
  }

  SUBCASE("accelerated queries equal brute force") {
    const Mesh sphere = icosphere_like();
    const TriangleBvh bvh(sphere);
    Rng rng(17);
    for (int i = 0; i < 100; ++i) {
      const Vec3 p(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
      CHECK(std::abs(bvh.distance(p) - brute_force_distance(p, sphere)) < 1e-9);
    }
  }
}

TEST_CASE("recall") {
  const Mesh square = scaled_square(1.0);
  const MatX on = sample_mesh(square, 200, 5);
  CHECK(recall(on, square) == 100.0);

  MatX off = on;
  off.row(2).array() += 0.002;  // 2 mm away
  CHECK(recall(off, square) == 0.0);

  MatX half = on;
  for (int i = 0; i < half.cols(); i += 2) half(2, i) += 0.002;
  CHECK(recall(half, square) == 50.0);
}

TEST_CASE("chamfer and f-score") {
  const Mesh square = scaled_square(0.1);

  SUBCASE("identical geometry") {
    const MatX scan = sample_mesh(square, 5000, 11);
    const MetricReport r = chamfer_and_f1(scan, square, 1.0, 5000, 11);
    CHECK(r.chamfer_mm < 1e-6);
    CHECK(r.f1_pct > 99.9);
    CHECK(r.recall_pct == 100.0);
    CHECK(r.precision_pct == 100.0);
  }

  SUBCASE("symmetric offset reads the offset") {
    MatX scan = sample_mesh(square, 8000, 13);
    scan.row(2).array() += 0.003;  // 3 mm
    const MetricReport r = chamfer_and_f1(scan, square, 1.0, 8000, 29);
    CHECK(r.chamfer_mm == doctest::Approx(3.0).epsilon(0.05));
    CHECK(r.f1_pct == 0.0);  // nothing within 1 mm on either side
  }
}

TEST_CASE("metrics are rigid-motion invariant") {
  const Mesh sphere = icosphere_like();
  const MatX scan = sample_mesh(sphere, 2000, 23) * 1.02;  // slightly off surface
  const MetricReport base = chamfer_and_f1(scan, sphere, 1.0, 4000, 31);

  Rng rng(37);
  const Mat3 R = testutil::random_rotation(rng);
  const Vec3 t(0.4, -1.0, 2.2);
  Mesh moved = sphere;
  for (int v = 0; v < moved.vertex_count(); ++v)
    moved.vertices.col(v) = R * sphere.vertices.col(v) + t;
  MatX scan_moved(3, scan.cols());
  for (int i = 0; i < scan.cols(); ++i) scan_moved.col(i) = R * scan.col(i) + t;

  const MetricReport now = chamfer_and_f1(scan_moved, moved, 1.0, 4000, 31);
  CHECK(std::abs(now.p2s_mm - base.p2s_mm) < 1e-9 * 1000);
  CHECK(std::abs(now.chamfer_mm - base.chamfer_mm) < 1e-6);
  CHECK(now.recall_pct == base.recall_pct);
}
