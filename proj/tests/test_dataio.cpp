#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "unif/dataio.hpp"

using namespace unif;

TEST_CASE("capsule sampling on a straight bone") {
  const Skeleton skel = testutil::one_bone(0.4);
  const CapsuleBody body = CapsuleBody::uniform(1, 0.07);
  const Pose rest = rest_pose(skel);
  const ScanFrame f = generate_frame(skel, body, rest, 500, 42);
  REQUIRE(f.count() == 500);
  const Vec3 p(0, 0, 0), q(0, 0.4, 0);
  for (int i = 0; i < f.count(); ++i) {
    const Vec3 x = f.points.col(i);
    CHECK(std::abs(capsule_sdf(x, p, q, 0.07)) < 1e-9);
    // Outward normal: positive dot with the offset from the nearest axis point.
    const Vec3 pq = q - p;
    const double t = std::clamp((x - p).dot(pq) / pq.squaredNorm(), 0.0, 1.0);
    const Vec3 foot = p + t * pq;
    CHECK(f.normals.col(i).dot(x - foot) > 0.0);
    CHECK(std::abs(f.normals.col(i).norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("bent body: samples lie on the union surface, hidden parts excluded") {
  const Skeleton skel = make_skeleton("arm2");
  const CapsuleBody body = CapsuleBody::uniform(2, 0.05);
  const Pose rest = rest_pose(skel);
  const Pose bent = posed_by_rotation(skel, rest, 1, Vec3(0, 0, 1), M_PI / 3);
  const ScanFrame f = generate_frame(skel, body, bent, 800, 7);
  for (int i = 0; i < f.count(); ++i) {
    // Points are exact on their source primitive; the union can dip to the
    // rejection threshold where two primitives cross.
    const double d = body_sdf(skel, body, bent, f.points.col(i));
    CHECK(d <= 1e-12);
    CHECK(d >= -1e-6);
  }
}

TEST_CASE("bulged body still samples its exact surface") {
  const Skeleton skel = make_skeleton("arm2");
  CapsuleBody body = CapsuleBody::uniform(2, 0.05, 0.3);
  const Pose rest = rest_pose(skel);
  const ScanFrame f = generate_frame(skel, body, rest, 300, 11);
  for (int i = 0; i < f.count(); ++i) {
    const double d = body_sdf(skel, body, rest, f.points.col(i));
    CHECK(d <= 1e-12);
    CHECK(d >= -1e-6);
  }
}

TEST_CASE("generation is deterministic per seed") {
  const Skeleton skel = make_skeleton("arm2");
  const CapsuleBody body = CapsuleBody::uniform(2, 0.05);
  const Pose rest = rest_pose(skel);
  const ScanFrame a = generate_frame(skel, body, rest, 200, 99);
  const ScanFrame b = generate_frame(skel, body, rest, 200, 99);
  CHECK((a.points - b.points).cwiseAbs().maxCoeff() == 0.0);
  const ScanFrame c = generate_frame(skel, body, rest, 200, 100);
  CHECK((a.points - c.points).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("schedules") {
  const Skeleton skel = make_skeleton("arm2");

  SUBCASE("static repeats the pose, samples differ") {
    const CapsuleBody body = CapsuleBody::uniform(2, 0.05);
    const auto frames =
        generate_sequence(skel, body, PoseSchedule::parse("static"), 3, 100, 5);
    REQUIRE(frames.size() == 3);
    for (int n = 0; n < 2; ++n) {
      CHECK((frames[0].pose.frames[n].R - frames[2].pose.frames[n].R)
                .cwiseAbs()
                .maxCoeff() == 0.0);
    }
    CHECK((frames[0].points - frames[1].points).cwiseAbs().maxCoeff() > 0.0);
  }

  SUBCASE("sweep endpoints bracket the requested range") {
    const auto poses =
        schedule_poses(skel, PoseSchedule::parse("sweep:elbow:0:90"), 10, 1);
    REQUIRE(poses.size() == 10);
    const Pose rest = rest_pose(skel);
    const DeltaRotation first = relative_delta_rotation(skel, rest, poses.front(), 0, 1);
    const DeltaRotation last = relative_delta_rotation(skel, rest, poses.back(), 0, 1);
    CHECK(first.angle == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(last.angle == doctest::Approx(M_PI / 2).epsilon(1e-12));
  }

  SUBCASE("walk stays within bounds and is deterministic") {
    const auto a = schedule_poses(skel, PoseSchedule::parse("walk:45:10"), 8, 3);
    const auto b = schedule_poses(skel, PoseSchedule::parse("walk:45:10"), 8, 3);
    const Pose rest = rest_pose(skel);
    for (int f = 0; f < 8; ++f) {
      CHECK((a[f].frames[1].R - b[f].frames[1].R).cwiseAbs().maxCoeff() == 0.0);
      const DeltaRotation d = relative_delta_rotation(skel, rest, a[f], 0, 1);
      CHECK(d.angle <= 45.0 * M_PI / 180.0 + 1e-12);
    }
  }

  SUBCASE("parse errors") {
    CHECK_THROWS_AS(PoseSchedule::parse("sweep:elbow:0"), InvalidInput);
    CHECK_THROWS_AS(PoseSchedule::parse("orbit:1:2"), InvalidInput);
    CHECK_THROWS_AS(PoseSchedule::parse("sweep:elbow:a:b"), InvalidInput);
    CHECK_THROWS_AS(PoseSchedule::parse("sweep:elbow:0:90:w"), InvalidInput);
  }
}

TEST_CASE("paper-shaped splits") {
  const DatasetSplits s = make_splits(250);
  REQUIRE(s.train.size() == 20);
  CHECK(s.train.front() == 0);
  CHECK(s.train.back() == 190);
  REQUIRE(s.interp.size() == 20);
  CHECK(s.interp.front() == 5);
  CHECK(s.interp.back() == 195);
  REQUIRE(s.extrap.size() == 5);
  CHECK(s.extrap.front() == 200);
  CHECK(s.extrap.back() == 240);
}

TEST_CASE("frame ply roundtrip is bit exact") {
  const Skeleton skel = make_skeleton("arm2");
  const CapsuleBody body = CapsuleBody::uniform(2, 0.05);
  const Pose rest = rest_pose(skel);
  const ScanFrame f = generate_frame(skel, body, rest, 137, 21, 9);
  const std::string path = "/tmp/unif_test_frame.ply";
  save_frame(skel, f, path);
  const ScanFrame g = load_frame(skel, path);
  REQUIRE(g.count() == f.count());
  CHECK((g.points - f.points).cwiseAbs().maxCoeff() == 0.0);
  CHECK((g.normals - f.normals).cwiseAbs().maxCoeff() == 0.0);

  // Declared count matches the payload size.
  const auto fsize = std::filesystem::file_size(path);
  std::ifstream in(path, std::ios::binary);
  std::string line;
  size_t header = 0;
  while (std::getline(in, line)) {
    header += line.size() + 1;
    if (line == "end_header") break;
  }
  CHECK(fsize == header + size_t(f.count()) * 6 * sizeof(double));
}

TEST_CASE("frame ply error paths") {
  const Skeleton skel = make_skeleton("arm2");
  const std::string path = "/tmp/unif_test_bad.ply";
  {
    std::ofstream out(path, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        << "property double x\nproperty double y\nproperty double z\n"
        << "end_header\n";
    const double xyz[3] = {0, 0, 0};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
  CHECK_THROWS_WITH_AS(load_frame(skel, path),
                       doctest::Contains("missing vertex property nx"), IoError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "ply\nformat ascii 1.0\nend_header\n";
  }
  CHECK_THROWS_AS(load_frame(skel, path), IoError);
  CHECK_THROWS_AS(load_frame(skel, "/tmp/does_not_exist.ply"), IoError);
}

TEST_CASE("dataset directory roundtrip") {
  const Skeleton skel = make_skeleton("arm2");
  Dataset ds{skel};
  ds.body = CapsuleBody::uniform(2, 0.05);
  ds.seed = 77;
  ds.schedule = "sweep:elbow:0:90:z";
  ds.points_per_frame = 64;
  ds.frames = generate_sequence(skel, ds.body, PoseSchedule::parse(ds.schedule), 5, 64, 77);
  ds.splits = make_splits(5);
  const std::string dir = "/tmp/unif_test_dataset";
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  REQUIRE(back.frames.size() == 5);
  CHECK(back.seed == 77);
  CHECK(back.schedule == ds.schedule);
  CHECK(back.body.radii == ds.body.radii);
  CHECK(back.splits.train == ds.splits.train);
  for (int i = 0; i < 5; ++i) {
    CHECK((back.frames[i].points - ds.frames[i].points).cwiseAbs().maxCoeff() == 0.0);
    for (int n = 0; n < 2; ++n) {
      CHECK((back.frames[i].pose.frames[n].R - ds.frames[i].pose.frames[n].R)
                .cwiseAbs()
                .maxCoeff() < 1e-15);
    }
  }
}

TEST_CASE("builtin skeletons") {
  CHECK(make_skeleton("arm2").part_count() == 2);
  CHECK(make_skeleton("chain3").part_count() == 3);
  const Skeleton star = make_skeleton("star3");
  CHECK(star.part_count() == 3);
  // All three bones share the hub, so each has two neighbors there.
  CHECK(star.neighbors(0).size() == 2);
  CHECK_THROWS_AS(make_skeleton("/tmp/definitely_missing.json"), IoError);
}
