#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "unif/skeleton.hpp"

using namespace unif;
using testutil::one_bone;
using testutil::three_bone_chain;
using testutil::two_bone_arm;

TEST_CASE("rest frame: midpoint origin, first axis along the bone") {
  const Skeleton skel = one_bone(1.0);
  const Pose rest = rest_pose(skel);
  const Frame& f = bone_frame(skel, rest, 0);
  CHECK((f.t - Vec3(0, 0.5, 0)).norm() < 1e-15);
  CHECK((f.R.col(0) - Vec3(0, 1, 0)).norm() < 1e-15);
  CHECK(std::abs(f.R.determinant() - 1.0) < 1e-12);
}

TEST_CASE("posed frame after a 90 degree root rotation") {
  const Skeleton skel = one_bone(1.0);
  const Pose rest = rest_pose(skel);
  const Pose posed = posed_by_rotation(skel, rest, 0, Vec3(0, 0, 1), M_PI / 2);
  const Frame& f = bone_frame(skel, posed, 0);
  CHECK((f.R.col(0) - Vec3(-1, 0, 0)).norm() < 1e-12);
  CHECK((f.t - Vec3(-0.5, 0, 0)).norm() < 1e-12);
}

TEST_CASE("frames compose with a random global rotation") {
  const Skeleton skel = two_bone_arm();
  const Pose rest = rest_pose(skel);
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat3 R = testutil::random_rotation(rng);
    Eigen::AngleAxisd aa(R);
    const Pose posed = posed_by_rotation(skel, rest, 0, aa.axis(), aa.angle());
    for (int n = 0; n < skel.part_count(); ++n) {
      CHECK((posed.frames[n].R - R * rest.frames[n].R).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((posed.frames[n].t - R * rest.frames[n].t).norm() < 1e-12);
    }
  }
}

TEST_CASE("to_local basics and roundtrip") {
  Frame id;
  CHECK((to_local(Vec3(1, 2, 3), id) - Vec3(1, 2, 3)).norm() == 0.0);

  Frame f;
  f.R = Eigen::AngleAxisd(M_PI / 2, Vec3(0, 0, 1)).toRotationMatrix();
  f.t = Vec3(1, 0, 0);
  CHECK((to_local(Vec3(1, 1, 0), f) - Vec3(1, 0, 0)).norm() < 1e-14);

  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    Frame g;
    g.R = testutil::random_rotation(rng);
    g.t = Vec3(rng.normal(), rng.normal(), rng.normal());
    const Vec3 x(rng.normal(), rng.normal(), rng.normal());
    CHECK((from_local(to_local(x, g), g) - x).norm() < 1e-12);
  }
}

TEST_CASE("pose condition layout and self block") {
  const Skeleton skel = three_bone_chain();
  Pose identity;
  identity.frames.assign(3, Frame{});
  const VecX z = pose_condition(skel, identity, 1);
  REQUIRE(z.size() == 36);
  for (int j = 0; j < 3; ++j) {
    Mat3 R;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) R(r, c) = z[12 * j + 3 * r + c];
    CHECK((R - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(Vec3(z[12 * j + 9], z[12 * j + 10], z[12 * j + 11]).norm() == 0.0);
  }

  // The self-relative block is the identity for any pose.
  const Pose rest = rest_pose(skel);
  const Pose posed = posed_by_rotation(skel, rest, 1, Vec3(1, 0, 0), 0.9);
  for (int n = 0; n < 3; ++n) {
    const VecX zn = pose_condition(skel, posed, n);
    Mat3 R;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) R(r, c) = zn[12 * n + 3 * r + c];
    CHECK((R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(Vec3(zn[12 * n + 9], zn[12 * n + 10], zn[12 * n + 11]).norm() < 1e-14);
  }
}

TEST_CASE("pose condition length is 12N for a 20 bone chain") {
  std::vector<Joint> joints;
  std::vector<Bone> bones;
  joints.push_back({"j0", -1, Vec3(0, 0, 0)});
  for (int i = 1; i <= 20; ++i) {
    joints.push_back({"j" + std::to_string(i), i - 1, Vec3(0, 0.1 * i, 0)});
    bones.push_back({i - 1, i});
  }
  const Skeleton skel(std::move(joints), std::move(bones));
  REQUIRE(skel.part_count() == 20);
  CHECK(pose_condition(skel, rest_pose(skel), 3).size() == 240);
}

TEST_CASE("pose condition is invariant to global rigid motion") {
  const Skeleton skel = two_bone_arm();
  const Pose rest = rest_pose(skel);
  const Pose bent = posed_by_rotation(skel, rest, 1, Vec3(0, 0, 1), 0.7);
  Rng rng(23);
  const Mat3 R = testutil::random_rotation(rng);
  const Vec3 t(0.3, -1.2, 2.0);
  Pose moved = bent;
  for (Frame& f : moved.frames) {
    f.R = R * f.R;
    f.t = R * f.t + t;
  }
  for (int n = 0; n < skel.part_count(); ++n) {
    const VecX a = pose_condition(skel, bent, n);
    const VecX b = pose_condition(skel, moved, n);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("relative delta rotation") {
  const Skeleton skel = two_bone_arm();
  const Pose rest = rest_pose(skel);

  SUBCASE("rest against rest is zero for all pairs") {
    for (int n = 0; n < 2; ++n) {
      for (const NeighborRef& nb : skel.neighbors(n)) {
        const DeltaRotation d = relative_delta_rotation(skel, rest, rest, n, nb.bone);
        CHECK(d.angle == 0.0);
        CHECK((d.axis - Vec3(0, 0, 1)).norm() == 0.0);
      }
    }
  }

  SUBCASE("90 degree elbow bend about z") {
    const Pose bent = posed_by_rotation(skel, rest, 1, Vec3(0, 0, 1), M_PI / 2);
    const DeltaRotation d = relative_delta_rotation(skel, rest, bent, 0, 1);
    CHECK(d.angle == doctest::Approx(M_PI / 2).epsilon(1e-12));
    CHECK(std::abs(std::abs(d.axis.z()) - 1.0) < 1e-12);
    // The center is the posed elbow in part-0 local coordinates.
    const Vec3 elbow = posed_joint(skel, bent, 0, 1);
    CHECK((d.center - to_local(elbow, bent.frames[0])).norm() < 1e-12);
  }

  SUBCASE("rodrigues reconstruction for random poses") {
    Rng rng(31);
    for (int trial = 0; trial < 25; ++trial) {
      const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
      const double angle = rng.uniform(0.0, M_PI);
      const Pose posed = posed_by_rotation(skel, rest, 1, axis, angle);
      const DeltaRotation d = relative_delta_rotation(skel, rest, posed, 0, 1);
      const Mat3 delta = (posed.frames[0].R.transpose() * posed.frames[1].R) *
                         (rest.frames[0].R.transpose() * rest.frames[1].R).transpose();
      const Mat3 rebuilt = Eigen::AngleAxisd(d.angle, d.axis).toRotationMatrix();
      CHECK((rebuilt - delta).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  SUBCASE("angle pi case") {
    const Pose flipped = posed_by_rotation(skel, rest, 1, Vec3(1, 0, 0), M_PI);
    const DeltaRotation d = relative_delta_rotation(skel, rest, flipped, 0, 1);
    CHECK(d.angle == doctest::Approx(M_PI).epsilon(1e-10));
    const Mat3 rebuilt = Eigen::AngleAxisd(d.angle, d.axis).toRotationMatrix();
    const Mat3 delta = (flipped.frames[0].R.transpose() * flipped.frames[1].R) *
                       (rest.frames[0].R.transpose() * rest.frames[1].R).transpose();
    CHECK((rebuilt - delta).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("skeleton validation") {
  CHECK_THROWS_AS(Skeleton({{"a", -1, Vec3(0, 0, 0)}, {"b", 0, Vec3(0, 0, 0)}},
                           {{0, 1}}),
                  InvalidInput);  // zero-length bone
  CHECK_THROWS_AS(Skeleton({{"a", -1, Vec3(0, 0, 0)}, {"b", -1, Vec3(0, 1, 0)}},
                           {{0, 1}}),
                  InvalidInput);  // two roots
  CHECK_THROWS_AS(Skeleton({{"a", 1, Vec3(0, 0, 0)}, {"b", 0, Vec3(0, 1, 0)}},
                           {{0, 1}}),
                  InvalidInput);  // cycle
  CHECK_THROWS_AS(frame_from_endpoints(Vec3(1, 2, 3), Vec3(1, 2, 3)), InvalidInput);
}

TEST_CASE("skeleton and pose json roundtrip") {
  const Skeleton skel = two_bone_arm();
  const std::string text = skeleton_to_json(skel);
  const Skeleton back = skeleton_from_json(text);
  REQUIRE(back.part_count() == skel.part_count());
  REQUIRE(back.joint_count() == skel.joint_count());
  for (int j = 0; j < skel.joint_count(); ++j) {
    CHECK(back.joint(j).name == skel.joint(j).name);
    CHECK(back.joint(j).parent == skel.joint(j).parent);
    CHECK((back.joint(j).rest_pos - skel.joint(j).rest_pos).norm() == 0.0);
  }

  const Pose rest = rest_pose(skel);
  const Pose bent = posed_by_rotation(skel, rest, 1, Vec3(0, 0, 1), 0.42);
  const std::string tmp = "/tmp/unif_test_poses.json";
  save_poses({rest, bent}, tmp);
  const std::vector<Pose> loaded = load_poses(tmp, skel);
  REQUIRE(loaded.size() == 2);
  for (int n = 0; n < 2; ++n) {
    CHECK((loaded[1].frames[n].R - bent.frames[n].R).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((loaded[1].frames[n].t - bent.frames[n].t).norm() < 1e-15);
  }
}
