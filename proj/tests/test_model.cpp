#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "unif/model.hpp"

using namespace unif;
using testutil::one_bone;
using testutil::two_bone_arm;

TEST_CASE("union min") {
  const std::vector<double> d = {1.0, -0.5, 2.0};
  const auto [v, i] = union_min(d);
  CHECK(v == -0.5);
  CHECK(i == 1);
  const std::vector<double> same = {0.7, 0.7, 0.7};
  CHECK(union_min(same) == std::pair<double, int>{0.7, 0});
  const std::vector<double> single = {-0.2};
  CHECK(union_min(single) == std::pair<double, int>{-0.2, 0});
  CHECK_THROWS_AS(union_min(std::span<const double>{}), InvalidInput);
}

TEST_CASE("union smooth") {
  const std::vector<double> same = {0.3, 0.3, 0.3};
  CHECK(union_smooth(same, 200.0) == doctest::Approx(0.3).epsilon(1e-15));

  const std::vector<double> wide = {0.0, 10.0};
  CHECK(std::abs(union_smooth(wide, 200.0)) < 1e-12);

  Rng rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + int(rng.uniform_int(8));
    std::vector<double> d(n);
    for (double& x : d) x = rng.uniform(-1, 1);
    const double u = union_smooth(d, 200.0);
    const double m = union_min(d).first;
    double maxdd = 0.0;
    for (double x : d) maxdd = std::max(maxdd, x - m);
    CHECK(u >= m);
    CHECK(u <= m + maxdd + 1e-15);
  }
}

namespace {
UnifModel make_arm_model(uint64_t seed = 1) {
  return UnifModel(two_bone_arm(), ModelConfig{}, 64, seed);
}
}  // namespace

TEST_CASE("geometric initialization produces a small sphere") {
  UnifModel model = make_arm_model(3);
  const VecX z = VecX::Zero(model.spec().zdim);
  for (int n = 0; n < model.part_count(); ++n) {
    const auto [d0, g0] = model.eval_part(n, Vec3::Zero(), z);
    CHECK(d0 < 0.0);
    const auto [dx, gx] = model.eval_part(n, Vec3(0.1, 0, 0), z);
    CHECK(dx > 0.0);

    // Bisection along +x for the zero crossing.
    double lo = 0.0, hi = 0.1;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double v = model.eval_part(n, Vec3(mid, 0, 0), z).first;
      (v < 0.0 ? lo : hi) = mid;
    }
    const double crossing = 0.5 * (lo + hi);
    CHECK(crossing > 0.005);
    CHECK(crossing < 0.05);

    // Gradient points close to +x on the positive x axis.
    const double angle =
        std::acos(gx.normalized().dot(Vec3(1, 0, 0))) * 180.0 / M_PI;
    CHECK(angle < 5.0);
  }
}

TEST_CASE("eval_part gradient matches finite differences") {
  UnifModel model = make_arm_model(9);
  Rng rng(101);
  VecX z(model.spec().zdim);
  for (int i = 0; i < z.size(); ++i) z[i] = rng.uniform(-1, 1);
  double max_rel = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Vec3 x(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
    const auto [d, g] = model.eval_part(trial % 2, x, z);
    Vec3 fd;
    const double h = 1e-4;
    for (int k = 0; k < 3; ++k) {
      Vec3 xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      fd[k] = (model.eval_part(trial % 2, xp, z).first -
               model.eval_part(trial % 2, xm, z).first) /
              (2 * h);
    }
    max_rel = std::max(max_rel, (g - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  CHECK(max_rel < 1e-5);
}

TEST_CASE("pose head is inert at initialization") {
  UnifModel model = make_arm_model(4);
  Rng rng(55);
  const Vec3 x(0.03, -0.02, 0.05);
  const double base = model.eval_part(0, x, VecX::Zero(model.spec().zdim)).first;
  for (int trial = 0; trial < 20; ++trial) {
    VecX z(model.spec().zdim);
    for (int i = 0; i < z.size(); ++i) z[i] = rng.uniform(-1, 1);
    CHECK(std::abs(model.eval_part(0, x, z).first - base) < 1e-3);
  }
}

TEST_CASE("eval_part rejects bad input") {
  UnifModel model = make_arm_model(2);
  const VecX z = VecX::Zero(model.spec().zdim);
  CHECK_THROWS_AS(
      model.eval_part(0, Vec3(std::nan(""), 0, 0), z), InvalidInput);
  CHECK_THROWS_AS(model.eval_part(0, Vec3::Zero(), VecX::Zero(5)), InvalidInput);
}

TEST_CASE("union field right after initialization") {
  UnifModel model = make_arm_model(12);
  const Pose rest = model.rest();
  PoseEval pe(model, rest);

  // At a bone center the union is about -radius.
  for (int n = 0; n < 2; ++n) {
    const Vec3 center = model.skeleton().rest_center(n);
    const UnionEval u = pe.eval(center, UnionMode::kSmooth);
    CHECK(u.d < -0.004);
    CHECK(u.d > -0.02);
    CHECK(u.argmin == n);
  }

  // Far outside everything is positive.
  const UnionEval far = pe.eval(Vec3(5, 5, 5), UnionMode::kMin);
  CHECK(far.d > 0.0);
}

TEST_CASE("union gradient matches finite differences at non-tie points") {
  UnifModel model = make_arm_model(21);
  const Pose rest = model.rest();
  PoseEval pe(model, rest);
  Rng rng(131);
  int checked = 0;
  double max_rel = 0.0;
  while (checked < 100) {
    const Vec3 x(rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.9), rng.uniform(-0.3, 0.3));
    const UnionEval u = pe.eval(x, UnionMode::kSmooth);
    // Skip near-ties of the inner min where the subgradient convention kicks in.
    std::vector<double> sorted(u.part_d.data(), u.part_d.data() + u.part_d.size());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.size() > 1 && sorted[1] - sorted[0] < 1e-3) continue;
    ++checked;
    Vec3 fd;
    const double h = 1e-5;
    for (int k = 0; k < 3; ++k) {
      Vec3 xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      fd[k] = (pe.eval(xp, UnionMode::kSmooth, false).d -
               pe.eval(xm, UnionMode::kSmooth, false).d) /
              (2 * h);
    }
    max_rel = std::max(max_rel, (u.grad - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  CHECK(max_rel < 1e-4);
}

TEST_CASE("weight normalization survives parameter changes") {
  UnifModel model = make_arm_model(31);
  Rng rng(141);
  for (int i = 0; i < model.param_count(); ++i)
    model.params()[i] += 0.01 * rng.normal();
  model.refresh();
  const PartLayout& layout = model.layout();
  for (int n = 0; n < model.part_count(); ++n) {
    const double* base = model.params().data() + model.part_offset(n);
    for (int l = 0; l < 5; ++l) {
      const auto V = layout.V(base, l);
      const auto g = layout.g(base, l);
      const MatX& W = model.trunk(n).W[l];
      for (int i = 0; i < V.rows(); ++i) {
        const double scale = std::max(1.0, std::abs(g[i]));
        CHECK((W.row(i) - (g[i] / V.row(i).norm()) * V.row(i)).cwiseAbs().maxCoeff() <
              1e-13 * scale);
        CHECK(std::abs(W.row(i).norm() - std::abs(g[i])) < 1e-11 * scale);
      }
    }
  }
}
