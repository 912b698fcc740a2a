#include "unif/deform.hpp"

#include <cmath>

namespace unif {

Vec3 split_point(const Vec3& A, const Vec3& B, double len1, double len2) {
  if (len1 <= 0.0 || len2 <= 0.0) throw InvalidInput("split_point: lengths must be positive");
  if ((B - A).norm() <= 1e-14) throw InvalidInput("split_point: endpoints coincide");
  return A + (len1 / (len1 + len2)) * (B - A);
}

std::pair<double, double> rigidness(const Vec3& x, const NeighborGeometry& geo,
                                    double alpha1, double beta1, double alpha2,
                                    double beta2) {
  const Vec3 ab = geo.B - geo.A;
  const double len2 = ab.squaredNorm();
  if (len2 <= 0.0) throw InvalidInput("rigidness: degenerate connecting line");
  const Vec3 P = geo.A + ((x - geo.A).dot(ab) / len2) * ab;
  const Vec3 qp = P - geo.Q;
  const Vec3 qa = geo.A - geo.Q;
  const Vec3 qb = geo.B - geo.Q;
  const double r1 = std::exp(alpha1 * qp.dot(qa) / qa.squaredNorm() + beta1);
  const double r2 = std::exp(alpha2 * qp.dot(qb) / qb.squaredNorm() + beta2);
  return {r1, r2};
}

std::pair<double, double> blend_weights(double r1, double r2) {
  if (!(r1 > 0.0) || !(r2 > 0.0))
    throw InvalidInput("blend_weights: rigidness must be positive");
  const double w1 = r1 / (r1 + r2);
  return {w1, 1.0 - w1};
}

Mat3 scaled_rotation(const Vec3& axis, double theta, double w) {
  return Eigen::AngleAxisd(w * theta, axis).toRotationMatrix();
}

Vec3 aps_offset(const Vec3& x, const std::vector<ApsTerm>& neighbors) {
  Vec3 dx = Vec3::Zero();
  for (const ApsTerm& nb : neighbors) {
    if (nb.theta == 0.0) continue;  // identity rotation, exactly no offset
    const Mat3 R = scaled_rotation(nb.axis, nb.theta, nb.weight);
    dx += R.transpose() * (x - nb.center) + nb.center - x;
  }
  return dx;
}

PartDeformCtx build_part_deform_ctx(const Skeleton& skel, const Pose& rest,
                                    const Pose& pose, int n,
                                    const DeformConfig& config) {
  PartDeformCtx ctx;
  ctx.part = n;
  ctx.frame = pose.frames[n];
  ctx.aps = config.aps;
  for (const NeighborRef& nb : skel.neighbors(n)) {
    NeighborCtx nc;
    nc.neighbor_bone = nb.bone;
    nc.shared_joint = nb.joint;

    const DeltaRotation delta = relative_delta_rotation(skel, rest, pose, n, nb.bone);
    nc.axis = delta.axis;
    nc.theta = delta.angle;
    nc.center = delta.center;

    // Far endpoints: the endpoint of each bone that is not the shared joint.
    const auto far_joint = [&](int bone) {
      const Bone& b = skel.bone(bone);
      return b.head == nb.joint ? b.tail : b.head;
    };
    const Pose& geo_pose = config.rigidness_rest_geometry ? rest : pose;
    const Frame& geo_frame = geo_pose.frames[n];
    nc.geo.O = to_local(posed_joint(skel, geo_pose, n, nb.joint), geo_frame);
    nc.geo.A = to_local(posed_joint(skel, geo_pose, n, far_joint(n)), geo_frame);
    nc.geo.B = to_local(posed_joint(skel, geo_pose, nb.bone, far_joint(nb.bone)), geo_frame);

    const double len_self = skel.bone_length(n);
    const double len_other = skel.bone_length(nb.bone);
    nc.geo.Q = config.q_ratio_self_over_neighbor
                   ? split_point(nc.geo.A, nc.geo.B, len_self, len_other)
                   : split_point(nc.geo.A, nc.geo.B, len_other, len_self);

    const Vec3 ab = nc.geo.B - nc.geo.A;
    const double len = ab.norm();
    if (len <= 1e-12)
      throw InvalidInput("aps: bone endpoints coincide, connecting line degenerate");
    nc.u = ab / len;
    nc.inv_tA = 1.0 / (nc.geo.A - nc.geo.Q).dot(nc.u);
    nc.inv_tB = 1.0 / (nc.geo.B - nc.geo.Q).dot(nc.u);

    ctx.neighbors.push_back(nc);
  }
  return ctx;
}

Vec3 canonicalize(const Vec3& x_global, const Skeleton& skel, const Pose& rest,
                  const Pose& pose, const RigidnessCoeffs& coeffs, int n,
                  const DeformConfig& config) {
  const PartDeformCtx ctx = build_part_deform_ctx(skel, rest, pose, n, config);
  const Vec3 x_local = to_local(x_global, ctx.frame);
  const auto cf = lift_neighbor_coeffs<double>(ctx, coeffs.alpha, coeffs.beta);
  return ad::to_vec3(aps_deform_point<double>(ctx, ad::to_v3(x_local), cf));
}

}  // namespace unif
