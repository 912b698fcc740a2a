#pragma once

// Adjacent part seaming (APS) and the competing-parts rigidness/blending
// weights. The point pipeline is scalar-generic so the same formulas serve
// plain evaluation, forward jets and the training tape.

#include <vector>

#include "unif/autodiff.hpp"
#include "unif/skeleton.hpp"
#include "unif/types.hpp"

namespace unif {

/// Learnable rigidness coefficients. Entry (n, b) scales/biases the rigidness
/// of bone n within the adjacent pair (n, b); only adjacent entries are ever
/// read or updated.
struct RigidnessCoeffs {
  MatX alpha;
  MatX beta;

  explicit RigidnessCoeffs(int part_count = 0)
      : alpha(MatX::Constant(part_count, part_count, 2.0)),
        beta(MatX::Zero(part_count, part_count)) {}
};

/// Line geometry between two adjacent bones, in part-n posed local frame.
/// O: shared joint, A: far endpoint of part-n's bone, B: far endpoint of the
/// neighbor bone, Q: split point on segment AB.
struct NeighborGeometry {
  Vec3 O = Vec3::Zero();
  Vec3 A = Vec3::Zero();
  Vec3 B = Vec3::Zero();
  Vec3 Q = Vec3::Zero();
};

struct DeformConfig {
  bool aps = true;
  /// |AQ|/|QB| = len(bone_n)/len(bone_b) when true, swapped when false.
  bool q_ratio_self_over_neighbor = true;
  /// Rigidness line geometry from rest endpoints instead of posed ones.
  bool rigidness_rest_geometry = false;

  bool operator==(const DeformConfig&) const = default;
};

/// Q = A + len1/(len1+len2) (B - A), so |AQ|/|QB| = len1/len2.
Vec3 split_point(const Vec3& A, const Vec3& B, double len1, double len2);

/// Rigidness of the two bones at x. With P the projection of x onto the
/// line AB: r1 = exp(a1 QP.QA/|QA|^2 + b1), r2 = exp(a2 QP.QB/|QB|^2 + b2).
std::pair<double, double> rigidness(const Vec3& x, const NeighborGeometry& geo,
                                    double alpha1, double beta1, double alpha2,
                                    double beta2);

/// w1 = r1/(r1+r2); w2 computed as 1 - w1 so the pair sums to one exactly.
std::pair<double, double> blend_weights(double r1, double r2);

/// Rodrigues rotation by angle w*theta about a unit axis.
Mat3 scaled_rotation(const Vec3& axis, double theta, double w);

struct ApsTerm {
  Vec3 axis;
  double theta = 0.0;
  Vec3 center = Vec3::Zero();
  double weight = 0.0;
};

/// Sum of per-neighbor seam offsets:
///   dx = sum_b ( R_{w_b theta_b}^T (x - t_b) + t_b - x ).
Vec3 aps_offset(const Vec3& x, const std::vector<ApsTerm>& neighbors);

// ---------------------------------------------------------------------------
// Frame-level deformation context (pose-dependent, point-independent).
// ---------------------------------------------------------------------------

struct NeighborCtx {
  int neighbor_bone = -1;
  int shared_joint = -1;
  Vec3 axis = Vec3(0, 0, 1);   // delta rotation axis, part-n local
  double theta = 0.0;          // delta rotation angle, [0, pi]
  Vec3 center = Vec3::Zero();  // shared joint, part-n local
  NeighborGeometry geo;        // rigidness line geometry
  Vec3 u = Vec3::Zero();       // unit direction A -> B
  double inv_tA = 0.0;         // 1 / ((A-Q).u)
  double inv_tB = 0.0;         // 1 / ((B-Q).u)
};

struct PartDeformCtx {
  int part = -1;
  Frame frame;
  bool aps = true;
  std::vector<NeighborCtx> neighbors;
};

PartDeformCtx build_part_deform_ctx(const Skeleton& skel, const Pose& rest,
                                    const Pose& pose, int n,
                                    const DeformConfig& config);

/// Rigidness coefficient values for one neighbor pair, in the scalar type of
/// the active pipeline (plain doubles, or tape leaves during training).
template <class S>
struct NeighborCoeffs {
  S alpha_self, beta_self, alpha_other, beta_other;
};

template <class S>
std::vector<NeighborCoeffs<S>> lift_neighbor_coeffs(const PartDeformCtx& ctx,
                                                    const Eigen::Ref<const MatX>& alpha,
                                                    const Eigen::Ref<const MatX>& beta) {
  std::vector<NeighborCoeffs<S>> out;
  out.reserve(ctx.neighbors.size());
  for (const NeighborCtx& nb : ctx.neighbors) {
    out.push_back({S(alpha(ctx.part, nb.neighbor_bone)),
                   S(beta(ctx.part, nb.neighbor_bone)),
                   S(alpha(nb.neighbor_bone, ctx.part)),
                   S(beta(nb.neighbor_bone, ctx.part))});
  }
  return out;
}

/// Rotates u by `angle` about unit axis a: cos u + sin (a x u) + (1-cos)(a.u)a.
template <class S>
ad::V3<S> rotate_about(const Vec3& a, const S& c, const S& s, const ad::V3<S>& u) {
  const ad::V3<S> av = ad::V3<S>::lift(a);
  const S adu = dot(av, u);
  const ad::V3<S> axu = cross(av, u);
  ad::V3<S> out = c * u + s * axu;
  const S k = (1.0 - c) * adu;
  out.x += k * av.x;
  out.y += k * av.y;
  out.z += k * av.z;
  return out;
}

/// Canonical position of a part-n local point under APS. The blending weight
/// applied for a neighbor is the NEIGHBOR's share w_b = r_b / (r_n + r_b): a
/// point that is fully rigid on part n does not move at all.
template <class S>
ad::V3<S> aps_deform_point(const PartDeformCtx& ctx, const ad::V3<S>& x,
                           const std::vector<NeighborCoeffs<S>>& coeffs) {
  using ad::V3;
  if (!ctx.aps || ctx.neighbors.empty()) return x;
  V3<S> result = x;
  for (size_t i = 0; i < ctx.neighbors.size(); ++i) {
    const NeighborCtx& nb = ctx.neighbors[i];
    if (nb.theta == 0.0) continue;  // identity rotation, exactly no offset
    const NeighborCoeffs<S>& cf = coeffs[i];
    const V3<S> q = V3<S>::lift(nb.geo.Q);
    const V3<S> u = V3<S>::lift(nb.u);
    const S along = dot(x - q, u);
    const S rho_self = along * nb.inv_tA;
    const S rho_other = along * nb.inv_tB;
    using std::exp;
    using ad::exp;
    const S r_self = exp(cf.alpha_self * rho_self + cf.beta_self);
    const S r_other = exp(cf.alpha_other * rho_other + cf.beta_other);
    using ad::clamp01;
    const S w = clamp01(r_other / (r_self + r_other));
    const S phi = w * nb.theta;
    using std::cos;
    using std::sin;
    using ad::cos;
    using ad::sin;
    const S c = cos(phi);
    const S s = -sin(phi);  // rotation by -phi (the transpose)
    const V3<S> center = V3<S>::lift(nb.center);
    const V3<S> rotated = rotate_about(nb.axis, c, s, x - center);
    result = result + (rotated + center - x);
  }
  return result;
}

/// Full pipeline for a global point: local transform, rigidness, weights and
/// seam offsets. Returns the canonical position in part n's frame.
Vec3 canonicalize(const Vec3& x_global, const Skeleton& skel, const Pose& rest,
                  const Pose& pose, const RigidnessCoeffs& coeffs, int n,
                  const DeformConfig& config = {});

}  // namespace unif
