#pragma once

// Per-part neural signed distance functions, their union operators and the
// full model (parts + rigidness coefficients + skeleton).

#include <span>
#include <string>
#include <vector>

#include "unif/deform.hpp"
#include "unif/mlp.hpp"
#include "unif/skeleton.hpp"
#include "unif/types.hpp"

namespace unif {

enum class UnionMode { kSmooth, kMin };

struct ModelConfig {
  DeformConfig deform;
  double init_radius = 0.01;
  double union_beta = 200.0;
  UnionMode train_union = UnionMode::kSmooth;

  bool operator==(const ModelConfig&) const = default;
};

/// Hard union of signed distances: minimum value and the achieving index
/// (ties broken by the lowest index).
std::pair<double, int> union_min(std::span<const double> d);

/// Smooth union: min(d) + sum(dd e^{-beta dd}) / sum(e^{-beta dd}) with
/// dd_n = d_n - min(d). Equals the minimum when all values coincide and never
/// drops below it.
double union_smooth(std::span<const double> d, double beta = 200.0);

/// Taped variants used by the training engine.
ad::Var union_min_taped(std::span<const ad::Var> d);
ad::Var union_smooth_taped(std::span<const ad::Var> d, double beta);

/// Union combination rule for value-route evaluation.
struct UnionRule {
  UnionMode mode = UnionMode::kSmooth;
  double beta = 200.0;
};

/// Combines per-part values and spatial gradients (columns of `grads`) into
/// the union value and gradient under the rule.
void combine_union(const UnionRule& rule, const VecX& d, const MatX& grads,
                   double& du, Vec3& gu, int& argmin);

class UnifModel {
 public:
  UnifModel(Skeleton skel, ModelConfig config, int width, uint64_t seed);

  const Skeleton& skeleton() const { return skel_; }
  const Pose& rest() const { return rest_; }
  const ModelConfig& config() const { return config_; }
  ModelConfig& config() { return config_; }
  int part_count() const { return skel_.part_count(); }
  const TrunkSpec& spec() const { return layout_.spec; }
  const PartLayout& layout() const { return layout_; }

  VecX& params() { return params_; }
  const VecX& params() const { return params_; }
  int param_count() const { return int(params_.size()); }
  int part_offset(int n) const { return n * layout_.count; }
  int alpha_offset() const { return part_count() * layout_.count; }
  int beta_offset() const { return alpha_offset() + part_count() * part_count(); }

  Eigen::Map<const MatX> alpha() const {
    return {params_.data() + alpha_offset(), part_count(), part_count()};
  }
  Eigen::Map<const MatX> beta() const {
    return {params_.data() + beta_offset(), part_count(), part_count()};
  }
  Eigen::Map<MatX> alpha() {
    return {params_.data() + alpha_offset(), part_count(), part_count()};
  }
  Eigen::Map<MatX> beta() {
    return {params_.data() + beta_offset(), part_count(), part_count()};
  }
  RigidnessCoeffs rigidness_coeffs() const;

  /// Rebuilds the cached effective weights; call after any parameter change.
  void refresh();

  /// Replaces parameters and rest pose wholesale (deserialization).
  void load_state(const VecX& params, const Pose& rest);
  const TrunkEval& trunk(int n) const { return trunks_[n]; }

  /// Value and exact spatial gradient of part n at a local (canonical) point.
  /// The gradient is w.r.t. the given point.
  std::pair<double, Vec3> eval_part(int n, const Vec3& x_local, const VecX& z) const;

 private:
  Skeleton skel_;
  Pose rest_;
  ModelConfig config_;
  PartLayout layout_;
  VecX params_;
  std::vector<TrunkEval> trunks_;
};

struct UnionEval {
  double d = 0.0;
  Vec3 grad = Vec3::Zero();
  VecX part_d;
  int argmin = 0;
};

/// Caches the frame-level quantities of one pose (deformation contexts, pose
/// condition vectors, head activations) and evaluates the union field.
/// Evaluation is read-only and safe to call from several threads.
class PoseEval {
 public:
  PoseEval(const UnifModel& model, const Pose& pose);

  const UnifModel& model() const { return *model_; }
  const Pose& pose() const { return pose_; }
  const PartDeformCtx& part_ctx(int n) const { return ctxs_[n]; }
  const VecX& pose_condition_of(int n) const { return z_[n]; }
  const VecX& head_out(int n) const { return heads_[n].out; }

  /// Canonical position of a global point for part n (value only).
  Vec3 canonical(int n, const Vec3& x) const;

  /// Canonical position plus its Jacobian w.r.t. the global point.
  void canonical_jet(int n, const Vec3& x, Vec3& xbar, Mat3& jac) const;

  /// Signed distance of part n at a global point (value only).
  double part_value(int n, const Vec3& x) const;

  /// Batched per-part evaluation: values (and spatial gradients when
  /// requested, chained through the deformation).
  void eval_parts(const MatX& X, bool with_grad, MatX& d, std::vector<MatX>* grads) const;

  UnionEval eval(const Vec3& x, UnionMode mode, bool with_grad = true) const;

 private:
  const UnifModel* model_;
  Pose pose_;
  std::vector<PartDeformCtx> ctxs_;
  std::vector<VecX> z_;
  std::vector<HeadFwd> heads_;
};

}  // namespace unif
