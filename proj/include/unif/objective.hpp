#pragma once

// Point sampling and the training objective: reconstruction, two-level unit
// gradient, bone limit, section normal and minimal perimeter terms.
//
// Losses come in two routes. The value route works on any SdfField (the
// model, or analytic stand-ins in tests). The gradient route is the taped
// engine for UnifModel that also differentiates through grad_x d, yielding
// parameter gradients of every term.

#include <functional>
#include <memory>
#include <vector>

#include "unif/dataio.hpp"
#include "unif/model.hpp"
#include "unif/skeleton.hpp"
#include "unif/types.hpp"

namespace unif {

struct SampleCounts {
  int surface = 5000;
  int local = 5000;
  int global = 5000;
};

struct SampleBatch {
  MatX surface;          // 3 x S
  MatX surface_normals;  // 3 x S, unit
  MatX local_pts;        // 3 x L, surface points + gaussian noise
  MatX global_pts;       // 3 x G, uniform in the enlarged bounding box
};

/// Deterministic per seed. Surface points are drawn uniformly with
/// replacement from the scan; local points perturb them with N(0, sigma);
/// global points fill the box_scale-enlarged bounding box of the frame.
SampleBatch sample_batch(const ScanFrame& frame, const SampleCounts& counts,
                         double sigma_local, double box_scale, uint64_t seed);
inline SampleBatch sample_batch(const ScanFrame& frame, const SampleCounts& counts,
                                uint64_t seed) {
  return sample_batch(frame, counts, 0.1, 1.5, seed);
}

struct LossWeights {
  double normal = 0.01;  // weight of the normal term inside recon
  double unit = 0.1;
  double lim = 1.0;
  double sec = 0.01;
  double perim = 0.001;
  double perim_beta = 10.0;

  bool operator==(const LossWeights&) const = default;
};

struct LossReport {
  double recon = 0.0, unit = 0.0, lim = 0.0, sec = 0.0, perim = 0.0;
  double total = 0.0;
};

/// total = recon + w.unit*unit + w.lim*lim + w.sec*sec + w.perim*perim.
/// Throws naming the term if any piece is not finite.
LossReport finish_report(double recon, double unit, double lim, double sec,
                         double perim, const LossWeights& w);

/// Value-route field: per-part signed distances and spatial gradients at
/// global points (gradients chained through whatever canonicalization the
/// field applies).
class SdfField {
 public:
  virtual ~SdfField() = default;
  virtual int parts() const = 0;
  /// d: parts x P; grads[n]: 3 x P (filled when grads != nullptr).
  virtual void eval(const MatX& X, MatX& d, std::vector<MatX>* grads) const = 0;
};

/// The trained model as a field at a fixed pose.
class ModelField : public SdfField {
 public:
  explicit ModelField(const PoseEval& pe) : pe_(&pe) {}
  int parts() const override { return pe_->model().part_count(); }
  void eval(const MatX& X, MatX& d, std::vector<MatX>* grads) const override {
    pe_->eval_parts(X, grads != nullptr, d, grads);
  }

 private:
  const PoseEval* pe_;
};

/// Analytic stand-in assembled from per-part callables (test harnesses).
class CallbackField : public SdfField {
 public:
  using PartFn = std::function<std::pair<double, Vec3>(const Vec3&)>;
  explicit CallbackField(std::vector<PartFn> fns) : fns_(std::move(fns)) {}
  int parts() const override { return int(fns_.size()); }
  void eval(const MatX& X, MatX& d, std::vector<MatX>* grads) const override;

 private:
  std::vector<PartFn> fns_;
};

/// Per-part loss anchors at the adjacent joints: the posed joint position and
/// the section normal derived from the angle between the adjacent bones.
struct JointTarget {
  int part = -1;
  int joint = -1;
  Vec3 pos = Vec3::Zero();             // global, posed
  Vec3 section_normal = Vec3::Zero();  // unit, points out of `part`
};
std::vector<JointTarget> joint_targets(const Skeleton& skel, const Pose& pose);

// Value-route loss terms (means over their respective point sets).
double recon_loss(const SdfField& field, const SampleBatch& batch,
                  const UnionRule& rule, double normal_weight = 0.01);
double unit_loss(const SdfField& field, const SampleBatch& batch, const UnionRule& rule);
double lim_loss(const SdfField& field, const std::vector<JointTarget>& joints);
double sec_loss(const SdfField& field, const std::vector<JointTarget>& joints);
double perim_loss(const SdfField& field, const SampleBatch& batch,
                  const UnionRule& rule, double beta = 10.0);

LossReport total_loss(const SdfField& field, const SampleBatch& batch,
                      const std::vector<JointTarget>& joints, const LossWeights& w,
                      const UnionRule& rule);

/// Convenience wrapper for the model: builds the pose evaluation, the joint
/// anchors and the union rule from the model configuration.
LossReport total_loss(const UnifModel& model, const SampleBatch& batch,
                      const Pose& pose, const LossWeights& w);

/// Gradient route: loss report plus the parameter gradient of the weighted
/// total, including the rigidness coefficients (through the seam weights).
struct LossGrad {
  LossReport report;
  VecX grad;
};
LossGrad loss_and_grad(const UnifModel& model, const SampleBatch& batch,
                       const Pose& pose, const LossWeights& w);

}  // namespace unif
