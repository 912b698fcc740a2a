#include "unif/objective.hpp"

#include <cmath>

#include "unif/autodiff.hpp"

namespace unif {

SampleBatch sample_batch(const ScanFrame& frame, const SampleCounts& counts,
                         double sigma_local, double box_scale, uint64_t seed) {
  const int M = frame.count();
  if (M < 1) throw InvalidInput("sample_batch: frame has no points");
  Rng rng(seed);
  SampleBatch b;
  b.surface.resize(3, counts.surface);
  b.surface_normals.resize(3, counts.surface);
  for (int i = 0; i < counts.surface; ++i) {
    const int k = int(rng.uniform_int(uint64_t(M)));
    b.surface.col(i) = frame.points.col(k);
    const Vec3 n = frame.normals.col(k);
    if (std::abs(n.norm() - 1.0) >= 1e-6)
      throw InvalidInput("sample_batch: scan normals must be unit length");
    b.surface_normals.col(i) = n;
  }
  if (counts.local > 0 && counts.surface == 0)
    throw InvalidInput("sample_batch: local points need surface sources");
  b.local_pts.resize(3, counts.local);
  for (int i = 0; i < counts.local; ++i) {
    b.local_pts.col(i) =
        b.surface.col(i % counts.surface) + rng.normal_vec3(sigma_local);
  }
  const Vec3 lo = frame.points.rowwise().minCoeff();
  const Vec3 hi = frame.points.rowwise().maxCoeff();
  const Vec3 c = 0.5 * (lo + hi);
  const Vec3 h = box_scale * 0.5 * (hi - lo);
  b.global_pts.resize(3, counts.global);
  for (int i = 0; i < counts.global; ++i) {
    for (int k = 0; k < 3; ++k)
      b.global_pts(k, i) = c[k] + h[k] * rng.uniform(-1.0, 1.0);
  }
  return b;
}

LossReport finish_report(double recon, double unit, double lim, double sec,
                         double perim, const LossWeights& w) {
  LossReport r;
  r.recon = recon;
  r.unit = unit;
  r.lim = lim;
  r.sec = sec;
  r.perim = perim;
  const auto check = [](double v, const char* name) {
    if (!std::isfinite(v))
      throw InvalidInput(std::string("loss term is not finite: ") + name);
  };
  check(recon, "recon");
  check(unit, "unit");
  check(lim, "lim");
  check(sec, "sec");
  check(perim, "perim");
  r.total = recon + w.unit * unit + w.lim * lim + w.sec * sec + w.perim * perim;
  return r;
}

void CallbackField::eval(const MatX& X, MatX& d, std::vector<MatX>* grads) const {
  const int N = parts();
  const int P = int(X.cols());
  d.resize(N, P);
  if (grads) grads->assign(N, MatX(3, P));
  for (int n = 0; n < N; ++n) {
    for (int p = 0; p < P; ++p) {
      const auto [v, g] = fns_[n](X.col(p));
      d(n, p) = v;
      if (grads) (*grads)[n].col(p) = g;
    }
  }
}

std::vector<JointTarget> joint_targets(const Skeleton& skel, const Pose& pose) {
  std::vector<JointTarget> out;
  for (int n = 0; n < skel.part_count(); ++n) {
    const Vec3 center_n =
        0.5 * (posed_head(skel, pose, n) + posed_tail(skel, pose, n));
    for (const NeighborRef& nb : skel.neighbors(n)) {
      JointTarget t;
      t.part = n;
      t.joint = nb.joint;
      t.pos = posed_joint(skel, pose, n, nb.joint);
      const Vec3 center_b =
          0.5 * (posed_head(skel, pose, nb.bone) + posed_tail(skel, pose, nb.bone));
      const Vec3 un = (center_n - t.pos).normalized();
      const Vec3 ub = (center_b - t.pos).normalized();
      Vec3 d = ub - un;
      if (d.norm() < 1e-9) {
        // Exactly folded bones: any direction orthogonal to the bone works.
        d = un.cross(std::abs(un.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0));
      }
      t.section_normal = d.normalized();
      out.push_back(t);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Value route
// ---------------------------------------------------------------------------

double recon_loss(const SdfField& field, const SampleBatch& batch,
                  const UnionRule& rule, double normal_weight) {
  const int P = int(batch.surface.cols());
  MatX d;
  std::vector<MatX> grads;
  field.eval(batch.surface, d, &grads);
  double sum = 0.0;
  VecX dv(field.parts());
  MatX gv(3, field.parts());
  for (int p = 0; p < P; ++p) {
    dv = d.col(p);
    for (int n = 0; n < field.parts(); ++n) gv.col(n) = grads[n].col(p);
    double du;
    Vec3 gu;
    int arg;
    combine_union(rule, dv, gv, du, gu, arg);
    sum += std::abs(du) + normal_weight * (gu - batch.surface_normals.col(p)).norm();
  }
  return sum / P;
}

namespace {
MatX concat_cols(const MatX& a, const MatX& b) {
  MatX out(3, a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}
}  // namespace

double unit_loss(const SdfField& field, const SampleBatch& batch, const UnionRule& rule) {
  const MatX X = concat_cols(batch.local_pts, batch.global_pts);
  const int P = int(X.cols());
  const int N = field.parts();
  MatX d;
  std::vector<MatX> grads;
  field.eval(X, d, &grads);
  double sum = 0.0;
  VecX dv(N);
  MatX gv(3, N);
  for (int p = 0; p < P; ++p) {
    dv = d.col(p);
    for (int n = 0; n < N; ++n) gv.col(n) = grads[n].col(p);
    double du;
    Vec3 gu;
    int arg;
    combine_union(rule, dv, gv, du, gu, arg);
    double term = std::pow(gu.norm() - 1.0, 2);
    double local = 0.0;
    for (int n = 0; n < N; ++n) local += std::pow(gv.col(n).norm() - 1.0, 2);
    sum += term + local / N;
  }
  return sum / P;
}

double lim_loss(const SdfField& field, const std::vector<JointTarget>& joints) {
  if (joints.empty()) return 0.0;
  MatX X(3, joints.size());
  for (size_t t = 0; t < joints.size(); ++t) X.col(t) = joints[t].pos;
  MatX d;
  field.eval(X, d, nullptr);
  double sum = 0.0;
  for (size_t t = 0; t < joints.size(); ++t) sum += std::abs(d(joints[t].part, t));
  return sum / double(joints.size());
}

double sec_loss(const SdfField& field, const std::vector<JointTarget>& joints) {
  if (joints.empty()) return 0.0;
  MatX X(3, joints.size());
  for (size_t t = 0; t < joints.size(); ++t) X.col(t) = joints[t].pos;
  MatX d;
  std::vector<MatX> grads;
  field.eval(X, d, &grads);
  double sum = 0.0;
  for (size_t t = 0; t < joints.size(); ++t) {
    sum += (grads[joints[t].part].col(t) - joints[t].section_normal).norm();
  }
  return sum / double(joints.size());
}

double perim_loss(const SdfField& field, const SampleBatch& batch,
                  const UnionRule& rule, double beta) {
  const MatX X = concat_cols(batch.local_pts, batch.global_pts);
  const int P = int(X.cols());
  const int N = field.parts();
  MatX d;
  std::vector<MatX> grads;
  field.eval(X, d, &grads);
  double sum = 0.0;
  VecX dv(N);
  MatX gv(3, N);
  const auto term = [beta](double dval, const Vec3& g) {
    const double s = sigmoid(beta * dval);
    const double u = beta * s * (1.0 - s);
    return u * u * g.squaredNorm();
  };
  for (int p = 0; p < P; ++p) {
    dv = d.col(p);
    for (int n = 0; n < N; ++n) gv.col(n) = grads[n].col(p);
    double du;
    Vec3 gu;
    int arg;
    combine_union(rule, dv, gv, du, gu, arg);
    double local = 0.0;
    for (int n = 0; n < N; ++n) local += term(dv[n], gv.col(n));
    sum += term(du, gu) + local / N;
  }
  return sum / P;
}

LossReport total_loss(const SdfField& field, const SampleBatch& batch,
                      const std::vector<JointTarget>& joints, const LossWeights& w,
                      const UnionRule& rule) {
  return finish_report(recon_loss(field, batch, rule, w.normal),
                       unit_loss(field, batch, rule), lim_loss(field, joints),
                       sec_loss(field, joints),
                       perim_loss(field, batch, rule, w.perim_beta), w);
}

LossReport total_loss(const UnifModel& model, const SampleBatch& batch,
                      const Pose& pose, const LossWeights& w) {
  PoseEval pe(model, pose);
  ModelField field(pe);
  const UnionRule rule{model.config().train_union, model.config().union_beta};
  return total_loss(field, batch, joint_targets(model.skeleton(), pose), w, rule);
}

// ---------------------------------------------------------------------------
// Gradient route (taped engine)
// ---------------------------------------------------------------------------

namespace {

using ad::Jet;
using ad::Tape;
using ad::TapeScope;
using ad::V3;
using ad::Var;

struct PartWork {
  PartDeformCtx deform;
  VecX z;
  HeadFwd head;
  TrunkGrads tgrads;
  TrunkFwd fwd;
  // Flat parameter indices of the rigidness coefficients per neighbor, and
  // the tape leaves realizing them in the current chunk.
  struct CoeffIdx {
    int a_self, b_self, a_other, b_other;
  };
  std::vector<CoeffIdx> coeff_idx;
  std::vector<std::array<int, 4>> coeff_leaves;
};

enum class Role { kSurface, kReg };

struct ChunkSums {
  double recon = 0.0, unit = 0.0, lim = 0.0, sec = 0.0, perim = 0.0;
};

class GradEngine {
 public:
  GradEngine(const UnifModel& model, const Pose& pose, const LossWeights& w,
             int surface_count, int reg_count, int joint_count, VecX& grad)
      : model_(model), w_(w), grad_(grad) {
    const Skeleton& skel = model.skeleton();
    const int N = model.part_count();
    parts_.resize(N);
    for (int n = 0; n < N; ++n) {
      PartWork& pw = parts_[n];
      pw.deform = build_part_deform_ctx(skel, model.rest(), pose, n,
                                        model.config().deform);
      pw.z = pose_condition(skel, pose, n);
      head_forward(model.trunk(n), pw.z, pw.head);
      pw.tgrads.init(model.spec());
      for (const NeighborCtx& nb : pw.deform.neighbors) {
        const int b = nb.neighbor_bone;
        pw.coeff_idx.push_back(
            {model.alpha_offset() + b * N + n, model.beta_offset() + b * N + n,
             model.alpha_offset() + n * N + b, model.beta_offset() + n * N + b});
      }
    }
    wS_ = surface_count > 0 ? 1.0 / surface_count : 0.0;
    wR_ = reg_count > 0 ? 1.0 / reg_count : 0.0;
    wJ_ = joint_count > 0 ? 1.0 / joint_count : 0.0;
  }

  ChunkSums sums() const { return sums_; }

  void finish() {
    for (int n = 0; n < model_.part_count(); ++n) {
      PartWork& pw = parts_[n];
      HeadGrads hg;
      hg.init(model_.layout());
      head_backward(model_.trunk(n), pw.head, pw.z, pw.tgrads.hbar, hg);
      accumulate_part_grads(model_.layout(),
                            model_.params().data() + model_.part_offset(n),
                            pw.tgrads, hg, grad_.data() + model_.part_offset(n));
    }
  }

  /// Surface or regularization chunk (all parts, union built per point).
  void run_points(Role role, const MatX& pts, const MatX* normals) {
    const int P = int(pts.cols());
    const int N = model_.part_count();
    Tape tape;
    TapeScope scope(tape);

    std::vector<std::vector<std::array<int, 3>>> xbar_idx(N);
    std::vector<MatX> Xv(N, MatX(3, P)), Xt(N, MatX(3, 3 * P));
    build_pre_segment(tape, pts, xbar_idx, Xv, Xt);
    const size_t post_begin = tape.size();

    for (int n = 0; n < N; ++n) {
      trunk_forward(model_.trunk(n), &parts_[n].head.out, Xv[n], Xt[n],
                    parts_[n].fwd, true);
    }

    // Per-point trunk output leaves and union nodes, then the loss seeds.
    std::vector<std::vector<int>> dleaf(N, std::vector<int>(P));
    std::vector<Var> dvars(N);
    for (int p = 0; p < P; ++p) {
      for (int n = 0; n < N; ++n) {
        Jet j;
        j.v = parts_[n].fwd.value()(0, p);
        for (int k = 0; k < 3; ++k) j.t[k] = parts_[n].fwd.tangents()(0, 3 * p + k);
        dleaf[n][p] = tape.leaf(j);
        dvars[n] = Var(tape, dleaf[n][p]);
      }
      const Var du = model_.config().train_union == UnionMode::kSmooth
                         ? union_smooth_taped(dvars, model_.config().union_beta)
                         : union_min_taped(dvars);
      const Jet& uj = du.jet();
      const Vec3 gu(uj.t[0], uj.t[1], uj.t[2]);

      if (role == Role::kSurface) {
        const Vec3 nrm = normals->col(p);
        sums_.recon += std::abs(uj.v) + w_.normal * (gu - nrm).norm();
        Jet seed;
        seed.v = wS_ * (uj.v > 0 ? 1.0 : (uj.v < 0 ? -1.0 : 0.0));
        const Vec3 gdiff = gu - nrm;
        const double gn = gdiff.norm();
        if (gn > 1e-300) {
          for (int k = 0; k < 3; ++k) seed.t[k] = wS_ * w_.normal * gdiff[k] / gn;
        }
        tape.seed_adjoint(du.idx, seed);
      } else {
        // Two-level unit gradient term.
        const double gun = gu.norm();
        sums_.unit += std::pow(gun - 1.0, 2);
        Jet useed;
        if (gun > 1e-300) {
          for (int k = 0; k < 3; ++k)
            useed.t[k] = wR_ * w_.unit * 2.0 * (gun - 1.0) * gu[k] / gun;
        }
        // Minimal perimeter term (global half).
        const double beta = w_.perim_beta;
        const double s = sigmoid(beta * uj.v);
        const double u = beta * s * (1.0 - s);
        const double uprime = beta * u * (1.0 - 2.0 * s);
        sums_.perim += u * u * gu.squaredNorm();
        useed.v += wR_ * w_.perim * 2.0 * u * uprime * gu.squaredNorm();
        for (int k = 0; k < 3; ++k)
          useed.t[k] += wR_ * w_.perim * u * u * 2.0 * gu[k];
        tape.seed_adjoint(du.idx, useed);

        // Per-part halves.
        double unit_local = 0.0, perim_local = 0.0;
        for (int n = 0; n < N; ++n) {
          const Jet& pj = tape.value(dleaf[n][p]);
          const Vec3 gn_(pj.t[0], pj.t[1], pj.t[2]);
          const double gnn = gn_.norm();
          unit_local += std::pow(gnn - 1.0, 2);
          const double sn = sigmoid(beta * pj.v);
          const double un = beta * sn * (1.0 - sn);
          const double unprime = beta * un * (1.0 - 2.0 * sn);
          perim_local += un * un * gn_.squaredNorm();
          Jet seed;
          if (gnn > 1e-300) {
            for (int k = 0; k < 3; ++k)
              seed.t[k] = wR_ * w_.unit / N * 2.0 * (gnn - 1.0) * gn_[k] / gnn;
          }
          seed.v += wR_ * w_.perim / N * 2.0 * un * unprime * gn_.squaredNorm();
          for (int k = 0; k < 3; ++k)
            seed.t[k] += wR_ * w_.perim / N * un * un * 2.0 * gn_[k];
          tape.seed_adjoint(dleaf[n][p], seed);
        }
        sums_.unit += unit_local / N;
        sums_.perim += perim_local / N;
      }
    }

    backprop(tape, post_begin, xbar_idx, dleaf, P);
  }

  /// Joint anchors: lim and sec terms on one specific part per point.
  void run_joints(const std::vector<JointTarget>& joints) {
    if (joints.empty()) return;
    const int P = int(joints.size());
    const int N = model_.part_count();
    MatX pts(3, P);
    for (int p = 0; p < P; ++p) pts.col(p) = joints[p].pos;

    Tape tape;
    TapeScope scope(tape);
    std::vector<std::vector<std::array<int, 3>>> xbar_idx(N);
    std::vector<MatX> Xv(N, MatX(3, P)), Xt(N, MatX(3, 3 * P));
    build_pre_segment(tape, pts, xbar_idx, Xv, Xt);
    const size_t post_begin = tape.size();

    for (int n = 0; n < N; ++n) {
      trunk_forward(model_.trunk(n), &parts_[n].head.out, Xv[n], Xt[n],
                    parts_[n].fwd, true);
    }
    std::vector<std::vector<int>> dleaf(N, std::vector<int>(P));
    for (int p = 0; p < P; ++p) {
      for (int n = 0; n < N; ++n) {
        Jet j;
        j.v = parts_[n].fwd.value()(0, p);
        for (int k = 0; k < 3; ++k) j.t[k] = parts_[n].fwd.tangents()(0, 3 * p + k);
        dleaf[n][p] = tape.leaf(j);
      }
      const int n = joints[p].part;
      const Jet& pj = tape.value(dleaf[n][p]);
      const Vec3 g(pj.t[0], pj.t[1], pj.t[2]);
      sums_.lim += std::abs(pj.v);
      const Vec3 gdiff = g - joints[p].section_normal;
      const double gn = gdiff.norm();
      sums_.sec += gn;
      Jet seed;
      seed.v = wJ_ * w_.lim * (pj.v > 0 ? 1.0 : (pj.v < 0 ? -1.0 : 0.0));
      if (gn > 1e-300) {
        for (int k = 0; k < 3; ++k) seed.t[k] = wJ_ * w_.sec * gdiff[k] / gn;
      }
      tape.seed_adjoint(dleaf[n][p], seed);
    }
    backprop(tape, post_begin, xbar_idx, dleaf, P);
  }

 private:
  void build_pre_segment(Tape& tape, const MatX& pts,
                         std::vector<std::vector<std::array<int, 3>>>& xbar_idx,
                         std::vector<MatX>& Xv, std::vector<MatX>& Xt) {
    const int P = int(pts.cols());
    const int N = model_.part_count();
    for (int n = 0; n < N; ++n) {
      PartWork& pw = parts_[n];
      // One coefficient leaf per neighbor pair, shared by all chunk points.
      std::vector<NeighborCoeffs<Var>> coeffs;
      pw.coeff_leaves.clear();
      for (size_t i = 0; i < pw.deform.neighbors.size(); ++i) {
        const auto& ci = pw.coeff_idx[i];
        NeighborCoeffs<Var> cf{Var(tape, tape.leaf(model_.params()[ci.a_self])),
                               Var(tape, tape.leaf(model_.params()[ci.b_self])),
                               Var(tape, tape.leaf(model_.params()[ci.a_other])),
                               Var(tape, tape.leaf(model_.params()[ci.b_other]))};
        coeffs.push_back(cf);
        pw.coeff_leaves.push_back(
            {cf.alpha_self.idx, cf.beta_self.idx, cf.alpha_other.idx, cf.beta_other.idx});
      }
      xbar_idx[n].resize(P);
      const Mat3& R = pw.deform.frame.R;
      for (int p = 0; p < P; ++p) {
        const Vec3 xl = to_local(pts.col(p), pw.deform.frame);
        V3<Var> xj;
        xj.x = Var(tape, tape.leaf(Jet{xl.x(), {R(0, 0), R(1, 0), R(2, 0)}}));
        xj.y = Var(tape, tape.leaf(Jet{xl.y(), {R(0, 1), R(1, 1), R(2, 1)}}));
        xj.z = Var(tape, tape.leaf(Jet{xl.z(), {R(0, 2), R(1, 2), R(2, 2)}}));
        const V3<Var> xb = aps_deform_point<Var>(pw.deform, xj, coeffs);
        xbar_idx[n][p] = {xb.x.idx, xb.y.idx, xb.z.idx};
        const Jet& jx = tape.value(xb.x.idx);
        const Jet& jy = tape.value(xb.y.idx);
        const Jet& jz = tape.value(xb.z.idx);
        Xv[n](0, p) = jx.v;
        Xv[n](1, p) = jy.v;
        Xv[n](2, p) = jz.v;
        for (int k = 0; k < 3; ++k) {
          Xt[n](0, 3 * p + k) = jx.t[k];
          Xt[n](1, 3 * p + k) = jy.t[k];
          Xt[n](2, 3 * p + k) = jz.t[k];
        }
      }
    }
  }

  void backprop(Tape& tape, size_t post_begin,
                const std::vector<std::vector<std::array<int, 3>>>& xbar_idx,
                const std::vector<std::vector<int>>& dleaf, int P) {
    const int N = model_.part_count();
    tape.backward(tape.size(), post_begin);
    MatX dbar_v(1, P), dbar_t(1, 3 * P);
    for (int n = 0; n < N; ++n) {
      for (int p = 0; p < P; ++p) {
        const Jet& adj = tape.adjoint(dleaf[n][p]);
        dbar_v(0, p) = adj.v;
        for (int k = 0; k < 3; ++k) dbar_t(0, 3 * p + k) = adj.t[k];
      }
      trunk_backward(model_.trunk(n), parts_[n].fwd, dbar_v, dbar_t,
                     parts_[n].tgrads);
      for (int p = 0; p < P; ++p) {
        for (int i = 0; i < 3; ++i) {
          Jet seed;
          seed.v = parts_[n].tgrads.xbarv(i, p);
          for (int k = 0; k < 3; ++k) seed.t[k] = parts_[n].tgrads.xbart(i, 3 * p + k);
          tape.seed_adjoint(xbar_idx[n][p][i], seed);
        }
      }
    }
    tape.backward(post_begin, 0);
    for (int n = 0; n < N; ++n) {
      PartWork& pw = parts_[n];
      for (size_t i = 0; i < pw.coeff_leaves.size(); ++i) {
        const auto& ci = pw.coeff_idx[i];
        const auto& leaves = pw.coeff_leaves[i];
        grad_[ci.a_self] += tape.adjoint(leaves[0]).v;
        grad_[ci.b_self] += tape.adjoint(leaves[1]).v;
        grad_[ci.a_other] += tape.adjoint(leaves[2]).v;
        grad_[ci.b_other] += tape.adjoint(leaves[3]).v;
      }
    }
  }

  const UnifModel& model_;
  LossWeights w_;
  VecX& grad_;
  std::vector<PartWork> parts_;
  double wS_, wR_, wJ_;
  ChunkSums sums_;
};

}  // namespace

LossGrad loss_and_grad(const UnifModel& model, const SampleBatch& batch,
                       const Pose& pose, const LossWeights& w) {
  validate_pose(model.skeleton(), pose);
  const std::vector<JointTarget> joints = joint_targets(model.skeleton(), pose);
  const int S = int(batch.surface.cols());
  const int R = int(batch.local_pts.cols() + batch.global_pts.cols());

  LossGrad out;
  out.grad = VecX::Zero(model.param_count());
  GradEngine engine(model, pose, w, S, R, int(joints.size()), out.grad);

  constexpr int kChunk = 256;
  for (int at = 0; at < S; at += kChunk) {
    const int len = std::min(kChunk, S - at);
    const MatX pts = batch.surface.middleCols(at, len);
    const MatX nrm = batch.surface_normals.middleCols(at, len);
    engine.run_points(Role::kSurface, pts, &nrm);
  }
  const MatX reg = [&] {
    MatX m(3, R);
    m.leftCols(batch.local_pts.cols()) = batch.local_pts;
    m.rightCols(batch.global_pts.cols()) = batch.global_pts;
    return m;
  }();
  for (int at = 0; at < R; at += kChunk) {
    const int len = std::min(kChunk, R - at);
    const MatX pts = reg.middleCols(at, len);
    engine.run_points(Role::kReg, pts, nullptr);
  }
  engine.run_joints(joints);
  engine.finish();

  const ChunkSums s = engine.sums();
  const double nj = joints.empty() ? 1.0 : double(joints.size());
  out.report = finish_report(S ? s.recon / S : 0.0, R ? s.unit / R : 0.0,
                             s.lim / nj, s.sec / nj, R ? s.perim / R : 0.0, w);
  return out;
}

}  // namespace unif
