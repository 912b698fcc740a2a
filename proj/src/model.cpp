#include "unif/model.hpp"

#include <cmath>

namespace unif {

std::pair<double, int> union_min(std::span<const double> d) {
  if (d.empty()) throw InvalidInput("union_min: empty input");
  int best = 0;
  for (int i = 1; i < int(d.size()); ++i) {
    if (d[i] < d[best]) best = i;
  }
  return {d[best], best};
}

double union_smooth(std::span<const double> d, double beta) {
  const auto [m, arg] = union_min(d);
  double num = 0.0, den = 0.0;
  for (double di : d) {
    const double dd = di - m;
    const double e = std::exp(-beta * dd);
    num += dd * e;
    den += e;
  }
  return m + num / den;
}

ad::Var union_min_taped(std::span<const ad::Var> d) {
  if (d.empty()) throw InvalidInput("union_min: empty input");
  ad::Var m = d[0];
  for (size_t i = 1; i < d.size(); ++i) m = min(m, d[i]);
  return m;
}

ad::Var union_smooth_taped(std::span<const ad::Var> d, double beta) {
  ad::Var m = union_min_taped(d);
  if (d.size() == 1) return m;
  ad::Var num(0.0), den(0.0);
  for (const ad::Var& di : d) {
    ad::Var dd = di - m;
    ad::Var e = exp(dd * (-beta));
    num += dd * e;
    den += e;
  }
  return m + num / den;
}

UnifModel::UnifModel(Skeleton skel, ModelConfig config, int width, uint64_t seed)
    : skel_(std::move(skel)),
      rest_(rest_pose(skel_)),
      config_(config),
      layout_(TrunkSpec{width, 12 * skel_.part_count()}) {
  const int N = skel_.part_count();
  params_ = VecX::Zero(N * layout_.count + 2 * N * N);
  for (int n = 0; n < N; ++n) {
    Rng rng(mix_seed(seed, 0x700d5eedull, uint64_t(n)));
    geometric_init(layout_, params_.data() + part_offset(n), config_.init_radius, rng);
    head_init(layout_, params_.data() + part_offset(n), rng);
  }
  alpha().setConstant(2.0);
  beta().setZero();
  refresh();
}

RigidnessCoeffs UnifModel::rigidness_coeffs() const {
  RigidnessCoeffs rc(part_count());
  rc.alpha = alpha();
  rc.beta = beta();
  return rc;
}

void UnifModel::load_state(const VecX& params, const Pose& rest) {
  if (params.size() != params_.size())
    throw InvalidInput("load_state: parameter count mismatch");
  if (rest.part_count() != part_count())
    throw InvalidInput("load_state: rest pose part count mismatch");
  params_ = params;
  rest_ = rest;
  refresh();
}

void UnifModel::refresh() {
  trunks_.resize(part_count());
  for (int n = 0; n < part_count(); ++n) {
    trunks_[n].build(layout_, params_.data() + part_offset(n));
  }
}

std::pair<double, Vec3> UnifModel::eval_part(int n, const Vec3& x_local,
                                             const VecX& z) const {
  if (!x_local.allFinite()) throw InvalidInput("eval_part: non-finite input point");
  if (z.size() != layout_.spec.zdim)
    throw InvalidInput("eval_part: pose condition has wrong length");
  HeadFwd head;
  head_forward(trunks_[n], z, head);
  MatX Xv = x_local;
  MatX Xt = Mat3::Identity();
  TrunkFwd f;
  trunk_forward(trunks_[n], &head.out, Xv, Xt, f, true);
  Vec3 grad(f.tangents()(0, 0), f.tangents()(0, 1), f.tangents()(0, 2));
  return {f.value()(0, 0), grad};
}

PoseEval::PoseEval(const UnifModel& model, const Pose& pose)
    : model_(&model), pose_(pose) {
  validate_pose(model.skeleton(), pose_);
  const int N = model.part_count();
  ctxs_.reserve(N);
  z_.reserve(N);
  heads_.resize(N);
  for (int n = 0; n < N; ++n) {
    ctxs_.push_back(build_part_deform_ctx(model.skeleton(), model.rest(), pose_, n,
                                          model.config().deform));
    z_.push_back(pose_condition(model.skeleton(), pose_, n));
    head_forward(model.trunk(n), z_[n], heads_[n]);
  }
}

Vec3 PoseEval::canonical(int n, const Vec3& x) const {
  const PartDeformCtx& ctx = ctxs_[n];
  const Vec3 xl = to_local(x, ctx.frame);
  const auto cf =
      lift_neighbor_coeffs<double>(ctx, model_->alpha(), model_->beta());
  return ad::to_vec3(aps_deform_point<double>(ctx, ad::to_v3(xl), cf));
}

void PoseEval::canonical_jet(int n, const Vec3& x, Vec3& xbar, Mat3& jac) const {
  using ad::Jet3;
  using ad::V3;
  const PartDeformCtx& ctx = ctxs_[n];
  const Vec3 xl = to_local(x, ctx.frame);
  V3<Jet3> xj;
  // d x_local_i / d x_global_k = R(k, i)
  xj.x = Jet3(xl.x(), {ctx.frame.R(0, 0), ctx.frame.R(1, 0), ctx.frame.R(2, 0)});
  xj.y = Jet3(xl.y(), {ctx.frame.R(0, 1), ctx.frame.R(1, 1), ctx.frame.R(2, 1)});
  xj.z = Jet3(xl.z(), {ctx.frame.R(0, 2), ctx.frame.R(1, 2), ctx.frame.R(2, 2)});
  const auto cf = lift_neighbor_coeffs<Jet3>(ctx, model_->alpha(), model_->beta());
  const V3<Jet3> out = aps_deform_point<Jet3>(ctx, xj, cf);
  xbar = Vec3(out.x.v, out.y.v, out.z.v);
  // jac(i, k) = d xbar_i / d x_global_k
  for (int k = 0; k < 3; ++k) {
    jac(0, k) = out.x.t[k];
    jac(1, k) = out.y.t[k];
    jac(2, k) = out.z.t[k];
  }
}

double PoseEval::part_value(int n, const Vec3& x) const {
  MatX Xv = canonical(n, x);
  TrunkFwd f;
  trunk_forward(model_->trunk(n), &heads_[n].out, Xv, MatX(), f, false);
  return f.value()(0, 0);
}

void PoseEval::eval_parts(const MatX& X, bool with_grad, MatX& d,
                          std::vector<MatX>* grads) const {
  const int N = model_->part_count();
  const int P = int(X.cols());
  d.resize(N, P);
  if (grads) grads->assign(N, MatX(3, P));
  MatX Xv(3, P), Xt;
  if (with_grad) Xt.resize(3, 3 * P);
  TrunkFwd f;
  for (int n = 0; n < N; ++n) {
    if (with_grad) {
      Vec3 xb;
      Mat3 jac;
      for (int p = 0; p < P; ++p) {
        canonical_jet(n, X.col(p), xb, jac);
        Xv.col(p) = xb;
        // tangent column (3p+k) holds d xbar / d x_k
        Xt.middleCols<3>(3 * p) = jac;
      }
    } else {
      for (int p = 0; p < P; ++p) Xv.col(p) = canonical(n, X.col(p));
    }
    trunk_forward(model_->trunk(n), &heads_[n].out, Xv, Xt, f, with_grad);
    d.row(n) = f.value().row(0);
    if (grads) {
      MatX& g = (*grads)[n];
      for (int p = 0; p < P; ++p) {
        g(0, p) = f.tangents()(0, 3 * p + 0);
        g(1, p) = f.tangents()(0, 3 * p + 1);
        g(2, p) = f.tangents()(0, 3 * p + 2);
      }
    }
  }
}

void combine_union(const UnionRule& rule, const VecX& d, const MatX& grads,
                   double& du, Vec3& gu, int& argmin) {
  const int N = int(d.size());
  const std::span<const double> dv(d.data(), size_t(N));
  const auto [m, arg] = union_min(dv);
  argmin = arg;
  if (rule.mode == UnionMode::kMin) {
    du = m;
    gu = grads.col(arg);
    return;
  }
  const double beta = rule.beta;
  du = union_smooth(dv, beta);
  // d = m + num/den with dd_n = d_n - m. The gradient mixes the per-part
  // gradients with dD/dd_n; the min branch carries the remainder.
  double num = 0.0, den = 0.0;
  VecX e(N);
  for (int n = 0; n < N; ++n) {
    const double dd = d[n] - m;
    e[n] = std::exp(-beta * dd);
    num += dd * e[n];
    den += e[n];
  }
  Vec3 g = Vec3::Zero();
  double wm = 0.0;
  for (int n = 0; n < N; ++n) {
    const double dd = d[n] - m;
    const double dnum = e[n] * (1.0 - beta * dd);
    const double dden = -beta * e[n];
    const double dcorr = (dnum * den - num * dden) / (den * den);
    g += dcorr * grads.col(n);
    wm += dcorr;
  }
  g += (1.0 - wm) * grads.col(arg);
  gu = g;
}

UnionEval PoseEval::eval(const Vec3& x, UnionMode mode, bool with_grad) const {
  const int N = model_->part_count();
  UnionEval out;
  out.part_d.resize(N);
  MatX d;
  std::vector<MatX> grads;
  eval_parts(x, with_grad, d, with_grad ? &grads : nullptr);
  for (int n = 0; n < N; ++n) out.part_d[n] = d(n, 0);

  if (!with_grad) {
    const std::span<const double> dv(out.part_d.data(), size_t(N));
    const auto [m, arg] = union_min(dv);
    out.argmin = arg;
    out.d = mode == UnionMode::kMin
                ? m
                : union_smooth(dv, model_->config().union_beta);
    return out;
  }
  MatX g(3, N);
  for (int n = 0; n < N; ++n) g.col(n) = grads[n].col(0);
  combine_union(UnionRule{mode, model_->config().union_beta}, out.part_d, g, out.d,
                out.grad, out.argmin);
  return out;
}

}  // namespace unif
