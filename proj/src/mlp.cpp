#include "unif/mlp.hpp"

#include <cmath>

namespace unif {

double softplus(double x, double beta) {
  const double u = beta * x;
  if (u > 0.0) return x + std::log1p(std::exp(-u)) / beta;
  return std::log1p(std::exp(u)) / beta;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_deriv(double x, double beta) { return sigmoid(beta * x); }

PartLayout::PartLayout(const TrunkSpec& s) : spec(s) {
  int off = 0;
  auto add = [&off](int n) {
    const int at = off;
    off += n;
    return at;
  };
  for (int l = 0; l < 5; ++l) {
    off_V[l] = add(spec.layer_out(l) * spec.layer_in(l));
    off_g[l] = add(spec.layer_out(l));
    off_b[l] = add(spec.layer_out(l));
  }
  for (int l = 0; l < 2; ++l) {
    off_hW[l] = add(head_out(l) * head_in(l));
    off_hb[l] = add(head_out(l));
  }
  count = off;
}

void TrunkEval::build(const PartLayout& layout, const double* params) {
  spec = layout.spec;
  for (int l = 0; l < 5; ++l) {
    const auto V = layout.V(params, l);
    const auto g = layout.g(params, l);
    W[l].resize(V.rows(), V.cols());
    for (int i = 0; i < V.rows(); ++i) {
      W[l].row(i) = (g[i] / V.row(i).norm()) * V.row(i);
    }
    b[l] = layout.b(params, l);
  }
  hW0 = layout.hW(params, 0);
  hb0 = layout.hb(params, 0);
  hW1 = layout.hW(params, 1);
  hb1 = layout.hb(params, 1);
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

void apply_softplus(const MatX& av, const MatX& at, MatX& zv, MatX& zt,
                    bool with_tangents, double beta) {
  const int P = int(av.cols());
  zv = av.unaryExpr([beta](double x) { return softplus(x, beta); });
  if (!with_tangents) {
    zt.resize(av.rows(), 0);
    return;
  }
  zt.resize(av.rows(), 3 * P);
  VecX s(av.rows());
  for (int p = 0; p < P; ++p) {
    s = av.col(p).unaryExpr([beta](double x) { return softplus_deriv(x, beta); });
    zt.middleCols<3>(3 * p) = at.middleCols<3>(3 * p).array().colwise() * s.array();
  }
}

}  // namespace

void head_forward(const TrunkEval& te, const VecX& z, HeadFwd& f) {
  const double beta = TrunkSpec::kActBeta;
  f.a0.noalias() = te.hW0 * z;
  f.a0 += te.hb0;
  f.z0 = f.a0.unaryExpr([beta](double x) { return softplus(x, beta); });
  f.out.noalias() = te.hW1 * f.z0;
  f.out += te.hb1;
}

void HeadGrads::init(const PartLayout& layout) {
  W0bar = MatX::Zero(layout.head_out(0), layout.head_in(0));
  b0bar = VecX::Zero(layout.head_out(0));
  W1bar = MatX::Zero(layout.head_out(1), layout.head_in(1));
  b1bar = VecX::Zero(layout.head_out(1));
}

void head_backward(const TrunkEval& te, const HeadFwd& f, const VecX& z,
                   const VecX& out_bar, HeadGrads& g) {
  const double beta = TrunkSpec::kActBeta;
  g.W1bar.noalias() += out_bar * f.z0.transpose();
  g.b1bar += out_bar;
  VecX z0bar = te.hW1.transpose() * out_bar;
  VecX a0bar =
      z0bar.array() *
      f.a0.unaryExpr([beta](double x) { return softplus_deriv(x, beta); }).array();
  g.W0bar.noalias() += a0bar * z.transpose();
  g.b0bar += a0bar;
}

void trunk_forward(const TrunkEval& te, const VecX* head_out, const MatX& Xv,
                   const MatX& Xt, TrunkFwd& f, bool with_tangents) {
  const double beta = TrunkSpec::kActBeta;
  const int P = int(Xv.cols());
  const int w = te.spec.width;
  f.with_tangents = with_tangents;
  f.x0v = Xv;
  f.x0t = with_tangents ? Xt : MatX(3, 0);

  // Hidden layer 0.
  f.av[0].noalias() = te.W[0] * f.x0v;
  f.av[0].colwise() += te.b[0];
  if (with_tangents) f.at[0].noalias() = te.W[0] * f.x0t;
  apply_softplus(f.av[0], f.at[0], f.zv[0], f.zt[0], with_tangents, beta);

  // Hidden layer 1 (+ pose head added after the activation; the layer-0/1
  // pair forms a high-gain squared-radius stage at init, so conditioning
  // enters after it to keep the geometric start inert to z).
  f.av[1].noalias() = te.W[1] * f.zv[0];
  f.av[1].colwise() += te.b[1];
  if (with_tangents) f.at[1].noalias() = te.W[1] * f.zt[0];
  apply_softplus(f.av[1], f.at[1], f.zv[1], f.zt[1], with_tangents, beta);
  if (head_out) f.zv[1].colwise() += *head_out;

  // Hidden layer 2: input is [z1; x] / sqrt(2).
  f.skipv.resize(w + 3, P);
  f.skipv.topRows(w) = f.zv[1] * kInvSqrt2;
  f.skipv.bottomRows(3) = f.x0v * kInvSqrt2;
  if (with_tangents) {
    f.skipt.resize(w + 3, 3 * P);
    f.skipt.topRows(w) = f.zt[1] * kInvSqrt2;
    f.skipt.bottomRows(3) = f.x0t * kInvSqrt2;
  }
  f.av[2].noalias() = te.W[2] * f.skipv;
  f.av[2].colwise() += te.b[2];
  if (with_tangents) f.at[2].noalias() = te.W[2] * f.skipt;
  apply_softplus(f.av[2], f.at[2], f.zv[2], f.zt[2], with_tangents, beta);

  // Hidden layer 3.
  f.av[3].noalias() = te.W[3] * f.zv[2];
  f.av[3].colwise() += te.b[3];
  if (with_tangents) f.at[3].noalias() = te.W[3] * f.zt[2];
  apply_softplus(f.av[3], f.at[3], f.zv[3], f.zt[3], with_tangents, beta);

  // Output layer (linear).
  f.av[4].noalias() = te.W[4] * f.zv[3];
  f.av[4].colwise() += te.b[4];
  if (with_tangents) f.at[4].noalias() = te.W[4] * f.zt[3];
}

void TrunkGrads::init(const TrunkSpec& spec) {
  for (int l = 0; l < 5; ++l) {
    Wbar[l] = MatX::Zero(spec.layer_out(l), spec.layer_in(l));
    bbar[l] = VecX::Zero(spec.layer_out(l));
  }
  hbar = VecX::Zero(spec.width);
}

void TrunkGrads::zero_params() {
  for (auto& m : Wbar) m.setZero();
  for (auto& v : bbar) v.setZero();
  hbar.setZero();
}

namespace {

/// Backward through one softplus activation. Inputs: adjoint of the
/// post-activation (zbar_v, zbar_t) and the stored pre-activation (av, at).
/// Outputs the pre-activation adjoint. The tangent rule z.t = s(a.v) a.t
/// makes the value adjoint pick up a second-derivative term.
void softplus_backward(const MatX& av, const MatX& at, const MatX& zbar_v,
                       const MatX& zbar_t, MatX& abar_v, MatX& abar_t, double beta) {
  const int P = int(av.cols());
  abar_v.resize(av.rows(), P);
  abar_t.resize(av.rows(), 3 * P);
  VecX s(av.rows()), sd(av.rows());
  for (int p = 0; p < P; ++p) {
    for (int i = 0; i < av.rows(); ++i) {
      const double sig = softplus_deriv(av(i, p), beta);
      s[i] = sig;
      sd[i] = beta * sig * (1.0 - sig);
    }
    abar_v.col(p) = zbar_v.col(p).array() * s.array();
    for (int k = 0; k < 3; ++k) {
      abar_v.col(p).array() +=
          zbar_t.col(3 * p + k).array() * sd.array() * at.col(3 * p + k).array();
      abar_t.col(3 * p + k) = zbar_t.col(3 * p + k).array() * s.array();
    }
  }
}

}  // namespace

void trunk_backward(const TrunkEval& te, const TrunkFwd& f, const MatX& dbar_v,
                    const MatX& dbar_t, TrunkGrads& g) {
  const double beta = TrunkSpec::kActBeta;
  const int w = te.spec.width;

  // Output layer (linear).
  g.Wbar[4].noalias() += dbar_v * f.zv[3].transpose();
  g.Wbar[4].noalias() += dbar_t * f.zt[3].transpose();
  g.bbar[4](0) += dbar_v.sum();
  MatX zbar_v = te.W[4].transpose() * dbar_v;
  MatX zbar_t = te.W[4].transpose() * dbar_t;

  MatX abar_v, abar_t;

  // Hidden layer 3.
  softplus_backward(f.av[3], f.at[3], zbar_v, zbar_t, abar_v, abar_t, beta);
  g.Wbar[3].noalias() += abar_v * f.zv[2].transpose();
  g.Wbar[3].noalias() += abar_t * f.zt[2].transpose();
  g.bbar[3] += abar_v.rowwise().sum();
  zbar_v.noalias() = te.W[3].transpose() * abar_v;
  zbar_t.noalias() = te.W[3].transpose() * abar_t;

  // Hidden layer 2 (skip input).
  softplus_backward(f.av[2], f.at[2], zbar_v, zbar_t, abar_v, abar_t, beta);
  g.Wbar[2].noalias() += abar_v * f.skipv.transpose();
  g.Wbar[2].noalias() += abar_t * f.skipt.transpose();
  g.bbar[2] += abar_v.rowwise().sum();
  MatX skipbar_v = te.W[2].transpose() * abar_v;
  MatX skipbar_t = te.W[2].transpose() * abar_t;
  zbar_v = skipbar_v.topRows(w) * kInvSqrt2;
  zbar_t = skipbar_t.topRows(w) * kInvSqrt2;
  g.xbarv = skipbar_v.bottomRows(3) * kInvSqrt2;
  g.xbart = skipbar_t.bottomRows(3) * kInvSqrt2;

  // Hidden layer 1: the head output was added after this activation, so its
  // adjoint is the column sum of the post-activation adjoint.
  g.hbar += zbar_v.rowwise().sum();
  softplus_backward(f.av[1], f.at[1], zbar_v, zbar_t, abar_v, abar_t, beta);
  g.Wbar[1].noalias() += abar_v * f.zv[0].transpose();
  g.Wbar[1].noalias() += abar_t * f.zt[0].transpose();
  g.bbar[1] += abar_v.rowwise().sum();
  zbar_v.noalias() = te.W[1].transpose() * abar_v;
  zbar_t.noalias() = te.W[1].transpose() * abar_t;

  // Hidden layer 0.
  softplus_backward(f.av[0], f.at[0], zbar_v, zbar_t, abar_v, abar_t, beta);
  g.Wbar[0].noalias() += abar_v * f.x0v.transpose();
  g.Wbar[0].noalias() += abar_t * f.x0t.transpose();
  g.bbar[0] += abar_v.rowwise().sum();
  g.xbarv.noalias() += te.W[0].transpose() * abar_v;
  g.xbart.noalias() += te.W[0].transpose() * abar_t;
}

void accumulate_part_grads(const PartLayout& layout, const double* params,
                           const TrunkGrads& tg, const HeadGrads& hg,
                           double* grad_base) {
  for (int l = 0; l < 5; ++l) {
    const auto V = layout.V(params, l);
    const auto g = layout.g(params, l);
    auto Vbar = layout.V(grad_base, l);
    auto gbar = layout.g(grad_base, l);
    auto bbar = layout.b(grad_base, l);
    for (int i = 0; i < V.rows(); ++i) {
      const double nv = V.row(i).norm();
      const RowVecX what = V.row(i) / nv;
      const double dot = tg.Wbar[l].row(i).dot(what);
      gbar[i] += dot;
      Vbar.row(i) += (g[i] / nv) * (tg.Wbar[l].row(i) - dot * what);
    }
    bbar += tg.bbar[l];
  }
  layout.hW(grad_base, 0) += hg.W0bar;
  layout.hb(grad_base, 0) += hg.b0bar;
  layout.hW(grad_base, 1) += hg.W1bar;
  layout.hb(grad_base, 1) += hg.b1bar;
}

void geometric_init(const PartLayout& layout, double* params, double radius, Rng& rng) {
  const TrunkSpec& spec = layout.spec;
  const int w = spec.width;
  const int pairs = w / 2;
  const double beta = TrunkSpec::kActBeta;

  // The initial field must approximate ||x|| - radius for a centimeter
  // radius, with near-radial gradients, finite-difference-friendly
  // smoothness at h = 1e-4, AND parameter scales that survive Adam steps of
  // size ~lr (1e-3) without collapsing. The design:
  //
  //   layer 0   antithetic direction pairs +-k u_i with k ~ 0.4. Around the
  //             5-degree test radius (0.1) the softplus knee smooths each
  //             pair feature sp(a) + sp(-a), so the fitted combination below
  //             has low angular ripple there; at body scale the features
  //             turn into |u . x| speeds. Pair symmetry keeps the field even
  //             (no spurious linear term at the origin).
  //
  //   layer 1   rows replicate a least-squares fit of ||x|| over several
  //             shells (every row carries the full radial estimate, so there
  //             is no narrow bottleneck), plus zero-mean pair-equal
  //             admixtures and randomized bias margins for feature
  //             diversity. Later layers are randomized near-mean mixes.
  //
  // Bias margins are calibrated numerically so every unit starts safely
  // inside the active softplus zone, and the output layer is calibrated to
  // unit radial slope with f(0) = -radius exactly.
  constexpr double kDirScale = 0.4;

  // Layer 0: jittered Fibonacci antithetic pairs.
  std::vector<Vec3> dirs(pairs);
  {
    auto V = layout.V(params, 0);
    const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
    for (int i = 0; i < pairs; ++i) {
      const double zc = 1.0 - (2.0 * i + 1.0) / pairs;
      const double rr = std::sqrt(std::max(0.0, 1.0 - zc * zc));
      const double ph = 2.0 * M_PI * i / golden;
      Vec3 u(rr * std::cos(ph), rr * std::sin(ph), zc);
      u += 0.03 * Vec3(rng.normal(), rng.normal(), rng.normal());
      u.normalize();
      dirs[i] = u;
      V.row(2 * i) = kDirScale * u.transpose();
      V.row(2 * i + 1) = -kDirScale * u.transpose();
    }
    layout.b(params, 0).setZero();
  }

  // Fit weights q and intercept c0 with sum_i q_i phi_i(x) + c0 ~ ||x|| over
  // several shells, where phi_i is the actual pair response including the
  // softplus knee.
  VecX quad(pairs);
  {
    const std::array<double, 6> shells{0.03, 0.06, 0.1, 0.16, 0.28, 0.5};
    const int D = 128;
    const int M = int(shells.size()) * D;
    MatX A(M, pairs + 1);
    VecX target(M);
    const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
    for (int m = 0; m < D; ++m) {
      const double zc = 1.0 - (2.0 * m + 1.0) / D;
      const double rr = std::sqrt(std::max(0.0, 1.0 - zc * zc));
      const double ph = 2.0 * M_PI * m / golden;
      const Vec3 d(rr * std::cos(ph), rr * std::sin(ph), zc);
      for (size_t s = 0; s < shells.size(); ++s) {
        const int row = int(s) * D + m;
        target[row] = shells[s];
        for (int i = 0; i < pairs; ++i) {
          const double a = kDirScale * shells[s] * dirs[i].dot(d);
          A(row, i) = softplus(a, beta) + softplus(-a, beta);
        }
        A(row, pairs) = 1.0;
      }
    }
    MatX AtA = A.transpose() * A;
    AtA.diagonal().array() += 1e-9 * double(M);
    const VecX sol = AtA.ldlt().solve(A.transpose() * target);
    quad = sol.head(pairs);
  }

  // Layer 1: every row is the radial fit plus a small zero-mean admixture
  // (pair-equal so the field stays even in x).
  {
    const double qrms = std::sqrt(quad.squaredNorm() / pairs);
    auto V = layout.V(params, 1);
    for (int r = 0; r < V.rows(); ++r) {
      for (int i = 0; i < pairs; ++i) {
        const double q =
            quad[i] * rng.uniform(0.99, 1.01) + rng.normal(0.0, 0.3 * qrms);
        V(r, 2 * i) = q;
        V(r, 2 * i + 1) = q;
      }
    }
  }

  // Layers 2 and 3: randomized positive mixes around the mean (the skip
  // layer's raw-input columns start at zero), plus sign-diverse noise.
  {
    auto V = layout.V(params, TrunkSpec::kSkip);
    V.setZero();
    const double sq2 = std::sqrt(2.0);  // undoes the skip concat scaling
    for (int r = 0; r < V.rows(); ++r) {
      double sum = 0.0;
      for (int c = 0; c < w; ++c) {
        V(r, c) = rng.uniform(0.4, 1.6);
        sum += V(r, c);
      }
      V.row(r).head(w) *= sq2 / sum;
      for (int c = 0; c < w; ++c) V(r, c) += sq2 * rng.normal(0.0, 0.1 / w);
    }
  }
  {
    auto V = layout.V(params, 3);
    for (int r = 0; r < V.rows(); ++r) {
      double sum = 0.0;
      for (int c = 0; c < w; ++c) {
        V(r, c) = rng.uniform(0.4, 1.6);
        sum += V(r, c);
      }
      V.row(r) *= 1.0 / sum;
      for (int c = 0; c < w; ++c) V(r, c) += rng.normal(0.0, 0.1 / w);
    }
  }

  // Output layer: uniform positive row, rescaled below.
  {
    auto V = layout.V(params, 4);
    for (int c = 0; c < V.cols(); ++c) V(0, c) = 1.0 / double(w);
    layout.b(params, 4).setZero();
  }

  // Calibrate hidden bias margins: propagate the origin through the layers
  // and pin each unit's pre-activation there to a randomized positive margin
  // (several knee widths), so no unit starts saturated and constant offsets
  // do not pile up into a pedestal.
  {
    VecX z = VecX::Zero(3);
    for (int l = 0; l < 4; ++l) {
      auto V = layout.V(params, l);
      auto b = layout.b(params, l);
      VecX in;
      if (l == TrunkSpec::kSkip) {
        in = VecX::Zero(w + 3);
        in.head(w) = z / std::sqrt(2.0);
      } else {
        in = z;
      }
      VecX pre = V * in;
      if (l == 0) {
        b.setZero();
      } else {
        for (int r = 0; r < b.size(); ++r)
          b[r] = rng.uniform(0.08, 0.3) - pre[r];
        pre += b;
      }
      z.resize(b.size());
      for (int r = 0; r < z.size(); ++r) z[r] = softplus(pre[r], beta);
    }
  }

  for (int l = 0; l < 5; ++l) {
    auto V = layout.V(params, l);
    auto g = layout.g(params, l);
    for (int i = 0; i < V.rows(); ++i) g[i] = V.row(i).norm();
  }

  // Two-point calibration: unit radial slope, then f(0) = -radius exactly.
  TrunkEval te;
  te.build(layout, params);
  TrunkFwd f;
  const double rho = 0.2;
  MatX probes(3, 7);
  probes.col(0).setZero();
  probes.col(1) = rho * Vec3(1, 0, 0);
  probes.col(2) = rho * Vec3(-1, 0, 0);
  probes.col(3) = rho * Vec3(0, 1, 0);
  probes.col(4) = rho * Vec3(0, -1, 0);
  probes.col(5) = rho * Vec3(0, 0, 1);
  probes.col(6) = rho * Vec3(0, 0, -1);
  trunk_forward(te, nullptr, probes, MatX(), f, false);
  const double f0 = f.value()(0, 0);
  const double slope = (f.value().row(0).segment(1, 6).mean() - f0) / rho;
  layout.g(params, 4) *= 1.0 / slope;
  te.build(layout, params);
  trunk_forward(te, nullptr, MatX::Zero(3, 1), MatX(), f, false);
  layout.b(params, 4)(0) = -radius - f.value()(0, 0);
}

void head_init(const PartLayout& layout, double* params, Rng& rng) {
  auto W0 = layout.hW(params, 0);
  const double std0 = std::sqrt(2.0 / double(layout.head_in(0)));
  for (int c = 0; c < W0.cols(); ++c)
    for (int r = 0; r < W0.rows(); ++r) W0(r, c) = rng.normal(0.0, std0);
  layout.hb(params, 0).setZero();
  auto W1 = layout.hW(params, 1);
  for (int c = 0; c < W1.cols(); ++c)
    for (int r = 0; r < W1.rows(); ++r) W1(r, c) = rng.normal(0.0, 1e-5);
  layout.hb(params, 1).setZero();
}

}  // namespace unif
