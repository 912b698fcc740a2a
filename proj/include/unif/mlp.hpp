#pragma once

// Batched evaluation engine for the per-part networks: a weight-normalized
// softplus trunk (4 hidden layers of width 64, input skip into the third
// hidden layer) plus a small pose-condition head whose output is added to the
// first hidden activation.
//
// Points are processed in batches. Value matrices are (width x P); spatial
// tangent matrices are (width x 3P) with the three directions of point p in
// columns [3p, 3p+3). The backward pass propagates adjoints of both the
// output value and the output tangents, which yields parameter gradients of
// losses containing grad_x d.

#include <array>

#include "unif/types.hpp"

namespace unif {

double softplus(double x, double beta);
double softplus_deriv(double x, double beta);   // sigmoid(beta x)
double sigmoid(double x);

struct TrunkSpec {
  int width = 64;
  int zdim = 12;

  static constexpr int kHidden = 4;
  static constexpr int kSkip = 2;  // input concatenated before this hidden layer
  static constexpr double kActBeta = 100.0;

  int hidden_in(int l) const { return (l == 0 ? 3 : width) + (l == kSkip ? 3 : 0); }
  int layer_in(int l) const { return l < kHidden ? hidden_in(l) : width; }
  int layer_out(int l) const { return l < kHidden ? width : 1; }

  bool operator==(const TrunkSpec&) const = default;
};

/// Offsets of every parameter tensor of one part inside flat storage.
/// Trunk layers carry weight-normalized parameters (V, g, b); the two head
/// layers are plain (W, b).
struct PartLayout {
  TrunkSpec spec;
  std::array<int, 5> off_V{}, off_g{}, off_b{};
  std::array<int, 2> off_hW{}, off_hb{};
  int count = 0;

  explicit PartLayout(const TrunkSpec& s = {});

  int head_in(int l) const { return l == 0 ? spec.zdim : spec.width; }
  int head_out(int) const { return spec.width; }

  Eigen::Map<MatX> V(double* base, int l) const {
    return {base + off_V[l], spec.layer_out(l), spec.layer_in(l)};
  }
  Eigen::Map<const MatX> V(const double* base, int l) const {
    return {base + off_V[l], spec.layer_out(l), spec.layer_in(l)};
  }
  Eigen::Map<VecX> g(double* base, int l) const { return {base + off_g[l], spec.layer_out(l)}; }
  Eigen::Map<const VecX> g(const double* base, int l) const {
    return {base + off_g[l], spec.layer_out(l)};
  }
  Eigen::Map<VecX> b(double* base, int l) const { return {base + off_b[l], spec.layer_out(l)}; }
  Eigen::Map<const VecX> b(const double* base, int l) const {
    return {base + off_b[l], spec.layer_out(l)};
  }
  Eigen::Map<MatX> hW(double* base, int l) const {
    return {base + off_hW[l], head_out(l), head_in(l)};
  }
  Eigen::Map<const MatX> hW(const double* base, int l) const {
    return {base + off_hW[l], head_out(l), head_in(l)};
  }
  Eigen::Map<VecX> hb(double* base, int l) const { return {base + off_hb[l], head_out(l)}; }
  Eigen::Map<const VecX> hb(const double* base, int l) const {
    return {base + off_hb[l], head_out(l)};
  }
};

/// Effective weights (weight-norm resolved) cached for evaluation.
struct TrunkEval {
  TrunkSpec spec;
  std::array<MatX, 5> W;
  std::array<VecX, 5> b;
  MatX hW0, hW1;
  VecX hb0, hb1;

  void build(const PartLayout& layout, const double* params);
};

/// Geometric initialization: the part starts out as a small sphere of the
/// given radius around the local origin. The construction is radial (fitted
/// direction-pair features plus calibrated margins) so that the zero set,
/// gradient direction and smoothness are reliable at centimeter scale.
void geometric_init(const PartLayout& layout, double* params, double radius, Rng& rng);

/// Kaiming init for the pose head; last layer ~ N(0, 1e-5) so conditioning
/// starts inert and does not destroy the geometric initialization.
void head_init(const PartLayout& layout, double* params, Rng& rng);

struct HeadFwd {
  VecX a0, z0, out;
};

void head_forward(const TrunkEval& te, const VecX& z, HeadFwd& f);

struct HeadGrads {
  MatX W0bar, W1bar;
  VecX b0bar, b1bar;
  void init(const PartLayout& layout);
};

void head_backward(const TrunkEval& te, const HeadFwd& f, const VecX& z,
                   const VecX& out_bar, HeadGrads& g);

struct TrunkFwd {
  MatX x0v, x0t;
  std::array<MatX, 5> av, at;  // pre-activations
  std::array<MatX, 4> zv, zt;  // post-activations (z0 includes the head term)
  MatX skipv, skipt;           // assembled input of the skip layer
  bool with_tangents = false;

  int points() const { return int(x0v.cols()); }
  const MatX& value() const { return av[4]; }     // 1 x P
  const MatX& tangents() const { return at[4]; }  // 1 x 3P
};

/// Forward pass over a batch. `head_out` may be null (treated as zero).
/// When `with_tangents` is false the tangent matrices are left empty.
void trunk_forward(const TrunkEval& te, const VecX* head_out, const MatX& Xv,
                   const MatX& Xt, TrunkFwd& f, bool with_tangents);

struct TrunkGrads {
  std::array<MatX, 5> Wbar;
  std::array<VecX, 5> bbar;
  VecX hbar;          // adjoint of the head output
  MatX xbarv, xbart;  // adjoints of the input jets

  void init(const TrunkSpec& spec);
  void zero_params();
};

/// Reverse pass: seeds are adjoints of the output value (1 x P) and output
/// tangents (1 x 3P). Accumulates parameter adjoints and writes input
/// adjoints for the chunk.
void trunk_backward(const TrunkEval& te, const TrunkFwd& f, const MatX& dbar_v,
                    const MatX& dbar_t, TrunkGrads& g);

/// Converts accumulated effective-weight adjoints into (V, g) adjoints of the
/// weight-normalized parameterization and adds everything into the flat
/// gradient vector of one part.
void accumulate_part_grads(const PartLayout& layout, const double* params,
                           const TrunkGrads& tg, const HeadGrads& hg, double* grad_base);

}  // namespace unif
