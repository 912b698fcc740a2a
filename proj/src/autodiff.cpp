#include "unif/autodiff.hpp"

namespace unif::ad {

thread_local Tape* Tape::active_ = nullptr;

namespace {

// Adjoint propagation for y = f(a, b) on jets. With y.v = f(a.v, b.v) and
// y.t_k = fa * a.t_k + fb * b.t_k, the chain rule over all four stored
// components of each jet gives:
//   abar.v   += ybar.v * fa + sum_k ybar.t_k * (faa * a.t_k + fab * b.t_k)
//   abar.t_k += ybar.t_k * fa
// and symmetrically for b. Unary ops are the special case fb = 0.
inline void prop1(Node& a, const Node& y, double d1, double d2) {
  double s = 0.0;
  for (int k = 0; k < 3; ++k) {
    a.adj.t[k] += y.adj.t[k] * d1;
    s += y.adj.t[k] * a.val.t[k];
  }
  a.adj.v += y.adj.v * d1 + d2 * s;
}

inline void prop2(Node& a, Node& b, const Node& y, double fa, double fb,
                  double faa, double fab, double fbb) {
  double sa = 0.0, sb = 0.0;
  for (int k = 0; k < 3; ++k) {
    a.adj.t[k] += y.adj.t[k] * fa;
    b.adj.t[k] += y.adj.t[k] * fb;
    sa += y.adj.t[k] * a.val.t[k];
    sb += y.adj.t[k] * b.val.t[k];
  }
  a.adj.v += y.adj.v * fa + faa * sa + fab * sb;
  b.adj.v += y.adj.v * fb + fab * sa + fbb * sb;
}

}  // namespace

void Tape::backward(size_t hi, size_t lo) {
  for (size_t i = hi; i-- > lo;) {
    Node& n = nodes_[i];
    if (n.op == Op::kLeaf) continue;
    if (n.adj.v == 0.0 && n.adj.t[0] == 0.0 && n.adj.t[1] == 0.0 &&
        n.adj.t[2] == 0.0) {
      continue;
    }
    Node& a = nodes_[n.a];
    switch (n.op) {
      case Op::kAdd:
        prop2(a, nodes_[n.b], n, 1.0, 1.0, 0.0, 0.0, 0.0);
        break;
      case Op::kSub:
        prop2(a, nodes_[n.b], n, 1.0, -1.0, 0.0, 0.0, 0.0);
        break;
      case Op::kMul:
        prop2(a, nodes_[n.b], n, nodes_[n.b].val.v, a.val.v, 0.0, 1.0, 0.0);
        break;
      case Op::kDiv: {
        Node& b = nodes_[n.b];
        const double inv = 1.0 / b.val.v;
        const double fa = inv;
        const double fb = -n.val.v * inv;             // -a/b^2
        const double fab = -inv * inv;                // -1/b^2
        const double fbb = 2.0 * n.val.v * inv * inv; // 2a/b^3
        prop2(a, b, n, fa, fb, 0.0, fab, fbb);
        break;
      }
      case Op::kNeg:
        prop1(a, n, -1.0, 0.0);
        break;
      case Op::kAddC:
        prop1(a, n, 1.0, 0.0);
        break;
      case Op::kMulC:
        prop1(a, n, n.c, 0.0);
        break;
      case Op::kExp:
        prop1(a, n, n.val.v, n.val.v);
        break;
      case Op::kLog: {
        const double inv = 1.0 / a.val.v;
        prop1(a, n, inv, -inv * inv);
        break;
      }
      case Op::kSqrt: {
        const double d1 = 0.5 / n.val.v;
        prop1(a, n, d1, -0.5 * d1 / a.val.v);
        break;
      }
      case Op::kAbs: {
        const double sg = a.val.v > 0.0 ? 1.0 : (a.val.v < 0.0 ? -1.0 : 0.0);
        prop1(a, n, sg, 0.0);
        break;
      }
      case Op::kSin:
        prop1(a, n, std::cos(a.val.v), -std::sin(a.val.v));
        break;
      case Op::kCos:
        prop1(a, n, -std::sin(a.val.v), -std::cos(a.val.v));
        break;
      case Op::kMin: {
        Node& b = nodes_[n.b];
        if (a.val.v <= b.val.v) prop1(a, n, 1.0, 0.0);
        else prop1(b, n, 1.0, 0.0);
        break;
      }
      case Op::kMax: {
        Node& b = nodes_[n.b];
        if (a.val.v >= b.val.v) prop1(a, n, 1.0, 0.0);
        else prop1(b, n, 1.0, 0.0);
        break;
      }
      case Op::kClamp01: {
        const double inside = (a.val.v >= 0.0 && a.val.v <= 1.0) ? 1.0 : 0.0;
        prop1(a, n, inside, 0.0);
        break;
      }
      case Op::kLeaf:
        break;
    }
  }
}

}  // namespace unif::ad
