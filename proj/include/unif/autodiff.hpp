#pragma once

// Differentiation engine used by the deformation pipeline and the loss
// assembly. Scalars carry the value together with three spatial tangents
// (derivatives w.r.t. the global query point), so a forward pass yields both
// d and grad_x d. The tape then runs reverse accumulation over these jets,
// which produces parameter gradients of losses that themselves contain
// grad_x d (the mixed d^2 f / dx dtheta terms).
//
// Two scalar types share the same formulas via templates:
//   Jet3 - forward-only jet, no tape (cheap value+gradient evaluation)
//   Var  - handle to a tape node (training path with parameter adjoints)

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <type_traits>
#include <vector>

#include "unif/types.hpp"

namespace unif::ad {

struct Jet {
  double v = 0.0;
  std::array<double, 3> t{0.0, 0.0, 0.0};
};

// ---------------------------------------------------------------------------
// Jet3: plain forward jet.
// ---------------------------------------------------------------------------

struct Jet3 {
  double v = 0.0;
  std::array<double, 3> t{0.0, 0.0, 0.0};

  Jet3() = default;
  Jet3(double value) : v(value) {}  // NOLINT: implicit lift of constants
  Jet3(double value, int dir) : v(value) { t[dir] = 1.0; }
  Jet3(double value, const std::array<double, 3>& tan) : v(value), t(tan) {}

  Vec3 tangent() const { return Vec3(t[0], t[1], t[2]); }
};

inline Jet3 operator+(const Jet3& a, const Jet3& b) {
  return {a.v + b.v, {a.t[0] + b.t[0], a.t[1] + b.t[1], a.t[2] + b.t[2]}};
}
inline Jet3 operator-(const Jet3& a, const Jet3& b) {
  return {a.v - b.v, {a.t[0] - b.t[0], a.t[1] - b.t[1], a.t[2] - b.t[2]}};
}
inline Jet3 operator-(const Jet3& a) { return {-a.v, {-a.t[0], -a.t[1], -a.t[2]}}; }
inline Jet3 operator*(const Jet3& a, const Jet3& b) {
  return {a.v * b.v,
          {a.t[0] * b.v + a.v * b.t[0], a.t[1] * b.v + a.v * b.t[1],
           a.t[2] * b.v + a.v * b.t[2]}};
}
inline Jet3 operator/(const Jet3& a, const Jet3& b) {
  const double inv = 1.0 / b.v;
  const double q = a.v * inv;
  return {q,
          {(a.t[0] - q * b.t[0]) * inv, (a.t[1] - q * b.t[1]) * inv,
           (a.t[2] - q * b.t[2]) * inv}};
}
inline Jet3& operator+=(Jet3& a, const Jet3& b) { return a = a + b; }
inline Jet3& operator-=(Jet3& a, const Jet3& b) { return a = a - b; }

inline Jet3 chain(double fv, double dfv, const Jet3& a) {
  return {fv, {dfv * a.t[0], dfv * a.t[1], dfv * a.t[2]}};
}
inline Jet3 exp(const Jet3& a) {
  const double e = std::exp(a.v);
  return chain(e, e, a);
}
inline Jet3 log(const Jet3& a) { return chain(std::log(a.v), 1.0 / a.v, a); }
inline Jet3 sqrt(const Jet3& a) {
  const double s = std::sqrt(a.v);
  return chain(s, 0.5 / s, a);
}
inline Jet3 abs(const Jet3& a) {
  const double sg = a.v > 0.0 ? 1.0 : (a.v < 0.0 ? -1.0 : 0.0);
  return chain(std::fabs(a.v), sg, a);
}
inline Jet3 sin(const Jet3& a) { return chain(std::sin(a.v), std::cos(a.v), a); }
inline Jet3 cos(const Jet3& a) { return chain(std::cos(a.v), -std::sin(a.v), a); }
inline Jet3 clamp01(const Jet3& a) {
  if (a.v < 0.0) return Jet3(0.0);
  if (a.v > 1.0) return Jet3(1.0);
  return a;
}
inline Jet3 min(const Jet3& a, const Jet3& b) { return a.v <= b.v ? a : b; }
inline Jet3 max(const Jet3& a, const Jet3& b) { return a.v >= b.v ? a : b; }
inline double value_of(const Jet3& a) { return a.v; }
inline double value_of(double a) { return a; }
inline double clamp01(double a) { return a < 0.0 ? 0.0 : (a > 1.0 ? 1.0 : a); }

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kAddC,
  kMulC,
  kExp,
  kLog,
  kSqrt,
  kAbs,
  kSin,
  kCos,
  kMin,
  kMax,
  kClamp01,
};

struct Node {
  Jet val;
  Jet adj;
  int32_t a = -1;
  int32_t b = -1;
  Op op = Op::kLeaf;
  double c = 0.0;
};

class Tape {
 public:
  Tape() { nodes_.reserve(1 << 16); }

  int leaf(const Jet& v) {
    nodes_.push_back(Node{v, Jet{}, -1, -1, Op::kLeaf, 0.0});
    return int(nodes_.size()) - 1;
  }
  int leaf(double v) { return leaf(Jet{v, {0, 0, 0}}); }

  int emit(Op op, int a, int b, double c, const Jet& val) {
    nodes_.push_back(Node{val, Jet{}, a, b, op, c});
    return int(nodes_.size()) - 1;
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  const Jet& value(int i) const { return nodes_[i].val; }
  const Jet& adjoint(int i) const { return nodes_[i].adj; }

  void seed_adjoint(int i, const Jet& a) {
    Node& n = nodes_[i];
    n.adj.v += a.v;
    for (int k = 0; k < 3; ++k) n.adj.t[k] += a.t[k];
  }

  /// Reverse sweep over node indices [lo, hi). Parents must lie above their
  /// children, which holds by construction of an append-only tape.
  void backward(size_t hi, size_t lo);

 private:
  std::vector<Node> nodes_;

  friend class TapeScope;
  static thread_local Tape* active_;

 public:
  static Tape* active() { return active_; }
};

/// Activates a tape for the current thread so that Var(double) constants can
/// attach to it.
class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(Tape::active_) { Tape::active_ = &t; }
  ~TapeScope() { Tape::active_ = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---------------------------------------------------------------------------
// Var: value-semantic handle to a tape node.
// ---------------------------------------------------------------------------

struct Var {
  Tape* tape = nullptr;
  int idx = -1;

  Var() = default;
  Var(double v) {  // NOLINT: implicit lift of constants onto the active tape
    tape = Tape::active();
    assert(tape != nullptr && "Var constant requires an active TapeScope");
    idx = tape->leaf(v);
  }
  Var(Tape& t, int i) : tape(&t), idx(i) {}

  const Jet& jet() const { return tape->value(idx); }
  double value() const { return jet().v; }
};

namespace detail {
inline Var emit1(Op op, const Var& a, double fv, double c = 0.0) {
  const Jet& ja = a.jet();
  Jet out;
  out.v = fv;
  double d1;
  switch (op) {
    case Op::kNeg: d1 = -1.0; break;
    case Op::kAddC: d1 = 1.0; break;
    case Op::kMulC: d1 = c; break;
    case Op::kExp: d1 = fv; break;
    case Op::kLog: d1 = 1.0 / ja.v; break;
    case Op::kSqrt: d1 = 0.5 / fv; break;
    case Op::kAbs: d1 = ja.v > 0.0 ? 1.0 : (ja.v < 0.0 ? -1.0 : 0.0); break;
    case Op::kSin: d1 = std::cos(ja.v); break;
    case Op::kCos: d1 = -std::sin(ja.v); break;
    case Op::kClamp01: d1 = (ja.v >= 0.0 && ja.v <= 1.0) ? 1.0 : 0.0; break;
    default: d1 = 0.0; assert(false); break;
  }
  for (int k = 0; k < 3; ++k) out.t[k] = d1 * ja.t[k];
  return Var(*a.tape, a.tape->emit(op, a.idx, -1, c, out));
}

inline Var emit2(Op op, const Var& a, const Var& b) {
  const Jet& ja = a.jet();
  const Jet& jb = b.jet();
  Jet out;
  double da, db;
  switch (op) {
    case Op::kAdd: out.v = ja.v + jb.v; da = 1.0; db = 1.0; break;
    case Op::kSub: out.v = ja.v - jb.v; da = 1.0; db = -1.0; break;
    case Op::kMul: out.v = ja.v * jb.v; da = jb.v; db = ja.v; break;
    case Op::kDiv: {
      const double inv = 1.0 / jb.v;
      out.v = ja.v * inv;
      da = inv;
      db = -out.v * inv;
      break;
    }
    case Op::kMin:
      if (ja.v <= jb.v) { out.v = ja.v; da = 1.0; db = 0.0; }
      else { out.v = jb.v; da = 0.0; db = 1.0; }
      break;
    case Op::kMax:
      if (ja.v >= jb.v) { out.v = ja.v; da = 1.0; db = 0.0; }
      else { out.v = jb.v; da = 0.0; db = 1.0; }
      break;
    default: out.v = da = db = 0.0; assert(false); break;
  }
  for (int k = 0; k < 3; ++k) out.t[k] = da * ja.t[k] + db * jb.t[k];
  return Var(*a.tape, a.tape->emit(op, a.idx, b.idx, 0.0, out));
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::emit2(Op::kAdd, a, b); }
inline Var operator-(const Var& a, const Var& b) { return detail::emit2(Op::kSub, a, b); }
inline Var operator*(const Var& a, const Var& b) { return detail::emit2(Op::kMul, a, b); }
inline Var operator/(const Var& a, const Var& b) { return detail::emit2(Op::kDiv, a, b); }
inline Var operator-(const Var& a) { return detail::emit1(Op::kNeg, a, -a.value()); }
inline Var operator+(const Var& a, double c) { return detail::emit1(Op::kAddC, a, a.value() + c, c); }
inline Var operator+(double c, const Var& a) { return a + c; }
inline Var operator-(const Var& a, double c) { return a + (-c); }
inline Var operator-(double c, const Var& a) { return detail::emit1(Op::kMulC, a, -a.value(), -1.0) + c; }
inline Var operator*(const Var& a, double c) { return detail::emit1(Op::kMulC, a, a.value() * c, c); }
inline Var operator*(double c, const Var& a) { return a * c; }
inline Var operator/(const Var& a, double c) { return a * (1.0 / c); }
inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }

inline Var exp(const Var& a) { return detail::emit1(Op::kExp, a, std::exp(a.value())); }
inline Var log(const Var& a) { return detail::emit1(Op::kLog, a, std::log(a.value())); }
inline Var sqrt(const Var& a) { return detail::emit1(Op::kSqrt, a, std::sqrt(a.value())); }
inline Var abs(const Var& a) { return detail::emit1(Op::kAbs, a, std::fabs(a.value())); }
inline Var sin(const Var& a) { return detail::emit1(Op::kSin, a, std::sin(a.value())); }
inline Var cos(const Var& a) { return detail::emit1(Op::kCos, a, std::cos(a.value())); }
inline Var clamp01(const Var& a) {
  const double v = a.value();
  return detail::emit1(Op::kClamp01, a, v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
}
inline Var min(const Var& a, const Var& b) { return detail::emit2(Op::kMin, a, b); }
inline Var max(const Var& a, const Var& b) { return detail::emit2(Op::kMax, a, b); }
inline double value_of(const Var& a) { return a.value(); }

// ---------------------------------------------------------------------------
// V3: minimal 3-vector over a generic scalar. Public interfaces use Eigen
// vectors; this type only serves the scalar-generic pipelines.
// ---------------------------------------------------------------------------

template <class S>
struct V3 {
  S x, y, z;

  V3() = default;
  V3(const S& xx, const S& yy, const S& zz) : x(xx), y(yy), z(zz) {}

  static V3 lift(const Vec3& v) { return V3(S(v.x()), S(v.y()), S(v.z())); }
};

template <class S>
V3<S> operator+(const V3<S>& a, const V3<S>& b) {
  return {a.x + b.x, a.y + b.y, a.z + b.z};
}
template <class S>
V3<S> operator-(const V3<S>& a, const V3<S>& b) {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}
template <class S>
V3<S> operator*(const S& c, const V3<S>& v) {
  return {c * v.x, c * v.y, c * v.z};
}
template <class S>
  requires(!std::is_same_v<S, double>)
V3<S> operator*(double c, const V3<S>& v) {
  return {v.x * c, v.y * c, v.z * c};
}
template <class S>
S dot(const V3<S>& a, const V3<S>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}
template <class S>
V3<S> cross(const V3<S>& a, const V3<S>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
template <class S>
S norm(const V3<S>& a) {
  using std::sqrt;
  return sqrt(dot(a, a));
}

inline V3<double> to_v3(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
inline Vec3 to_vec3(const V3<double>& v) { return Vec3(v.x, v.y, v.z); }
inline Vec3 value_of(const V3<double>& v) { return Vec3(v.x, v.y, v.z); }
inline Vec3 value_of(const V3<Jet3>& v) { return Vec3(v.x.v, v.y.v, v.z.v); }
inline Vec3 value_of(const V3<Var>& v) {
  return Vec3(v.x.value(), v.y.value(), v.z.value());
}

}  // namespace unif::ad
