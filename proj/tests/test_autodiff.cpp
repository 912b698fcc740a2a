#include <doctest.h>

#include <cmath>

#include "unif/autodiff.hpp"
#include "test_util.hpp"

using namespace unif;
using namespace unif::ad;

namespace {

// Exercises every tape op. Same source instantiated for double, Jet3 and Var.
template <class S>
S crooked(const S& a, const S& b) {
  using std::abs;
  using std::cos;
  using std::exp;
  using std::log;
  using std::max;
  using std::min;
  using std::sin;
  using std::sqrt;
  S u = a * b * 0.3 + sin(a) / sqrt(b + 2.0);
  S v = exp(u * 0.5) - abs(a - b) * clamp01(a * 0.3);
  S w = min(v, cos(b) * 1.7) + max(a, b) / (b + 3.0) + log(b + 4.0) - (2.0 - a);
  return w * w + 0.25 * w;
}

}  // namespace

TEST_CASE("jet3 tangents match directional finite differences") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const double av = rng.uniform(-1.5, 1.5);
    const double bv = rng.uniform(-1.5, 1.5);
    const std::array<double, 3> ta{1.0, 0.5, -0.25};
    const std::array<double, 3> tb{0.0, 1.0, 0.75};
    const Jet3 y = crooked(Jet3(av, ta), Jet3(bv, tb));
    CHECK(y.v == doctest::Approx(crooked(av, bv)).epsilon(1e-12));
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      const double plus = crooked(av + h * ta[k], bv + h * tb[k]);
      const double minus = crooked(av - h * ta[k], bv - h * tb[k]);
      const double fd = (plus - minus) / (2.0 * h);
      CHECK(y.t[k] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("tape values agree with jet3 values") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const double av = rng.uniform(-1.5, 1.5);
    const double bv = rng.uniform(-1.5, 1.5);
    const Jet a_jet{av, {1.0, 0.5, -0.25}};
    const Jet b_jet{bv, {0.0, 1.0, 0.75}};
    Tape tape;
    TapeScope scope(tape);
    Var a(tape, tape.leaf(a_jet));
    Var b(tape, tape.leaf(b_jet));
    const Var y = crooked(a, b);
    const Jet3 yj = crooked(Jet3(av, a_jet.t), Jet3(bv, b_jet.t));
    CHECK(y.jet().v == doctest::Approx(yj.v).epsilon(1e-13));
    for (int k = 0; k < 3; ++k)
      CHECK(y.jet().t[k] == doctest::Approx(yj.t[k]).epsilon(1e-12));
  }
}

TEST_CASE("tape adjoints match finite differences, including tangent seeds") {
  // Seeding adjoints on the OUTPUT TANGENTS exercises the second-derivative
  // terms of every op: L depends on leaf values through y.t as well.
  Rng rng(13);
  const Jet seed{0.7, {0.3, -0.8, 0.45}};
  const std::array<double, 3> ta{1.0, 0.5, -0.25};
  const std::array<double, 3> tb{0.0, 1.0, 0.75};

  auto objective = [&](double av, double bv) {
    const Jet3 y = crooked(Jet3(av, ta), Jet3(bv, tb));
    double L = seed.v * y.v;
    for (int k = 0; k < 3; ++k) L += seed.t[k] * y.t[k];
    return L;
  };

  for (int trial = 0; trial < 30; ++trial) {
    const double av = rng.uniform(-1.5, 1.5);
    const double bv = rng.uniform(-1.5, 1.5);
    Tape tape;
    TapeScope scope(tape);
    Var a(tape, tape.leaf(Jet{av, ta}));
    Var b(tape, tape.leaf(Jet{bv, tb}));
    const Var y = crooked(a, b);
    tape.seed_adjoint(y.idx, seed);
    tape.backward(tape.size(), 0);

    const double h = 1e-6;
    const double fda = (objective(av + h, bv) - objective(av - h, bv)) / (2 * h);
    const double fdb = (objective(av, bv + h) - objective(av, bv - h)) / (2 * h);
    CHECK(tape.adjoint(a.idx).v == doctest::Approx(fda).epsilon(2e-5));
    CHECK(tape.adjoint(b.idx).v == doctest::Approx(fdb).epsilon(2e-5));
  }
}

TEST_CASE("segmented backward matches a single full sweep") {
  // The training engine sweeps the tape in two ranges with adjoint injection
  // in between; over a connected range boundary this must equal one sweep.
  Tape tape;
  TapeScope scope(tape);
  Var a(tape, tape.leaf(Jet{0.4, {1, 0, 0}}));
  Var b(tape, tape.leaf(Jet{-0.7, {0, 1, 0}}));
  Var mid = a * b + sin(a);
  const size_t cut = tape.size();
  Var out = exp(mid * 0.3) - b;
  tape.seed_adjoint(out.idx, Jet{1.0, {0.2, 0.1, -0.4}});
  tape.backward(tape.size(), cut);
  tape.backward(cut, 0);
  const Jet ga = tape.adjoint(a.idx);

  Tape tape2;
  TapeScope scope2(tape2);
  Var a2(tape2, tape2.leaf(Jet{0.4, {1, 0, 0}}));
  Var b2(tape2, tape2.leaf(Jet{-0.7, {0, 1, 0}}));
  Var out2 = exp((a2 * b2 + sin(a2)) * 0.3) - b2;
  tape2.seed_adjoint(out2.idx, Jet{1.0, {0.2, 0.1, -0.4}});
  tape2.backward(tape2.size(), 0);
  CHECK(ga.v == tape2.adjoint(a2.idx).v);
  for (int k = 0; k < 3; ++k) CHECK(ga.t[k] == tape2.adjoint(a2.idx).t[k]);
}
