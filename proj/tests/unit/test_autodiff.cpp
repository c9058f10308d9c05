#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "spikekd/autodiff.hpp"

using namespace spikekd;
using namespace spikekd::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -3.0, double hi = 3.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

// Scalarize an op's output with fixed random weights so every output entry matters.
Var weighted_sum(Tape& tape, const Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Var w = tape.constant(random_tensor(y.shape(), rng));
  return sum(mul(w, y));
}

struct UnaryCase {
  std::string name;
  Shape shape;
  std::function<Var(Tape&, const Var&)> op;
};

}  // namespace

TEST_CASE("forward examples") {
  Tape tape;
  SUBCASE("softmax of zeros is uniform") {
    Var x = tape.leaf(Tensor::vector({0, 0, 0}));
    Var p = softmax(x, 1.0);
    for (double v : p.value().data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("min-equalize keeps the smaller value on both slots") {
    Var x = tape.leaf(Tensor::vector({2.0, 5.0}));
    std::vector<std::size_t> r0{0}, c0{0}, c1{1};
    Var m = minimum(gather(x, r0, c0), gather(x, r0, c1));
    Var y = scatter(scatter(x, r0, c0, m), r0, c1, m);
    CHECK(y.value()[0] == 2.0);
    CHECK(y.value()[1] == 2.0);
  }
  SUBCASE("identity matmul") {
    Var eye = tape.leaf(Tensor::matrix(2, 2, {1, 0, 0, 1}));
    Var b = tape.leaf(Tensor::matrix(2, 1, {3, 4}));
    Var y = matmul(eye, b);
    CHECK(y.value() == Tensor::matrix(2, 1, {3, 4}));
  }
  SUBCASE("shape mismatch reports both shapes") {
    Var a = tape.leaf(Tensor::matrix(2, 3, std::vector<double>(6, 1.0)));
    Var b = tape.leaf(Tensor::matrix(2, 2, std::vector<double>(4, 1.0)));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3] x [2x2]"), std::invalid_argument);
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  }
}

TEST_CASE("softmax is stable for large logits") {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(2, 3, {1000, 1001, 999, -1000, -1000, -1000}));
  Var p = softmax(x, 1.0);
  CHECK(p.value().all_finite());
  Var lp = log_softmax(x, 2.0);
  CHECK(lp.value().all_finite());
  CHECK(std::exp(lp.value().at(1, 0)) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("backward basics") {
  SUBCASE("d(x^2)/dx at 3 is 6") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0));
    Var y = mul(x, x);
    CHECK(tape.backward(y)[x].item() == 6.0);
  }
  SUBCASE("stop_gradient leaves values intact and blocks gradient") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1.5, -2.0}));
    Var sx = stop_gradient(x);
    CHECK(sx.value() == x.value());
    Var y = sum(mul(sx, sx));
    Gradients g = tape.backward(y);
    CHECK(g[x] == Tensor::vector({0.0, 0.0}));
    CHECK_FALSE(g.reached(x));
  }
  SUBCASE("non-scalar output rejected") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
  }
  SUBCASE("tie in minimum splits the gradient") {
    Tape tape;
    Var a = tape.leaf(Tensor::vector({1.0}));
    Var b = tape.leaf(Tensor::vector({1.0}));
    Gradients g = tape.backward(sum(minimum(a, b)));
    CHECK(g[a][0] == 0.5);
    CHECK(g[b][0] == 0.5);
  }
}

TEST_CASE("softmax-log chain matches finite differences") {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({2, 4}, rng);
  // Negative entropy: softmax times its own log.
  auto r = grad_check([](Tape&, const Var& v) { return sum(mul(softmax(v, 1.7), log_softmax(v, 1.7))); }, x, 1e-5);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("grad_check examples") {
  std::mt19937_64 rng(3);
  SUBCASE("sum of squares") {
    const Tensor x = random_tensor({5}, rng);
    auto r = grad_check([](Tape&, const Var& v) { return sum(mul(v, v)); }, x, 1e-5);
    CHECK(r.max_rel_error < 1e-7);
  }
  SUBCASE("constant function") {
    const Tensor x = random_tensor({4}, rng);
    auto r = grad_check([](Tape& t, const Var&) { return t.constant(Tensor::scalar(2.5)); }, x, 1e-5);
    for (double v : r.analytic.data()) CHECK(v == 0.0);
    for (double v : r.numeric.data()) CHECK(std::abs(v) < 1e-9);
  }
  SUBCASE("KL to a fixed distribution") {
    const Tensor x = random_tensor({6}, rng);
    const Tensor p = Tensor::vector({0.1, 0.2, 0.3, 0.15, 0.05, 0.2});
    auto r = grad_check(
        [&p](Tape& t, const Var& v) {
          Tensor logp(p.shape());
          for (std::size_t i = 0; i < p.size(); ++i) logp[i] = std::log(p[i]);
          return sum(mul(t.constant(p), sub(t.constant(logp), log_softmax(v, 1.0))));
        },
        x, 1e-5);
    CHECK(r.max_rel_error < 1e-5);
  }
  SUBCASE("non-finite value rejected") {
    const Tensor x = Tensor::vector({1.0});
    CHECK_THROWS_AS(grad_check([](Tape& t, const Var&) { return t.constant(Tensor::scalar(NAN)); }, x, 1e-5),
                    std::domain_error);
  }
}

TEST_CASE("every primitive agrees with central differences") {
  const std::vector<UnaryCase> cases = {
      {"matmul-left", {3, 4}, [](Tape& t, const Var& x) {
         std::mt19937_64 r(1);
         return matmul(x, t.constant(random_tensor({4, 2}, r)));
       }},
      {"matmul-right", {4, 2}, [](Tape& t, const Var& x) {
         std::mt19937_64 r(2);
         return matmul(t.constant(random_tensor({3, 4}, r)), x);
       }},
      {"add", {2, 3}, [](Tape& t, const Var& x) {
         std::mt19937_64 r(3);
         return add(x, t.constant(random_tensor({2, 3}, r)));
       }},
      {"sub", {2, 3}, [](Tape& t, const Var& x) {
         std::mt19937_64 r(4);
         return sub(t.constant(random_tensor({2, 3}, r)), x);
       }},
      {"mul", {2, 3}, [](Tape& t, const Var& x) {
         std::mt19937_64 r(5);
         return mul(x, t.constant(random_tensor({2, 3}, r)));
       }},
      {"mul-self", {5}, [](Tape&, const Var& x) { return mul(x, x); }},
      {"scale", {4}, [](Tape&, const Var& x) { return scale(x, -1.7); }},
      {"add_scalar", {4}, [](Tape&, const Var& x) { return mul(add_scalar(x, 0.3), x); }},
      {"add_row-bias", {3}, [](Tape& t, const Var& x) {
         std::mt19937_64 r(6);
         return add_row(t.constant(random_tensor({2, 3}, r)), x);
       }},
      {"add_row-matrix", {2, 3}, [](Tape& t, const Var& x) {
         std::mt19937_64 r(7);
         return add_row(x, t.constant(random_tensor({3}, r)));
       }},
      {"relu", {8}, [](Tape&, const Var& x) { return relu(x); }},
      {"softmax", {3, 4}, [](Tape&, const Var& x) { return softmax(x, 1.0); }},
      {"softmax-tau", {2, 5}, [](Tape&, const Var& x) { return softmax(x, 4.0); }},
      {"log_softmax", {3, 4}, [](Tape&, const Var& x) { return log_softmax(x, 0.7); }},
      {"sum", {2, 3}, [](Tape&, const Var& x) { return mul(sum(x), sum(x)); }},
      {"mean", {2, 3}, [](Tape&, const Var& x) { return mul(mean(x), mean(x)); }},
      {"sum_axis0", {3, 4}, [](Tape&, const Var& x) { return sum_axis(x, 0); }},
      {"sum_axis1", {3, 4}, [](Tape&, const Var& x) { return sum_axis(x, 1); }},
      {"mean_axis", {3, 4}, [](Tape&, const Var& x) { return mean_axis(x, 1); }},
      {"l2_norm", {6}, [](Tape&, const Var& x) { return l2_norm(x); }},
      {"dot", {6}, [](Tape& t, const Var& x) {
         std::mt19937_64 r(8);
         return dot(x, t.constant(random_tensor({6}, r)));
       }},
      {"gather", {3, 4}, [](Tape&, const Var& x) {
         std::vector<std::size_t> rows{0, 1, 2, 2}, cols{3, 0, 1, 2};
         return gather(x, rows, cols);
       }},
      {"scatter", {3, 4}, [](Tape&, const Var& x) {
         std::vector<std::size_t> rows{0, 2}, cols{1, 3}, r2{1, 1}, c2{0, 1};
         return scatter(x, rows, cols, gather(x, r2, c2));
       }},
      {"minimum", {6}, [](Tape& t, const Var& x) {
         std::mt19937_64 r(9);
         return minimum(x, t.constant(random_tensor({6}, r)));
       }},
  };
  std::mt19937_64 rng(2024);
  for (const auto& c : cases) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const Tensor x = random_tensor(c.shape, rng);
      const std::uint64_t wseed = rng();
      auto r = grad_check([&](Tape& t, const Var& v) { return weighted_sum(t, c.op(t, v), wseed); }, x, 1e-5);
      worst = std::max(worst, r.max_rel_error);
    }
    INFO(c.name);
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("softmax rows are probability vectors") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    Var p = softmax(tape.leaf(random_tensor({4, 7}, rng, -30, 30)), 1.3);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (double v : p.value().row(r)) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("repeated backward equals independent runs") {
  std::mt19937_64 rng(8);
  const Tensor w = random_tensor({3, 4}, rng);
  const Tensor xin = random_tensor({2, 3}, rng);
  auto build = [&](Tape& t, Var& wv) {
    wv = t.leaf(w);
    return softmax(matmul(t.constant(xin), wv), 1.0);
  };
  Tape shared;
  Var ws;
  Var ys = build(shared, ws);
  std::vector<std::size_t> r0{0}, r1{1}, c2{2}, c0{0};
  Var out_a = sum(gather(ys, r0, c2));
  Var out_b = sum(gather(ys, r1, c0));
  const Tensor ga = shared.backward(out_a)[ws];
  const Tensor gb = shared.backward(out_b)[ws];

  Tape ta, tb;
  Var wa, wb;
  Var ya = build(ta, wa);
  Var yb = build(tb, wb);
  CHECK(ta.backward(sum(gather(ya, r0, c2)))[wa] == ga);
  CHECK(tb.backward(sum(gather(yb, r1, c0)))[wb] == gb);
}
