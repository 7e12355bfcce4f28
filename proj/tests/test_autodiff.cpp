#include <cmath>
#include <random>

#include "acn/autodiff.hpp"
#include "acn/chain.hpp"
#include "acn/error.hpp"
#include "acn/gradcheck.hpp"
#include "chain_on_tape.hpp"
#include "doctest.h"

using namespace acn;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = d(rng);
  return t;
}

}  // namespace

TEST_CASE("matmul values") {
  Tape t;
  Var a = t.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var eye = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  CHECK(matmul(a, eye).value() == Tensor({2, 2}, {1, 2, 3, 4}));

  Var row = t.constant(Tensor({1, 2}, {1, 2}));
  Var zeros = t.constant(Tensor({2, 1}, {0, 0}));
  CHECK(matmul(row, zeros).value() == Tensor({1, 1}, {0}));

  CHECK_THROWS_AS(matmul(a, row), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  std::mt19937_64 rng(3);
  Parameter a("a", random_tensor({3, 4}, rng));
  Parameter b("b", random_tensor({4, 2}, rng));
  Parameter* ps[] = {&a, &b};
  const double err = finite_diff_check(
      [&](Tape& t) { return sum(matmul(t.param(a), t.param(b))); }, ps, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("layer_norm") {
  Tape t;
  Var gamma = t.constant(Tensor({2}, {1, 1}));
  Var beta = t.constant(Tensor({2}, {0, 0}));

  SUBCASE("constant rows map to zero") {
    Var x = t.constant(Tensor({2, 2}, {5, 5, -3, -3}));
    for (double v : layer_norm(x, gamma, beta).value().data()) CHECK(v == 0.0);
  }
  SUBCASE("two-point row") {
    // mean 2, variance 1: outputs are -+1/sqrt(1 + eps)
    Var x = t.constant(Tensor({1, 2}, {1, 3}));
    const Tensor y = layer_norm(x, gamma, beta, 1e-5).value();
    const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y[0] == doctest::Approx(-expect).epsilon(1e-14));
    CHECK(y[1] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(1.0 - y[1] <= 0.5e-5);
  }
  SUBCASE("width mismatch") {
    Var x = t.constant(Tensor({1, 3}, {1, 2, 3}));
    CHECK_THROWS_AS(layer_norm(x, gamma, beta), DimensionError);
  }
}

TEST_CASE("layer_norm gradient matches finite differences") {
  std::mt19937_64 rng(5);
  Parameter x("x", random_tensor({3, 5}, rng));
  Parameter g("g", random_tensor({5}, rng));
  Parameter b("b", random_tensor({5}, rng));
  Parameter w("w", random_tensor({3, 5}, rng));
  Parameter* ps[] = {&x, &g, &b};
  const double err = finite_diff_check(
      [&](Tape& t) { return sum(mul(layer_norm(t.param(x), t.param(g), t.param(b)), t.constant(w.value))); },
      ps);
  CHECK(err < 1e-5);
}

TEST_CASE("gelu") {
  CHECK(gelu_value(0.0) == 0.0);
  CHECK(std::abs(gelu_value(10.0) - 10.0) < 1e-6);

  Parameter x("x", Tensor({4}, {-2.0, -0.5, 0.5, 2.0}));
  Parameter* ps[] = {&x};
  const double err =
      finite_diff_check([&](Tape& t) { return sum(gelu(t.param(x))); }, ps);
  CHECK(err < 1e-5);
}

TEST_CASE("softmax cross entropy") {
  Tape t;
  const int labels10[] = {3};
  Var uniform = t.constant(Tensor({1, 10}, 0.0));
  CHECK(softmax_cross_entropy(uniform, labels10).value().item() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-14));

  const int lab[] = {1};
  double previous = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    Var z = t.constant(Tensor({1, 3}, {0.0, margin, 0.0}));
    const double l = softmax_cross_entropy(z, lab).value().item();
    CHECK(l < previous);
    previous = l;
  }
  CHECK(previous < 1e-20);

  const int bad[] = {3};
  Var z = t.constant(Tensor({1, 3}, 0.0));
  CHECK_THROWS_AS(softmax_cross_entropy(z, bad), InputError);

  std::mt19937_64 rng(11);
  Parameter logits("z", random_tensor({3, 4}, rng));
  Parameter* ps[] = {&logits};
  const int targets[] = {0, 3, 2};
  CHECK(finite_diff_check(
            [&](Tape& tt) { return softmax_cross_entropy(tt.param(logits), targets); }, ps) <
        1e-5);
}

TEST_CASE("remaining ops pass finite differences") {
  std::mt19937_64 rng(17);
  Parameter x("x", random_tensor({6, 3}, rng));
  Parameter bias("b", random_tensor({3}, rng));
  Parameter probe("p", random_tensor({9, 2}, rng));
  Parameter* ps[] = {&x, &bias};
  const double err = finite_diff_check(
      [&](Tape& t) {
        Var h = add_bias(t.param(x), t.param(bias));
        Var tr = transpose_groups(h, 2);  // [6x3] -> [6x3] with groups of 3 rows
        Var r = reshape(tr, {9, 2});
        Var m = mean_rows(mul(r, t.constant(probe.value)), 3);
        Var s = sub(scale(m, 1.5), t.constant(Tensor({3, 2}, 0.25)));
        return add(sum(mul(s, s)), mse(t.param(x), t.constant(Tensor({6, 3}, 0.5))));
      },
      ps);
  CHECK(err < 1e-5);
}

TEST_CASE("transpose_groups layout") {
  Tape t;
  // two groups of [2 rows x 3 cols]
  Var x = t.constant(Tensor({4, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}));
  CHECK(transpose_groups(x, 2).value() ==
        Tensor({6, 2}, {1, 4, 2, 5, 3, 6, 7, 10, 8, 11, 9, 12}));
  CHECK(mean_rows(x, 2).value() == Tensor({2, 3}, {2.5, 3.5, 4.5, 8.5, 9.5, 10.5}));
}

TEST_CASE("backward examples") {
  SUBCASE("linear") {
    Parameter w("w", Tensor({1, 1}, {2.0}));
    Tape t;
    Var y = matmul(t.param(w), t.constant(Tensor({1, 1}, {3.0})));
    t.backward(y);
    CHECK(w.grad[0] == 3.0);
  }
  SUBCASE("product rule") {
    Parameter w1("w1", Tensor({1, 1}, {2.0}));
    Parameter w2("w2", Tensor({1, 1}, {3.0}));
    Tape t;
    Var y = matmul(matmul(t.param(w1), t.param(w2)), t.constant(Tensor({1, 1}, {1.0})));
    t.backward(y);
    CHECK(w1.grad[0] == 3.0);
    CHECK(w2.grad[0] == 2.0);
  }
  SUBCASE("non-scalar loss rejected") {
    Tape t;
    Parameter w("w", Tensor({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(t.backward(t.param(w)), InputError);
  }
  SUBCASE("1D ACN chain matches closed form") {
    chain::Chain1D c{{0.7, -0.4, 1.3}, 0.8};
    auto grads = testing::tape_chain_grads(chain::Arch::ACN, c);
    for (int i = 1; i <= 3; ++i) {
      const double expect = chain::grad_closed_form(chain::Arch::ACN, c, i);
      CHECK(std::abs(grads[static_cast<std::size_t>(i - 1)] - expect) <=
            1e-10 * std::max(1.0, std::abs(expect)));
    }
  }
}

TEST_CASE("gradients accumulate until zeroed") {
  std::mt19937_64 rng(23);
  Parameter a("a", random_tensor({2, 3}, rng));
  Parameter b("b", random_tensor({3, 2}, rng));
  auto run = [&] {
    Tape t;
    t.backward(sum(gelu(matmul(t.param(a), t.param(b)))));
  };
  a.zero_grad();
  b.zero_grad();
  run();
  const Tensor once = a.grad;
  run();
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(a.grad[i] == 2.0 * once[i]);
  a.zero_grad();
  for (double v : a.grad.data()) CHECK(v == 0.0);
}

TEST_CASE("detach blocks gradient flow") {
  Parameter w("w", Tensor({1, 1}, {2.0}));
  Parameter v("v", Tensor({1, 1}, {5.0}));
  Tape t;
  Var wx = matmul(t.param(w), t.constant(Tensor({1, 1}, {3.0})));
  Var d = t.detach(wx);
  CHECK(d.value() == wx.value());
  CHECK(t.parents(d.id()).empty());
  t.backward(matmul(d, t.param(v)));
  CHECK(w.grad[0] == 0.0);
  CHECK(v.grad[0] == 6.0);
}

TEST_CASE("detach soundness on a branching graph") {
  // Parameters reachable only through a detach receive zero gradient, others
  // are unaffected.
  std::mt19937_64 rng(29);
  Parameter a("a", random_tensor({2, 2}, rng));
  Parameter b("b", random_tensor({2, 2}, rng));
  Parameter c("c", random_tensor({2, 2}, rng));
  Tape t;
  Var pa = t.param(a), pb = t.param(b), pc = t.param(c);
  Var blocked = t.detach(gelu(matmul(pa, pb)));
  Var open = matmul(pb, pc);
  t.backward(sum(add(matmul(blocked, pc), open)));
  for (double g : a.grad.data()) CHECK(g == 0.0);
  bool any_b = false;
  for (double g : b.grad.data()) any_b = any_b || g != 0.0;
  CHECK(any_b);
}

TEST_CASE("non-finite values are surfaced") {
  Tape t;
  Var big = t.constant(Tensor({1, 1}, {1e200}));
  CHECK_THROWS_AS(matmul(big, big), NumericError);
  CHECK_THROWS_AS(t.constant(Tensor({1}, {std::nan("")})), NumericError);
}

TEST_CASE("finite_diff_check on a quadratic") {
  Parameter w("w", Tensor({1}, {3.0}));
  Parameter* ps[] = {&w};
  CHECK(finite_diff_check([&](Tape& t) { return mul(t.param(w), t.param(w)); }, ps, 1e-5) <
        1e-8);
  CHECK_THROWS_AS(
      finite_diff_check([&](Tape& t) { return mul(t.param(w), t.param(w)); }, ps, 0.0),
      InputError);
}

TEST_CASE("forward and backward are deterministic") {
  auto once = [] {
    std::mt19937_64 rng(31);
    Parameter a("a", random_tensor({4, 5}, rng));
    Parameter b("b", random_tensor({5, 3}, rng));
    Tape t;
    Var y = sum(gelu(matmul(t.param(a), t.param(b))));
    t.backward(y);
    return std::pair{y.value(), a.grad};
  };
  auto r1 = once();
  auto r2 = once();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}
