#include <doctest.h>

#include <cmath>

#include "spd/autograd.hpp"
#include "spd/gradcheck.hpp"
#include "support.hpp"

using namespace spd;
using spd::test::random_tensor;

TEST_SUITE("autograd") {
  TEST_CASE("elementwise op values") {
    Tape<double> t;
    const auto x = t.variable(Tensor<double>({3}, std::vector<double>{-1.0, 0.0, 2.0}));
    CHECK(relu(x).value().values() == std::vector<double>{0.0, 0.0, 2.0});
    CHECK(sigmoid(t.constant(Tensor<double>::scalar(0.0))).value().item() == 0.5);
    const auto big = sigmoid(t.constant(Tensor<double>({2}, std::vector<double>{-30.0, 30.0}))).value();
    CHECK(big[0] > 0.0);
    CHECK(big[1] < 1.0);
    const auto y = t.constant(Tensor<double>({3}, std::vector<double>{1.0, 2.0, 3.0}));
    CHECK(add(x, y).value().values() == std::vector<double>{0.0, 2.0, 5.0});
    CHECK(sub(x, y).value().values() == std::vector<double>{-2.0, -2.0, -1.0});
    CHECK(mul(x, y).value().values() == std::vector<double>{-1.0, 0.0, 6.0});
    CHECK(mul_scalar(y, 2.0).value().values() == std::vector<double>{2.0, 4.0, 6.0});
    CHECK(square(x).value().values() == std::vector<double>{1.0, 0.0, 4.0});
    CHECK(sum(y).value().item() == 6.0);
    CHECK(mean(y).value().item() == 2.0);
  }

  TEST_CASE("sigmoid stays finite and inside (0,1) for extreme inputs") {
    Tape<float> t;
    const auto s = sigmoid(t.constant(Tensor<float>({4}, std::vector<float>{-200.0f, -50.0f, 50.0f, 200.0f}))).value();
    for (float v : s.values()) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  TEST_CASE("concat_channels stacks along the channel axis") {
    Tape<double> t;
    const auto a = t.constant(Tensor<double>({1, 2, 2, 2}, 1.0));
    const auto b = t.constant(Tensor<double>({1, 3, 2, 2}, 2.0));
    const auto c = concat_channels(a, b).value();
    REQUIRE(c.shape() == Shape{1, 5, 2, 2});
    for (std::size_t ch = 0; ch < 5; ++ch) CHECK(c.at(0, ch, 1, 1) == (ch < 2 ? 1.0 : 2.0));
    CHECK_THROWS_AS(concat_channels(a, t.constant(Tensor<double>({1, 3, 2, 3}))), ShapeError);
  }

  TEST_CASE("shape mismatches are rejected") {
    Tape<double> t;
    const auto a = t.constant(Tensor<double>({2, 2}));
    const auto b = t.constant(Tensor<double>({4}));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(sub(a, b), ShapeError);
    CHECK_THROWS_AS(mul(a, b), ShapeError);
  }

  TEST_CASE("gradient of sum is all ones") {
    Tape<double> t;
    const auto p = t.variable(Tensor<double>({2, 3}, 0.3));
    const std::vector<Var<double>> wrt{p};
    const auto g = t.backward(sum(p), wrt);
    REQUIRE(g.size() == 1);
    CHECK(g[0] == Tensor<double>({2, 3}, 1.0));
  }

  TEST_CASE("gradient of sum of squares at [1,2] is [2,4]") {
    Tape<double> t;
    const auto p = t.variable(Tensor<double>({2}, std::vector<double>{1.0, 2.0}));
    const std::vector<Var<double>> wrt{p};
    CHECK(t.backward(sum(square(p)), wrt)[0].values() == std::vector<double>{2.0, 4.0});
  }

  TEST_CASE("backward rejects a non-scalar output") {
    Tape<double> t;
    const auto p = t.variable(Tensor<double>({2}, 1.0));
    const std::vector<Var<double>> wrt{p};
    CHECK_THROWS_AS(t.backward(square(p), wrt), ShapeError);
  }

  TEST_CASE("gradients are shaped like their variables, constants get zeros") {
    Tape<double> t;
    CounterRng rng(1);
    const auto x = t.variable(random_tensor({1, 2, 5, 5}, rng));
    const auto k = t.variable(random_tensor({3, 2, 3, 3}, rng));
    const auto b = t.variable(random_tensor({3}, rng));
    const auto c = t.constant(random_tensor({4}, rng));
    const std::vector<Var<double>> wrt{x, k, b, c};
    const auto g = t.backward(mean(conv2d(x, k, b, {1, 1})), wrt);
    for (std::size_t i = 0; i < wrt.size(); ++i) CHECK(g[i].shape() == wrt[i].shape());
    CHECK(g[3] == Tensor<double>({4}));
    // d mean / d bias_o = H*W / (C*H*W)
    for (double v : g[2].values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }

  TEST_CASE("a variable used twice accumulates both contributions") {
    Tape<double> t;
    const auto p = t.variable(Tensor<double>({2}, std::vector<double>{3.0, -1.0}));
    const std::vector<Var<double>> wrt{p};
    // sum(p*p + p) -> 2p + 1
    CHECK(t.backward(sum(add(mul(p, p), p)), wrt)[0].values() == std::vector<double>{7.0, -1.0});
  }

  TEST_CASE("conv2d composed with mean passes the finite-difference check") {
    CounterRng rng(17);
    const double err = gradcheck([](Tape<double>&, const auto& v) { return mean(conv2d(v[0], v[1], v[2], {1, 0})); },
                                 {random_tensor({1, 1, 5, 5}, rng), random_tensor({1, 1, 3, 3}, rng),
                                  random_tensor({1}, rng)});
    CHECK(err < 1e-4);
  }

  TEST_CASE("the full gradient suite passes") {
    for (const auto& c : run_gradcheck_suite()) {
      INFO(c.name << " err " << c.max_rel_error);
      CHECK(c.passed());
    }
  }

  TEST_CASE("gradcheck notices a wrong gradient") {
    // Records x*x but claims the gradient is x, off by a factor two.
    const ScalarFn broken = [](Tape<double>& t, const std::vector<Var<double>>& v) {
      const Var<double> x = v[0];
      Tensor<double> y(x.value().shape());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.value()[i] * x.value()[i];
      const Var<double> out = t.record(std::move(y), {x}, [x](Tape<double>& tp, const Tensor<double>& g) {
        if (Tensor<double>* s = tp.grad_slot(x)) {
          for (std::size_t i = 0; i < s->size(); ++i) (*s)[i] += g[i] * x.value()[i];
        }
      });
      return sum(out);
    };
    CounterRng rng(2);
    CHECK(gradcheck(broken, {random_tensor({4}, rng, 0.5, 1.0)}) > 0.4);
  }
}
