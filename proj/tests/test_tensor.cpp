#include <doctest.h>

#include <cmath>

#include "spd/conv.hpp"
#include "spd/parallel.hpp"
#include "support.hpp"

using namespace spd;
using spd::test::max_abs_diff;
using spd::test::random_tensor;

namespace {

// Direct sliding-window cross-correlation with zero padding.
Tensor<double> direct_conv(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b,
                           std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = k.dim(0), ks = k.dim(2);
  const std::size_t ho = (h + 2 * pad - ks) / stride + 1, wo = (w + 2 * pad - ks) / stride + 1;
  Tensor<double> y({n, cout, ho, wo});
  for (std::size_t b_ = 0; b_ < n; ++b_)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < ks; ++u)
              for (std::size_t v = 0; v < ks; ++v) {
                const long yy = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                acc += x.at(b_, c, yy, xx) * k.at(o, c, u, v);
              }
          y.at(b_, o, i, j) = acc;
        }
  return y;
}

// Scatter-add: every input pixel stamps its kernel onto the output grid.
Tensor<double> scatter_transpose(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b,
                                 std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = k.dim(1), ks = k.dim(2);
  const std::size_t hf = (h - 1) * stride + ks, wf = (w - 1) * stride + ks;
  Tensor<double> full({n, cout, hf, wf});
  for (std::size_t b_ = 0; b_ < n; ++b_)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t u = 0; u < ks; ++u)
              for (std::size_t v = 0; v < ks; ++v) full.at(b_, o, i * stride + u, j * stride + v) += x.at(b_, c, i, j) * k.at(c, o, u, v);
  Tensor<double> y({n, cout, hf - 2 * pad, wf - 2 * pad});
  for (std::size_t b_ = 0; b_ < n; ++b_)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < y.dim(2); ++i)
        for (std::size_t j = 0; j < y.dim(3); ++j) y.at(b_, o, i, j) = full.at(b_, o, i + pad, j + pad) + b[o];
  return y;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("tensor construction and shape checks") {
    Tensor<float> t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK(numel({}) == 1);
    CHECK_THROWS_AS(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(t.item(), ShapeError);
    CHECK(Tensor<float>::scalar(3.5f).item() == 3.5f);
    CHECK(to_string({1, 2, 3}) == "[1x2x3]");
    const Tensor<double> d = Tensor<float>({2}, std::vector<float>{1.5f, -2.0f}).cast<double>();
    CHECK(d[0] == 1.5);
    CHECK(d[1] == -2.0);
  }

  TEST_CASE("conv2d with a 1x1 identity kernel leaves the input unchanged") {
    const Tensor<double> x({1, 1, 3, 3}, 1.0);
    const Tensor<double> y = conv2d(x, Tensor<double>({1, 1, 1, 1}, 1.0), Tensor<double>({1}, 0.0), {1, 0});
    CHECK(y == x);
  }

  TEST_CASE("conv2d with a zero kernel outputs the bias everywhere") {
    CounterRng rng(3);
    const Tensor<double> x = random_tensor({2, 2, 5, 4}, rng);
    const Tensor<double> y = conv2d(x, Tensor<double>({1, 2, 3, 3}), Tensor<double>({1}, 0.75), {1, 1});
    CHECK(y.shape() == Shape{2, 1, 5, 4});
    for (double v : y.values()) CHECK(v == 0.75);
  }

  TEST_CASE("conv2d 3x3 average over a 4x4 ramp") {
    Tensor<double> x({1, 1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
    const Tensor<double> k({1, 1, 3, 3}, 1.0 / 9.0);
    const Tensor<double> b({1}, 0.0);
    const Tensor<double> y = conv2d(x, k, b, {1, 0});
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    // Window sums 45, 54, 81, 90 divided by 9.
    const double hand[4] = {5.0, 6.0, 9.0, 10.0};
    const Tensor<double> oracle = direct_conv(x, k, b, 1, 0);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(y[i] == doctest::Approx(hand[i]).epsilon(1e-14));
      CHECK(y[i] == doctest::Approx(oracle[i]).epsilon(1e-14));
    }
  }

  TEST_CASE("conv2d rejects bad geometry") {
    const Tensor<double> x({1, 2, 5, 5});
    CHECK_THROWS_AS(conv2d(x, Tensor<double>({1, 2, 2, 2}), Tensor<double>({1}), {1, 0}), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, Tensor<double>({1, 3, 3, 3}), Tensor<double>({1}), {1, 0}), ShapeError);
    CHECK_THROWS_AS(conv2d(x, Tensor<double>({2, 2, 3, 3}), Tensor<double>({1}), {1, 0}), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor<double>({1, 2, 2, 2}), Tensor<double>({1, 2, 5, 5}), Tensor<double>({1}), {1, 1}),
                    ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor<double>({2, 5, 5}), Tensor<double>({1, 2, 3, 3}), Tensor<double>({1}), {1, 0}),
                    ShapeError);
  }

  TEST_CASE("property: conv2d matches the sliding-window oracle on random geometry") {
    CounterRng rng(101);
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(3), cout = 1 + rng.below(3);
      const std::size_t k = 1 + 2 * rng.below(3), stride = 1 + rng.below(3), pad = rng.below(3);
      const std::size_t h = k + rng.below(6), w = k + rng.below(6);
      const auto x = random_tensor({n, cin, h, w}, rng);
      const auto kern = random_tensor({cout, cin, k, k}, rng);
      const auto b = random_tensor({cout}, rng);
      const auto y = conv2d(x, kern, b, {stride, pad});
      CHECK(y.dim(2) == (h + 2 * pad - k) / stride + 1);
      CHECK(y.dim(3) == (w + 2 * pad - k) / stride + 1);
      CHECK(max_abs_diff(y, direct_conv(x, kern, b, stride, pad)) < 1e-12);
    }
  }

  TEST_CASE("conv_transpose2d with a 1x1 identity kernel is the identity") {
    CounterRng rng(5);
    const auto x = random_tensor({2, 1, 3, 4}, rng);
    CHECK(conv_transpose2d(x, Tensor<double>({1, 1, 1, 1}, 1.0), Tensor<double>({1}), {1, 0}) == x);
  }

  TEST_CASE("conv_transpose2d k2 stride2 places disjoint copies") {
    const Tensor<double> x({1, 1, 2, 2}, 1.0);
    const Tensor<double> k({1, 1, 2, 2}, 1.0);
    const Tensor<double> b({1}, 0.0);
    const auto y = conv_transpose2d(x, k, b, {2, 0});
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    CHECK(y == scatter_transpose(x, k, b, 2, 0));
    for (double v : y.values()) CHECK(v == 1.0);
  }

  TEST_CASE("property: conv_transpose2d matches the scatter-add oracle") {
    CounterRng rng(202);
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(3), cout = 1 + rng.below(3);
      const std::size_t k = 1 + rng.below(4), stride = 1 + rng.below(3);
      const std::size_t pad = rng.below(k);
      const std::size_t h = 1 + rng.below(5), w = 1 + rng.below(5);
      if ((h - 1) * stride + k <= 2 * pad || (w - 1) * stride + k <= 2 * pad) continue;
      const auto x = random_tensor({n, cin, h, w}, rng);
      const auto kern = random_tensor({cin, cout, k, k}, rng);
      const auto b = random_tensor({cout}, rng);
      const auto y = conv_transpose2d(x, kern, b, {stride, pad});
      CHECK(y.dim(2) == (h - 1) * stride + k - 2 * pad);
      CHECK(max_abs_diff(y, scatter_transpose(x, kern, b, stride, pad)) < 1e-12);
    }
  }

  TEST_CASE("property: conv_transpose2d is the adjoint of conv2d") {
    CounterRng rng(303);
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(3);
      const std::size_t k = 1 + 2 * rng.below(2), stride = 1 + rng.below(2), pad = rng.below(2);
      const std::size_t h = k + 1 + rng.below(5), w = k + 1 + rng.below(5);
      const auto a = random_tensor({2, cin, h, w}, rng);
      const auto kern = random_tensor({cout, cin, k, k}, rng);
      const Tensor<double> zc({cout}), zi({cin});
      const auto fa = conv2d(a, kern, zc, {stride, pad});
      const auto bt = random_tensor(fa.shape(), rng);
      const auto back = conv_transpose2d(bt, kern, zi, {stride, pad});
      // Output of the transpose can be smaller than `a` when stride drops rows.
      Tensor<double> a_crop(back.shape());
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t i = 0; i < back.dim(2); ++i)
            for (std::size_t j = 0; j < back.dim(3); ++j) a_crop.at(n, c, i, j) = a.at(n, c, i, j);
      const auto fa_crop = conv2d(a_crop, kern, zc, {stride, pad});
      CHECK(dot(fa_crop, bt) == doctest::Approx(dot(a_crop, back)).epsilon(1e-10));
    }
  }

  TEST_CASE("property: conv2d is linear in its input") {
    CounterRng rng(404);
    for (int trial = 0; trial < 20; ++trial) {
      const auto a = random_tensor({1, 2, 6, 5}, rng);
      const auto b = random_tensor({1, 2, 6, 5}, rng);
      const auto k = random_tensor({3, 2, 3, 3}, rng);
      const Tensor<double> zero({3});
      const double al = rng.uniform(-2, 2), be = rng.uniform(-2, 2);
      Tensor<double> mix(a.shape());
      for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = al * a[i] + be * b[i];
      const auto lhs = conv2d(mix, k, zero, {2, 1});
      const auto ya = conv2d(a, k, zero, {2, 1}), yb = conv2d(b, k, zero, {2, 1});
      Tensor<double> rhs(lhs.shape());
      for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = al * ya[i] + be * yb[i];
      CHECK(max_abs_diff(lhs, rhs) < 1e-10);
    }
  }

  TEST_CASE("conv results do not depend on the thread count") {
    CounterRng rng(505);
    const Tensor<float> x = random_tensor({4, 3, 9, 9}, rng).cast<float>();
    const Tensor<float> k = random_tensor({5, 3, 3, 3}, rng).cast<float>();
    const Tensor<float> b = random_tensor({5}, rng).cast<float>();
    const auto run = [&] {
      const auto y = conv2d(x, k, b, {1, 1});
      Tensor<float> gx, gk, gb;
      conv2d_backward(x, k, y, {1, 1}, &gx, &gk, &gb);
      return std::vector<Tensor<float>>{y, gx, gk, gb};
    };
    set_num_threads(1);
    const auto serial = run();
    set_num_threads(3);
    const auto threaded = run();
    set_num_threads(1);
    CHECK(serial == threaded);
  }
}
