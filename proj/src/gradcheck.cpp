#include "spd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "spd/loss.hpp"
#include "spd/models.hpp"
#include "spd/rng.hpp"

namespace spd {

double gradcheck(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double h) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    analytic = tape.backward(f(tape, vars), vars);
  }
  const auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : xs) vars.push_back(tape.constant(t));
    return f(tape, vars).value().item();
  };
  std::vector<Tensor<double>> probe = inputs;
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    for (std::size_t i = 0; i < probe[k].size(); ++i) {
      const double x0 = probe[k][i];
      probe[k][i] = x0 + h;
      const double up = eval(probe);
      probe[k][i] = x0 - h;
      const double down = eval(probe);
      probe[k][i] = x0;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

namespace {

Tensor<double> random_tensor(Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Reduces an op output to a scalar through fixed random weights so that every
// output element contributes a distinct gradient.
Var<double> weighted_sum(Tape<double>& tape, Var<double> y, std::uint64_t seed) {
  CounterRng rng(seed, 99);
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

std::vector<Tensor<double>> network_params(const NetworkSpec& spec, CounterRng& rng) {
  std::vector<Tensor<double>> out;
  for (const auto& info : param_layout(spec)) {
    // Nonzero biases so every ReLU sees a generic operating point.
    const double bound = info.fan_in ? std::sqrt(6.0 / static_cast<double>(info.fan_in)) : 0.2;
    out.push_back(random_tensor(info.shape, rng, -bound, bound));
  }
  return out;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed) {
  constexpr double kPrimitiveTol = 1e-4;
  constexpr double kNetworkTol = 1e-3;
  CounterRng rng(seed);
  std::vector<GradCheckCase> cases;
  const auto check = [&](std::string name, const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double tol) {
    cases.push_back({std::move(name), gradcheck(f, inputs), tol});
  };
  const auto unary = [&](std::string name, Var<double> (*op)(Var<double>), Shape shape) {
    check(std::move(name), [=](Tape<double>& t, const auto& v) { return weighted_sum(t, op(v[0]), seed); },
          {random_tensor(shape, rng)}, kPrimitiveTol);
  };
  const auto binary = [&](std::string name, Var<double> (*op)(Var<double>, Var<double>), Shape shape) {
    check(std::move(name), [=](Tape<double>& t, const auto& v) { return weighted_sum(t, op(v[0], v[1]), seed); },
          {random_tensor(shape, rng), random_tensor(shape, rng)}, kPrimitiveTol);
  };

  const Shape small{2, 2, 3, 3};
  check("conv2d stride1 pad1",
        [=](Tape<double>& t, const auto& v) { return weighted_sum(t, conv2d(v[0], v[1], v[2], {1, 1}), seed); },
        {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}, kPrimitiveTol);
  check("conv2d stride2 pad1",
        [=](Tape<double>& t, const auto& v) { return weighted_sum(t, conv2d(v[0], v[1], v[2], {2, 1}), seed); },
        {random_tensor({1, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)}, kPrimitiveTol);
  check("conv2d + mean on 1x1x5x5",
        [](Tape<double>&, const auto& v) { return mean(conv2d(v[0], v[1], v[2], {1, 0})); },
        {random_tensor({1, 1, 5, 5}, rng), random_tensor({1, 1, 3, 3}, rng), random_tensor({1}, rng)}, kPrimitiveTol);
  check("conv_transpose2d k2 stride2",
        [=](Tape<double>& t, const auto& v) {
          return weighted_sum(t, conv_transpose2d(v[0], v[1], v[2], {2, 0}), seed);
        },
        {random_tensor({2, 3, 3, 3}, rng), random_tensor({3, 2, 2, 2}, rng), random_tensor({2}, rng)}, kPrimitiveTol);
  check("conv_transpose2d k3 stride1 pad1",
        [=](Tape<double>& t, const auto& v) {
          return weighted_sum(t, conv_transpose2d(v[0], v[1], v[2], {1, 1}), seed);
        },
        {random_tensor({1, 2, 4, 4}, rng), random_tensor({2, 3, 3, 3}, rng), random_tensor({3}, rng)}, kPrimitiveTol);
  unary("relu", relu<double>, small);
  unary("sigmoid", sigmoid<double>, small);
  unary("square", square<double>, small);
  check("mul_scalar", [=](Tape<double>& t, const auto& v) { return weighted_sum(t, mul_scalar(v[0], -2.5), seed); },
        {random_tensor(small, rng)}, kPrimitiveTol);
  check("sum", [](Tape<double>&, const auto& v) { return sum(square(v[0])); }, {random_tensor(small, rng)},
        kPrimitiveTol);
  check("mean", [](Tape<double>&, const auto& v) { return mean(square(v[0])); }, {random_tensor(small, rng)},
        kPrimitiveTol);
  binary("add", add<double>, small);
  binary("sub", sub<double>, small);
  binary("mul", mul<double>, small);
  check("concat_channels",
        [=](Tape<double>& t, const auto& v) { return weighted_sum(t, concat_channels(v[0], v[1]), seed); },
        {random_tensor({2, 1, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)}, kPrimitiveTol);

  const Tensor<double> target = random_tensor({2, 1, 4, 4}, rng, 0.0, 1.0);
  Tensor<double> noise_map({2, 1, 4, 4});
  for (std::size_t i = 0; i < noise_map.size(); ++i) noise_map[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
  check("fnorm_loss", [=](Tape<double>& t, const auto& v) { return fnorm_loss(v[0], t.constant(target)); },
        {random_tensor({2, 1, 4, 4}, rng)}, kPrimitiveTol);
  check("asymmetric_loss",
        [=](Tape<double>& t, const auto& v) { return asymmetric_loss(v[0], t.constant(noise_map), PenaltyParams{}); },
        {random_tensor({2, 1, 4, 4}, rng, 0.0, 1.0)}, kPrimitiveTol);

  NetworkSpec det;
  det.kind = NetworkKind::detector;
  det.depth = 3;
  det.width = 4;
  NetworkSpec dru;
  dru.kind = NetworkKind::drunet;
  dru.base_channels = 4;
  dru.scales = 2;
  dru.blocks = 1;
  for (const NetworkSpec& spec : {det, dru}) {
    std::vector<Tensor<double>> inputs = network_params(spec, rng);
    inputs.push_back(random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0));
    Tensor<double> goal({1, 1, 8, 8});
    for (std::size_t i = 0; i < goal.size(); ++i) goal[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
    check(std::string(to_string(spec.kind)) + " network (8x8)",
          [=](Tape<double>& t, const std::vector<Var<double>>& v) {
            const std::span<const Var<double>> params(v.data(), v.size() - 1);
            Var<double> out = network_forward<double>(spec, params, v.back());
            return spec.kind == NetworkKind::detector ? asymmetric_loss(out, t.constant(goal), PenaltyParams{})
                                                      : fnorm_loss(out, t.constant(goal));
          },
          inputs, kNetworkTol);
  }
  return cases;
}

}  // namespace spd
