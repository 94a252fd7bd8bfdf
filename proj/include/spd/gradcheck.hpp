// Central finite-difference checks of reverse-mode gradients (64-bit).
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spd/autograd.hpp"

namespace spd {

/// Builds a scalar on `tape` from variables holding the given inputs.
using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) over every
/// element of every input, numeric = (f(x+h) - f(x-h)) / 2h.
double gradcheck(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double h = 1e-5);

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

/// Every primitive (tolerance 1e-4), both losses (1e-4), and tiny detector and
/// DRUnet networks on 8x8 inputs (1e-3).
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 7);

}  // namespace spd
