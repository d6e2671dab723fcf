#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mmn/autodiff.hpp"

namespace mmn {

class NotDifferentiableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Builds the function under test on `tape` from one leaf per input tensor.
using GradCheckFn = std::function<Var<double>(Tape<double>& tape, std::span<const Var<double>> inputs)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Relative errors are |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double denominator_floor = 1e-3;
  std::uint64_t projection_seed = 7;
};

struct GradCheckResult {
  double max_relative_error = 0;
  std::size_t elements_checked = 0;
};

// Reduces the output to a scalar with a fixed random projection, then
// compares tape gradients with central differences on every input element.
// Throws NotDifferentiableError when one-sided differences disagree, which
// signals a kink (e.g. a max-pool tie) at the sampled point.
GradCheckResult grad_check(const GradCheckFn& fn, std::span<const Tensor<double>> inputs,
                           const GradCheckOptions& options = {});

}  // namespace mmn
