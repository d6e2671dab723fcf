#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mmn {

struct CheckOutcome {
  std::string name;
  bool passed = false;
  double value = 0.0;      // the measured quantity (error, violation count, ...)
  double threshold = 0.0;  // pass bound on `value`
  std::string detail;
};

// Finite-difference checks in 64-bit for every differentiable op and for the
// full encode -> memory -> decode -> loss composite on a toy model.
std::vector<CheckOutcome> gradcheck_suite(std::uint64_t seed = 7, double tolerance = 1e-4);

// Decoder logits at step t must be bit-identical after changing any later
// summary token; `cases` random toy models and inputs.
CheckOutcome causality_suite(std::size_t cases = 100, std::uint64_t seed = 1);

// Encoder gradients vanish beyond (RF - 1) / 2 and reach exactly that far,
// for dilated and plain toy stacks.
CheckOutcome locality_suite(std::uint64_t seed = 1);

}  // namespace mmn
