#include "mmn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmn/ops.hpp"
#include "mmn/optim.hpp"

namespace mmn {

namespace {

double evaluate(const GradCheckFn& fn, std::span<const Tensor<double>> inputs, const Tensor<double>& projection) {
  Tape<double> tape(false);
  std::vector<Var<double>> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
  Var<double> out = fn(tape, leaves);
  return weighted_sum(out, projection).value()[0];
}

Tensor<double> make_projection(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> p(shape);
  for (auto& v : p.values()) v = rng.uniform(-1.0, 1.0);
  return p;
}

}  // namespace

GradCheckResult grad_check(const GradCheckFn& fn, std::span<const Tensor<double>> inputs,
                           const GradCheckOptions& options) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& in : inputs) leaves.push_back(tape.leaf(in));
  Var<double> out = fn(tape, leaves);
  const Tensor<double> projection = make_projection(out.shape(), options.projection_seed);
  Var<double> loss = weighted_sum(out, projection);
  tape.backward(loss);

  std::vector<Tensor<double>> perturbed(inputs.begin(), inputs.end());
  const double h = options.step;
  const double base = loss.value()[0];
  GradCheckResult result;
  for (std::size_t k = 0; k < perturbed.size(); ++k) {
    const Tensor<double> analytic = tape.has_grad(leaves[k].id()) ? tape.grad(leaves[k].id())
                                                                   : Tensor<double>(inputs[k].shape());
    for (std::size_t i = 0; i < perturbed[k].size(); ++i) {
      const double original = perturbed[k][i];
      perturbed[k][i] = original + h;
      const double up = evaluate(fn, perturbed, projection);
      perturbed[k][i] = original - h;
      const double down = evaluate(fn, perturbed, projection);
      perturbed[k][i] = original;

      const double central = (up - down) / (2 * h);
      const double forward = (up - base) / h;
      const double backward = (base - down) / h;
      if (std::abs(forward - backward) > 1e-2 * std::max(1.0, std::abs(central))) {
        throw NotDifferentiableError("grad_check: one-sided differences disagree at input " + std::to_string(k) +
                                     " element " + std::to_string(i));
      }
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(central), options.denominator_floor});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(a - central) / denom);
      ++result.elements_checked;
    }
  }
  return result;
}

}  // namespace mmn
