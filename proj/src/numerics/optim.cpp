#include "mmn/optim.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mmn {

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::below: bound must be positive");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return draw % bound;
}

double xavier_bound(const Shape& shape) {
  std::size_t fan_in = 0, fan_out = 0;
  switch (shape.size()) {
    case 1:
      fan_in = fan_out = shape[0];
      break;
    case 2:
      fan_in = shape[0];
      fan_out = shape[1];
      break;
    default: {
      std::size_t receptive = 1;
      for (std::size_t i = 0; i + 2 < shape.size(); ++i) receptive *= shape[i];
      fan_in = receptive * shape[shape.size() - 2];
      fan_out = receptive * shape.back();
    }
  }
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

template <typename T>
Tensor<T> xavier_init(const Shape& shape, Rng& rng) {
  const double bound = xavier_bound(shape);
  Tensor<T> out(shape);
  for (auto& v : out.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return out;
}

template <typename T>
Tensor<T> xavier_init(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  return xavier_init<T>(shape, rng);
}

template <typename T>
void adam_step(std::span<Parameter<T>> params, std::span<const Tensor<T>> grads, AdamState<T>& state, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  if (!(lr > 0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value.shape());
      state.second_moment.emplace_back(p.value.shape());
    }
  }
  if (state.first_moment.size() != params.size()) throw std::invalid_argument("adam_step: state tracks a different parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape()) {
      throw ShapeError("adam_step: gradient shape mismatch for " + params[i].name);
    }
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient for " + params[i].name);
  }

  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / correction1;
      const double v_hat = vj / correction2;
      w[j] = static_cast<T>(w[j] - lr * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
  }
}

template <typename T>
double clip_gradients(std::span<Tensor<T>> grads, double threshold) {
  if (!(threshold > 0)) throw std::invalid_argument("clip_gradients: threshold must be positive");
  double squared = 0;
  for (const auto& g : grads)
    for (auto v : g.values()) squared += static_cast<double>(v) * v;
  const double norm = std::sqrt(squared);
  if (norm > threshold) {
    const double factor = threshold / norm;
    for (auto& g : grads)
      for (auto& v : g.values()) v = static_cast<T>(v * factor);
  }
  return norm;
}

template Tensor<float> xavier_init<float>(const Shape&, Rng&);
template Tensor<double> xavier_init<double>(const Shape&, Rng&);
template Tensor<float> xavier_init<float>(const Shape&, std::uint64_t);
template Tensor<double> xavier_init<double>(const Shape&, std::uint64_t);
template void adam_step<float>(std::span<Parameter<float>>, std::span<const Tensor<float>>, AdamState<float>&, double);
template void adam_step<double>(std::span<Parameter<double>>, std::span<const Tensor<double>>, AdamState<double>&,
                                double);
template double clip_gradients<float>(std::span<Tensor<float>>, double);
template double clip_gradients<double>(std::span<Tensor<double>>, double);

}  // namespace mmn
