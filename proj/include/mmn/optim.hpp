#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mmn/autodiff.hpp"

namespace mmn {

// 64-bit Mersenne Twister with a portable mapping to [0, 1), so seeded draws
// are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound);

 private:
  std::mt19937_64 engine_;
};

// Glorot uniform: U(-sqrt(6 / (fan_in + fan_out)), +sqrt(...)).
// [in, out] and [k, in, out] shapes use the usual fan conventions.
template <typename T> Tensor<T> xavier_init(const Shape& shape, Rng& rng);
template <typename T> Tensor<T> xavier_init(const Shape& shape, std::uint64_t seed);
double xavier_bound(const Shape& shape);

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

// One bias-corrected Adam update. Moments are created on the first call.
template <typename T>
void adam_step(std::span<Parameter<T>> params, std::span<const Tensor<T>> grads, AdamState<T>& state, double lr);

// Global-norm clipping. Returns the norm before clipping.
template <typename T>
double clip_gradients(std::span<Tensor<T>> grads, double threshold);

}  // namespace mmn
