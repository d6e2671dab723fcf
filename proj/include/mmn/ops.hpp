#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mmn/autodiff.hpp"

namespace mmn {

enum class Padding {
  kSame,    // centered kernel, zero padding on both sides
  kCausal,  // zero padding on the left only
};

inline constexpr double kLayerNormEpsilon = 1e-5;

// Elementwise.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> tanh(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);

// x: [N, D], bias: [D]; adds the bias to every row.
template <typename T> Var<T> add_row(Var<T> x, Var<T> bias);

// Same data, new shape with equal element count.
template <typename T> Var<T> reshape(Var<T> x, Shape shape);

// [M, K] x [K, N] -> [M, N]
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// [M, K] x [N, K]^T -> [M, N]
template <typename T> Var<T> matmul_transposed(Var<T> a, Var<T> b);

// Rows [begin, begin + count) of a rank-2 tensor.
template <typename T> Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count);

// Concatenates rank-2 tensors with equal row counts along the columns.
template <typename T> Var<T> concat_columns(std::span<const Var<T>> parts);

// Sum of all elements -> [1].
template <typename T> Var<T> sum(Var<T> x);
// Sum of x * weights over all elements -> [1]; `weights` is a constant.
template <typename T> Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights);

// Row lookup: out[n] = table[ids[n]]. Rows whose id equals `zero_id` are zero
// and receive no gradient.
template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::uint32_t> ids, std::int64_t zero_id = -1);

// x: [N, D_in], w: [k, D_in, D_out], b: [D_out] -> [N, D_out].
// Same padding reads x[s + d*(i - k/2)]; causal padding reads x[s - d*(k-1-i)].
template <typename T>
Var<T> dilated_conv1d(Var<T> x, Var<T> w, Var<T> b, std::size_t dilation, Padding padding = Padding::kSame);

template <typename T>
Var<T> causal_dilated_conv1d(Var<T> x, Var<T> w, Var<T> b, std::size_t dilation) {
  return dilated_conv1d(x, w, b, dilation, Padding::kCausal);
}

// Per-row normalization over the last axis of an [N, D] tensor.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double epsilon = kLayerNormEpsilon);

// w[..., o] = g[o] * v[..., o] / ||v[..., o]||, normalizing over all leading axes.
template <typename T> Var<T> weight_norm(Var<T> v, Var<T> g);

// Softmax over the last axis (rank 1 or 2). Columns with mask[c] == true get
// probability zero; a fully masked row is an error.
template <typename T> Var<T> softmax(Var<T> x, std::span<const bool> mask = {});

// [N, D] -> [D], per-channel maximum. Ties go to the lowest row.
template <typename T> Var<T> maxpool_time(Var<T> x);

// Weight-normalized convolution parameters as they appear on a tape.
template <typename T>
struct ConvWeights {
  Var<T> direction;  // [k, D_in, D_out]
  Var<T> scale;      // [D_out]
  Var<T> bias;       // [D_out]
};

template <typename T>
struct NormWeights {
  Var<T> gain;
  Var<T> bias;
};

template <typename T>
Var<T> conv(Var<T> x, const ConvWeights<T>& weights, std::size_t dilation, Padding padding);

// layer_norm(x + tanh(F_f(x)) * sigmoid(F_g(x)))
template <typename T>
Var<T> ngtu_block(Var<T> x, const ConvWeights<T>& filter, const ConvWeights<T>& gate, const NormWeights<T>& norm,
                  std::size_t dilation, Padding padding);

// Scaled dot-product read from a key/value memory.
// queries: [T, D], keys/values: [N, D] -> [T, D].
template <typename T>
Var<T> attend(Var<T> queries, Var<T> keys, Var<T> values, std::span<const bool> mask = {});

// The smoothed target used by the training loss: 1 - eps at `target`,
// eps / V everywhere else. Its total mass is 1 - eps / V.
std::vector<double> smoothed_target(std::size_t target, double epsilon, std::size_t vocab_size);

// Mean over rows of -sum_y q(y) log softmax(logits)_y with q from smoothed_target.
// logits: [T, V] -> [1]. epsilon == 0 gives plain cross-entropy.
template <typename T>
Var<T> label_smoothed_loss(Var<T> logits, std::span<const std::uint32_t> targets, double epsilon);

}  // namespace mmn
