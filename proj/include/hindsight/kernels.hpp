// SPDX-License-Identifier: Apache-2.0
//
// Pure numeric kernels. Every reduction accumulates from zero in ascending
// index order, so results are bit-reproducible and match naive loop
// references exactly. Backward kernels accumulate (+=) into their outputs.
#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "hindsight/tensor.hpp"

namespace hindsight::kernels {

inline constexpr double kLayerNormEps = 1e-5;

/// While alive, accumulates a fingerprint of every branch decision taken by
/// relu (sign of each input) and maxpool2 (winning index of each window).
/// Two evaluations with equal digests followed the same piecewise-smooth
/// branch. Contributions from concurrent calls combine order-independently.
/// Recorders nest; the innermost one receives the decisions.
class DecisionRecorder {
 public:
  DecisionRecorder();
  ~DecisionRecorder();
  DecisionRecorder(const DecisionRecorder&) = delete;
  DecisionRecorder& operator=(const DecisionRecorder&) = delete;

  std::uint64_t digest() const { return digest_.load(); }
  void reset() { digest_.store(0); }

  /// Adds one kernel call's decision hash to the active recorder, if any.
  static void record(std::uint64_t call_hash);
  static bool active();

 private:
  std::atomic<std::uint64_t> digest_{0};
  DecisionRecorder* previous_;
};

// [m x n] * [n x p] -> [m x p]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// [m x n] * [p x n]^T -> [m x p]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);
// [n x m]^T * [n x p] -> [m x p]
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

/// Dense layer over rows: y[r][o] = sum_t x[r][t] * w[o][t] + bias[o].
/// `bias` may be empty.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// Valid (unpadded, stride 1) cross-correlation: input [C x H x W],
/// kernels [O x C x Kh x Kw], bias [O] -> [O x (H-Kh+1) x (W-Kw+1)].
template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias);

/// Gradients of conv2d_valid. Any of the output pointers may be null.
template <typename T>
void conv2d_valid_backward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& grad_out,
                           Tensor<T>* grad_input, Tensor<T>* grad_kernels, Tensor<T>* grad_bias);

template <typename T>
struct PoolResult {
  Tensor<T> out;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2x2 non-overlapping max pool over [C x H x W]; H and W must be even.
/// Ties resolve to the first element in row-major window order.
template <typename T>
PoolResult<T> maxpool2(const Tensor<T>& input);

template <typename T>
void maxpool2_backward(const std::vector<std::uint32_t>& argmax, const Tensor<T>& grad_out, Tensor<T>& grad_input);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Softmax along the last axis (each row of a matrix, or a whole vector).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

template <typename T>
struct LayerNormResult {
  Tensor<T> out;
  Tensor<T> normalized;        // (x - mean) * rstd
  std::vector<T> rstd;         // one per row
};

/// Row-wise layer normalization with population variance.
template <typename T>
LayerNormResult<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift,
                              double eps = kLayerNormEps);

}  // namespace hindsight::kernels
