// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations recorded on a Tape. Forward values come from
// hindsight::kernels, so tape results are bit-identical to the kernels.
#pragma once

#include <optional>
#include <type_traits>
#include <vector>

#include "hindsight/kernels.hpp"
#include "hindsight/tape.hpp"

namespace hindsight::ad {

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b);
/// Rows of x through a dense layer: x * w^T + bias. w is [out x in].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> bias);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> softmax_rows(Var<T> x);
template <typename T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gain, Var<T> shift, double eps = kernels::kLayerNormEps);

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end);
/// Each row of a [n x d] repeated `times` consecutively -> [n*times x d].
template <typename T>
Var<T> repeat_rows(Var<T> a, std::size_t times);
template <typename T>
Var<T> gather_rows(Var<T> a, const std::vector<std::size_t>& rows);
template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

/// out[p] = sum_j gate[p][j] * features[p*k + j]; gate [P x k], features [P*k x d].
template <typename T>
Var<T> gate_combine(Var<T> gate, Var<T> features);

template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> mean(Var<T> a);
/// Mean squared error against a constant target of identical shape.
template <typename T>
Var<T> mse(Var<T> pred, const Tensor<T>& target);
/// Mean over rows of -KL(row || uniform), entries clamped to >= 1e-12
/// inside the logarithm.
template <typename T>
Var<T> divergence_loss(Var<T> gate);

template <typename T>
Var<T> conv2d_valid(Var<T> input, Var<T> kernels, Var<T> bias);
template <typename T>
Var<T> maxpool2(Var<T> input);

inline constexpr double kGateClamp = 1e-12;

}  // namespace hindsight::ad
