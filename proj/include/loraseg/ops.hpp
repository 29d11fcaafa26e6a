#pragma once

#include <cstdint>
#include <vector>

#include "loraseg/tape.hpp"
#include "loraseg/tensor.hpp"

// Differentiable primitives. Every op checks shapes eagerly and throws
// ShapeError naming the offending shapes. Broadcasting is limited to
// scalar-with-tensor in the binary elementwise ops and to add_bias.

namespace loraseg {

// Elementwise; either operand may be a rank-0 scalar.
template <typename T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> sub(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> mul(const Tensor<T> &a, const Tensor<T> &b);
template <typename T> Tensor<T> div(const Tensor<T> &a, const Tensor<T> &b);

template <typename T> Tensor<T> add_scalar(const Tensor<T> &x, T value);
template <typename T> Tensor<T> mul_scalar(const Tensor<T> &x, T value);
template <typename T> Tensor<T> neg(const Tensor<T> &x);

// x[..., n] + bias[n]
template <typename T> Tensor<T> add_bias(const Tensor<T> &x, const Tensor<T> &bias);

template <typename T> Tensor<T> gelu(const Tensor<T> &x);
template <typename T> Tensor<T> sigmoid(const Tensor<T> &x);
template <typename T> Tensor<T> log(const Tensor<T> &x);
template <typename T> Tensor<T> pow_scalar(const Tensor<T> &x, T exponent);
// Gradient is passed through where lo <= x <= hi and zero elsewhere.
template <typename T> Tensor<T> clamp(const Tensor<T> &x, T lo, T hi);

template <typename T> Tensor<T> sum(const Tensor<T> &x);
template <typename T> Tensor<T> mean(const Tensor<T> &x);

// a[..., k] · b[k, n]; leading axes of a are flattened into rows.
template <typename T> Tensor<T> matmul(const Tensor<T> &a, const Tensor<T> &b);
// a[..., k] · b[n, k]^T, the layout of a linear layer's weight.
template <typename T> Tensor<T> matmul_nt(const Tensor<T> &a, const Tensor<T> &b);
// a[B, m, k] · b[B, k, n], or b[B, n, k]^T when trans_b.
template <typename T> Tensor<T> bmm(const Tensor<T> &a, const Tensor<T> &b, bool trans_b = false);

// x[C, H, W], weight[Co, C, kh, kw], optional bias[Co].
template <typename T>
Tensor<T> conv2d(const Tensor<T> &x, const Tensor<T> &weight, const Tensor<T> &bias, int stride, int padding);
// x[C, H, W], weight[C, Co, kh, kw], optional bias[Co].
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T> &x, const Tensor<T> &weight, const Tensor<T> &bias, int stride,
                           int padding = 0);

// Normalises over the last axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta, T eps = T(1e-6));
template <typename T> Tensor<T> softmax_lastaxis(const Tensor<T> &x);

// x[C, H, W] -> [C, out_h, out_w], half-pixel centres (align_corners = false).
template <typename T> Tensor<T> resize_bilinear(const Tensor<T> &x, int out_h, int out_w);

template <typename T> Tensor<T> slice(const Tensor<T> &x, int axis, std::int64_t start, std::int64_t end);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>> &parts, int axis);
template <typename T> Tensor<T> reshape(const Tensor<T> &x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T> &x, const std::vector<int> &order);

// x[H, W, C] -> [num_windows, ws*ws, C]; the map is zero-padded at the
// bottom/right up to a multiple of ws. Windows are ordered row-major.
template <typename T> Tensor<T> window_partition(const Tensor<T> &x, int window);
// Inverse of window_partition; crops the padding back to [H, W, C].
template <typename T> Tensor<T> window_unpartition(const Tensor<T> &windows, int window, int height, int width);

} // namespace loraseg
