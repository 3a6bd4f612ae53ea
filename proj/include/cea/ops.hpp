#pragma once

#include <vector>

#include "cea/tensor.hpp"

// Differentiable primitives. Shapes are checked eagerly and mismatches throw
// DimensionError. Spatial tensors use [H x W x C] layout; token sequences are
// the same buffer viewed as [H*W x C].

namespace cea {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor abs(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor gelu(const Tensor& a);

// x[m x n] with each row multiplied elementwise by v[n].
Tensor mul_rows(const Tensor& x, const Tensor& v);
// x[m x n] with row i multiplied by v[i], v[m].
Tensor mul_cols(const Tensor& x, const Tensor& v);

// 2-D matrix product with optional transposition of either operand.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor mean_axis(const Tensor& a, std::size_t axis);
/// Column means of [N x C] as [1 x C], summed in sorted order so the result
/// is bitwise invariant to row permutations.
Tensor pool_mean(const Tensor& x);
// Euclidean norm along `axis` (removed from the result). Gradient at a zero
// vector is zero.
Tensor l2_norm(const Tensor& a, std::size_t axis);

// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& a, std::size_t axis);
// Row-wise layer normalization of x[N x C] with gain gamma[C], no bias.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, double eps = 1e-5);

// x[H x W x C], w[k x k x C]; zero padding; output floor((H+2p-k)/s)+1 per side.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, std::size_t stride,
                        std::size_t padding);
// x[H x W x Cin], w[Cin x Cout]; samples every `stride`-th pixel then mixes channels.
Tensor pointwise_conv2d(const Tensor& x, const Tensor& w, std::size_t stride = 1);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
// Horizontal / vertical mirror of x[H x W x C]; constant-only helpers for augmentation.
Tensor flip(const Tensor& x, bool horizontal, bool vertical);

// Per-channel magnitude of the unnormalized 2-D DFT of x[H x W x C].
// Gradient through |F| at zero magnitude is defined as zero.
Tensor fft2_magnitude(const Tensor& x);

}  // namespace cea
