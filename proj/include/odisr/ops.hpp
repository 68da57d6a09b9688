// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor primitives. Every op records a backward closure on
// the tape when an input requires grad (see make_result). Images and feature
// maps use the batch x channel x height x width layout throughout.
#pragma once

#include <cstdint>
#include <vector>

#include "odisr/tensor.hpp"

namespace odisr {

// ---- element-wise -------------------------------------------------------

/// Binary ops broadcast numpy-style (right-aligned extents, 1 stretches).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& x);
/// Exact (erf) form.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

// ---- reductions ---------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::vector<int> axes, bool keepdim = false);

// ---- shape --------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
/// Slice `length` entries along `axis` starting at `start`.
Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Broadcast to `shape` (materialized).
Tensor expand(const Tensor& x, const Shape& shape);
Tensor index_select(const Tensor& x, int axis, const std::vector<std::int64_t>& indices);
/// Mirror padding of a 4-D tensor's two spatial axes, edge not repeated.
/// Each pad must be smaller than the padded extent.
Tensor pad_reflect(const Tensor& x, int top, int bottom, int left, int right);

// ---- linear algebra and normalization -----------------------------------

/// Batched matrix product over the last two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);
/// Normalize over `axis` (biased variance), then scale/shift with gamma and
/// beta, which have that axis's extent.
Tensor layer_norm(const Tensor& x, int axis, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// ---- convolution and resampling -----------------------------------------

enum class PadMode { zero, replicate };

struct ConvOptions {
  int stride = 1;
  /// Pixels added on every side; -1 means "same" (kernel extent / 2).
  int padding = -1;
  PadMode mode = PadMode::zero;
};

/// Cross-correlation of x[b,cin,h,w] with w[cout,cin,kh,kw]; bias may be an
/// undefined tensor.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              ConvOptions opts = {});
/// Per-channel spatial filter: weight[c,1,kh,kw].
Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        ConvOptions opts = {});
/// Pointwise (1x1, weight[cout,c,1,1]) applied to the depthwise result.
/// Replicate padding unless overridden.
Tensor depthwise_separable_conv(const Tensor& x, const Tensor& depthwise,
                                const Tensor& pointwise,
                                const Tensor& depthwise_bias = {},
                                const Tensor& pointwise_bias = {},
                                PadMode mode = PadMode::replicate);

/// Sample x[b,c,h,w] at continuous pixel coordinates coords[b,p,2] given as
/// (row, col); coordinates are clamped to the image border. Returns [b,c,p].
Tensor bilinear_sample(const Tensor& x, const Tensor& coords);

/// [b, c*s*s, h, w] -> [b, c, h*s, w*s]; channel c*s*s + i*s + j lands at
/// offset (i, j) of each s x s block.
Tensor pixel_shuffle(const Tensor& x, int scale);
Tensor pixel_unshuffle(const Tensor& x, int scale);

}  // namespace odisr
