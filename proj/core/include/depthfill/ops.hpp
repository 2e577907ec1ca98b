#pragma once

#include "depthfill/tensor.hpp"

#include <utility>

namespace depthfill {

/// Differentiable tensor ops. Every op takes the tape as its first argument;
/// passing nullptr runs forward-only. An op participates in the tape when the
/// tape is non-null and any input requires grad, in which case the output
/// requires grad too. Reductions and conv inner loops accumulate in 64-bit;
/// storage stays float32.

/// 2-D convolution, zero padding. weight is (out_c, in_c, kh, kw); bias is
/// optional with shape (1, out_c, 1, 1) (pass a default-constructed Tensor
/// for none).
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

/// Per-channel convolution: weight (c, 1, kh, kw), stride 1. Channel i of the
/// output depends only on channel i of the input.
Tensor depthwise_conv2d(Tape* tape, const Tensor& input, const Tensor& weight,
                        const Tensor& bias, int padding);

/// Softmax over the channel axis at every (n, h, w), stabilized by max
/// subtraction. Outputs are positive and sum to 1 per pixel.
Tensor softmax_channel(Tape* tape, const Tensor& input);

/// Layer normalization over the channel vector at every (n, h, w) with
/// per-channel affine. gamma/beta have shape (1, c, 1, 1).
Tensor layer_norm_channel(Tape* tape, const Tensor& input, const Tensor& gamma,
                          const Tensor& beta, float eps = 1e-5f);

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor multiply(Tape* tape, const Tensor& a, const Tensor& b);
Tensor relu(Tape* tape, const Tensor& input);
Tensor sigmoid(Tape* tape, const Tensor& input);
Tensor softplus(Tape* tape, const Tensor& input);
Tensor scale(Tape* tape, const Tensor& input, float factor);

Tensor concat_channel(Tape* tape, const Tensor& a, const Tensor& b);
Tensor bilinear_upsample_x2(Tape* tape, const Tensor& input);
Tensor avgpool_x2(Tape* tape, const Tensor& input);

/// Full reduction to a (1,1,1,1) scalar.
Tensor sum_all(Tape* tape, const Tensor& input);
Tensor mean_all(Tape* tape, const Tensor& input);

/// Output spatial extent of a convolution along one axis.
int conv_out_extent(int in_extent, int kernel, int stride, int padding);

}  // namespace depthfill
