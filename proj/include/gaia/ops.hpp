// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "gaia/tensor.hpp"

// CNN operator set: forward kernels and the input-gradient rules used by the
// tape. Only gradients with respect to activations are provided; weights are
// fixed. All kernels are instantiated for float and double.
//
// Layout is NCHW for images, OIHW for convolution kernels, N×F for dense
// activations and O×F for linear weights. No kernel mixes batch elements.

namespace gaia::ops {

struct Conv2dParams {
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
};

struct Pool2dParams {
    std::size_t kernel_h = 2;
    std::size_t kernel_w = 2;
    std::size_t stride_h = 2;
    std::size_t stride_w = 2;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;
};

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, const Conv2dParams& p);
Shape pool2d_output_shape(const Shape& input, const Pool2dParams& p);

/// Cross-correlation; `bias` may be empty (treated as zeros).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, const Conv2dParams& p);
template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& kernel,
                                     const Shape& input_shape, const Conv2dParams& p);

/// y = gamma * (x - mean) / sqrt(var + eps) + beta, per channel (axis 1).
template <typename T>
BasicTensor<T> batchnorm_inference(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                   const BasicTensor<T>& beta, const BasicTensor<T>& running_mean,
                                   const BasicTensor<T>& running_var, double eps);
template <typename T>
BasicTensor<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& gamma,
                                  const BasicTensor<T>& running_var, double eps);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);
/// Subgradient at exactly 0 is 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input);

template <typename T>
struct MaxPoolResult {
    BasicTensor<T> output;
    std::vector<std::size_t> argmax; // flat input index per output element
};

/// Padded positions never win. Ties go to the first maximum in row-major window order.
template <typename T>
MaxPoolResult<T> max_pool2d_with_indices(const BasicTensor<T>& input, const Pool2dParams& p);
template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& input, const Pool2dParams& p);
template <typename T>
BasicTensor<T> max_pool2d_backward(const BasicTensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                                   const Shape& input_shape);

/// Zero padding counts toward the divisor (kernel area).
template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& input, const Pool2dParams& p);
template <typename T>
BasicTensor<T> avg_pool2d_backward(const BasicTensor<T>& grad_out, const Shape& input_shape,
                                   const Pool2dParams& p);

/// N×C×H×W -> N×C
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape);

template <typename T>
BasicTensor<T> residual_add(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// x: N×F, weight: O×F, bias: O (may be empty)
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias);
template <typename T>
BasicTensor<T> linear_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& weight);

/// Flattens everything but the leading (batch) axis.
template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& input);

/// Multiplies the listed channels (axis 1) by zero. Gradients of masked
/// channels are exactly +0.0, never -0.0.
template <typename T>
BasicTensor<T> channel_mask(const BasicTensor<T>& input, const std::vector<std::size_t>& channels);
template <typename T>
BasicTensor<T> channel_mask_backward(const BasicTensor<T>& grad_out, const std::vector<std::size_t>& channels);

/// Softmax family over the last axis; rank 1 (C) or rank 2 (N×C).
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output);
template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> log_softmax_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output);

} // namespace gaia::ops
