// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include "gaia/ops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>

namespace gaia {

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        return false;
    }
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

template <typename T>
void ensure_finite(const BasicTensor<T>& t, std::string_view where) {
    const auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!std::isfinite(d[i])) {
            throw DataError(fmt::format("{}: non-finite value {} at flat index {}", where,
                                        static_cast<double>(d[i]), i));
        }
    }
}

template void ensure_finite(const BasicTensor<float>&, std::string_view);
template void ensure_finite(const BasicTensor<double>&, std::string_view);

} // namespace gaia

namespace gaia::ops {

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* op) {
    if (s.size() != rank) {
        throw ConfigError(fmt::format("{}: expected rank-{} input, got shape {}", op, rank, to_string(s)));
    }
}

std::size_t checked_extent(std::size_t in, std::size_t pad, std::size_t k, std::size_t stride, const char* op,
                           const char* axis) {
    if (stride == 0) {
        throw ConfigError(fmt::format("{}: stride along {} must be positive", op, axis));
    }
    if (in + 2 * pad < k) {
        throw ConfigError(fmt::format("{}: kernel extent {} exceeds padded input extent {} along {}", op, k,
                                      in + 2 * pad, axis));
    }
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
void check_per_channel(const BasicTensor<T>& p, std::size_t channels, const char* what) {
    if (p.rank() != 1 || p.dim(0) != channels) {
        throw ConfigError(fmt::format("batchnorm: {} has shape {}, expected [{}]", what, to_string(p.shape()),
                                      channels));
    }
}

// Rows over the last axis, for the softmax family.
template <typename T>
std::pair<std::size_t, std::size_t> rows_cols(const BasicTensor<T>& t, const char* op) {
    if (t.rank() == 1) {
        return {1, t.dim(0)};
    }
    if (t.rank() == 2) {
        return {t.dim(0), t.dim(1)};
    }
    throw ConfigError(fmt::format("{}: expected rank 1 or 2, got shape {}", op, to_string(t.shape())));
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const Shape& s, const char* op) {
    if (a.shape() != s) {
        throw ConfigError(fmt::format("{}: shape mismatch {} vs {}", op, to_string(a.shape()), to_string(s)));
    }
}

} // namespace

Shape conv2d_output_shape(const Shape& input, const Shape& kernel, const Conv2dParams& p) {
    require_rank(input, 4, "conv2d");
    if (kernel.size() != 4) {
        throw ConfigError(fmt::format("conv2d: kernel must be OIHW, got shape {}", to_string(kernel)));
    }
    if (kernel[1] != input[1]) {
        throw ConfigError(fmt::format("conv2d: kernel expects {} input channels, input {} has {}", kernel[1],
                                      to_string(input), input[1]));
    }
    const std::size_t oh = checked_extent(input[2], p.pad_h, kernel[2], p.stride_h, "conv2d", "height");
    const std::size_t ow = checked_extent(input[3], p.pad_w, kernel[3], p.stride_w, "conv2d", "width");
    return {input[0], kernel[0], oh, ow};
}

Shape pool2d_output_shape(const Shape& input, const Pool2dParams& p) {
    require_rank(input, 4, "pool2d");
    if (p.kernel_h == 0 || p.kernel_w == 0) {
        throw ConfigError("pool2d: kernel extents must be positive");
    }
    if (2 * p.pad_h > p.kernel_h || 2 * p.pad_w > p.kernel_w) {
        throw ConfigError(fmt::format("pool2d: padding ({},{}) exceeds half the kernel ({},{})", p.pad_h, p.pad_w,
                                      p.kernel_h, p.kernel_w));
    }
    const std::size_t oh = checked_extent(input[2], p.pad_h, p.kernel_h, p.stride_h, "pool2d", "height");
    const std::size_t ow = checked_extent(input[3], p.pad_w, p.kernel_w, p.stride_w, "pool2d", "width");
    return {input[0], input[1], oh, ow};
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      const Conv2dParams& p) {
    const Shape out_shape = conv2d_output_shape(input.shape(), kernel.shape(), p);
    const std::size_t n_batch = out_shape[0], n_out = out_shape[1], oh = out_shape[2], ow = out_shape[3];
    const std::size_t n_in = input.dim(1), ih = input.dim(2), iw = input.dim(3);
    const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
    if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != n_out)) {
        throw ConfigError(fmt::format("conv2d: bias shape {} does not match {} output channels",
                                      to_string(bias.shape()), n_out));
    }

    BasicTensor<T> out(out_shape);
    const T* x = input.data().data();
    const T* w = kernel.data().data();
    T* y = out.data().data();

    // Each output element accumulates bias, then (c, kh, kw) in ascending order.
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t o = 0; o < n_out; ++o) {
            T* plane = y + (n * n_out + o) * oh * ow;
            std::fill(plane, plane + oh * ow, bias.empty() ? T{0} : bias[o]);
            for (std::size_t c = 0; c < n_in; ++c) {
                const T* xin = x + (n * n_in + c) * ih * iw;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const T wv = w[((o * n_in + c) * kh + ky) * kw + kx];
                        for (std::size_t y0 = 0; y0 < oh; ++y0) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y0 * p.stride_h + ky) -
                                                      static_cast<std::ptrdiff_t>(p.pad_h);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ih)) {
                                continue;
                            }
                            const T* xrow = xin + static_cast<std::size_t>(iy) * iw;
                            T* yrow = plane + y0 * ow;
                            for (std::size_t x0 = 0; x0 < ow; ++x0) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x0 * p.stride_w + kx) -
                                                          static_cast<std::ptrdiff_t>(p.pad_w);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(iw)) {
                                    continue;
                                }
                                yrow[x0] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    ensure_finite(out, "conv2d");
    return out;
}

template <typename T>
BasicTensor<T> conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& kernel,
                                     const Shape& input_shape, const Conv2dParams& p) {
    const Shape out_shape = conv2d_output_shape(input_shape, kernel.shape(), p);
    require_same_shape(grad_out, out_shape, "conv2d backward");
    const std::size_t n_batch = out_shape[0], n_out = out_shape[1], oh = out_shape[2], ow = out_shape[3];
    const std::size_t n_in = input_shape[1], ih = input_shape[2], iw = input_shape[3];
    const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);

    BasicTensor<T> gin(input_shape);
    const T* g = grad_out.data().data();
    const T* w = kernel.data().data();
    T* gx = gin.data().data();

    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t o = 0; o < n_out; ++o) {
            const T* gplane = g + (n * n_out + o) * oh * ow;
            for (std::size_t c = 0; c < n_in; ++c) {
                T* gxin = gx + (n * n_in + c) * ih * iw;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const T wv = w[((o * n_in + c) * kh + ky) * kw + kx];
                        for (std::size_t y0 = 0; y0 < oh; ++y0) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y0 * p.stride_h + ky) -
                                                      static_cast<std::ptrdiff_t>(p.pad_h);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ih)) {
                                continue;
                            }
                            T* gxrow = gxin + static_cast<std::size_t>(iy) * iw;
                            const T* grow = gplane + y0 * ow;
                            for (std::size_t x0 = 0; x0 < ow; ++x0) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x0 * p.stride_w + kx) -
                                                          static_cast<std::ptrdiff_t>(p.pad_w);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(iw)) {
                                    continue;
                                }
                                gxrow[ix] += wv * grow[x0];
                            }
                        }
                    }
                }
            }
        }
    }
    ensure_finite(gin, "conv2d backward");
    return gin;
}

// ---------------------------------------------------------------------------
// batchnorm

template <typename T>
BasicTensor<T> batchnorm_inference(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                                   const BasicTensor<T>& beta, const BasicTensor<T>& running_mean,
                                   const BasicTensor<T>& running_var, double eps) {
    if (input.rank() < 2) {
        throw ConfigError(fmt::format("batchnorm: input shape {} has no channel axis", to_string(input.shape())));
    }
    const std::size_t channels = input.dim(1);
    check_per_channel(gamma, channels, "gamma");
    check_per_channel(beta, channels, "beta");
    check_per_channel(running_mean, channels, "running_mean");
    check_per_channel(running_var, channels, "running_var");
    if (eps < 0) {
        throw ConfigError("batchnorm: eps must be non-negative");
    }
    for (std::size_t c = 0; c < channels; ++c) {
        if (running_var[c] < 0) {
            throw DataError(fmt::format("batchnorm: negative running variance {} at channel {}",
                                        static_cast<double>(running_var[c]), c));
        }
    }

    const std::size_t inner = input.size() / (input.dim(0) * channels);
    BasicTensor<T> out(input.shape());
    const T* x = input.data().data();
    T* y = out.data().data();
    for (std::size_t n = 0; n < input.dim(0); ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const T scale = gamma[c] / static_cast<T>(std::sqrt(static_cast<T>(running_var[c]) + static_cast<T>(eps)));
            const T shift = beta[c];
            const T mu = running_mean[c];
            const std::size_t base = (n * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                y[base + i] = scale * (x[base + i] - mu) + shift;
            }
        }
    }
    ensure_finite(out, "batchnorm");
    return out;
}

template <typename T>
BasicTensor<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& gamma,
                                  const BasicTensor<T>& running_var, double eps) {
    const std::size_t channels = grad_out.dim(1);
    const std::size_t inner = grad_out.size() / (grad_out.dim(0) * channels);
    BasicTensor<T> gin(grad_out.shape());
    const T* g = grad_out.data().data();
    T* gx = gin.data().data();
    for (std::size_t n = 0; n < grad_out.dim(0); ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const T scale = gamma[c] / static_cast<T>(std::sqrt(static_cast<T>(running_var[c]) + static_cast<T>(eps)));
            const std::size_t base = (n * channels + c) * inner;
            // + 0 maps -0.0 to +0.0 so disconnected units stay bitwise zero.
            for (std::size_t i = 0; i < inner; ++i) {
                gx[base + i] = scale * g[base + i] + T{0};
            }
        }
    }
    ensure_finite(gin, "batchnorm backward");
    return gin;
}

// ---------------------------------------------------------------------------
// relu

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
    BasicTensor<T> out(input.shape());
    auto x = input.data();
    auto y = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = x[i] > T{0} ? x[i] : T{0};
    }
    ensure_finite(input, "relu");
    return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input) {
    require_same_shape(grad_out, input.shape(), "relu backward");
    BasicTensor<T> gin(input.shape());
    auto g = grad_out.data();
    auto x = input.data();
    auto gx = gin.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        gx[i] = x[i] > T{0} ? g[i] : T{0};
    }
    return gin;
}

// ---------------------------------------------------------------------------
// pooling

template <typename T>
MaxPoolResult<T> max_pool2d_with_indices(const BasicTensor<T>& input, const Pool2dParams& p) {
    const Shape out_shape = pool2d_output_shape(input.shape(), p);
    const std::size_t planes = out_shape[0] * out_shape[1], oh = out_shape[2], ow = out_shape[3];
    const std::size_t ih = input.dim(2), iw = input.dim(3);

    MaxPoolResult<T> r{BasicTensor<T>(out_shape), std::vector<std::size_t>(element_count(out_shape))};
    const T* x = input.data().data();
    T* y = r.output.data().data();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t y0 = 0; y0 < oh; ++y0) {
            for (std::size_t x0 = 0; x0 < ow; ++x0) {
                T best = -std::numeric_limits<T>::infinity();
                std::size_t best_idx = 0;
                bool found = false;
                for (std::size_t ky = 0; ky < p.kernel_h; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y0 * p.stride_h + ky) -
                                              static_cast<std::ptrdiff_t>(p.pad_h);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ih)) {
                        continue;
                    }
                    for (std::size_t kx = 0; kx < p.kernel_w; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x0 * p.stride_w + kx) -
                                                  static_cast<std::ptrdiff_t>(p.pad_w);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(iw)) {
                            continue;
                        }
                        const std::size_t idx = (pl * ih + static_cast<std::size_t>(iy)) * iw +
                                                static_cast<std::size_t>(ix);
                        if (!found || x[idx] > best) {
                            best = x[idx];
                            best_idx = idx;
                            found = true;
                        }
                    }
                }
                const std::size_t o = (pl * oh + y0) * ow + x0;
                y[o] = best;
                r.argmax[o] = best_idx;
            }
        }
    }
    ensure_finite(input, "max_pool2d");
    return r;
}

template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& input, const Pool2dParams& p) {
    return max_pool2d_with_indices(input, p).output;
}

template <typename T>
BasicTensor<T> max_pool2d_backward(const BasicTensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                                   const Shape& input_shape) {
    if (argmax.size() != grad_out.size()) {
        throw UsageError("max_pool2d backward: index map does not match gradient size");
    }
    BasicTensor<T> gin(input_shape);
    auto g = grad_out.data();
    auto gx = gin.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        gx[argmax[i]] += g[i];
    }
    return gin;
}

template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& input, const Pool2dParams& p) {
    const Shape out_shape = pool2d_output_shape(input.shape(), p);
    const std::size_t planes = out_shape[0] * out_shape[1], oh = out_shape[2], ow = out_shape[3];
    const std::size_t ih = input.dim(2), iw = input.dim(3);
    const T inv_area = T{1} / static_cast<T>(p.kernel_h * p.kernel_w);

    BasicTensor<T> out(out_shape);
    const T* x = input.data().data();
    T* y = out.data().data();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t y0 = 0; y0 < oh; ++y0) {
            for (std::size_t x0 = 0; x0 < ow; ++x0) {
                T acc{0};
                for (std::size_t ky = 0; ky < p.kernel_h; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y0 * p.stride_h + ky) -
                                              static_cast<std::ptrdiff_t>(p.pad_h);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ih)) {
                        continue;
                    }
                    for (std::size_t kx = 0; kx < p.kernel_w; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x0 * p.stride_w + kx) -
                                                  static_cast<std::ptrdiff_t>(p.pad_w);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(iw)) {
                            continue;
                        }
                        acc += x[(pl * ih + static_cast<std::size_t>(iy)) * iw + static_cast<std::size_t>(ix)];
                    }
                }
                y[(pl * oh + y0) * ow + x0] = acc * inv_area;
            }
        }
    }
    ensure_finite(out, "avg_pool2d");
    return out;
}

template <typename T>
BasicTensor<T> avg_pool2d_backward(const BasicTensor<T>& grad_out, const Shape& input_shape, const Pool2dParams& p) {
    const Shape out_shape = pool2d_output_shape(input_shape, p);
    require_same_shape(grad_out, out_shape, "avg_pool2d backward");
    const std::size_t planes = out_shape[0] * out_shape[1], oh = out_shape[2], ow = out_shape[3];
    const std::size_t ih = input_shape[2], iw = input_shape[3];
    const T inv_area = T{1} / static_cast<T>(p.kernel_h * p.kernel_w);

    BasicTensor<T> gin(input_shape);
    const T* g = grad_out.data().data();
    T* gx = gin.data().data();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t y0 = 0; y0 < oh; ++y0) {
            for (std::size_t x0 = 0; x0 < ow; ++x0) {
                const T share = g[(pl * oh + y0) * ow + x0] * inv_area;
                for (std::size_t ky = 0; ky < p.kernel_h; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y0 * p.stride_h + ky) -
                                              static_cast<std::ptrdiff_t>(p.pad_h);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ih)) {
                        continue;
                    }
                    for (std::size_t kx = 0; kx < p.kernel_w; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x0 * p.stride_w + kx) -
                                                  static_cast<std::ptrdiff_t>(p.pad_w);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(iw)) {
                            continue;
                        }
                        gx[(pl * ih + static_cast<std::size_t>(iy)) * iw + static_cast<std::size_t>(ix)] += share;
                    }
                }
            }
        }
    }
    return gin;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
    require_rank(input.shape(), 4, "global_avg_pool");
    const std::size_t planes = input.dim(0) * input.dim(1);
    const std::size_t area = input.dim(2) * input.dim(3);
    BasicTensor<T> out({input.dim(0), input.dim(1)});
    const T* x = input.data().data();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        T acc{0};
        for (std::size_t i = 0; i < area; ++i) {
            acc += x[pl * area + i];
        }
        out[pl] = acc / static_cast<T>(area);
    }
    ensure_finite(out, "global_avg_pool");
    return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const Shape& input_shape) {
    require_rank(input_shape, 4, "global_avg_pool backward");
    require_same_shape(grad_out, Shape{input_shape[0], input_shape[1]}, "global_avg_pool backward");
    const std::size_t area = input_shape[2] * input_shape[3];
    BasicTensor<T> gin(input_shape);
    T* gx = gin.data().data();
    for (std::size_t pl = 0; pl < grad_out.size(); ++pl) {
        const T share = grad_out[pl] / static_cast<T>(area);
        std::fill(gx + pl * area, gx + (pl + 1) * area, share);
    }
    return gin;
}

// ---------------------------------------------------------------------------
// elementwise / dense

template <typename T>
BasicTensor<T> residual_add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(b, a.shape(), "residual_add");
    BasicTensor<T> out(a.shape());
    auto x = a.data();
    auto y = b.data();
    auto z = out.data();
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = x[i] + y[i];
    }
    ensure_finite(out, "residual_add");
    return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    require_rank(input.shape(), 2, "linear");
    if (weight.rank() != 2 || weight.dim(1) != input.dim(1)) {
        throw ConfigError(fmt::format("linear: weight shape {} incompatible with input {}",
                                      to_string(weight.shape()), to_string(input.shape())));
    }
    const std::size_t n_batch = input.dim(0), n_in = input.dim(1), n_out = weight.dim(0);
    if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != n_out)) {
        throw ConfigError(fmt::format("linear: bias shape {} does not match {} outputs", to_string(bias.shape()),
                                      n_out));
    }
    BasicTensor<T> out({n_batch, n_out});
    const T* x = input.data().data();
    const T* w = weight.data().data();
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t o = 0; o < n_out; ++o) {
            T acc = bias.empty() ? T{0} : bias[o];
            for (std::size_t f = 0; f < n_in; ++f) {
                acc += w[o * n_in + f] * x[n * n_in + f];
            }
            out[n * n_out + o] = acc;
        }
    }
    ensure_finite(out, "linear");
    return out;
}

template <typename T>
BasicTensor<T> linear_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& weight) {
    require_rank(grad_out.shape(), 2, "linear backward");
    const std::size_t n_batch = grad_out.dim(0), n_out = weight.dim(0), n_in = weight.dim(1);
    if (grad_out.dim(1) != n_out) {
        throw ConfigError("linear backward: gradient width does not match weight rows");
    }
    BasicTensor<T> gin({n_batch, n_in});
    const T* g = grad_out.data().data();
    const T* w = weight.data().data();
    T* gx = gin.data().data();
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t o = 0; o < n_out; ++o) {
            const T go = g[n * n_out + o];
            for (std::size_t f = 0; f < n_in; ++f) {
                gx[n * n_in + f] += go * w[o * n_in + f];
            }
        }
    }
    ensure_finite(gin, "linear backward");
    return gin;
}

template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& input) {
    if (input.rank() < 1) {
        throw ConfigError("flatten: scalar input");
    }
    return input.reshaped({input.dim(0), input.size() / input.dim(0)});
}

template <typename T>
BasicTensor<T> channel_mask(const BasicTensor<T>& input, const std::vector<std::size_t>& channels) {
    if (input.rank() < 2) {
        throw ConfigError(fmt::format("mask: input shape {} has no channel axis", to_string(input.shape())));
    }
    const std::size_t nc = input.dim(1);
    for (std::size_t c : channels) {
        if (c >= nc) {
            throw ConfigError(fmt::format("mask: channel {} out of range for {} channels", c, nc));
        }
    }
    BasicTensor<T> out = input;
    const std::size_t inner = input.size() / (input.dim(0) * nc);
    T* y = out.data().data();
    for (std::size_t n = 0; n < input.dim(0); ++n) {
        for (std::size_t c : channels) {
            std::fill_n(y + (n * nc + c) * inner, inner, T{0});
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> channel_mask_backward(const BasicTensor<T>& grad_out, const std::vector<std::size_t>& channels) {
    return channel_mask(grad_out, channels);
}

// ---------------------------------------------------------------------------
// softmax family

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& input) {
    const auto [rows, cols] = rows_cols(input, "softmax");
    BasicTensor<T> out(input.shape());
    const T* x = input.data().data();
    T* y = out.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * cols;
        T* yr = y + r * cols;
        const T mx = *std::max_element(xr, xr + cols);
        T sum{0};
        for (std::size_t c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
            yr[c] /= sum;
        }
    }
    ensure_finite(out, "softmax");
    return out;
}

template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output) {
    require_same_shape(grad_out, output.shape(), "softmax backward");
    const auto [rows, cols] = rows_cols(output, "softmax backward");
    BasicTensor<T> gin(output.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        T dot{0};
        for (std::size_t c = 0; c < cols; ++c) {
            dot += grad_out[r * cols + c] * output[r * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
            gin[r * cols + c] = output[r * cols + c] * (grad_out[r * cols + c] - dot);
        }
    }
    ensure_finite(gin, "softmax backward");
    return gin;
}

template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& input) {
    const auto [rows, cols] = rows_cols(input, "log_softmax");
    BasicTensor<T> out(input.shape());
    const T* x = input.data().data();
    T* y = out.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x + r * cols;
        const T mx = *std::max_element(xr, xr + cols);
        T sum{0};
        for (std::size_t c = 0; c < cols; ++c) {
            sum += std::exp(xr[c] - mx);
        }
        const T lse = mx + std::log(sum);
        for (std::size_t c = 0; c < cols; ++c) {
            y[r * cols + c] = xr[c] - lse;
        }
    }
    ensure_finite(out, "log_softmax");
    return out;
}

template <typename T>
BasicTensor<T> log_softmax_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output) {
    require_same_shape(grad_out, output.shape(), "log_softmax backward");
    const auto [rows, cols] = rows_cols(output, "log_softmax backward");
    BasicTensor<T> gin(output.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        T gsum{0};
        for (std::size_t c = 0; c < cols; ++c) {
            gsum += grad_out[r * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) {
            gin[r * cols + c] = grad_out[r * cols + c] - std::exp(output[r * cols + c]) * gsum;
        }
    }
    ensure_finite(gin, "log_softmax backward");
    return gin;
}

// ---------------------------------------------------------------------------

#define GAIA_INSTANTIATE_OPS(T)                                                                                   \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,           \
                                   const Conv2dParams&);                                                          \
    template BasicTensor<T> conv2d_backward_input(const BasicTensor<T>&, const BasicTensor<T>&, const Shape&,     \
                                                  const Conv2dParams&);                                           \
    template BasicTensor<T> batchnorm_inference(const BasicTensor<T>&, const BasicTensor<T>&,                     \
                                                const BasicTensor<T>&, const BasicTensor<T>&,                     \
                                                const BasicTensor<T>&, double);                                   \
    template BasicTensor<T> batchnorm_backward(const BasicTensor<T>&, const BasicTensor<T>&,                      \
                                               const BasicTensor<T>&, double);                                    \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                                          \
    template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                          \
    template MaxPoolResult<T> max_pool2d_with_indices(const BasicTensor<T>&, const Pool2dParams&);                \
    template BasicTensor<T> max_pool2d(const BasicTensor<T>&, const Pool2dParams&);                               \
    template BasicTensor<T> max_pool2d_backward(const BasicTensor<T>&, const std::vector<std::size_t>&,           \
                                                const Shape&);                                                    \
    template BasicTensor<T> avg_pool2d(const BasicTensor<T>&, const Pool2dParams&);                               \
    template BasicTensor<T> avg_pool2d_backward(const BasicTensor<T>&, const Shape&, const Pool2dParams&);        \
    template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                               \
    template BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>&, const Shape&);                        \
    template BasicTensor<T> residual_add(const BasicTensor<T>&, const BasicTensor<T>&);                           \
    template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);          \
    template BasicTensor<T> linear_backward_input(const BasicTensor<T>&, const BasicTensor<T>&);                  \
    template BasicTensor<T> flatten(const BasicTensor<T>&);                                                       \
    template BasicTensor<T> channel_mask(const BasicTensor<T>&, const std::vector<std::size_t>&);                 \
    template BasicTensor<T> channel_mask_backward(const BasicTensor<T>&, const std::vector<std::size_t>&);        \
    template BasicTensor<T> softmax(const BasicTensor<T>&);                                                       \
    template BasicTensor<T> softmax_backward(const BasicTensor<T>&, const BasicTensor<T>&);                       \
    template BasicTensor<T> log_softmax(const BasicTensor<T>&);                                                   \
    template BasicTensor<T> log_softmax_backward(const BasicTensor<T>&, const BasicTensor<T>&);

GAIA_INSTANTIATE_OPS(float)
GAIA_INSTANTIATE_OPS(double)

#undef GAIA_INSTANTIATE_OPS

} // namespace gaia::ops
