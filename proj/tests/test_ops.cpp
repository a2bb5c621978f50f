// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "gaia/ops.hpp"
#include "test_support.hpp"

using namespace gaia;
using gaia::testing::random_tensor;
using gaia::testing::uniform_tensor;

namespace {

// Direct six-loop cross-correlation in double.
Tensor naive_conv(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride, std::size_t pad) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
    Tensor y({n, o, oh, ow});
    for (std::size_t in = 0; in < n; ++in)
        for (std::size_t io = 0; io < o; ++io)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = b.empty() ? 0.0 : b[io];
                    for (std::size_t ic = 0; ic < c; ++ic)
                        for (std::size_t a = 0; a < kh; ++a)
                            for (std::size_t bb = 0; bb < kw; ++bb) {
                                const long r = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                                const long q = static_cast<long>(j * stride + bb) - static_cast<long>(pad);
                                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(w)) {
                                    continue;
                                }
                                acc += static_cast<double>(x[((in * c + ic) * h + r) * w + q]) *
                                       k[((io * c + ic) * kh + a) * kw + bb];
                            }
                    y[((in * o + io) * oh + i) * ow + j] = static_cast<float>(acc);
                }
    return y;
}

} // namespace

TEST_CASE("conv2d with a 1x1 identity kernel returns its input") {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor(rng, {1, 1, 3, 3});
    const Tensor k({1, 1, 1, 1}, 1.0f);
    const Tensor b({1}, 0.0f);
    CHECK(bit_equal(ops::conv2d(x, k, b, {}), x));
}

TEST_CASE("conv2d of a zero input is the bias everywhere") {
    std::mt19937_64 rng(2);
    const Tensor x({2, 3, 5, 4}, 0.0f);
    const Tensor k = random_tensor(rng, {2, 3, 3, 3});
    const Tensor b({2}, std::vector<float>{0.25f, -1.5f});
    const Tensor y = ops::conv2d(x, k, b, {2, 1, 1, 1});
    CHECK(y.shape() == Shape{2, 2, 3, 4});
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(y[i] == (i / 12 % 2 == 0 ? 0.25f : -1.5f));
    }
}

TEST_CASE("conv2d matches the six-loop reference") {
    std::mt19937_64 rng(3);
    const Tensor x = random_tensor(rng, {1, 2, 5, 5});
    const Tensor k = random_tensor(rng, {3, 2, 3, 3});
    const Tensor b = random_tensor(rng, {3});
    for (std::size_t stride : {1, 2}) {
        for (std::size_t pad : {0, 1}) {
            const Tensor got = ops::conv2d(x, k, b, {stride, stride, pad, pad});
            const Tensor want = naive_conv(x, k, b, stride, pad);
            REQUIRE(got.shape() == want.shape());
            for (std::size_t i = 0; i < got.size(); ++i) {
                CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("conv2d shape errors are configuration errors") {
    const Tensor x({1, 2, 4, 4});
    CHECK_THROWS_AS(ops::conv2d(x, Tensor({1, 3, 3, 3}), Tensor(), {}), ConfigError);
    CHECK_THROWS_AS(ops::conv2d(x, Tensor({1, 2, 5, 5}), Tensor(), {}), ConfigError);
    CHECK_THROWS_AS(ops::conv2d(x, Tensor({2, 2, 3, 3}), Tensor({3}), {}), ConfigError);
    CHECK_THROWS_AS(ops::conv2d(Tensor({2, 4, 4}), Tensor({1, 2, 3, 3}), Tensor(), {}), ConfigError);
}

TEST_CASE("batchnorm identity, centered input and scalar oracle") {
    std::mt19937_64 rng(4);
    const Tensor x = random_tensor(rng, {2, 3, 2, 2});
    const Tensor ones({3}, 1.0f), zeros({3}, 0.0f);
    CHECK(bit_equal(ops::batchnorm_inference(x, ones, zeros, zeros, ones, 0.0), x));

    const Tensor two({1, 1, 1, 1}, 2.0f);
    const Tensor y = ops::batchnorm_inference(two, Tensor({1}, 5.0f), Tensor({1}, 3.0f), Tensor({1}, 2.0f),
                                              Tensor({1}, 7.0f), 1e-5);
    CHECK(y[0] == 3.0f);

    const Tensor g = random_tensor(rng, {3}), be = random_tensor(rng, {3}), m = random_tensor(rng, {3});
    const Tensor v = uniform_tensor(rng, {3}, 0.1f, 2.0f);
    const Tensor r = ops::batchnorm_inference(x, g, be, m, v, 1e-5);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::size_t c = (i / 4) % 3;
        const double want = g[c] * (x[i] - static_cast<double>(m[c])) / std::sqrt(v[c] + 1e-5) + be[c];
        CHECK(r[i] == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("batchnorm rejects negative variance as a data error") {
    const Tensor x({1, 2, 1, 1}, 1.0f);
    const Tensor p({2}, 1.0f);
    CHECK_THROWS_AS(ops::batchnorm_inference(x, p, p, p, Tensor({2}, std::vector<float>{1.0f, -0.5f}), 1e-5),
                    DataError);
    CHECK_THROWS_AS(ops::batchnorm_inference(x, Tensor({3}, 1.0f), p, p, p, 1e-5), ConfigError);
}

TEST_CASE("relu and its subgradient") {
    const Tensor x({3}, std::vector<float>{-1.0f, 0.0f, 2.0f});
    CHECK(ops::relu(x).values() == std::vector<float>{0.0f, 0.0f, 2.0f});
    const Tensor g = ops::relu_backward(Tensor({3}, 1.0f), x);
    CHECK(g.values() == std::vector<float>{0.0f, 0.0f, 1.0f});
}

TEST_CASE("max_pool2d picks the maximum and routes ties to the first") {
    const Tensor x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
    CHECK(ops::max_pool2d(x, {}).values() == std::vector<float>{4.0f});

    const Tensor tie({1, 1, 2, 2}, std::vector<float>{5, 5, 5, 5});
    const auto r = ops::max_pool2d_with_indices(tie, {});
    CHECK(r.argmax == std::vector<std::size_t>{0});
    const Tensor g = ops::max_pool2d_backward(Tensor({1, 1, 1, 1}, 1.0f), r.argmax, tie.shape());
    CHECK(g.values() == std::vector<float>{1, 0, 0, 0});
}

TEST_CASE("avg_pool2d counts padding in the divisor") {
    const Tensor x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
    CHECK(ops::avg_pool2d(x, {}).values() == std::vector<float>{2.5f});
    ops::Pool2dParams p{3, 3, 1, 1, 1, 1};
    const Tensor y = ops::avg_pool2d(x, p);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y[0] == doctest::Approx(10.0 / 9.0));
}

TEST_CASE("global_avg_pool, residual_add, flatten") {
    const Tensor x({1, 2, 1, 2}, std::vector<float>{1, 3, 10, 20});
    CHECK(ops::global_avg_pool(x).values() == std::vector<float>{2, 15});
    CHECK(ops::residual_add(x, x).values() == std::vector<float>{2, 6, 20, 40});
    CHECK_THROWS_AS(ops::residual_add(x, Tensor({1, 2, 2, 1})), ConfigError);
    CHECK(ops::flatten(x).shape() == Shape{1, 4});
}

TEST_CASE("linear against the row formula") {
    const Tensor x({1, 3}, std::vector<float>{1, 2, 3});
    const Tensor w({2, 3}, std::vector<float>{1, 0, -1, 0.5f, 0.5f, 0.5f});
    const Tensor b({2}, std::vector<float>{10, 0});
    CHECK(ops::linear(x, w, b).values() == std::vector<float>{8, 3});
    CHECK_THROWS_AS(ops::linear(x, Tensor({2, 4}), b), ConfigError);
}

TEST_CASE("log_softmax of uniform logits is -ln C and stays finite for large logits") {
    const Tensor u({4}, 0.7f);
    const Tensor lu = ops::log_softmax(u);
    for (float v : lu.data()) {
        CHECK(v == doctest::Approx(-std::log(4.0)).epsilon(1e-6));
    }
    const Tensor big({3}, std::vector<float>{1e4f, -1e4f, 0.0f});
    const Tensor ls = ops::log_softmax(big);
    CHECK(ls[0] == doctest::Approx(0.0));
    CHECK(ls[1] == doctest::Approx(-2e4));
    const Tensor sm = ops::softmax(big);
    CHECK(sm[0] == doctest::Approx(1.0));
    CHECK(sm[1] == 0.0f);
}

TEST_CASE("softmax rows sum to one") {
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor(rng, {4, 7}, 3.0f);
    const Tensor s = ops::softmax(x);
    for (std::size_t n = 0; n < 4; ++n) {
        double sum = 0;
        for (float v : s.row(n)) {
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("non-finite values surface as data errors") {
    const Tensor bad({2}, std::vector<float>{1.0f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(ops::relu(bad), DataError);
    const Tensor inf({1, 1, 1, 1}, std::numeric_limits<float>::infinity());
    CHECK_THROWS_AS(ops::conv2d(inf, Tensor({1, 1, 1, 1}, 1.0f), Tensor(), {}), DataError);
}

TEST_CASE("channel mask zeroes the channel and its gradient is +0.0") {
    const Tensor x({1, 2, 1, 2}, std::vector<float>{1, 2, 3, 4});
    CHECK(ops::channel_mask(x, {1}).values() == std::vector<float>{1, 2, 0, 0});
    const Tensor g = ops::channel_mask_backward(Tensor({1, 2, 1, 2}, -1.0f), {1});
    CHECK(g.values() == std::vector<float>{-1, -1, 0, 0});
    CHECK_FALSE(std::signbit(g[2]));
}
