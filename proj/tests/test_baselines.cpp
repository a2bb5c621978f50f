// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "gaia/baselines.hpp"
#include "test_support.hpp"

using namespace gaia;

TEST_CASE("MSP examples") {
    CHECK(score_msp(Tensor({1, 4}, 1.5f))[0] == doctest::Approx(-0.25).epsilon(1e-12));
    CHECK(score_msp(Tensor({1, 1}, 3.0f))[0] == -1.0);
    // Frozen from an independent double evaluation of -e^2/(e^2+2).
    CHECK(score_msp(Tensor({1, 3}, std::vector<float>{2, 0, 0}))[0] ==
          doctest::Approx(-0.7869860421615985).epsilon(1e-12));
}

TEST_CASE("MSP stays within [-1, -1/C]") {
    std::mt19937_64 rng(31);
    const Tensor logits = gaia::testing::random_tensor(rng, {50, 5}, 4.0f);
    for (double s : score_msp(logits)) {
        CHECK(s >= -1.0);
        CHECK(s <= -0.2 + 1e-12);
    }
}

TEST_CASE("Energy examples and the shift identity") {
    CHECK(score_energy(Tensor({1, 10}, 0.0f))[0] == doctest::Approx(-2.302585092994046).epsilon(1e-12));

    std::mt19937_64 rng(32);
    const Tensor logits = gaia::testing::random_tensor(rng, {20, 6}, 3.0f);
    Tensor shifted = logits;
    for (float& v : shifted.data()) {
        v += 4.0f;
    }
    const auto a = score_energy(logits), b = score_energy(shifted);
    for (std::size_t n = 0; n < a.size(); ++n) {
        CHECK(std::abs(b[n] - (a[n] - 4.0)) < 1e-5);
    }
}

TEST_CASE("Energy against a 64-bit logsumexp, and large logits stay finite") {
    std::mt19937_64 rng(33);
    const Tensor logits = gaia::testing::random_tensor(rng, {30, 8}, 5.0f);
    const auto got = score_energy(logits);
    for (std::size_t n = 0; n < 30; ++n) {
        long double z = 0;
        for (float v : logits.row(n)) {
            z += std::exp(static_cast<long double>(v));
        }
        CHECK(std::abs(got[n] + static_cast<double>(std::log(z))) < 1e-5);
    }
    const auto big = score_energy(Tensor({1, 2}, std::vector<float>{1e4f, -1e4f}));
    CHECK(big[0] == doctest::Approx(-1e4));
    CHECK(std::isfinite(score_msp(Tensor({1, 2}, std::vector<float>{1e4f, -1e4f}))[0]));
}

TEST_CASE("baselines reject malformed logits") {
    CHECK_THROWS_AS(score_msp(Tensor({4}, 0.0f)), ConfigError);
    CHECK_THROWS_AS(score_energy(Tensor({1, 2}, std::vector<float>{0.0f, INFINITY})), DataError);
}
