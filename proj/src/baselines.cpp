// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include "gaia/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace gaia {

namespace {

void check_logits(const Tensor& logits) {
    if (logits.rank() != 2) {
        throw ConfigError(fmt::format("baseline scorers expect N×C logits, got {}", to_string(logits.shape())));
    }
    ensure_finite(logits, "logits");
}

// max_j s_j and sum_j exp(s_j - max), in double.
std::pair<double, double> shifted_sum(std::span<const float> row) {
    double m = row[0];
    for (float s : row) {
        m = std::max(m, static_cast<double>(s));
    }
    double z = 0.0;
    for (float s : row) {
        z += std::exp(static_cast<double>(s) - m);
    }
    return {m, z};
}

} // namespace

std::vector<double> score_msp(const Tensor& logits) {
    check_logits(logits);
    std::vector<double> out;
    out.reserve(logits.dim(0));
    for (std::size_t n = 0; n < logits.dim(0); ++n) {
        const auto [m, z] = shifted_sum(logits.row(n));
        out.push_back(-1.0 / z);
    }
    return out;
}

std::vector<double> score_energy(const Tensor& logits) {
    check_logits(logits);
    std::vector<double> out;
    out.reserve(logits.dim(0));
    for (std::size_t n = 0; n < logits.dim(0); ++n) {
        const auto [m, z] = shifted_sum(logits.row(n));
        out.push_back(-(m + std::log(z)));
    }
    return out;
}

} // namespace gaia
