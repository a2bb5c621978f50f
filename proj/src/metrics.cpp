// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include "gaia/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <fmt/format.h>

#include "gaia/error.hpp"

namespace gaia {

namespace {

std::vector<double> sorted_checked(std::span<const double> scores, const char* which) {
    if (scores.empty()) {
        throw UsageError(fmt::format("{} score set is empty", which));
    }
    std::vector<double> out(scores.begin(), scores.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!std::isfinite(out[i])) {
            throw DataError(fmt::format("{} score {} is not finite", which, i));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

Fpr95 compute_fpr95(std::span<const double> id_scores, std::span<const double> ood_scores) {
    const auto id = sorted_checked(id_scores, "ID");
    const auto ood = sorted_checked(ood_scores, "OOD");
    const std::size_t n = id.size();
    const std::size_t rank = (95 * n + 99) / 100; // ceil(0.95 n), 1-based
    Fpr95 r;
    r.threshold = id[rank - 1];
    const auto accepted = std::upper_bound(ood.begin(), ood.end(), r.threshold) - ood.begin();
    r.fpr95 = static_cast<double>(accepted) / static_cast<double>(ood.size());
    return r;
}

double compute_auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    const auto id = sorted_checked(id_scores, "ID");
    const auto ood = sorted_checked(ood_scores, "OOD");
    // Twice the Mann-Whitney U statistic, kept integral so the result is exact.
    std::uint64_t twice_u = 0;
    for (double s : ood) {
        const auto lo = std::lower_bound(id.begin(), id.end(), s) - id.begin();
        const auto hi = std::upper_bound(id.begin(), id.end(), s) - id.begin();
        twice_u += 2 * static_cast<std::uint64_t>(lo) + static_cast<std::uint64_t>(hi - lo);
    }
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

DetectionMetrics detection_metrics(std::span<const double> id_scores, std::span<const double> ood_scores) {
    const auto f = compute_fpr95(id_scores, ood_scores);
    DetectionMetrics m;
    m.fpr95 = f.fpr95;
    m.threshold = f.threshold;
    m.auroc = compute_auroc(id_scores, ood_scores);
    m.n_id = id_scores.size();
    m.n_ood = ood_scores.size();
    return m;
}

} // namespace gaia
