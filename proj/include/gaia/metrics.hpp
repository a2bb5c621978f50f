// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

// Detection metrics over higher-is-more-OOD scores, OOD as the positive class.

namespace gaia {

struct Fpr95 {
    double fpr95 = 0.0;
    double threshold = 0.0; // nearest-rank 95th percentile of the ID scores
};

/// gamma = smallest ID score with at least 95% of ID scores <= gamma;
/// fpr95 = fraction of OOD scores <= gamma. UsageError on an empty set,
/// DataError on a non-finite score.
Fpr95 compute_fpr95(std::span<const double> id_scores, std::span<const double> ood_scores);

/// P(ood > id) + 0.5 P(ood == id) over all pairs.
double compute_auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

struct DetectionMetrics {
    double fpr95 = 0.0;
    double auroc = 0.0;
    double threshold = 0.0;
    std::size_t n_id = 0;
    std::size_t n_ood = 0;
};

DetectionMetrics detection_metrics(std::span<const double> id_scores, std::span<const double> ood_scores);

} // namespace gaia
