// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gaia/archive.hpp"
#include "gaia/tape.hpp"
#include "gaia/tensor.hpp"

// Finite-difference validation of the reverse-mode tape on random small
// networks. Each network is evaluated twice: by the float engine and by a
// double copy running the same templated kernels and backward rules.
//
//   * double reverse-mode tap gradients vs central differences of the double
//     copy: relative error < rel_tol, or absolute error < abs_tol where
//     |gradient| < small;
//   * float tap gradients vs the double ones: |g32 - g64| <=
//     f32_rel_tol*|g64| + f32_scale_tol*max|g64 over the tap|.
//
// Perturbations that flip any relu sign or max-pool choice are resampled.

namespace gaia {

struct RandomGraph {
    std::string document; // graph text
    WeightArchive weights;
    Tensor input;         // N×C×H×W
    std::vector<std::string> taps;
};

/// Random conv/batchnorm/relu/pool/residual/linear network with a few taps.
/// Every graph holds at least one of each of those op families.
RandomGraph random_graph(std::mt19937_64& rng);

struct GradcheckOptions {
    std::uint64_t seed = 0;
    std::size_t trials = 20;
    std::size_t elements_per_trial = 20;
    double h = 1e-3;
    double rel_tol = 1e-3;
    double small = 1e-6;   // below this |analytic|, compare absolutely
    double abs_tol = 1e-5;
    double f32_rel_tol = 1e-3;
    double f32_scale_tol = 1e-5;
    std::optional<OpKind> inject_sign_flip;
};

struct GradcheckFailure {
    std::size_t trial = 0;
    std::string tap;
    std::string layer;
    OpKind op = OpKind::input;
    std::size_t element = 0;
    std::string check;        // "finite-difference" or "float-engine"
    double analytic = 0;      // float engine
    double analytic_f64 = 0;  // double copy
    double numeric = 0;
    double error = 0;
};

struct GradcheckReport {
    std::size_t trials = 0;
    std::size_t checks = 0;
    std::size_t kink_resamples = 0; // perturbations that crossed a relu/max-pool branch
    double max_rel_error = 0;
    double max_abs_error = 0;       // over elements compared absolutely
    double max_f32_error = 0;       // |g32 - g64| / max|g64 over the tap|
    std::set<OpKind> ops_seen;
    std::vector<GradcheckFailure> failures;

    bool passed() const { return failures.empty(); }
};

GradcheckReport run_gradcheck(const GradcheckOptions& options);

} // namespace gaia
