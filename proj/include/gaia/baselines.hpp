// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "gaia/tensor.hpp"

// Output-space reference scorers. Both are negated so that higher means more
// OOD, like the gradient scores.

namespace gaia {

/// -max_c softmax(logits)_c per row of an N×C tensor.
std::vector<double> score_msp(const Tensor& logits);

/// -logsumexp(logits) per row, temperature 1.
std::vector<double> score_energy(const Tensor& logits);

} // namespace gaia
