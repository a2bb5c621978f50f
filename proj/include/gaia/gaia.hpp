// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gaia/model.hpp"
#include "gaia/tensor.hpp"

// Gradient-abnormality OOD scores.
//
// GAIA-Z measures, per tapped channel, how dense the attribution gradient of
// the predicted class is. GAIA-A divides the mean absolute inner gradient of
// each tapped channel by the square root of the mean absolute gradient of the
// summed log-softmax at the last feature map. Both assemble a zero-padded
// layer×channel matrix and report its p-norm. Higher means more OOD.

namespace gaia {

enum class Method { gaia_z, gaia_a };
enum class Fusion { two_stage, top1_label, output_only, inner_only };

std::string_view method_name(Method m);
std::string_view fusion_name(Fusion f);
/// Accepts `two_stage` / `two-stage` style spellings; ConfigError lists valid modes.
Fusion parse_fusion(std::string_view text);

struct ScorerConfig {
    Method method = Method::gaia_z;
    std::vector<std::string> taps; // tap ids or block labels
    double tau = 0.0;
    double p = 2.0;
    Fusion fusion = Fusion::two_stage;
    double eps0 = 1e-12;

    /// Throws ConfigError for an empty or unknown tap selection, tau < 0,
    /// p < 1, eps0 <= 0, a fusion mode given to GAIA-Z, or GAIA-A inner taps
    /// placed after the feature/classifier split.
    void validate(const ModelGraph& graph) const;
};

/// Fraction of entries with |g| > tau.
double zero_deflation_expectation(std::span<const float> grad_map, double tau);

/// Gradient of sum_c log softmax_c(s) with respect to s: 1 - C * softmax(s).
/// Rank 1 (C) or rank 2 (N×C, per row).
Tensor fused_logsoftmax_seed(const Tensor& logits);

/// mean|inner| / sqrt(max(mean|output|, eps0)).
double channel_avg_expectation(std::span<const float> inner_grad, std::span<const float> output_grad, double eps0);

/// Mean of |g| accumulated in double, in index order.
double mean_abs(std::span<const float> values);

/// L×K_m matrix; row l holds K_l entries followed by exact zeros.
class AbnormalityMatrix {
public:
    AbnormalityMatrix() = default;

    /// Pads every row to the widest one. Entries must be finite and >= 0.
    static AbnormalityMatrix assemble(std::vector<std::string> row_labels, std::vector<std::vector<double>> rows);

    std::size_t rows() const noexcept { return labels_.size(); }
    std::size_t cols() const noexcept { return cols_; }
    double at(std::size_t row, std::size_t col) const { return data_.at(row * cols_ + col); }
    /// Unpadded width K_l of a row.
    std::size_t width(std::size_t row) const { return widths_.at(row); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    const std::vector<double>& values() const noexcept { return data_; }

    /// Sub-matrix of the named rows, in the given order, re-padded.
    AbnormalityMatrix select(const std::vector<std::string>& row_labels) const;

private:
    std::vector<std::string> labels_;
    std::vector<std::size_t> widths_;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// (sum |e|^p)^(1/p); ConfigError when p < 1.
double matrix_pnorm(const AbnormalityMatrix& m, double p);

enum class Decision { in, out };
/// `out` iff score > gamma.
Decision decide(double score, double gamma);

struct SampleProfile {
    AbnormalityMatrix lambda;
    double e_output = 0.0;        // GAIA-A output component; 0 for GAIA-Z
    bool degenerate_output = false; // all-zero output component
};

/// Per-sample abnormality matrices for one image batch, rows in tap order.
std::vector<SampleProfile> gaia_profiles(const Model& model, const Tensor& images, const ScorerConfig& cfg);

struct ScoreResult {
    std::vector<double> scores;
    std::vector<bool> degenerate; // GAIA-A samples whose output component vanished
};

ScoreResult score_gaia_z(const Model& model, const Tensor& images, const ScorerConfig& cfg);
ScoreResult score_gaia_a(const Model& model, const Tensor& images, const ScorerConfig& cfg);
/// Dispatches on cfg.method.
ScoreResult score_gaia(const Model& model, const Tensor& images, const ScorerConfig& cfg);

} // namespace gaia
