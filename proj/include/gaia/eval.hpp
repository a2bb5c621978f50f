// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gaia/archive.hpp"
#include "gaia/gaia.hpp"
#include "gaia/metrics.hpp"
#include "gaia/model.hpp"

namespace gaia {

// ---- score files ---------------------------------------------------------

enum class Origin { id, ood };

std::string_view origin_name(Origin o); // "ID" / "OOD"
Origin parse_origin(std::string_view text);

struct ScoreRecord {
    std::string sample_id;
    double score = 0.0;
    Origin origin = Origin::id;
    std::string dataset;
    std::string method;

    friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

/// CSV with header `sample_id,score,origin,dataset,method`. Scores are
/// written with 17 significant digits so they read back bit-exactly.
std::string format_scores(const std::vector<ScoreRecord>& records);
void write_scores(const std::filesystem::path& path, const std::vector<ScoreRecord>& records);

/// DataError naming the line for a bad header, wrong field count, unparsable
/// or non-finite score, or unknown origin.
std::vector<ScoreRecord> parse_scores(std::string_view text, std::string_view source = "<scores>");
std::vector<ScoreRecord> read_scores(const std::filesystem::path& path);

std::vector<double> scores_of(const std::vector<ScoreRecord>& records);

// ---- scoring entry point ---------------------------------------------------

enum class ScoringMethod { gaia_z, gaia_a, msp, energy };

std::string_view method_name(ScoringMethod m);
/// ConfigError listing the valid method names.
ScoringMethod parse_method(std::string_view text);
bool is_gradient_method(ScoringMethod m);

struct ScoringSpec {
    ScoringMethod method = ScoringMethod::gaia_z;
    ScorerConfig gaia; // method field is overwritten from `method`

    /// The GAIA config with its method set; ConfigError for baselines.
    ScorerConfig scorer() const;
};

struct RunOptions {
    std::size_t batch_size = 32;
    std::size_t jobs = 1;
};

/// Scores every image, `batch_size` at a time on up to `jobs` threads.
/// Results are in input order and independent of batch size and job count.
ScoreResult score_images(const Model& model, const Tensor& images, const ScoringSpec& spec, const RunOptions& run);

/// GAIA abnormality matrices for every image, batched like score_images.
std::vector<SampleProfile> profile_images(const Model& model, const Tensor& images, const ScorerConfig& cfg,
                                          const RunOptions& run);

/// Records for one dataset; sample ids are the row indices.
std::vector<ScoreRecord> make_records(const std::vector<double>& scores, Origin origin, const std::string& dataset,
                                      const std::string& method);

// ---- evaluation of score sets ----------------------------------------------

struct EvalRow {
    std::string dataset;
    DetectionMetrics metrics;
};

struct EvalTable {
    std::vector<EvalRow> rows; // one per OOD set, then "average"
};

/// `id` must hold only ID records and every OOD set only OOD records
/// (DataError otherwise). The last row averages fpr95 and auroc over the
/// OOD rows and sums their counts.
EvalTable evaluate_scores(const std::vector<ScoreRecord>& id,
                          const std::vector<std::pair<std::string, std::vector<ScoreRecord>>>& ood);

nlohmann::ordered_json eval_table_json(const EvalTable& table);

// ---- benchmark sweeps -------------------------------------------------------

struct BenchmarkSpec {
    std::vector<ScoringMethod> methods;
    std::vector<std::vector<std::string>> tap_subsets = {{"block3", "block4"}};
    std::vector<double> p_values = {2.0};
    Fusion fusion = Fusion::two_stage;
    double tau = 0.0;
    double eps0 = 1e-12;
    RunOptions run;
};

struct BenchmarkCell {
    std::string method;
    std::string ood_dataset;
    std::vector<std::string> taps; // empty for output-space baselines
    std::optional<double> p;       // unset for output-space baselines
    std::optional<DetectionMetrics> metrics;
    std::size_t degenerate_id = 0;
    std::size_t degenerate_ood = 0;
    std::string error; // non-empty when the cell failed
};

struct ScoreFile {
    std::string name; // e.g. gaia-z_block3+block4_p2
    std::vector<ScoreRecord> records;
};

struct BenchmarkReport {
    std::string id_dataset;
    std::vector<std::string> ood_datasets;
    std::vector<BenchmarkCell> cells;
    std::vector<ScoreFile> score_files;
};

/// One cell per (method, OOD set, tap subset, p); baselines get one cell per
/// OOD set. A failing scorer marks its cells with an error; other cells run.
BenchmarkReport run_benchmark(const Model& model, const SampleBatch& id, const std::vector<SampleBatch>& ood,
                              const BenchmarkSpec& spec);

nlohmann::ordered_json benchmark_json(const BenchmarkReport& report, const BenchmarkSpec& spec);

} // namespace gaia
