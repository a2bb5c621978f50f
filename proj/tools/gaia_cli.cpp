// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

// gaia: score, evaluate and sweep gradient-abnormality OOD detectors.
//
// Exit codes: 0 success, 1 check failure, 2 configuration error, 3 data error.
// Every flag can also be set through GAIA_<FLAG> (e.g. GAIA_BATCH_SIZE); the
// command line wins.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "CLI11.hpp"
#include "gaia/archive.hpp"
#include "gaia/eval.hpp"
#include "gaia/gaia.hpp"
#include "gaia/gradcheck.hpp"
#include "gaia/graph.hpp"
#include "gaia/model.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheck = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

// Splits "a,b" and repeated flags into one flat list.
std::vector<std::string> split_list(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& item : items) {
        std::size_t start = 0;
        while (start <= item.size()) {
            const auto pos = item.find(',', start);
            auto part = item.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
            if (!part.empty()) {
                out.push_back(part);
            }
            if (pos == std::string::npos) {
                break;
            }
            start = pos + 1;
        }
    }
    return out;
}

std::string env_name(std::string flag) {
    std::string out = "GAIA_";
    for (char c : flag) {
        out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return out;
}

template <typename T>
CLI::Option* flag(CLI::App* app, const std::string& name, T& target, const std::string& help) {
    return app->add_option("--" + name, target, help)->envname(env_name(name));
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw gaia::DataError(fmt::format("cannot write '{}'", path.string()));
    }
    out << text;
    if (!out) {
        throw gaia::DataError(fmt::format("failed writing '{}'", path.string()));
    }
}

struct ScoreArgs {
    std::string model;
    std::string weights;
    std::string data;
    std::string method = "gaia-z";
    std::vector<std::string> taps{"block3,block4"};
    double tau = 0.0;
    double p = 2.0;
    std::string fusion = "two_stage";
    double eps0 = 1e-12;
    std::string out;
    std::size_t batch_size = 32;
    std::size_t jobs = 1;
    std::string dataset;
    std::string origin = "ID";
};

int run_score(const ScoreArgs& a) {
    gaia::ScoringSpec spec;
    spec.method = gaia::parse_method(a.method);
    spec.gaia.taps = split_list(a.taps);
    spec.gaia.tau = a.tau;
    spec.gaia.p = a.p;
    spec.gaia.fusion = gaia::parse_fusion(a.fusion);
    spec.gaia.eps0 = a.eps0;
    const gaia::Origin origin = gaia::parse_origin(a.origin);

    const gaia::Model model = gaia::load_model(a.model, a.weights);
    if (gaia::is_gradient_method(spec.method)) {
        spec.scorer().validate(model.graph());
    }
    const gaia::SampleBatch batch = gaia::load_dataset(a.data);
    gaia::check_batch(model.graph(), batch);

    const auto result = gaia::score_images(model, batch.images, spec, {a.batch_size, a.jobs});
    const std::string dataset = a.dataset.empty() ? batch.source : a.dataset;
    gaia::write_scores(a.out, gaia::make_records(result.scores, origin, dataset, std::string(a.method)));

    const auto degenerate = std::count(result.degenerate.begin(), result.degenerate.end(), true);
    fmt::print(stderr, "scored {} samples of '{}' with {} -> {}\n", result.scores.size(), dataset, a.method, a.out);
    if (degenerate > 0) {
        fmt::print(stderr, "note: {} samples had an all-zero output component (score uses the epsilon floor)\n",
                   degenerate);
    }
    return kExitOk;
}

struct EvalArgs {
    std::string id;
    std::vector<std::string> ood;
    std::string out;
};

int run_eval(const EvalArgs& a) {
    const auto id = gaia::read_scores(a.id);
    std::vector<std::pair<std::string, std::vector<gaia::ScoreRecord>>> ood;
    for (const auto& path : a.ood) {
        auto records = gaia::read_scores(path);
        std::string name = records.empty() ? fs::path(path).stem().string() : records.front().dataset;
        ood.emplace_back(std::move(name), std::move(records));
    }
    const auto table = gaia::evaluate_scores(id, ood);
    fmt::print("{:<20} {:>8} {:>8} {:>14} {:>6} {:>6}\n", "dataset", "FPR95", "AUROC", "threshold", "n_id",
               "n_ood");
    for (const auto& row : table.rows) {
        const auto& m = row.metrics;
        fmt::print("{:<20} {:>8.4f} {:>8.4f} {:>14.6g} {:>6} {:>6}\n", row.dataset, m.fpr95, m.auroc, m.threshold,
                   m.n_id, m.n_ood);
    }
    if (!a.out.empty()) {
        write_text(a.out, gaia::eval_table_json(table).dump(2) + "\n");
    }
    return kExitOk;
}

struct BenchArgs {
    std::string model;
    std::string weights;
    std::string id;
    std::vector<std::string> ood;
    std::vector<std::string> methods{"gaia-z,gaia-a,msp,energy"};
    std::vector<std::string> subsets{"block3,block4"};
    std::vector<double> p_values{2.0};
    std::string fusion = "two_stage";
    double tau = 0.0;
    double eps0 = 1e-12;
    std::string out;
    std::string scores_dir;
    std::size_t batch_size = 32;
    std::size_t jobs = 1;
};

int run_bench(const BenchArgs& a) {
    gaia::BenchmarkSpec spec;
    for (const auto& m : split_list(a.methods)) {
        spec.methods.push_back(gaia::parse_method(m));
    }
    spec.tap_subsets.clear();
    for (const auto& s : a.subsets) {
        spec.tap_subsets.push_back(split_list({s}));
    }
    spec.p_values = a.p_values;
    spec.fusion = gaia::parse_fusion(a.fusion);
    spec.tau = a.tau;
    spec.eps0 = a.eps0;
    spec.run = {a.batch_size, a.jobs};

    const gaia::Model model = gaia::load_model(a.model, a.weights);
    const gaia::SampleBatch id = gaia::load_dataset(a.id);
    std::vector<gaia::SampleBatch> ood;
    for (const auto& path : a.ood) {
        ood.push_back(gaia::load_dataset(path));
    }
    const auto report = gaia::run_benchmark(model, id, ood, spec);
    const std::string json = gaia::benchmark_json(report, spec).dump(2) + "\n";
    if (a.out.empty()) {
        fmt::print("{}", json);
    } else {
        write_text(a.out, json);
    }
    if (!a.scores_dir.empty()) {
        fs::create_directories(a.scores_dir);
        for (const auto& file : report.score_files) {
            gaia::write_scores(fs::path(a.scores_dir) / (file.name + ".csv"), file.records);
        }
    }
    std::size_t failed = 0;
    for (const auto& cell : report.cells) {
        if (!cell.error.empty()) {
            ++failed;
            fmt::print(stderr, "cell {} / {} failed: {}\n", cell.method, cell.ood_dataset, cell.error);
        }
    }
    fmt::print(stderr, "{} cells, {} failed\n", report.cells.size(), failed);
    return kExitOk;
}

struct GradcheckArgs {
    std::uint64_t seed = 0;
    std::size_t trials = 20;
    std::size_t elements = 20;
    std::string inject;
};

int run_gradcheck(const GradcheckArgs& a) {
    gaia::GradcheckOptions opt;
    opt.seed = a.seed;
    opt.trials = a.trials;
    opt.elements_per_trial = a.elements;
    if (!a.inject.empty()) {
        bool found = false;
        for (int k = 0; k <= static_cast<int>(gaia::OpKind::log_softmax); ++k) {
            const auto kind = static_cast<gaia::OpKind>(k);
            if (gaia::op_name(kind) == a.inject) {
                opt.inject_sign_flip = kind;
                found = true;
            }
        }
        if (!found) {
            throw gaia::ConfigError(fmt::format("unknown op kind '{}'", a.inject));
        }
    }
    const auto report = gaia::run_gradcheck(opt);
    std::vector<std::string> ops;
    for (auto k : report.ops_seen) {
        ops.emplace_back(gaia::op_name(k));
    }
    fmt::print("gradcheck: {} graphs, {} checks, {} kink resamples\n", report.trials, report.checks,
               report.kink_resamples);
    fmt::print("ops covered: {}\n", fmt::join(ops, " "));
    fmt::print("max relative error {:.3e}, max absolute error (small gradients) {:.3e}\n", report.max_rel_error,
               report.max_abs_error);
    fmt::print("float engine vs double: max deviation {:.3e} of the tap gradient scale\n", report.max_f32_error);
    for (const auto& f : report.failures) {
        fmt::print("FAIL [{}] graph {} tap {} (layer {}, op {}) element {}: analytic {:.9g} (f64 {:.9g}) numeric {:.9g} error {:.3e}\n",
                   f.check, f.trial, f.tap, f.layer, gaia::op_name(f.op), f.element, f.analytic, f.analytic_f64, f.numeric,
                   f.error);
    }
    fmt::print("{}\n", report.passed() ? "PASS" : "FAIL");
    return report.passed() ? kExitOk : kExitCheck;
}

bool looks_binary(const std::vector<std::byte>& bytes) {
    const std::size_t n = std::min<std::size_t>(bytes.size(), 512);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = std::to_integer<unsigned char>(bytes[i]);
        if (c == 0 || (c < 0x20 && c != '\n' && c != '\r' && c != '\t')) {
            return true;
        }
    }
    return false;
}

int run_inspect(const std::string& file) {
    const auto bytes = gaia::read_file_bytes(file);
    const bool archive = fs::path(file).extension() == ".gwta" ||
                         (bytes.size() >= 4 && std::to_integer<char>(bytes[0]) == 'G' &&
                          std::to_integer<char>(bytes[1]) == 'W' && std::to_integer<char>(bytes[2]) == 'T' &&
                          std::to_integer<char>(bytes[3]) == 'A') ||
                         looks_binary(bytes);
    if (archive) {
        gaia::WeightArchive a;
        try {
            a = gaia::decode_archive(bytes);
        } catch (const gaia::DataError& e) {
            throw gaia::DataError(fmt::format("{}: {}", file, e.what()));
        }
        fmt::print("archive {}: {} tensors\n", file, a.size());
        for (const auto& e : a.entries()) {
            fmt::print("  {:<40} {:<4} {}\n", e.name, gaia::dtype_name(e.dtype), gaia::to_string(e.dims));
        }
        return kExitOk;
    }
    const std::string text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    const auto graph = gaia::ModelGraph::parse(text);
    fmt::print("graph {}\n{}", file, graph.describe());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gaia: gradient-abnormality OOD scoring"};
    app.require_subcommand(1);

    ScoreArgs sa;
    auto* score = app.add_subcommand("score", "score a dataset archive and write a CSV score file");
    flag(score, "model", sa.model, "graph document")->required();
    flag(score, "weights", sa.weights, "weight archive")->required();
    flag(score, "data", sa.data, "dataset archive")->required();
    flag(score, "method", sa.method, "gaia-z | gaia-a | msp | energy")->capture_default_str();
    flag(score, "taps", sa.taps, "tap ids or block labels, comma separated, or 'all'")->capture_default_str();
    flag(score, "tau", sa.tau, "zero tolerance for gaia-z")->capture_default_str();
    flag(score, "p", sa.p, "norm order of the abnormality matrix")->capture_default_str();
    flag(score, "fusion", sa.fusion, "gaia-a fusion: two_stage | top1_label | output_only | inner_only")
        ->capture_default_str();
    flag(score, "eps0", sa.eps0, "floor of the gaia-a denominator")->capture_default_str();
    flag(score, "out", sa.out, "output CSV")->required();
    flag(score, "batch-size", sa.batch_size, "samples per forward/backward pass")->capture_default_str();
    flag(score, "jobs", sa.jobs, "worker threads")->capture_default_str();
    flag(score, "dataset", sa.dataset, "dataset tag written to the CSV (default: data file stem)");
    flag(score, "origin", sa.origin, "origin tag written to the CSV: ID | OOD")->capture_default_str();

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "compute FPR95 / AUROC from score files");
    flag(eval, "id", ea.id, "ID score CSV")->required();
    flag(eval, "ood", ea.ood, "OOD score CSV (repeatable)")->required();
    flag(eval, "out", ea.out, "JSON report path");

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "sweep methods, tap subsets and norms over ID/OOD datasets");
    flag(bench, "model", ba.model, "graph document")->required();
    flag(bench, "weights", ba.weights, "weight archive")->required();
    flag(bench, "id", ba.id, "ID dataset archive")->required();
    flag(bench, "ood", ba.ood, "OOD dataset archive (repeatable)")->required();
    flag(bench, "methods", ba.methods, "methods, comma separated")->capture_default_str();
    flag(bench, "subset", ba.subsets, "tap subset, comma separated (repeatable)")->capture_default_str();
    flag(bench, "p", ba.p_values, "norm orders (repeatable)")->capture_default_str();
    flag(bench, "fusion", ba.fusion, "gaia-a fusion mode")->capture_default_str();
    flag(bench, "tau", ba.tau, "zero tolerance for gaia-z")->capture_default_str();
    flag(bench, "eps0", ba.eps0, "floor of the gaia-a denominator")->capture_default_str();
    flag(bench, "out", ba.out, "JSON report path (default: stdout)");
    flag(bench, "scores-dir", ba.scores_dir, "directory for per-configuration score CSVs");
    flag(bench, "batch-size", ba.batch_size, "samples per forward/backward pass")->capture_default_str();
    flag(bench, "jobs", ba.jobs, "worker threads")->capture_default_str();

    GradcheckArgs ga;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the backward pass");
    flag(gradcheck, "seed", ga.seed, "random seed")->capture_default_str();
    flag(gradcheck, "trials", ga.trials, "number of random graphs")->capture_default_str();
    flag(gradcheck, "elements", ga.elements, "tap elements checked per graph")->capture_default_str();
#ifdef GAIA_FAULT_INJECTION
    flag(gradcheck, "inject-sign-flip", ga.inject, "negate the backward rule of this op kind");
#endif

    std::string inspect_file;
    auto* inspect = app.add_subcommand("inspect", "list the contents of an archive or graph document");
    flag(inspect, "file", inspect_file, "archive or graph file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*score) {
            return run_score(sa);
        }
        if (*eval) {
            return run_eval(ea);
        }
        if (*bench) {
            return run_bench(ba);
        }
        if (*gradcheck) {
            return run_gradcheck(ga);
        }
        if (*inspect) {
            return run_inspect(inspect_file);
        }
    } catch (const gaia::DataError& e) {
        fmt::print(stderr, "data error: {}\n", e.what());
        return kExitData;
    } catch (const gaia::ConfigError& e) {
        fmt::print(stderr, "configuration error: {}\n", e.what());
        return kExitConfig;
    } catch (const gaia::UsageError& e) {
        fmt::print(stderr, "usage error: {}\n", e.what());
        return kExitConfig;
    } catch (const std::filesystem::filesystem_error& e) {
        fmt::print(stderr, "data error: {}\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitCheck;
    }
    return kExitConfig;
}
