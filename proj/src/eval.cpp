// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include "gaia/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "gaia/baselines.hpp"

namespace gaia {

namespace {

constexpr std::string_view kHeader = "sample_id,score,origin,dataset,method";

std::string_view trim_cr(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
    Shape shape = t.shape();
    shape[0] = count;
    const std::size_t stride = t.size() / t.dim(0);
    const auto src = t.data().subspan(begin * stride, count * stride);
    return Tensor(std::move(shape), std::vector<float>(src.begin(), src.end()));
}

// Runs fn(chunk) for every chunk on up to `jobs` threads. The first failing
// chunk, in chunk order, has its exception rethrown.
template <typename Fn>
void for_each_chunk(std::size_t chunks, std::size_t jobs, Fn&& fn) {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(chunks);
    const auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < chunks;) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(std::max<std::size_t>(jobs, 1), chunks);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back(worker);
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

std::size_t chunk_count(std::size_t n, std::size_t batch) {
    return (n + batch - 1) / batch;
}

void check_run(const RunOptions& run) {
    if (run.batch_size == 0) {
        throw ConfigError("batch size must be positive");
    }
    if (run.jobs == 0) {
        throw ConfigError("job count must be positive");
    }
}

} // namespace

std::string_view origin_name(Origin o) {
    return o == Origin::id ? "ID" : "OOD";
}

Origin parse_origin(std::string_view text) {
    if (text == "ID") {
        return Origin::id;
    }
    if (text == "OOD") {
        return Origin::ood;
    }
    throw DataError(fmt::format("origin must be ID or OOD, got '{}'", text));
}

std::string format_scores(const std::vector<ScoreRecord>& records) {
    std::string out(kHeader);
    out += '\n';
    for (const auto& r : records) {
        out += fmt::format("{},{:.17g},{},{},{}\n", r.sample_id, r.score, origin_name(r.origin), r.dataset, r.method);
    }
    return out;
}

void write_scores(const std::filesystem::path& path, const std::vector<ScoreRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError(fmt::format("cannot write '{}'", path.string()));
    }
    out << format_scores(records);
    if (!out) {
        throw DataError(fmt::format("failed writing '{}'", path.string()));
    }
}

std::vector<ScoreRecord> parse_scores(std::string_view text, std::string_view source) {
    std::vector<ScoreRecord> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    bool header_seen = false;
    while (start < text.size()) {
        const auto nl = text.find('\n', start);
        const auto line =
            trim_cr(text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
        start = nl == std::string_view::npos ? text.size() : nl + 1;
        ++line_no;
        if (!header_seen) {
            if (line != kHeader) {
                throw DataError(fmt::format("{}:{}: expected header '{}'", source, line_no, kHeader));
            }
            header_seen = true;
            continue;
        }
        if (line.empty()) {
            continue;
        }
        const auto fields = split_fields(line);
        if (fields.size() != 5) {
            throw DataError(fmt::format("{}:{}: expected 5 fields, got {}", source, line_no, fields.size()));
        }
        ScoreRecord r;
        r.sample_id = std::string(fields[0]);
        const auto* end = fields[1].data() + fields[1].size();
        auto [ptr, ec] = std::from_chars(fields[1].data(), end, r.score);
        if (ec != std::errc{} || ptr != end || fields[1].empty()) {
            throw DataError(fmt::format("{}:{}: unparsable score '{}'", source, line_no, fields[1]));
        }
        if (!std::isfinite(r.score)) {
            throw DataError(fmt::format("{}:{}: score is not finite", source, line_no));
        }
        try {
            r.origin = parse_origin(fields[2]);
        } catch (const DataError& e) {
            throw DataError(fmt::format("{}:{}: {}", source, line_no, e.what()));
        }
        r.dataset = std::string(fields[3]);
        r.method = std::string(fields[4]);
        out.push_back(std::move(r));
    }
    if (!header_seen) {
        throw DataError(fmt::format("{}: empty score file", source));
    }
    return out;
}

std::vector<ScoreRecord> read_scores(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(fmt::format("cannot open '{}'", path.string()));
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_scores(buf.str(), path.string());
}

std::vector<double> scores_of(const std::vector<ScoreRecord>& records) {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        out.push_back(r.score);
    }
    return out;
}

std::string_view method_name(ScoringMethod m) {
    switch (m) {
    case ScoringMethod::gaia_z: return "gaia-z";
    case ScoringMethod::gaia_a: return "gaia-a";
    case ScoringMethod::msp: return "msp";
    case ScoringMethod::energy: return "energy";
    }
    return "?";
}

ScoringMethod parse_method(std::string_view text) {
    for (auto m : {ScoringMethod::gaia_z, ScoringMethod::gaia_a, ScoringMethod::msp, ScoringMethod::energy}) {
        if (text == method_name(m)) {
            return m;
        }
    }
    throw ConfigError(fmt::format("unknown method '{}'; valid methods: gaia-z, gaia-a, msp, energy", text));
}

bool is_gradient_method(ScoringMethod m) {
    return m == ScoringMethod::gaia_z || m == ScoringMethod::gaia_a;
}

ScorerConfig ScoringSpec::scorer() const {
    if (!is_gradient_method(method)) {
        throw ConfigError(fmt::format("method '{}' has no gradient scorer config", method_name(method)));
    }
    ScorerConfig cfg = gaia;
    cfg.method = method == ScoringMethod::gaia_z ? Method::gaia_z : Method::gaia_a;
    return cfg;
}

std::vector<SampleProfile> profile_images(const Model& model, const Tensor& images, const ScorerConfig& cfg,
                                          const RunOptions& run) {
    check_run(run);
    cfg.validate(model.graph());
    check_images(model.graph(), images);
    const std::size_t n = images.dim(0);
    const std::size_t chunks = chunk_count(n, run.batch_size);
    std::vector<std::vector<SampleProfile>> parts(chunks);
    for_each_chunk(chunks, run.jobs, [&](std::size_t c) {
        const std::size_t begin = c * run.batch_size;
        parts[c] = gaia_profiles(model, slice_rows(images, begin, std::min(run.batch_size, n - begin)), cfg);
    });
    std::vector<SampleProfile> out;
    out.reserve(n);
    for (auto& part : parts) {
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
}

ScoreResult score_images(const Model& model, const Tensor& images, const ScoringSpec& spec, const RunOptions& run) {
    check_run(run);
    if (is_gradient_method(spec.method)) {
        const ScorerConfig cfg = spec.scorer();
        const auto profiles = profile_images(model, images, cfg, run);
        ScoreResult r;
        for (const auto& p : profiles) {
            r.scores.push_back(matrix_pnorm(p.lambda, cfg.p));
            r.degenerate.push_back(p.degenerate_output);
        }
        return r;
    }
    check_images(model.graph(), images);
    const std::size_t n = images.dim(0);
    const std::size_t chunks = chunk_count(n, run.batch_size);
    std::vector<std::vector<double>> parts(chunks);
    for_each_chunk(chunks, run.jobs, [&](std::size_t c) {
        const std::size_t begin = c * run.batch_size;
        const Tensor logits = forward(model, slice_rows(images, begin, std::min(run.batch_size, n - begin)));
        parts[c] = spec.method == ScoringMethod::msp ? score_msp(logits) : score_energy(logits);
    });
    ScoreResult r;
    for (const auto& part : parts) {
        r.scores.insert(r.scores.end(), part.begin(), part.end());
    }
    r.degenerate.assign(r.scores.size(), false);
    return r;
}

std::vector<ScoreRecord> make_records(const std::vector<double>& scores, Origin origin, const std::string& dataset,
                                      const std::string& method) {
    std::vector<ScoreRecord> out;
    out.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out.push_back({std::to_string(i), scores[i], origin, dataset, method});
    }
    return out;
}

EvalTable evaluate_scores(const std::vector<ScoreRecord>& id,
                          const std::vector<std::pair<std::string, std::vector<ScoreRecord>>>& ood) {
    if (id.empty()) {
        throw DataError("ID score set is empty");
    }
    if (ood.empty()) {
        throw UsageError("no OOD score sets given");
    }
    for (const auto& r : id) {
        if (r.origin != Origin::id) {
            throw DataError(fmt::format("ID score set holds an OOD record (sample '{}')", r.sample_id));
        }
    }
    const auto id_scores = scores_of(id);
    EvalTable table;
    double fpr_sum = 0.0;
    double auroc_sum = 0.0;
    std::size_t ood_total = 0;
    for (const auto& [name, records] : ood) {
        if (records.empty()) {
            throw DataError(fmt::format("OOD score set '{}' is empty", name));
        }
        for (const auto& r : records) {
            if (r.origin != Origin::ood) {
                throw DataError(fmt::format("OOD score set '{}' holds an ID record (sample '{}')", name,
                                            r.sample_id));
            }
        }
        EvalRow row{name, detection_metrics(id_scores, scores_of(records))};
        fpr_sum += row.metrics.fpr95;
        auroc_sum += row.metrics.auroc;
        ood_total += row.metrics.n_ood;
        table.rows.push_back(std::move(row));
    }
    EvalRow avg;
    avg.dataset = "average";
    const auto k = static_cast<double>(ood.size());
    avg.metrics.fpr95 = fpr_sum / k;
    avg.metrics.auroc = auroc_sum / k;
    avg.metrics.threshold = table.rows.front().metrics.threshold;
    avg.metrics.n_id = id.size();
    avg.metrics.n_ood = ood_total;
    table.rows.push_back(std::move(avg));
    return table;
}

namespace {

nlohmann::ordered_json metrics_json(const DetectionMetrics& m) {
    nlohmann::ordered_json j;
    j["fpr95"] = m.fpr95;
    j["auroc"] = m.auroc;
    j["threshold"] = m.threshold;
    j["n_id"] = m.n_id;
    j["n_ood"] = m.n_ood;
    return j;
}

std::string subset_label(const std::vector<std::string>& taps) {
    return fmt::format("{}", fmt::join(taps, "+"));
}

struct DatasetScores {
    std::vector<SampleProfile> profiles; // gradient methods
    std::vector<double> scores;          // baselines
    std::string error;
};

} // namespace

nlohmann::ordered_json eval_table_json(const EvalTable& table) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : table.rows) {
        nlohmann::ordered_json j;
        j["dataset"] = r.dataset;
        j.update(metrics_json(r.metrics));
        rows.push_back(std::move(j));
    }
    nlohmann::ordered_json out;
    out["rows"] = std::move(rows);
    return out;
}

BenchmarkReport run_benchmark(const Model& model, const SampleBatch& id, const std::vector<SampleBatch>& ood,
                              const BenchmarkSpec& spec) {
    if (spec.methods.empty()) {
        throw ConfigError("benchmark needs at least one method");
    }
    if (ood.empty()) {
        throw ConfigError("benchmark needs at least one OOD dataset");
    }
    check_run(spec.run);
    check_batch(model.graph(), id);

    BenchmarkReport report;
    report.id_dataset = id.source;
    for (const auto& o : ood) {
        report.ood_datasets.push_back(o.source);
    }

    std::vector<const SampleBatch*> datasets{&id};
    for (const auto& o : ood) {
        datasets.push_back(&o);
    }

    for (ScoringMethod method : spec.methods) {
        const std::string mname(method_name(method));
        std::vector<DatasetScores> per_set(datasets.size());

        if (!is_gradient_method(method)) {
            for (std::size_t d = 0; d < datasets.size(); ++d) {
                try {
                    check_batch(model.graph(), *datasets[d]);
                    per_set[d].scores = score_images(model, datasets[d]->images, {method, {}}, spec.run).scores;
                } catch (const Error& e) {
                    per_set[d].error = e.what();
                }
            }
            ScoreFile file{mname, {}};
            for (std::size_t d = 0; d < datasets.size(); ++d) {
                if (per_set[d].error.empty()) {
                    auto recs = make_records(per_set[d].scores, d == 0 ? Origin::id : Origin::ood,
                                             datasets[d]->source, mname);
                    file.records.insert(file.records.end(), recs.begin(), recs.end());
                }
            }
            for (std::size_t d = 1; d < datasets.size(); ++d) {
                BenchmarkCell cell;
                cell.method = mname;
                cell.ood_dataset = datasets[d]->source;
                if (!per_set[0].error.empty()) {
                    cell.error = per_set[0].error;
                } else if (!per_set[d].error.empty()) {
                    cell.error = per_set[d].error;
                } else {
                    cell.metrics = detection_metrics(per_set[0].scores, per_set[d].scores);
                }
                report.cells.push_back(std::move(cell));
            }
            report.score_files.push_back(std::move(file));
            continue;
        }

        // Gradient methods: validate each subset, then profile the union of
        // valid taps once per dataset and slice rows per subset.
        ScorerConfig base;
        base.method = method == ScoringMethod::gaia_z ? Method::gaia_z : Method::gaia_a;
        base.tau = spec.tau;
        base.eps0 = spec.eps0;
        base.fusion = spec.fusion;
        std::vector<std::vector<std::string>> resolved(spec.tap_subsets.size());
        std::vector<std::string> subset_error(spec.tap_subsets.size());
        std::set<std::string> union_ids;
        for (std::size_t s = 0; s < spec.tap_subsets.size(); ++s) {
            try {
                ScorerConfig cfg = base;
                cfg.taps = spec.tap_subsets[s];
                for (double p : spec.p_values) {
                    cfg.p = p;
                    cfg.validate(model.graph());
                }
                resolved[s] = model.graph().select_taps(cfg.taps);
                union_ids.insert(resolved[s].begin(), resolved[s].end());
            } catch (const Error& e) {
                subset_error[s] = e.what();
            }
        }
        if (!union_ids.empty()) {
            ScorerConfig cfg = base;
            cfg.taps.assign(union_ids.begin(), union_ids.end());
            for (std::size_t d = 0; d < datasets.size(); ++d) {
                try {
                    check_batch(model.graph(), *datasets[d]);
                    per_set[d].profiles = profile_images(model, datasets[d]->images, cfg, spec.run);
                } catch (const Error& e) {
                    per_set[d].error = e.what();
                }
            }
        }

        const auto subset_scores = [&](std::size_t d, std::size_t s, double p, std::size_t& degenerate) {
            std::vector<double> out;
            degenerate = 0;
            for (const auto& prof : per_set[d].profiles) {
                const AbnormalityMatrix lambda =
                    spec.fusion == Fusion::output_only ? prof.lambda : prof.lambda.select(resolved[s]);
                out.push_back(matrix_pnorm(lambda, p));
                degenerate += prof.degenerate_output ? 1 : 0;
            }
            return out;
        };

        for (std::size_t s = 0; s < spec.tap_subsets.size(); ++s) {
            for (double p : spec.p_values) {
                std::vector<std::vector<double>> scores(datasets.size());
                std::vector<std::size_t> degenerate(datasets.size(), 0);
                std::vector<std::string> errors(datasets.size());
                for (std::size_t d = 0; d < datasets.size(); ++d) {
                    if (!subset_error[s].empty()) {
                        errors[d] = subset_error[s];
                    } else if (!per_set[d].error.empty()) {
                        errors[d] = per_set[d].error;
                    } else {
                        scores[d] = subset_scores(d, s, p, degenerate[d]);
                    }
                }
                std::string file_name = fmt::format("{}_{}_p{:g}", mname, subset_label(spec.tap_subsets[s]), p);
                if (method == ScoringMethod::gaia_a && spec.fusion != Fusion::two_stage) {
                    file_name += fmt::format("_{}", fusion_name(spec.fusion));
                }
                ScoreFile file{file_name, {}};
                for (std::size_t d = 0; d < datasets.size(); ++d) {
                    if (errors[d].empty()) {
                        auto recs =
                            make_records(scores[d], d == 0 ? Origin::id : Origin::ood, datasets[d]->source, mname);
                        file.records.insert(file.records.end(), recs.begin(), recs.end());
                    }
                }
                for (std::size_t d = 1; d < datasets.size(); ++d) {
                    BenchmarkCell cell;
                    cell.method = mname;
                    cell.ood_dataset = datasets[d]->source;
                    cell.taps = spec.tap_subsets[s];
                    cell.p = p;
                    if (!errors[0].empty()) {
                        cell.error = errors[0];
                    } else if (!errors[d].empty()) {
                        cell.error = errors[d];
                    } else {
                        cell.metrics = detection_metrics(scores[0], scores[d]);
                        cell.degenerate_id = degenerate[0];
                        cell.degenerate_ood = degenerate[d];
                    }
                    report.cells.push_back(std::move(cell));
                }
                report.score_files.push_back(std::move(file));
            }
        }
    }
    return report;
}

nlohmann::ordered_json benchmark_json(const BenchmarkReport& report, const BenchmarkSpec& spec) {
    nlohmann::ordered_json j;
    j["id_dataset"] = report.id_dataset;
    j["ood_datasets"] = report.ood_datasets;
    nlohmann::ordered_json config;
    std::vector<std::string> methods;
    for (auto m : spec.methods) {
        methods.emplace_back(method_name(m));
    }
    config["methods"] = methods;
    config["tap_subsets"] = spec.tap_subsets;
    config["p_values"] = spec.p_values;
    config["fusion"] = fusion_name(spec.fusion);
    config["tau"] = spec.tau;
    config["eps0"] = spec.eps0;
    j["config"] = std::move(config);
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (const auto& c : report.cells) {
        nlohmann::ordered_json cj;
        cj["method"] = c.method;
        cj["ood_dataset"] = c.ood_dataset;
        if (!c.taps.empty()) {
            cj["taps"] = c.taps;
        }
        if (c.p) {
            cj["p"] = *c.p;
        }
        if (c.metrics) {
            cj.update(metrics_json(*c.metrics));
            if (c.method == "gaia-a") {
                cj["degenerate_id"] = c.degenerate_id;
                cj["degenerate_ood"] = c.degenerate_ood;
            }
        } else {
            cj["error"] = c.error;
        }
        cells.push_back(std::move(cj));
    }
    j["cells"] = std::move(cells);
    return j;
}

} // namespace gaia
