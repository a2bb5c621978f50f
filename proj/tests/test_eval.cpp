// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "gaia/eval.hpp"
#include "test_support.hpp"

using namespace gaia;
using gaia::testing::fixture;
using gaia::testing::head_rows;

namespace {

SampleBatch small(const std::string& name, std::size_t n) {
    SampleBatch b = load_dataset(fixture(name + ".gwta"));
    b.images = head_rows(b.images, n);
    if (b.labels) {
        b.labels->resize(n);
    }
    return b;
}

std::string data_error(std::string_view text) {
    try {
        parse_scores(text, "s.csv");
    } catch (const DataError& e) {
        return e.what();
    }
    return {};
}

} // namespace

TEST_CASE("score files round-trip bit-exactly") {
    const std::vector<ScoreRecord> recs{
        {"0", 0.1, Origin::id, "cifar", "gaia-z"},
        {"1", 1.0 / 3.0, Origin::ood, "noise", "gaia-z"},
        {"x7", -2.5e-300, Origin::ood, "noise", "msp"},
        {"9", std::numeric_limits<double>::denorm_min(), Origin::id, "cifar", "energy"},
        {"10", 123456789.123456789, Origin::id, "cifar", "gaia-a"},
    };
    const std::string text = format_scores(recs);
    CHECK(text.substr(0, text.find('\n')) == "sample_id,score,origin,dataset,method");
    CHECK(parse_scores(text) == recs);

    const auto path = std::filesystem::temp_directory_path() / "gaia_test_scores.csv";
    write_scores(path, recs);
    CHECK(read_scores(path) == recs);
    std::filesystem::remove(path);
    CHECK(parse_scores("sample_id,score,origin,dataset,method\r\n0,1.5,ID,a,b\r\n\n").size() == 1);
}

TEST_CASE("malformed score files report the line") {
    const std::string h = "sample_id,score,origin,dataset,method\n";
    CHECK(data_error("") == "s.csv: empty score file");
    CHECK(data_error("id,score\n").find("s.csv:1: expected header") == 0);
    CHECK(data_error(h + "0,1,ID,a,m\n1,2,ID,a\n") == "s.csv:3: expected 5 fields, got 4");
    CHECK(data_error(h + "0,abc,ID,a,m\n") == "s.csv:2: unparsable score 'abc'");
    CHECK(data_error(h + "0,nan,ID,a,m\n") == "s.csv:2: score is not finite");
    CHECK(data_error(h + "0,1,XX,a,m\n").find("s.csv:2: origin must be ID or OOD") == 0);
    CHECK_THROWS_AS(read_scores("/nonexistent/scores.csv"), DataError);
}

TEST_CASE("evaluation table: one row per OOD set plus the average") {
    auto id = make_records({1, 2, 3, 4}, Origin::id, "in", "m");
    auto a = make_records({5, 6}, Origin::ood, "a", "m");
    auto b = make_records({0, 2.5}, Origin::ood, "b", "m");
    const EvalTable t = evaluate_scores(id, {{"a", a}, {"b", b}});
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0].metrics.auroc == 1.0);
    CHECK(t.rows[1].metrics.auroc == 0.25);
    CHECK(t.rows[2].dataset == "average");
    CHECK(t.rows[2].metrics.auroc == 0.625);
    CHECK(t.rows[2].metrics.n_ood == 4);
    const auto j = eval_table_json(t);
    CHECK(j["rows"].size() == 3);
    CHECK(j["rows"][1]["dataset"] == "b");

    CHECK_THROWS_AS(evaluate_scores(id, {{"a", {}}}), DataError);
    CHECK_THROWS_AS(evaluate_scores(id, {{"a", id}}), DataError);
    CHECK_THROWS_AS(evaluate_scores(a, {{"a", a}}), DataError);
    CHECK_THROWS_AS(evaluate_scores(id, {}), UsageError);
}

TEST_CASE("scores are independent of batch size and job count") {
    const Model model = gaia::testing::fixture_model();
    const Tensor x = head_rows(load_dataset(fixture("ood_texture.gwta")).images, 10);
    for (auto method : {ScoringMethod::gaia_z, ScoringMethod::gaia_a, ScoringMethod::msp, ScoringMethod::energy}) {
        ScoringSpec spec{method, {}};
        spec.gaia.taps = {"block3", "block4"};
        const auto ref = score_images(model, x, spec, {10, 1}).scores;
        CHECK(score_images(model, x, spec, {3, 1}).scores == ref);
        CHECK(score_images(model, x, spec, {1, 4}).scores == ref);
        CHECK(score_images(model, x, spec, {4, 3}).scores == ref);
    }
    CHECK_THROWS_AS(score_images(model, x, {ScoringMethod::msp, {}}, {0, 1}), ConfigError);
}

TEST_CASE("metrics from persisted score files equal in-memory metrics") {
    const Model model = gaia::testing::fixture_model();
    const SampleBatch id = small("id_test", 24), ood = small("ood_noise", 24);
    ScoringSpec spec{ScoringMethod::gaia_z, {}};
    spec.gaia.taps = {"block3", "block4"};
    const auto s_id = score_images(model, id.images, spec, {}).scores;
    const auto s_ood = score_images(model, ood.images, spec, {}).scores;
    const auto mem = detection_metrics(s_id, s_ood);

    const auto dir = std::filesystem::temp_directory_path();
    write_scores(dir / "gaia_id.csv", make_records(s_id, Origin::id, "id_test", "gaia-z"));
    write_scores(dir / "gaia_ood.csv", make_records(s_ood, Origin::ood, "ood_noise", "gaia-z"));
    const auto t = evaluate_scores(read_scores(dir / "gaia_id.csv"), {{"ood_noise", read_scores(dir / "gaia_ood.csv")}});
    CHECK(t.rows[0].metrics.auroc == mem.auroc);
    CHECK(t.rows[0].metrics.fpr95 == mem.fpr95);
    CHECK(t.rows[0].metrics.threshold == mem.threshold);
    std::filesystem::remove(dir / "gaia_id.csv");
    std::filesystem::remove(dir / "gaia_ood.csv");
}

TEST_CASE("one method and one OOD set give exactly one cell matching direct scoring") {
    const Model model = gaia::testing::fixture_model();
    const SampleBatch id = small("id_test", 20), ood = small("ood_noise", 20);
    BenchmarkSpec spec;
    spec.methods = {ScoringMethod::gaia_a};
    const auto report = run_benchmark(model, id, {ood}, spec);
    REQUIRE(report.cells.size() == 1);
    const auto& cell = report.cells[0];
    CHECK(cell.error.empty());
    REQUIRE(cell.metrics.has_value());
    CHECK(cell.ood_dataset == "ood_noise");
    REQUIRE(report.score_files.size() == 1);
    CHECK(report.score_files[0].name == "gaia-a_block3+block4_p2");
    CHECK(report.score_files[0].records.size() == 40);

    ScoringSpec direct{ScoringMethod::gaia_a, {}};
    direct.gaia.taps = {"block3", "block4"};
    const auto m = detection_metrics(score_images(model, id.images, direct, {}).scores,
                                     score_images(model, ood.images, direct, {}).scores);
    CHECK(cell.metrics->auroc == m.auroc);
    CHECK(cell.metrics->fpr95 == m.fpr95);
}

TEST_CASE("benchmark grid: reruns are byte-identical and a bad subset fails alone") {
    const Model model = gaia::testing::fixture_model();
    const SampleBatch id = small("id_test", 16), noise = small("ood_noise", 12), texture = small("ood_texture", 12);
    BenchmarkSpec spec;
    spec.methods = {ScoringMethod::gaia_z, ScoringMethod::msp};
    spec.tap_subsets = {{"block4"}, {"block9"}, {"all"}};
    spec.p_values = {1, 2};
    spec.run = {5, 2};
    const auto r1 = run_benchmark(model, id, {noise, texture}, spec);
    const auto r2 = run_benchmark(model, id, {noise, texture}, spec);
    CHECK(benchmark_json(r1, spec).dump(2) == benchmark_json(r2, spec).dump(2));

    // gaia-z: 3 subsets × 2 norms × 2 OOD sets, then msp: 2 OOD sets.
    REQUIRE(r1.cells.size() == 14);
    std::size_t failed = 0;
    for (const auto& c : r1.cells) {
        if (!c.error.empty()) {
            ++failed;
            CHECK(c.taps == std::vector<std::string>{"block9"});
            CHECK_FALSE(c.metrics.has_value());
        } else {
            CHECK(c.metrics.has_value());
        }
    }
    CHECK(failed == 4);
    CHECK(r1.cells.back().method == "msp");
    CHECK_FALSE(r1.cells.back().p.has_value());

    const auto j = benchmark_json(r1, spec);
    CHECK(j["config"]["methods"] == nlohmann::ordered_json::array({"gaia-z", "msp"}));
    CHECK(j["cells"].size() == 14);
    CHECK(j["cells"][4]["error"].get<std::string>().find("block9") != std::string::npos);
}

TEST_CASE("benchmark and method parsing errors") {
    const Model model = gaia::testing::fixture_model();
    const SampleBatch id = small("id_test", 4);
    BenchmarkSpec spec;
    CHECK_THROWS_AS(run_benchmark(model, id, {id}, spec), ConfigError);
    spec.methods = {ScoringMethod::energy};
    CHECK_THROWS_AS(run_benchmark(model, id, {}, spec), ConfigError);
    CHECK(parse_method("gaia-a") == ScoringMethod::gaia_a);
    CHECK_THROWS_WITH_AS(parse_method("odin"), doctest::Contains("valid methods: gaia-z, gaia-a, msp, energy"),
                         ConfigError);
    CHECK_THROWS_AS((ScoringSpec{ScoringMethod::msp, {}}.scorer()), ConfigError);
}
