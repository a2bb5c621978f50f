// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "gaia/eval.hpp"
#include "gaia/gaia.hpp"
#include "gaia/gradcheck.hpp"
#include "gaia/metrics.hpp"
#include "gaia/tape.hpp"
#include "test_support.hpp"

using namespace gaia;
using gaia::testing::fixture;
using gaia::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, fmt::format("exception: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    fmt::print("{} {:<28} {} ({:.2f} s)\n", o.pass ? "PASS" : "FAIL", name, o.detail, secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Outcome gradient_oracle() {
    const auto t0 = Clock::now();
    GradcheckOptions opt;
    opt.trials = 20;
    const auto r = run_gradcheck(opt);
    const double secs = seconds_since(t0);
    return {r.passed() && r.trials >= 20 && secs < 60.0,
            fmt::format("{} graphs, {} checks, max rel err {:.2e}, {} failures, {:.1f} s < 60 s", r.trials, r.checks,
                        r.max_rel_error, r.failures.size(), secs)};
}

// Random conv net where a random subset of the tapped channels is multiplied
// by zero before use.
Outcome zero_importance() {
    std::mt19937_64 rng(2026);
    std::uniform_int_distribution<std::size_t> ch(2, 6), hw(4, 8), cls(2, 5);
    std::size_t ok = 0, masked_elems = 0;
    const std::size_t trials = 50;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t cin = ch(rng), c1 = ch(rng), c2 = ch(rng), h = hw(rng), c = cls(rng);
        std::vector<std::size_t> masked;
        for (std::size_t k = 0; k < c1; ++k) {
            if (rng() % 2 == 0) {
                masked.push_back(k);
            }
        }
        if (masked.empty()) {
            masked.push_back(rng() % c1);
        }
        const Tensor k1 = random_tensor(rng, {c1, cin, 3, 3}), k2 = random_tensor(rng, {c2, c1, 3, 3});
        const Tensor w = random_tensor(rng, {c, c2});
        const Tensor gamma = random_tensor(rng, {c1}), beta = random_tensor(rng, {c1}), mean = random_tensor(rng, {c1});
        const Tensor var({c1}, 1.0f);
        Tape tape;
        const NodeId x = tape.input(random_tensor(rng, {2, cin, h, h}));
        const NodeId z1 = tape.conv2d(x, k1, Tensor(), {1, 1, 1, 1});
        tape.tap("z1", z1);
        const NodeId b1 = tape.batchnorm(z1, gamma, beta, mean, var, 1e-5);
        tape.tap("b1", b1);
        const NodeId m = tape.mask(b1, masked);
        const NodeId r = tape.relu(tape.add(m, m));
        const NodeId z2 = tape.conv2d(tape.max_pool2d(r, {}), k2, Tensor(), {1, 1, 1, 1});
        const NodeId y = tape.log_softmax(tape.linear(tape.global_avg_pool(tape.relu(z2)), w, Tensor()));
        const auto grads = tape.backward(y, random_tensor(rng, {2, c}));
        bool all_zero = true;
        for (const char* id : {"z1", "b1"}) {
            const Tensor& g = grads.at(id);
            const std::size_t map = g.size() / (2 * c1);
            for (std::size_t n = 0; n < 2; ++n) {
                for (std::size_t k : masked) {
                    for (std::size_t i = 0; i < map; ++i) {
                        ++masked_elems;
                        all_zero &= std::bit_cast<std::uint32_t>(g[(n * c1 + k) * map + i]) == 0u;
                    }
                }
            }
        }
        ok += all_zero ? 1 : 0;
    }
    return {ok == trials, fmt::format("{}/{} trials bitwise +0.0 over {} masked elements", ok, trials, masked_elems)};
}

Outcome fusion_seed() {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> cls(2, 20);
    std::uniform_real_distribution<float> scale(0.1f, 10.0f);
    double worst_elem = 0, worst_sum = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t c = cls(rng);
        const Tensor s = random_tensor(rng, {c}, scale(rng));
        const Tensor seed = fused_logsoftmax_seed(s);
        long double z = 0;
        for (float v : s.data()) {
            z += std::exp(static_cast<long double>(v));
        }
        double sum = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double want = 1.0 - static_cast<double>(c) * static_cast<double>(std::exp((long double)s[j]) / z);
            worst_elem = std::max(worst_elem, std::abs(seed[j] - want));
            sum += seed[j];
        }
        worst_sum = std::max(worst_sum, std::abs(sum));
    }
    return {worst_elem <= 1e-5 && worst_sum <= 1e-5,
            fmt::format("100 vectors, max |seed - (1 - C softmax)| {:.2e}, max |sum| {:.2e} (tol 1e-5)", worst_elem,
                        worst_sum)};
}

Outcome zero_deflation_oracle() {
    std::mt19937_64 rng(10);
    std::uniform_int_distribution<std::size_t> side(1, 12);
    std::uniform_real_distribution<double> zero_rate(0.0, 1.0);
    std::size_t exact = 0, total = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t h = side(rng), w = side(rng);
        Tensor g = random_tensor(rng, {h, w}, 1e-5f);
        const double rate = zero_rate(rng);
        for (float& v : g.data()) {
            if (std::uniform_real_distribution<double>(0, 1)(rng) < rate) {
                v = 0.0f;
            }
        }
        for (double tau : {0.0, 1e-6}) {
            std::size_t count = 0;
            for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = 0; j < w; ++j) {
                    count += std::abs(static_cast<double>(g[i * w + j])) > tau ? 1 : 0;
                }
            }
            ++total;
            exact += zero_deflation_expectation(g.data(), tau) ==
                             static_cast<double>(count) / static_cast<double>(h * w)
                         ? 1
                         : 0;
        }
    }
    return {exact == total, fmt::format("{}/{} maps×tau exact (1000 maps, tau in {{0, 1e-6}})", exact, total)};
}

Outcome avg_and_norm_oracles() {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> side(1, 9), rows(1, 5), width(1, 16);
    double worst_avg = 0, worst_norm = 0;
    bool padding_exact = true;
    for (int t = 0; t < 200; ++t) {
        const Tensor in = random_tensor(rng, {side(rng), side(rng)});
        const Tensor out = random_tensor(rng, {side(rng), side(rng)}, 0.01f);
        double si = 0, so = 0;
        for (std::size_t i = 0; i < in.size(); ++i) {
            si += std::abs(static_cast<double>(in[i]));
        }
        for (std::size_t i = 0; i < out.size(); ++i) {
            so += std::abs(static_cast<double>(out[i]));
        }
        const double want = (si / static_cast<double>(in.size())) /
                            std::sqrt(std::max(so / static_cast<double>(out.size()), 1e-12));
        worst_avg = std::max(worst_avg, std::abs(channel_avg_expectation(in.data(), out.data(), 1e-12) - want) / want);

        std::vector<std::vector<double>> lam(rows(rng));
        std::vector<std::string> labels;
        std::vector<double> flat;
        for (auto& r : lam) {
            r.resize(width(rng));
            for (double& v : r) {
                v = std::abs(std::normal_distribution<double>(0, 1)(rng));
                flat.push_back(v);
            }
            labels.push_back(fmt::format("l{}", labels.size()));
        }
        const auto m = AbnormalityMatrix::assemble(labels, lam);
        auto wide_rows = lam;
        wide_rows.push_back(std::vector<double>(40, 0.0));
        auto wide_labels = labels;
        wide_labels.push_back("pad");
        const auto wide = AbnormalityMatrix::assemble(wide_labels, wide_rows);
        for (double p : {1.0, 2.0, 4.0}) {
            double s = 0;
            for (double v : flat) {
                s += std::pow(v, p);
            }
            const double vec = std::pow(s, 1.0 / p);
            worst_norm = std::max(worst_norm, std::abs(matrix_pnorm(m, p) - vec) / vec);
            padding_exact &= matrix_pnorm(m, p) == matrix_pnorm(wide, p);
        }
    }
    return {worst_avg <= 1e-6 && worst_norm <= 1e-6 && padding_exact,
            fmt::format("avg-expectation rel err {:.2e}, p-norm rel err {:.2e} (tol 1e-6), padding invariance {}",
                        worst_avg, worst_norm, padding_exact ? "exact" : "BROKEN")};
}

Outcome metric_oracles() {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> len(1, 100), val(0, 30);
    int auroc_ok = 0, fpr_ok = 0;
    for (int t = 0; t < 200; ++t) {
        std::vector<double> id(static_cast<std::size_t>(len(rng))), ood(static_cast<std::size_t>(len(rng)));
        for (double& v : id) {
            v = val(rng) / 4.0;
        }
        for (double& v : ood) {
            v = val(rng) / 4.0;
        }
        double wins = 0;
        for (double o : ood) {
            for (double i : id) {
                wins += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
            }
        }
        auroc_ok += compute_auroc(id, ood) == wins / (static_cast<double>(id.size()) * ood.size()) ? 1 : 0;

        std::vector<double> sorted = id;
        std::sort(sorted.begin(), sorted.end());
        double gamma = sorted.back();
        for (double g : sorted) {
            const auto le = std::count_if(id.begin(), id.end(), [&](double x) { return x <= g; });
            if (100 * le >= 95 * static_cast<long>(id.size())) {
                gamma = g;
                break;
            }
        }
        const auto fp = std::count_if(ood.begin(), ood.end(), [&](double x) { return x <= gamma; });
        const auto f = compute_fpr95(id, ood);
        fpr_ok += f.threshold == gamma && f.fpr95 == static_cast<double>(fp) / static_cast<double>(ood.size()) ? 1 : 0;
    }
    return {auroc_ok == 200 && fpr_ok == 200,
            fmt::format("AUROC exact {}/200, FPR95 exact {}/200 (tied integer-grid scores)", auroc_ok, fpr_ok)};
}

const Model& fixture_model() {
    static const Model model = gaia::testing::fixture_model();
    return model;
}

Outcome batch_equivalence() {
    const Tensor x = gaia::testing::head_rows(load_dataset(fixture("id_test.gwta")).images, 64);
    std::size_t equal = 0, total = 0;
    for (Method m : {Method::gaia_z, Method::gaia_a}) {
        ScorerConfig cfg;
        cfg.method = m;
        cfg.taps = {"block3", "block4"};
        const auto batch = score_gaia(fixture_model(), x, cfg).scores;
        for (std::size_t n = 0; n < 64; ++n) {
            const double single = score_gaia(fixture_model(), gaia::testing::one_row(x, n), cfg).scores[0];
            equal += std::bit_cast<std::uint64_t>(single) == std::bit_cast<std::uint64_t>(batch[n]) ? 1 : 0;
            ++total;
        }
    }
    return {equal == total, fmt::format("{}/{} scores bit-equal (gaia-z and gaia-a, 64 samples)", equal, total)};
}

RunOptions run_options() {
    return {32, std::max(1u, std::min(8u, std::thread::hardware_concurrency()))};
}

Outcome fixture_separation() {
    const auto t0 = Clock::now();
    const SampleBatch id = load_dataset(fixture("id_test.gwta"));
    const SampleBatch noise = load_dataset(fixture("ood_noise.gwta"));
    double auroc[2];
    for (int i = 0; i < 2; ++i) {
        ScoringSpec spec{i == 0 ? ScoringMethod::gaia_z : ScoringMethod::gaia_a, {}};
        spec.gaia.taps = {"block3", "block4"};
        auroc[i] = compute_auroc(score_images(fixture_model(), id.images, spec, run_options()).scores,
                                 score_images(fixture_model(), noise.images, spec, run_options()).scores);
    }
    const double secs = seconds_since(t0);
    return {auroc[0] >= 0.80 && auroc[1] >= 0.70 && secs < 120.0,
            fmt::format("id_test vs ood_noise ({} vs {} samples): gaia-z AUROC {:.4f} (>= 0.80), gaia-a AUROC {:.4f} "
                        "(>= 0.70), {:.1f} s < 120 s",
                        id.size(), noise.size(), auroc[0], auroc[1], secs)};
}

Outcome block_ablation() {
    const SampleBatch id = load_dataset(fixture("id_test.gwta"));
    const std::vector<SampleBatch> ood{load_dataset(fixture("ood_noise.gwta")),
                                       load_dataset(fixture("ood_texture.gwta"))};
    BenchmarkSpec spec;
    spec.methods = {ScoringMethod::gaia_z, ScoringMethod::gaia_a};
    spec.tap_subsets = {{"block1"}, {"block4"}, {"block3", "block4"}, {"all"}};
    spec.run = run_options();
    const auto report = run_benchmark(fixture_model(), id, ood, spec);
    bool pass = true;
    std::string detail;
    for (const char* method : {"gaia-z", "gaia-a"}) {
        for (const auto& o : ood) {
            std::optional<double> shallow;
            std::vector<std::pair<std::string, double>> deep;
            for (const auto& c : report.cells) {
                if (c.method != method || c.ood_dataset != o.source) {
                    continue;
                }
                if (!c.metrics) {
                    pass = false;
                    detail += fmt::format(" {} {} failed: {};", method, o.source, c.error);
                    continue;
                }
                const std::string label = fmt::format("{}", fmt::join(c.taps, "+"));
                if (label == "block1") {
                    shallow = c.metrics->auroc;
                } else {
                    deep.emplace_back(label, c.metrics->auroc);
                }
            }
            if (!shallow) {
                pass = false;
                continue;
            }
            detail += fmt::format(" {}/{}: block1 {:.3f}", method, o.source, *shallow);
            for (const auto& [label, a] : deep) {
                detail += fmt::format(", {} {:.3f}", label, a);
                pass &= a >= *shallow;
            }
            detail += ";";
        }
    }
    return {pass, "AUROC" + detail};
}

} // namespace

int main() {
    report("gradient-oracle", gradient_oracle);
    report("zero-importance", zero_importance);
    report("fusion-seed-identity", fusion_seed);
    report("zero-deflation-oracle", zero_deflation_oracle);
    report("avg-expectation-and-norm", avg_and_norm_oracles);
    report("metric-oracles", metric_oracles);
    report("batch-single-equivalence", batch_equivalence);
    report("fixture-separation", fixture_separation);
    report("block-ablation-direction", block_ablation);
    fmt::print("{} criteria failed\n", failures);
    return failures;
}
