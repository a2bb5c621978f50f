// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include "gaia/gaia.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace gaia {

std::string_view method_name(Method m) {
    switch (m) {
    case Method::gaia_z: return "gaia-z";
    case Method::gaia_a: return "gaia-a";
    }
    return "?";
}

std::string_view fusion_name(Fusion f) {
    switch (f) {
    case Fusion::two_stage: return "two_stage";
    case Fusion::top1_label: return "top1_label";
    case Fusion::output_only: return "output_only";
    case Fusion::inner_only: return "inner_only";
    }
    return "?";
}

Fusion parse_fusion(std::string_view text) {
    std::string norm(text);
    std::replace(norm.begin(), norm.end(), '-', '_');
    for (Fusion f : {Fusion::two_stage, Fusion::top1_label, Fusion::output_only, Fusion::inner_only}) {
        if (norm == fusion_name(f)) {
            return f;
        }
    }
    throw ConfigError(fmt::format("unknown fusion mode '{}'; valid: two_stage, top1_label, output_only, inner_only",
                                  text));
}

void ScorerConfig::validate(const ModelGraph& graph) const {
    if (taps.empty()) {
        throw ConfigError("empty tap selection");
    }
    if (!(tau >= 0.0) || !std::isfinite(tau)) {
        throw ConfigError(fmt::format("tau must be finite and >= 0, got {}", tau));
    }
    if (!(p >= 1.0) || !std::isfinite(p)) {
        throw ConfigError(fmt::format("norm order p must be finite and >= 1, got {}", p));
    }
    if (!(eps0 > 0.0) || !std::isfinite(eps0)) {
        throw ConfigError(fmt::format("epsilon floor must be finite and > 0, got {}", eps0));
    }
    const auto ids = graph.select_taps(taps);
    if (method == Method::gaia_z && fusion != Fusion::two_stage) {
        throw ConfigError(fmt::format("fusion mode '{}' applies to gaia-a only", fusion_name(fusion)));
    }
    if (method == Method::gaia_a && (fusion == Fusion::two_stage || fusion == Fusion::inner_only)) {
        for (const auto& id : ids) {
            const TapPoint& t = graph.tap(id);
            if (t.layer > graph.split_layer()) {
                throw ConfigError(fmt::format("tap '{}' lies in the classifier, after the split layer '{}'", id,
                                              graph.layers()[graph.split_layer()].name));
            }
        }
    }
}

double zero_deflation_expectation(std::span<const float> grad_map, double tau) {
    if (grad_map.empty()) {
        return 0.0;
    }
    std::size_t nonzero = 0;
    for (float g : grad_map) {
        if (static_cast<double>(std::fabs(g)) > tau) {
            ++nonzero;
        }
    }
    return static_cast<double>(nonzero) / static_cast<double>(grad_map.size());
}

Tensor fused_logsoftmax_seed(const Tensor& logits) {
    if (logits.rank() != 1 && logits.rank() != 2) {
        throw ConfigError(fmt::format("fused seed expects C or N×C logits, got {}", to_string(logits.shape())));
    }
    ensure_finite(logits, "logits");
    const std::size_t c = logits.shape().back();
    const std::size_t rows = logits.size() / c;
    Tensor seed(logits.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const float* s = logits.data().data() + r * c;
        double m = s[0];
        for (std::size_t j = 1; j < c; ++j) {
            m = std::max(m, static_cast<double>(s[j]));
        }
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            z += std::exp(static_cast<double>(s[j]) - m);
        }
        for (std::size_t j = 0; j < c; ++j) {
            const double pj = std::exp(static_cast<double>(s[j]) - m) / z;
            seed[r * c + j] = static_cast<float>(1.0 - static_cast<double>(c) * pj);
        }
    }
    return seed;
}

double mean_abs(std::span<const float> values) {
    if (values.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (float v : values) {
        sum += std::fabs(static_cast<double>(v));
    }
    return sum / static_cast<double>(values.size());
}

namespace {

double avg_ratio(double inner_mean, double output_mean, double eps0) {
    return inner_mean / std::sqrt(std::max(output_mean, eps0));
}

} // namespace

double channel_avg_expectation(std::span<const float> inner_grad, std::span<const float> output_grad, double eps0) {
    return avg_ratio(mean_abs(inner_grad), mean_abs(output_grad), eps0);
}

AbnormalityMatrix AbnormalityMatrix::assemble(std::vector<std::string> row_labels,
                                              std::vector<std::vector<double>> rows) {
    if (row_labels.size() != rows.size()) {
        throw UsageError(fmt::format("{} row labels for {} rows", row_labels.size(), rows.size()));
    }
    AbnormalityMatrix m;
    for (const auto& r : rows) {
        m.cols_ = std::max(m.cols_, r.size());
    }
    m.labels_ = std::move(row_labels);
    m.data_.assign(rows.size() * m.cols_, 0.0);
    for (std::size_t l = 0; l < rows.size(); ++l) {
        m.widths_.push_back(rows[l].size());
        for (std::size_t k = 0; k < rows[l].size(); ++k) {
            const double e = rows[l][k];
            if (!std::isfinite(e) || e < 0.0) {
                throw DataError(fmt::format("abnormality entry ({}, {}) for '{}' is {}, expected finite and >= 0",
                                            l, k, m.labels_[l], e));
            }
            m.data_[l * m.cols_ + k] = e;
        }
    }
    return m;
}

AbnormalityMatrix AbnormalityMatrix::select(const std::vector<std::string>& row_labels) const {
    std::vector<std::vector<double>> rows;
    for (const auto& label : row_labels) {
        auto it = std::find(labels_.begin(), labels_.end(), label);
        if (it == labels_.end()) {
            throw ConfigError(fmt::format("abnormality matrix has no row '{}'", label));
        }
        const auto l = static_cast<std::size_t>(it - labels_.begin());
        rows.emplace_back(data_.begin() + static_cast<std::ptrdiff_t>(l * cols_),
                          data_.begin() + static_cast<std::ptrdiff_t>(l * cols_ + widths_[l]));
    }
    return assemble(row_labels, std::move(rows));
}

double matrix_pnorm(const AbnormalityMatrix& m, double p) {
    if (!(p >= 1.0) || !std::isfinite(p)) {
        throw ConfigError(fmt::format("norm order p must be finite and >= 1, got {}", p));
    }
    double sum = 0.0;
    if (p == 1.0) {
        for (double e : m.values()) {
            sum += std::fabs(e);
        }
        return sum;
    }
    if (p == 2.0) {
        for (double e : m.values()) {
            sum += e * e;
        }
        return std::sqrt(sum);
    }
    for (double e : m.values()) {
        sum += std::pow(std::fabs(e), p);
    }
    return std::pow(sum, 1.0 / p);
}

Decision decide(double score, double gamma) {
    return score > gamma ? Decision::out : Decision::in;
}

namespace {

constexpr const char* kOutputTap = "a_last";

// Channel extent and per-channel map size of one sample of a batched tensor.
struct Layout {
    std::size_t channels = 1;
    std::size_t map = 1;
};

Layout layout_of(const Tensor& t) {
    Layout l;
    l.channels = t.rank() >= 2 ? t.dim(1) : 1;
    l.map = t.size() / (t.dim(0) * l.channels);
    return l;
}

std::span<const float> channel_slice(const Tensor& t, std::size_t n, std::size_t k) {
    const Layout l = layout_of(t);
    return t.data().subspan((n * l.channels + k) * l.map, l.map);
}

Tensor one_hot_argmax(const Tensor& logits) {
    const std::size_t c = logits.dim(1);
    Tensor seed(logits.shape());
    for (std::size_t n = 0; n < logits.dim(0); ++n) {
        const auto row = logits.row(n);
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        seed[n * c + best] = 1.0f;
    }
    return seed;
}

template <typename Stat>
std::vector<SampleProfile> per_channel(const TapGradients& grads, const std::vector<std::string>& ids,
                                       std::size_t batch, Stat&& stat) {
    std::vector<SampleProfile> out(batch);
    for (std::size_t n = 0; n < batch; ++n) {
        std::vector<std::vector<double>> rows;
        for (const auto& id : ids) {
            const Tensor& g = grads.at(id);
            const Layout l = layout_of(g);
            std::vector<double> row(l.channels);
            for (std::size_t k = 0; k < l.channels; ++k) {
                row[k] = stat(n, channel_slice(g, n, k));
            }
            rows.push_back(std::move(row));
        }
        out[n].lambda = AbnormalityMatrix::assemble(ids, std::move(rows));
    }
    return out;
}

std::vector<SampleProfile> profiles_z(const Model& model, const Tensor& images, const ScorerConfig& cfg,
                                      const std::vector<std::string>& ids) {
    auto rec = record_forward(model, images, ids);
    const Tensor seed = one_hot_argmax(rec.output_value());
    const auto grads = rec.tape.backward(rec.output, seed);
    return per_channel(grads, ids, images.dim(0),
                       [&](std::size_t, std::span<const float> g) { return zero_deflation_expectation(g, cfg.tau); });
}

std::vector<SampleProfile> profiles_a(const Model& model, const Tensor& images, const ScorerConfig& cfg,
                                      const std::vector<std::string>& ids) {
    const std::size_t batch = images.dim(0);
    if (cfg.fusion == Fusion::top1_label) {
        auto rec = record_forward(model, images, ids);
        const Tensor seed = one_hot_argmax(rec.output_value());
        const auto grads = rec.tape.backward(rec.output, seed);
        return per_channel(grads, ids, batch, [](std::size_t, std::span<const float> g) { return mean_abs(g); });
    }

    const bool need_inner = cfg.fusion != Fusion::output_only;
    auto features = record_features(model, images, need_inner ? ids : std::vector<std::string>{});
    const Tensor& a_last = features.output_value();

    auto cls = record_classifier(model, a_last, kOutputTap);
    const Tensor seed = fused_logsoftmax_seed(cls.output_value());
    const Tensor out_grad = cls.tape.backward(cls.output, seed).at(kOutputTap);
    std::vector<double> e_out(batch);
    for (std::size_t n = 0; n < batch; ++n) {
        e_out[n] = mean_abs(out_grad.row(n));
    }

    std::vector<SampleProfile> out;
    if (cfg.fusion == Fusion::output_only) {
        out.resize(batch);
        for (std::size_t n = 0; n < batch; ++n) {
            out[n].lambda = AbnormalityMatrix::assemble({kOutputTap}, {{e_out[n]}});
        }
    } else {
        const auto inner = features.tape.backward(features.output, Tensor(a_last.shape(), 1.0f));
        if (cfg.fusion == Fusion::inner_only) {
            out = per_channel(inner, ids, batch, [](std::size_t, std::span<const float> g) { return mean_abs(g); });
        } else {
            out = per_channel(inner, ids, batch, [&](std::size_t n, std::span<const float> g) {
                return avg_ratio(mean_abs(g), e_out[n], cfg.eps0);
            });
        }
    }
    for (std::size_t n = 0; n < batch; ++n) {
        out[n].e_output = e_out[n];
        out[n].degenerate_output = e_out[n] == 0.0;
    }
    return out;
}

ScoreResult reduce(const std::vector<SampleProfile>& profiles, double p) {
    ScoreResult r;
    for (const auto& prof : profiles) {
        r.scores.push_back(matrix_pnorm(prof.lambda, p));
        r.degenerate.push_back(prof.degenerate_output);
    }
    return r;
}

} // namespace

std::vector<SampleProfile> gaia_profiles(const Model& model, const Tensor& images, const ScorerConfig& cfg) {
    cfg.validate(model.graph());
    check_images(model.graph(), images);
    const auto ids = model.graph().select_taps(cfg.taps);
    return cfg.method == Method::gaia_z ? profiles_z(model, images, cfg, ids) : profiles_a(model, images, cfg, ids);
}

ScoreResult score_gaia_z(const Model& model, const Tensor& images, const ScorerConfig& cfg) {
    if (cfg.method != Method::gaia_z) {
        throw ConfigError("score_gaia_z needs method gaia-z");
    }
    return reduce(gaia_profiles(model, images, cfg), cfg.p);
}

ScoreResult score_gaia_a(const Model& model, const Tensor& images, const ScorerConfig& cfg) {
    if (cfg.method != Method::gaia_a) {
        throw ConfigError("score_gaia_a needs method gaia-a");
    }
    return reduce(gaia_profiles(model, images, cfg), cfg.p);
}

ScoreResult score_gaia(const Model& model, const Tensor& images, const ScorerConfig& cfg) {
    return cfg.method == Method::gaia_z ? score_gaia_z(model, images, cfg) : score_gaia_a(model, images, cfg);
}

} // namespace gaia
