// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include "gaia/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "gaia/graph.hpp"
#include "gaia/model.hpp"

namespace gaia {

namespace {

class GraphBuilder {
public:
    explicit GraphBuilder(std::mt19937_64& rng) : rng_(rng) {}

    std::size_t uniform(std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
    }
    bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }

    void start(std::size_t c, std::size_t h, std::size_t w) {
        c_ = c;
        h_ = h;
        w_ = w;
        doc_ = fmt::format("input {} {} {}\n", c, h, w);
    }

    void conv(std::size_t out, std::size_t k, std::size_t stride, std::size_t pad, bool bias) {
        const std::string name = next("conv");
        add_weight(name + ".w", {out, c_, k, k}, std::sqrt(2.0 / static_cast<double>(c_ * k * k)));
        std::string line = fmt::format("{}: conv2d in={} out={} kernel={} stride={} pad={} weight={}.w", name, cur_,
                                       out, k, stride, pad, name);
        if (bias) {
            add_weight(name + ".b", {out}, 0.1);
            line += fmt::format(" bias={}.b", name);
        }
        emit(name, line);
        c_ = out;
        h_ = (h_ + 2 * pad - k) / stride + 1;
        w_ = (w_ + 2 * pad - k) / stride + 1;
    }

    void batchnorm() {
        const std::string name = next("bn");
        add_uniform(name + ".g", c_, 0.5, 1.5);
        add_uniform(name + ".b", c_, -0.2, 0.2);
        add_uniform(name + ".m", c_, -0.2, 0.2);
        add_uniform(name + ".v", c_, 0.5, 1.5);
        emit(name, fmt::format("{0}: batchnorm in={1} gamma={0}.g beta={0}.b mean={0}.m var={0}.v eps=1e-5", name,
                               cur_));
    }

    void relu() {
        const std::string name = next("relu");
        emit(name, fmt::format("{}: relu in={}", name, cur_));
    }

    void max_pool(std::size_t k, std::size_t stride) {
        const std::string name = next("maxpool");
        emit(name, fmt::format("{}: max_pool2d in={} kernel={} stride={}", name, cur_, k, stride));
        h_ = (h_ - k) / stride + 1;
        w_ = (w_ - k) / stride + 1;
    }

    void avg_pool(std::size_t k, std::size_t stride, std::size_t pad) {
        const std::string name = next("avgpool");
        emit(name, fmt::format("{}: avg_pool2d in={} kernel={} stride={} pad={}", name, cur_, k, stride, pad));
        h_ = (h_ + 2 * pad - k) / stride + 1;
        w_ = (w_ + 2 * pad - k) / stride + 1;
    }

    void residual() {
        const std::string skip = cur_;
        conv(c_, 3, 1, 1, false);
        batchnorm();
        relu();
        conv(c_, 3, 1, 1, coin());
        if (coin()) {
            batchnorm();
        }
        const std::string name = next("add");
        emit(name, fmt::format("{}: add in={},{}", name, cur_, skip));
        relu();
    }

    void mask() {
        const std::string name = next("mask");
        emit(name, fmt::format("{}: mask in={} channels={}", name, cur_, uniform(0, c_ - 1)));
    }

    void to_flat() {
        const std::string name = next(coin() ? "gap" : "flatten");
        if (name.starts_with("gap")) {
            emit(name, fmt::format("{}: global_avg_pool in={}", name, cur_));
            flat_ = c_;
        } else {
            emit(name, fmt::format("{}: flatten in={}", name, cur_));
            flat_ = c_ * h_ * w_;
        }
        split_ = name;
    }

    void linear(std::size_t out) {
        const std::string name = next("fc");
        add_weight(name + ".w", {out, flat_}, std::sqrt(1.0 / static_cast<double>(flat_)));
        std::string line = fmt::format("{0}: linear in={1} out={2} weight={0}.w", name, cur_, out);
        if (coin()) {
            add_weight(name + ".b", {out}, 0.1);
            line += fmt::format(" bias={}.b", name);
        }
        emit(name, line);
        flat_ = out;
    }

    void head(const char* op) {
        const std::string name = next(op);
        emit(name, fmt::format("{}: {} in={}", name, op, cur_));
    }

    std::size_t channels() const { return c_; }
    std::size_t height() const { return h_; }
    std::size_t width() const { return w_; }
    const std::vector<std::string>& feature_layers() const { return features_; }

    RandomGraph finish(std::size_t classes, std::size_t batch, std::size_t c, std::size_t h, std::size_t w,
                       std::size_t n_taps) {
        RandomGraph g;
        g.document = doc_;
        g.document += fmt::format("classes {}\nsplit {}\n", classes, split_);
        std::vector<std::string> candidates = features_;
        std::shuffle(candidates.begin(), candidates.end(), rng_);
        n_taps = std::min(n_taps, candidates.size());
        for (std::size_t i = 0; i < n_taps; ++i) {
            const std::string id = fmt::format("t{}", i);
            g.document += fmt::format("tap {} {} {}\n", id, candidates[i], id);
            g.taps.push_back(id);
        }
        g.weights = std::move(weights_);
        std::normal_distribution<float> nd(0.0f, 1.0f);
        std::vector<float> x(batch * c * h * w);
        for (float& v : x) {
            v = nd(rng_);
        }
        g.input = Tensor({batch, c, h, w}, std::move(x));
        return g;
    }

private:
    std::string next(const std::string& stem) { return fmt::format("{}{}", stem, counter_++); }

    void emit(const std::string& name, const std::string& line) {
        doc_ += line + "\n";
        cur_ = name;
        if (split_.empty()) {
            features_.push_back(name);
        }
    }

    void add_weight(const std::string& name, Shape shape, double scale) {
        std::normal_distribution<double> nd(0.0, scale);
        std::vector<float> v(element_count(shape));
        for (float& x : v) {
            x = static_cast<float>(nd(rng_));
        }
        weights_.add(name, Tensor(std::move(shape), std::move(v)));
    }

    void add_uniform(const std::string& name, std::size_t n, double lo, double hi) {
        std::uniform_real_distribution<double> ud(lo, hi);
        std::vector<float> v(n);
        for (float& x : v) {
            x = static_cast<float>(ud(rng_));
        }
        weights_.add(name, Tensor({n}, std::move(v)));
    }

    std::mt19937_64& rng_;
    std::string doc_;
    std::string cur_ = "input";
    std::string split_;
    std::size_t c_ = 0, h_ = 0, w_ = 0, flat_ = 0;
    std::size_t counter_ = 0;
    std::vector<std::string> features_;
    WeightArchive weights_;
};

// Branch pattern of every relu and max-pool layer: which relu inputs are
// positive and which element each pooling window picked.
std::vector<std::vector<std::size_t>> branch_pattern(const ModelGraph& g, const BasicTensor<double>& input,
                                                     const std::vector<BasicTensor<double>>& outputs) {
    std::vector<std::vector<std::size_t>> pattern;
    for (std::size_t i = 0; i < g.layers().size(); ++i) {
        const Layer& l = g.layers()[i];
        if (l.kind != OpKind::relu && l.kind != OpKind::max_pool2d) {
            continue;
        }
        const auto src = l.inputs[0];
        const BasicTensor<double>& x = src == kGraphInput ? input : outputs[src];
        if (l.kind == OpKind::relu) {
            std::vector<std::size_t> bits(x.size());
            for (std::size_t j = 0; j < x.size(); ++j) {
                bits[j] = x[j] > 0.0 ? 1 : 0;
            }
            pattern.push_back(std::move(bits));
        } else {
            pattern.push_back(ops::max_pool2d_with_indices(x, l.pool).argmax);
        }
    }
    return pattern;
}

} // namespace

RandomGraph random_graph(std::mt19937_64& rng) {
    GraphBuilder b(rng);
    const std::size_t c = b.uniform(1, 3);
    const std::size_t h = b.uniform(7, 10);
    const std::size_t w = b.uniform(7, 10);
    b.start(c, h, w);

    b.conv(b.uniform(2, 4), b.uniform(1, 3), 1, b.uniform(0, 1), b.coin());
    b.batchnorm();
    b.relu();

    // One residual block and one pooling layer in random order, plus extras.
    std::vector<int> stages = {0, 1};
    const std::size_t extras = b.uniform(0, 2);
    for (std::size_t i = 0; i < extras; ++i) {
        stages.push_back(static_cast<int>(b.uniform(0, 3)));
    }
    std::shuffle(stages.begin(), stages.end(), rng);
    for (int s : stages) {
        switch (s) {
        case 0:
            b.residual();
            break;
        case 1:
            if (b.height() >= 4 && b.width() >= 4 && b.coin()) {
                b.max_pool(2, b.uniform(1, 2));
            } else if (b.height() >= 2 && b.width() >= 2) {
                if (b.coin()) {
                    b.avg_pool(2, 2, 0);
                } else {
                    b.avg_pool(3, 1, 1);
                }
            }
            break;
        case 2:
            b.conv(b.uniform(2, 4), 3, b.height() >= 5 ? b.uniform(1, 2) : 1, 1, b.coin());
            b.relu();
            break;
        default:
            b.mask();
            break;
        }
    }

    b.to_flat();
    const std::size_t classes = b.uniform(2, 5);
    if (b.coin()) {
        b.linear(b.uniform(3, 6));
        b.relu();
    }
    b.linear(classes);
    if (b.coin(0.25)) {
        b.head(b.coin() ? "log_softmax" : "softmax");
    }
    return b.finish(classes, 2, c, h, w, b.uniform(1, 3));
}

GradcheckReport run_gradcheck(const GradcheckOptions& opt) {
    std::mt19937_64 rng(opt.seed);
    GradcheckReport report;
    for (std::size_t trial = 0; trial < opt.trials; ++trial) {
        RandomGraph rg = random_graph(rng);
        const Model model(ModelGraph::parse(rg.document), rg.weights);
        const BasicModel<double> shadow = model.cast<double>();
        const ModelGraph& g = model.graph();
        for (const Layer& l : g.layers()) {
            report.ops_seen.insert(l.kind);
        }

        auto rec = record_forward(model, rg.input, rg.taps);
        std::normal_distribution<float> nd(0.0f, 1.0f);
        Tensor seed(rec.output_value().shape());
        for (float& v : seed.data()) {
            v = nd(rng);
        }
        const BasicTensor<double> seed_d = seed.cast<double>();
        const BasicTensor<double> input_d = rg.input.cast<double>();
        auto shadow_rec = record_forward(shadow, input_d, rg.taps);
        if (opt.inject_sign_flip) {
            rec.tape.inject_sign_flip(*opt.inject_sign_flip);
            shadow_rec.tape.inject_sign_flip(*opt.inject_sign_flip);
        }
        const auto grads = rec.tape.backward(rec.output, seed);
        const auto grads_d = shadow_rec.tape.backward(shadow_rec.output, seed_d);
        const auto base_pattern = branch_pattern(g, input_d, forward_all(shadow, input_d));

        const auto objective = [&](std::size_t layer, std::size_t element, double delta, bool& kink) {
            const LayerHook<double> hook = [&](std::size_t li, BasicTensor<double>& v) {
                if (li == layer) {
                    v[element] += delta;
                }
            };
            const auto outs = forward_all(shadow, input_d, hook);
            kink = branch_pattern(g, input_d, outs) != base_pattern;
            double f = 0.0;
            const auto& logits = outs.back();
            for (std::size_t j = 0; j < logits.size(); ++j) {
                f += seed_d[j] * logits[j];
            }
            return f;
        };

        std::size_t done = 0;
        std::size_t attempts = 0;
        const std::size_t max_attempts = opt.elements_per_trial * 50;
        while (done < opt.elements_per_trial && attempts < max_attempts) {
            ++attempts;
            const std::string& tap = rg.taps[std::uniform_int_distribution<std::size_t>(0, rg.taps.size() - 1)(rng)];
            const std::size_t layer = g.tap(tap).layer;
            const Tensor& grad = grads.at(tap);
            const std::size_t element = std::uniform_int_distribution<std::size_t>(0, grad.size() - 1)(rng);

            bool kink_plus = false;
            bool kink_minus = false;
            const double f_plus = objective(layer, element, opt.h, kink_plus);
            const double f_minus = objective(layer, element, -opt.h, kink_minus);
            if (kink_plus || kink_minus) {
                ++report.kink_resamples;
                continue;
            }
            ++done;
            ++report.checks;
            const Layer& tl = g.layers()[layer];
            const double numeric = (f_plus - f_minus) / (2.0 * opt.h);
            const double analytic = grads_d.at(tap)[element];
            const double analytic32 = grad[element];
            const double diff = std::fabs(analytic - numeric);
            bool ok = false;
            double err = 0.0;
            if (std::fabs(analytic) < opt.small) {
                err = diff;
                report.max_abs_error = std::max(report.max_abs_error, diff);
                ok = diff < opt.abs_tol;
            } else {
                err = diff / std::max(std::fabs(analytic), std::fabs(numeric));
                report.max_rel_error = std::max(report.max_rel_error, err);
                ok = err < opt.rel_tol;
            }
            if (!ok) {
                report.failures.push_back(
                    {trial, tap, tl.name, tl.kind, element, "finite-difference", analytic32, analytic, numeric, err});
            }

            // The float engine runs the same rules; it must agree with the
            // double run up to float rounding of the tap's gradient scale.
            double scale = 0.0;
            for (double v : grads_d.at(tap).data()) {
                scale = std::max(scale, std::fabs(v));
            }
            const double bound = opt.f32_rel_tol * std::fabs(analytic) + opt.f32_scale_tol * scale;
            const double diff32 = std::fabs(analytic32 - analytic);
            report.max_f32_error = std::max(report.max_f32_error, scale > 0.0 ? diff32 / scale : diff32);
            if (diff32 > bound) {
                report.failures.push_back({trial, tap, tl.name, tl.kind, element, "float-engine", analytic32,
                                           analytic, numeric, diff32});
            }
        }
        ++report.trials;
    }
    return report;
}

} // namespace gaia
