// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include "gaia/model.hpp"

#include <optional>

namespace gaia {

template <typename T>
BasicModel<T>::BasicModel(ModelGraph graph, const WeightArchive& weights) {
    graph.check_weights(weights);
    graph_ = std::make_shared<const ModelGraph>(std::move(graph));
    params_.resize(graph_->layers().size());
    for (std::size_t i = 0; i < graph_->layers().size(); ++i) {
        const Layer& layer = graph_->layers()[i];
        for (const auto& [role, name] : layer.weights) {
            const Tensor w = weights.tensor(name);
            ensure_finite(w, name);
            if (role == "var") {
                for (float v : w.data()) {
                    if (v < 0) {
                        throw DataError(fmt::format("layer '{}': running variance '{}' has a negative entry",
                                                    layer.name, name));
                    }
                }
            }
            params_[i].emplace(role, w.template cast<T>());
        }
    }
}

template <typename T>
const BasicTensor<T>& BasicModel<T>::param(std::size_t layer, const std::string& role) const {
    static const BasicTensor<T> none;
    const auto& slot = params_.at(layer);
    auto it = slot.find(role);
    return it == slot.end() ? none : it->second;
}

template <typename T>
template <typename U>
BasicModel<U> BasicModel<T>::cast() const {
    BasicModel<U> out;
    out.graph_ = graph_;
    out.params_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        for (const auto& [role, t] : params_[i]) {
            out.params_[i].emplace(role, t.template cast<U>());
        }
    }
    return out;
}

Model load_model(const std::filesystem::path& graph_path, const std::filesystem::path& weights_path) {
    return Model(load_graph(graph_path), load_weights(weights_path));
}

template <typename T>
void check_images(const ModelGraph& graph, const BasicTensor<T>& images) {
    const Shape& want = graph.input_shape();
    if (images.rank() != 4 || Shape(images.shape().begin() + 1, images.shape().end()) != want) {
        throw DataError(fmt::format("images of shape {} do not match model input N×{}", to_string(images.shape()),
                                    to_string(want)));
    }
}

void check_batch(const ModelGraph& graph, const SampleBatch& batch) {
    check_images(graph, batch.images);
    if (batch.labels) {
        for (std::size_t i = 0; i < batch.labels->size(); ++i) {
            const auto label = (*batch.labels)[i];
            if (label < 0 || static_cast<std::size_t>(label) >= graph.num_classes()) {
                throw DataError(fmt::format("{}: label {} of sample {} outside [0, {})", batch.source, label, i,
                                            graph.num_classes()));
            }
        }
    }
}

namespace {

template <typename T>
struct PlainExec {
    using Handle = BasicTensor<T>;

    const LayerHook<T>* hook = nullptr;

    Handle apply(const BasicModel<T>& m, std::size_t li, const std::vector<const Handle*>& in) {
        const Layer& l = m.graph().layers()[li];
        const auto& x = *in[0];
        Handle y;
        switch (l.kind) {
        case OpKind::conv2d: y = ops::conv2d(x, m.param(li, "weight"), m.param(li, "bias"), l.conv); break;
        case OpKind::batchnorm:
            y = ops::batchnorm_inference(x, m.param(li, "gamma"), m.param(li, "beta"), m.param(li, "mean"),
                                         m.param(li, "var"), l.eps);
            break;
        case OpKind::relu: y = ops::relu(x); break;
        case OpKind::max_pool2d: y = ops::max_pool2d(x, l.pool); break;
        case OpKind::avg_pool2d: y = ops::avg_pool2d(x, l.pool); break;
        case OpKind::global_avg_pool: y = ops::global_avg_pool(x); break;
        case OpKind::add: y = ops::residual_add(x, *in[1]); break;
        case OpKind::linear: y = ops::linear(x, m.param(li, "weight"), m.param(li, "bias")); break;
        case OpKind::flatten: y = ops::flatten(x); break;
        case OpKind::mask: y = ops::channel_mask(x, l.channels); break;
        case OpKind::softmax: y = ops::softmax(x); break;
        case OpKind::log_softmax: y = ops::log_softmax(x); break;
        case OpKind::input: throw UsageError("input is not a layer op");
        }
        if (hook && *hook) {
            (*hook)(li, y);
        }
        return y;
    }
};

template <typename T>
struct TapeExec {
    using Handle = NodeId;

    BasicTape<T>* tape = nullptr;

    Handle apply(const BasicModel<T>& m, std::size_t li, const std::vector<const Handle*>& in) {
        const Layer& l = m.graph().layers()[li];
        const NodeId x = *in[0];
        switch (l.kind) {
        case OpKind::conv2d: return tape->conv2d(x, m.param(li, "weight"), m.param(li, "bias"), l.conv);
        case OpKind::batchnorm:
            return tape->batchnorm(x, m.param(li, "gamma"), m.param(li, "beta"), m.param(li, "mean"),
                                   m.param(li, "var"), l.eps);
        case OpKind::relu: return tape->relu(x);
        case OpKind::max_pool2d: return tape->max_pool2d(x, l.pool);
        case OpKind::avg_pool2d: return tape->avg_pool2d(x, l.pool);
        case OpKind::global_avg_pool: return tape->global_avg_pool(x);
        case OpKind::add: return tape->add(x, *in[1]);
        case OpKind::linear: return tape->linear(x, m.param(li, "weight"), m.param(li, "bias"));
        case OpKind::flatten: return tape->flatten(x);
        case OpKind::mask: return tape->mask(x, l.channels);
        case OpKind::softmax: return tape->softmax(x);
        case OpKind::log_softmax: return tape->log_softmax(x);
        case OpKind::input: break;
        }
        throw UsageError("input is not a layer op");
    }
};

// Runs layers [first, last]. `entry` stands for the graph input when
// first == 0, else for the output of layer first-1. With `keep_all` every
// layer output survives; otherwise outputs are dropped after their last use.
template <typename T, typename Exec>
std::vector<std::optional<typename Exec::Handle>> run_layers(const BasicModel<T>& m, std::size_t first,
                                                             std::size_t last, typename Exec::Handle entry,
                                                             Exec& exec, bool keep_all) {
    using Handle = typename Exec::Handle;
    const auto& layers = m.graph().layers();
    if (first > last || last >= layers.size()) {
        throw UsageError(fmt::format("invalid layer range [{}, {}] for a {}-layer graph", first, last,
                                     layers.size()));
    }
    const std::size_t entry_index = first == 0 ? kGraphInput : first - 1;

    std::vector<std::size_t> last_use(layers.size(), 0);
    for (std::size_t i = first; i <= last; ++i) {
        for (std::size_t src : layers[i].inputs) {
            if (src != kGraphInput) {
                last_use[src] = std::max(last_use[src], i);
            }
        }
    }

    std::vector<std::optional<Handle>> slots(layers.size());
    std::vector<const Handle*> in;
    for (std::size_t i = first; i <= last; ++i) {
        in.clear();
        for (std::size_t src : layers[i].inputs) {
            if (src == entry_index) {
                in.push_back(&entry);
            } else if (src != kGraphInput && src >= first && src < i && slots[src]) {
                in.push_back(&*slots[src]);
            } else {
                throw UsageError(fmt::format("layer '{}' reads outside the executed range [{}, {}]",
                                             layers[i].name, first, last));
            }
        }
        slots[i] = exec.apply(m, i, in);
        if (!keep_all) {
            for (std::size_t src : layers[i].inputs) {
                if (src != entry_index && src != kGraphInput && last_use[src] == i) {
                    slots[src].reset();
                }
            }
        }
    }
    return slots;
}

} // namespace

template <typename T>
BasicTensor<T> forward(const BasicModel<T>& model, const BasicTensor<T>& images, const LayerHook<T>& hook) {
    check_images(model.graph(), images);
    PlainExec<T> exec{&hook};
    const std::size_t last = model.graph().layers().size() - 1;
    auto slots = run_layers(model, 0, last, images, exec, false);
    return std::move(*slots[last]);
}

template <typename T>
std::vector<BasicTensor<T>> forward_all(const BasicModel<T>& model, const BasicTensor<T>& images,
                                        const LayerHook<T>& hook) {
    check_images(model.graph(), images);
    PlainExec<T> exec{&hook};
    auto slots = run_layers(model, 0, model.graph().layers().size() - 1, images, exec, true);
    std::vector<BasicTensor<T>> out;
    out.reserve(slots.size());
    for (auto& s : slots) {
        out.push_back(std::move(*s));
    }
    return out;
}

template <typename T>
BasicRecording<T> record_layers(const BasicModel<T>& model, const BasicTensor<T>& input, std::size_t first,
                                std::size_t last, const std::vector<std::string>& taps) {
    const ModelGraph& g = model.graph();
    std::vector<std::size_t> tap_layers;
    for (const std::string& id : taps) {
        const TapPoint& tp = g.tap(id);
        if (tp.layer < first || tp.layer > last) {
            throw ConfigError(fmt::format("tap '{}' on layer '{}' lies outside the recorded layers '{}'..'{}'", id,
                                          g.layers()[tp.layer].name, g.layers().at(first).name,
                                          g.layers().at(last).name));
        }
        tap_layers.push_back(tp.layer);
    }
    BasicRecording<T> rec;
    rec.input = rec.tape.input(input);
    TapeExec<T> exec{&rec.tape};
    auto slots = run_layers(model, first, last, rec.input, exec, true);
    for (std::size_t i = 0; i < taps.size(); ++i) {
        rec.tape.tap(taps[i], *slots[tap_layers[i]]);
    }
    rec.output = *slots[last];
    return rec;
}

template <typename T>
BasicRecording<T> record_forward(const BasicModel<T>& model, const BasicTensor<T>& images,
                                 const std::vector<std::string>& taps) {
    check_images(model.graph(), images);
    return record_layers(model, images, 0, model.graph().layers().size() - 1, taps);
}

template <typename T>
BasicRecording<T> record_features(const BasicModel<T>& model, const BasicTensor<T>& images,
                                  const std::vector<std::string>& taps) {
    check_images(model.graph(), images);
    return record_layers(model, images, 0, model.graph().split_layer(), taps);
}

template <typename T>
BasicRecording<T> record_classifier(const BasicModel<T>& model, const BasicTensor<T>& a_last,
                                    const std::string& a_tap) {
    const ModelGraph& g = model.graph();
    Shape want{a_last.shape().empty() ? 0 : a_last.dim(0)};
    const Shape& per_sample = g.layers()[g.split_layer()].output_shape;
    want.insert(want.end(), per_sample.begin(), per_sample.end());
    if (a_last.shape() != want) {
        throw ConfigError(fmt::format("classifier input of shape {} does not match A_last {}",
                                      to_string(a_last.shape()), to_string(want)));
    }
    auto rec = record_layers(model, a_last, g.split_layer() + 1, g.layers().size() - 1, {});
    rec.tape.tap(a_tap, rec.input);
    return rec;
}

#define GAIA_INSTANTIATE_MODEL(T)                                                                                   \
    template class BasicModel<T>;                                                                                  \
    template void check_images<T>(const ModelGraph&, const BasicTensor<T>&);                                       \
    template BasicTensor<T> forward<T>(const BasicModel<T>&, const BasicTensor<T>&, const LayerHook<T>&);          \
    template std::vector<BasicTensor<T>> forward_all<T>(const BasicModel<T>&, const BasicTensor<T>&,               \
                                                        const LayerHook<T>&);                                      \
    template BasicRecording<T> record_layers<T>(const BasicModel<T>&, const BasicTensor<T>&, std::size_t,          \
                                                std::size_t, const std::vector<std::string>&);                     \
    template BasicRecording<T> record_forward<T>(const BasicModel<T>&, const BasicTensor<T>&,                      \
                                                 const std::vector<std::string>&);                                 \
    template BasicRecording<T> record_features<T>(const BasicModel<T>&, const BasicTensor<T>&,                     \
                                                  const std::vector<std::string>&);                                \
    template BasicRecording<T> record_classifier<T>(const BasicModel<T>&, const BasicTensor<T>&,                   \
                                                    const std::string&);

GAIA_INSTANTIATE_MODEL(float)
GAIA_INSTANTIATE_MODEL(double)

template BasicModel<double> BasicModel<float>::cast<double>() const;
template BasicModel<float> BasicModel<double>::cast<float>() const;

} // namespace gaia
