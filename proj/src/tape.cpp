// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include "gaia/tape.hpp"

#include <utility>

namespace gaia {

std::string_view op_name(OpKind kind) {
    switch (kind) {
    case OpKind::input: return "input";
    case OpKind::conv2d: return "conv2d";
    case OpKind::batchnorm: return "batchnorm";
    case OpKind::relu: return "relu";
    case OpKind::max_pool2d: return "max_pool2d";
    case OpKind::avg_pool2d: return "avg_pool2d";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::add: return "add";
    case OpKind::linear: return "linear";
    case OpKind::flatten: return "flatten";
    case OpKind::mask: return "mask";
    case OpKind::softmax: return "softmax";
    case OpKind::log_softmax: return "log_softmax";
    }
    return "unknown";
}

template <typename T>
NodeId BasicTape<T>::push(Node node) {
    if (consumed_) {
        throw UsageError("tape already differentiated; record a new forward pass");
    }
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
}

template <typename T>
const typename BasicTape<T>::Node& BasicTape<T>::node_at(NodeId id) const {
    if (id >= nodes_.size()) {
        throw UsageError(fmt::format("tape has no node {}", id));
    }
    return nodes_[id];
}

template <typename T>
NodeId BasicTape<T>::input(BasicTensor<T> value) {
    ensure_finite(value, "tape input");
    Node n;
    n.kind = OpKind::input;
    n.value = std::move(value);
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::conv2d(NodeId x, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                            const ops::Conv2dParams& p) {
    Node n;
    n.kind = OpKind::conv2d;
    n.inputs = {x};
    n.value = ops::conv2d(node_at(x).value, kernel, bias, p);
    n.weight = &kernel;
    n.conv = p;
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::batchnorm(NodeId x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                               const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var, double eps) {
    Node n;
    n.kind = OpKind::batchnorm;
    n.inputs = {x};
    n.value = ops::batchnorm_inference(node_at(x).value, gamma, beta, running_mean, running_var, eps);
    n.weight = &gamma;
    n.aux = &running_var;
    n.eps = eps;
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::relu(NodeId x) {
    Node n;
    n.kind = OpKind::relu;
    n.inputs = {x};
    n.value = ops::relu(node_at(x).value);
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::max_pool2d(NodeId x, const ops::Pool2dParams& p) {
    auto r = ops::max_pool2d_with_indices(node_at(x).value, p);
    Node n;
    n.kind = OpKind::max_pool2d;
    n.inputs = {x};
    n.value = std::move(r.output);
    n.indices = std::move(r.argmax);
    n.pool = p;
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::avg_pool2d(NodeId x, const ops::Pool2dParams& p) {
    Node n;
    n.kind = OpKind::avg_pool2d;
    n.inputs = {x};
    n.value = ops::avg_pool2d(node_at(x).value, p);
    n.pool = p;
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::global_avg_pool(NodeId x) {
    Node n;
    n.kind = OpKind::global_avg_pool;
    n.inputs = {x};
    n.value = ops::global_avg_pool(node_at(x).value);
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::add(NodeId a, NodeId b) {
    Node n;
    n.kind = OpKind::add;
    n.inputs = {a, b};
    n.value = ops::residual_add(node_at(a).value, node_at(b).value);
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::linear(NodeId x, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
    Node n;
    n.kind = OpKind::linear;
    n.inputs = {x};
    n.value = ops::linear(node_at(x).value, weight, bias);
    n.weight = &weight;
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::flatten(NodeId x) {
    Node n;
    n.kind = OpKind::flatten;
    n.inputs = {x};
    n.value = ops::flatten(node_at(x).value);
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::mask(NodeId x, std::vector<std::size_t> channels) {
    Node n;
    n.kind = OpKind::mask;
    n.inputs = {x};
    n.value = ops::channel_mask(node_at(x).value, channels);
    n.indices = std::move(channels);
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::softmax(NodeId x) {
    Node n;
    n.kind = OpKind::softmax;
    n.inputs = {x};
    n.value = ops::softmax(node_at(x).value);
    return push(std::move(n));
}

template <typename T>
NodeId BasicTape<T>::log_softmax(NodeId x) {
    Node n;
    n.kind = OpKind::log_softmax;
    n.inputs = {x};
    n.value = ops::log_softmax(node_at(x).value);
    return push(std::move(n));
}

template <typename T>
const BasicTensor<T>& BasicTape<T>::value(NodeId node) const {
    return node_at(node).value;
}

template <typename T>
OpKind BasicTape<T>::kind(NodeId node) const {
    return node_at(node).kind;
}

template <typename T>
void BasicTape<T>::tap(std::string id, NodeId node) {
    node_at(node);
    if (taps_.contains(id)) {
        throw ConfigError(fmt::format("duplicate tap id '{}'", id));
    }
    taps_.emplace(std::move(id), node);
}

namespace {

template <typename T>
void accumulate(std::optional<BasicTensor<T>>& slot, BasicTensor<T> grad) {
    if (!slot) {
        slot = std::move(grad);
        return;
    }
    auto dst = slot->data();
    auto src = grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += src[i];
    }
}

template <typename T>
BasicTensor<T> negated(BasicTensor<T> g) {
    for (auto& v : g.data()) {
        v = -v;
    }
    return g;
}

} // namespace

template <typename T>
BasicTapGradients<T> BasicTape<T>::backward(NodeId output, const BasicTensor<T>& seed) {
    if (consumed_) {
        throw UsageError("backward called twice on the same tape");
    }
    const Node& out_node = node_at(output);
    if (seed.shape() != out_node.value.shape()) {
        throw ConfigError(fmt::format("backward seed shape {} does not match output shape {}",
                                      to_string(seed.shape()), to_string(out_node.value.shape())));
    }
    ensure_finite(seed, "backward seed");
    consumed_ = true;

    std::vector<std::optional<BasicTensor<T>>> grads(nodes_.size());
    grads[output] = seed;
    std::vector<bool> tapped(nodes_.size(), false);
    for (const auto& [id, node] : taps_) {
        tapped[node] = true;
    }

    for (NodeId i = output + 1; i-- > 0;) {
        if (!grads[i]) {
            continue;
        }
        const Node& n = nodes_[i];
        const BasicTensor<T>& g = *grads[i];
        const auto in_value = [&](std::size_t k) -> const BasicTensor<T>& { return nodes_[n.inputs[k]].value; };
        const bool flip = flipped_ && *flipped_ == n.kind;
        const auto send = [&](std::size_t k, BasicTensor<T> gin) {
            accumulate(grads[n.inputs[k]], flip ? negated(std::move(gin)) : std::move(gin));
        };

        switch (n.kind) {
        case OpKind::input:
            break;
        case OpKind::conv2d:
            send(0, ops::conv2d_backward_input(g, *n.weight, in_value(0).shape(), n.conv));
            break;
        case OpKind::batchnorm:
            send(0, ops::batchnorm_backward(g, *n.weight, *n.aux, n.eps));
            break;
        case OpKind::relu:
            send(0, ops::relu_backward(g, in_value(0)));
            break;
        case OpKind::max_pool2d:
            send(0, ops::max_pool2d_backward(g, n.indices, in_value(0).shape()));
            break;
        case OpKind::avg_pool2d:
            send(0, ops::avg_pool2d_backward(g, in_value(0).shape(), n.pool));
            break;
        case OpKind::global_avg_pool:
            send(0, ops::global_avg_pool_backward(g, in_value(0).shape()));
            break;
        case OpKind::add:
            send(0, g);
            send(1, g);
            break;
        case OpKind::linear:
            send(0, ops::linear_backward_input(g, *n.weight));
            break;
        case OpKind::flatten:
            send(0, g.reshaped(in_value(0).shape()));
            break;
        case OpKind::mask:
            send(0, ops::channel_mask_backward(g, n.indices));
            break;
        case OpKind::softmax:
            send(0, ops::softmax_backward(g, n.value));
            break;
        case OpKind::log_softmax:
            send(0, ops::log_softmax_backward(g, n.value));
            break;
        }
        if (!tapped[i]) {
            grads[i].reset();
        }
    }

    BasicTapGradients<T> result;
    for (const auto& [id, node] : taps_) {
        if (grads[node]) {
            result.emplace(id, *grads[node]);
        } else {
            result.emplace(id, BasicTensor<T>(nodes_[node].value.shape()));
        }
    }
    return result;
}

template class BasicTape<float>;
template class BasicTape<double>;

} // namespace gaia
