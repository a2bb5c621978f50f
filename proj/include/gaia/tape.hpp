// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gaia/ops.hpp"
#include "gaia/tensor.hpp"

namespace gaia {

enum class OpKind {
    input,
    conv2d,
    batchnorm,
    relu,
    max_pool2d,
    avg_pool2d,
    global_avg_pool,
    add,
    linear,
    flatten,
    mask,
    softmax,
    log_softmax,
};

std::string_view op_name(OpKind kind);

using NodeId = std::size_t;

/// Gradient per registered tap id, shaped like the tapped activation.
template <typename T>
using BasicTapGradients = std::map<std::string, BasicTensor<T>>;
using TapGradients = BasicTapGradients<float>;

/// Reverse-mode recording of one forward evaluation.
///
/// Every op computes its value eagerly with the same kernels as an untaped
/// run, so recorded values are bit-identical to plain execution. Weight
/// tensors are held by pointer and must outlive the tape.
template <typename T>
class BasicTape {
public:
    NodeId input(BasicTensor<T> value);

    NodeId conv2d(NodeId x, const BasicTensor<T>& kernel, const BasicTensor<T>& bias, const ops::Conv2dParams& p);
    NodeId batchnorm(NodeId x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                     const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var, double eps);
    NodeId relu(NodeId x);
    NodeId max_pool2d(NodeId x, const ops::Pool2dParams& p);
    NodeId avg_pool2d(NodeId x, const ops::Pool2dParams& p);
    NodeId global_avg_pool(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId linear(NodeId x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);
    NodeId flatten(NodeId x);
    NodeId mask(NodeId x, std::vector<std::size_t> channels);
    NodeId softmax(NodeId x);
    NodeId log_softmax(NodeId x);

    const BasicTensor<T>& value(NodeId node) const;
    OpKind kind(NodeId node) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Registers `node` as a gradient tap. Tap ids are unique per tape.
    void tap(std::string id, NodeId node);
    const std::map<std::string, NodeId>& taps() const noexcept { return taps_; }

    /// Propagates d(sum(seed * value(output)))/d(node) back to every tap.
    /// Taps that `output` does not depend on receive exact zeros. A tape can
    /// be differentiated once; a second call throws UsageError.
    BasicTapGradients<T> backward(NodeId output, const BasicTensor<T>& seed);

    bool consumed() const noexcept { return consumed_; }

    /// Test-only mutation hook: negates the input-gradient rule of `kind`.
    void inject_sign_flip(OpKind kind) { flipped_ = kind; }

private:
    struct Node {
        OpKind kind = OpKind::input;
        std::vector<NodeId> inputs;
        BasicTensor<T> value;
        const BasicTensor<T>* weight = nullptr; // conv kernel, linear weight, bn gamma
        const BasicTensor<T>* aux = nullptr;    // bn running variance
        ops::Conv2dParams conv;
        ops::Pool2dParams pool;
        double eps = 0;
        std::vector<std::size_t> indices; // max-pool argmax or masked channels
    };

    NodeId push(Node node);
    const Node& node_at(NodeId id) const;

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> taps_;
    bool consumed_ = false;
    std::optional<OpKind> flipped_;
};

using Tape = BasicTape<float>;

} // namespace gaia
