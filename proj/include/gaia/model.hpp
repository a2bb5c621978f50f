// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gaia/archive.hpp"
#include "gaia/graph.hpp"
#include "gaia/tape.hpp"
#include "gaia/tensor.hpp"

namespace gaia {

/// A graph bound to its weights. Immutable once built and safe to share
/// between threads.
template <typename T>
class BasicModel {
public:
    /// Checks every referenced weight (presence, dtype, shape) before binding.
    BasicModel(ModelGraph graph, const WeightArchive& weights);

    const ModelGraph& graph() const noexcept { return *graph_; }

    /// Weight tensor bound to `role` of layer `layer`; an empty tensor when the
    /// role is optional and absent (bias).
    const BasicTensor<T>& param(std::size_t layer, const std::string& role) const;

    /// Same graph and weights converted elementwise to U.
    template <typename U>
    BasicModel<U> cast() const;

private:
    template <typename>
    friend class BasicModel;
    BasicModel() = default;

    std::shared_ptr<const ModelGraph> graph_;
    std::vector<std::map<std::string, BasicTensor<T>>> params_;
};

using Model = BasicModel<float>;

Model load_model(const std::filesystem::path& graph_path, const std::filesystem::path& weights_path);

/// Images must be N×C×H×W with C×H×W matching the graph input; labels, when
/// present, must lie in [0, classes). Throws DataError.
void check_batch(const ModelGraph& graph, const SampleBatch& batch);
template <typename T>
void check_images(const ModelGraph& graph, const BasicTensor<T>& images);

/// Called with each layer output right after it is computed; may modify it.
template <typename T>
using LayerHook = std::function<void(std::size_t layer, BasicTensor<T>& value)>;

/// Plain (untaped) forward pass returning N×classes logits.
template <typename T>
BasicTensor<T> forward(const BasicModel<T>& model, const BasicTensor<T>& images, const LayerHook<T>& hook = {});

/// Plain forward that keeps every layer output, in layer order.
template <typename T>
std::vector<BasicTensor<T>> forward_all(const BasicModel<T>& model, const BasicTensor<T>& images,
                                        const LayerHook<T>& hook = {});

template <typename T>
struct BasicRecording {
    BasicTape<T> tape;
    NodeId input = 0;
    NodeId output = 0;

    const BasicTensor<T>& output_value() const { return tape.value(output); }
};

using Recording = BasicRecording<float>;

/// Records layers [first, last] on a fresh tape. `input` is the graph input
/// when first == 0, otherwise the output of layer first-1. Each id in `taps`
/// must name a graph tap whose layer lies in the range.
template <typename T>
BasicRecording<T> record_layers(const BasicModel<T>& model, const BasicTensor<T>& input, std::size_t first,
                                std::size_t last, const std::vector<std::string>& taps);

/// Whole network, images to logits.
template <typename T>
BasicRecording<T> record_forward(const BasicModel<T>& model, const BasicTensor<T>& images,
                                 const std::vector<std::string>& taps);

/// Feature extractor only: images to A_last.
template <typename T>
BasicRecording<T> record_features(const BasicModel<T>& model, const BasicTensor<T>& images,
                                  const std::vector<std::string>& taps);

/// Classifier only: A_last to logits. The input node is tapped as `a_tap`.
template <typename T>
BasicRecording<T> record_classifier(const BasicModel<T>& model, const BasicTensor<T>& a_last,
                                    const std::string& a_tap);

} // namespace gaia
