// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gaia/ops.hpp"
#include "gaia/tape.hpp"
#include "gaia/tensor.hpp"

// Line-oriented model description.
//
//   input <C> <H> <W>
//   classes <C>
//   <name>: <op> [in=<layer>[,<layer>]] <key=value>...
//   tap <tap_id> <layer_name> <block_label>
//   split <layer_name>
//
// `in` defaults to the previous layer (or the graph input for the first
// layer); the graph input is called `input`. `#` starts a comment.
//
// ops and keys:
//   conv2d       out kernel [stride=1] [pad=0] weight [bias]
//   batchnorm    gamma beta mean var [eps=1e-5]
//   relu, flatten, global_avg_pool, softmax, log_softmax
//   max_pool2d   kernel [stride=kernel] [pad=0]
//   avg_pool2d   kernel [stride=kernel] [pad=0]
//   add          in=<a>,<b>
//   linear       out weight [bias]
//   mask         channels=<c>[,<c>...]
// kernel/stride/pad take `k` or `kh,kw`.

namespace gaia {

class WeightArchive;

constexpr std::size_t kGraphInput = std::numeric_limits<std::size_t>::max();

struct Layer {
    std::string name;
    OpKind kind = OpKind::relu;
    std::vector<std::size_t> inputs; // layer indices or kGraphInput
    std::size_t out_features = 0;    // conv2d / linear
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    ops::Conv2dParams conv;
    ops::Pool2dParams pool;
    double eps = 1e-5;
    std::vector<std::size_t> channels;               // mask
    std::map<std::string, std::string> weights;      // role -> archive tensor name
    std::map<std::string, Shape> weight_shapes;      // role -> expected shape
    Shape output_shape;                              // per sample, without the batch axis
    std::size_t line = 0;
};

struct TapPoint {
    std::string id;
    std::size_t layer = 0;
    std::string block;
};

class ModelGraph {
public:
    /// Parses and statically shape-checks a graph document.
    static ModelGraph parse(std::string_view text);

    const Shape& input_shape() const noexcept { return input_shape_; }
    std::size_t num_classes() const noexcept { return classes_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    const std::vector<TapPoint>& taps() const noexcept { return taps_; }

    /// Index of the layer whose output is the last feature map (A_last).
    /// Layers [0, split] form the feature extractor, the rest the classifier.
    std::size_t split_layer() const noexcept { return split_; }

    std::size_t layer_index(std::string_view name) const;
    const TapPoint& tap(std::string_view id) const;
    bool has_tap(std::string_view id) const;

    /// Resolves a selection of tap ids or block labels to tap ids, in graph
    /// order. "all" selects every tap.
    std::vector<std::string> select_taps(const std::vector<std::string>& selection) const;

    /// Every referenced weight must exist as f32 with the expected shape.
    /// Throws ConfigError listing every missing name.
    void check_weights(const WeightArchive& weights) const;

    /// Human-readable listing: one line per layer with shapes and taps.
    std::string describe() const;

private:
    Shape input_shape_;
    std::size_t classes_ = 0;
    std::vector<Layer> layers_;
    std::vector<TapPoint> taps_;
    std::size_t split_ = 0;
    std::map<std::string, std::size_t, std::less<>> by_name_;
};

ModelGraph load_graph(const std::filesystem::path& path);

} // namespace gaia
