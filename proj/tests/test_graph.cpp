// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>

#include "doctest.h"
#include "gaia/archive.hpp"
#include "gaia/graph.hpp"
#include "test_support.hpp"

using namespace gaia;

namespace {

const char* kMinimal = R"(input 2 6 6
classes 3
c: conv2d out=4 kernel=3 pad=1 weight=c.w bias=c.b
r: relu
g: global_avg_pool
fc: linear out=3 weight=fc.w
tap t1 c block1
split g
)";

std::string config_error(const std::string& text) {
    try {
        ModelGraph::parse(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

} // namespace

TEST_CASE("minimal conv-relu-gap-linear graph loads with a three-layer feature extractor") {
    const ModelGraph g = ModelGraph::parse(kMinimal);
    CHECK(g.layers().size() == 4);
    CHECK(g.split_layer() == 2);
    CHECK(g.num_classes() == 3);
    CHECK(g.input_shape() == Shape{2, 6, 6});
    CHECK(g.layers()[0].output_shape == Shape{4, 6, 6});
    CHECK(g.layers()[2].output_shape == Shape{4});
    CHECK(g.layers()[0].inputs == std::vector<std::size_t>{kGraphInput});
    CHECK(g.layers()[1].inputs == std::vector<std::size_t>{0});
    REQUIRE(g.taps().size() == 1);
    CHECK(g.tap("t1").layer == 0);
    CHECK(g.tap("t1").block == "block1");
    CHECK(g.layers()[0].weight_shapes.at("weight") == Shape{4, 2, 3, 3});
}

TEST_CASE("missing weights are listed by name") {
    const ModelGraph g = ModelGraph::parse(kMinimal);
    WeightArchive w;
    w.add("c.w", Tensor({4, 2, 3, 3}));
    try {
        g.check_weights(w);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("c.b") != std::string::npos);
        CHECK(msg.find("fc.w") != std::string::npos);
    }
    w.add("c.b", Tensor({4}));
    w.add("fc.w", Tensor({3, 5}));
    CHECK_THROWS_WITH_AS(g.check_weights(w), doctest::Contains("has shape [3,5], expected [3,4]"), ConfigError);
}

TEST_CASE("errors name the layer and line") {
    std::string gelu = kMinimal;
    gelu.replace(gelu.find("relu"), 4, "gelu");
    CHECK(config_error(gelu) == "graph line 4: layer 'r': unknown op kind 'gelu'");

    const std::string dup_tap = std::string(kMinimal) + "tap t1 r block2\n";
    CHECK(config_error(dup_tap).find("duplicate tap id 't1'") != std::string::npos);

    std::string mismatch = kMinimal;
    mismatch.replace(mismatch.find("fc: linear out=3"), 16, "fc: linear out=2");
    CHECK(config_error(mismatch).find("final layer 'fc'") != std::string::npos);

    const std::string bad_add = "input 1 4 4\nclasses 2\na: conv2d out=2 kernel=1 weight=w\n"
                                "b: conv2d in=input out=3 kernel=1 weight=v\nc: add in=a,b\n"
                                "g: global_avg_pool\nfc: linear out=2 weight=f\nsplit g\n";
    CHECK(config_error(bad_add).find("graph line 5: layer 'c' (add): operand shapes") != std::string::npos);

    const std::string forward_ref = "input 1 4 4\nclasses 2\na: relu in=b\nb: relu\n"
                                    "g: global_avg_pool\nfc: linear out=2 weight=f\nsplit g\n";
    CHECK(config_error(forward_ref).find("input 'b' is not an earlier layer") != std::string::npos);

    std::string unknown_key = kMinimal;
    unknown_key.replace(unknown_key.find("r: relu"), 7, "r: relu k=1");
    CHECK(config_error(unknown_key).find("unknown key 'k'") != std::string::npos);

    std::string wrong_rank = kMinimal;
    wrong_rank.replace(wrong_rank.find("g: global_avg_pool"), 18, "g: relu");
    CHECK(config_error(wrong_rank).find("layer 'fc' (linear): expects a flat input") != std::string::npos);
}

TEST_CASE("split placement rules") {
    std::string last = kMinimal;
    last.replace(last.find("split g"), 7, "split fc");
    CHECK(config_error(last).find("at least one classifier layer") != std::string::npos);

    std::string missing = kMinimal;
    missing.replace(missing.find("split g"), 7, "");
    CHECK(config_error(missing).find("missing 'split") != std::string::npos);

    // A classifier layer reading from before the split bypasses A_last.
    const std::string skip = "input 1 4 4\nclasses 2\na: relu\nb: relu\nc: add in=a,b\n"
                             "g: global_avg_pool\nfc: linear out=2 weight=f\nsplit b\n";
    CHECK_FALSE(config_error(skip).empty());
}

TEST_CASE("tap selection by id, block label and all") {
    const ModelGraph g = gaia::testing::fixture_model().graph();
    CHECK(g.select_taps({"all"}) == std::vector<std::string>{"block1", "block2", "block3", "block4"});
    CHECK(g.select_taps({"block4", "block3"}) == std::vector<std::string>{"block3", "block4"});
    CHECK_THROWS_WITH_AS(g.select_taps({"block9"}), doctest::Contains("available: block1, block2, block3, block4"),
                         ConfigError);
    CHECK_THROWS_AS(g.tap("nope"), ConfigError);
    CHECK(g.has_tap("block2"));
}

TEST_CASE("the fixture graph parses with the expected structure") {
    const ModelGraph g = load_graph(gaia::testing::fixture("toy_resnet.graph"));
    CHECK(g.num_classes() == 4);
    CHECK(g.input_shape() == Shape{1, 32, 32});
    CHECK(g.layers()[g.split_layer()].name == "b4_out");
    CHECK(g.layers()[g.split_layer()].output_shape == Shape{32, 4, 4});
    CHECK(g.layers()[g.tap("block3").layer].output_shape == Shape{32, 8, 8});
    const std::string d = g.describe();
    CHECK(d.find("b4_out") != std::string::npos);
    CHECK(d.find("block1") != std::string::npos);
    CHECK_THROWS_AS(load_graph("/nonexistent.graph"), DataError);
}

TEST_CASE("comments, defaults and two-value kernels") {
    const std::string text = "# header\ninput 1 5 7   # trailing\nclasses 2\n"
                             "m: max_pool2d kernel=2,3 pad=1\n"
                             "a: avg_pool2d kernel=2 stride=1\n"
                             "f: flatten\nfc: linear out=2 weight=w\nsplit f\n";
    const ModelGraph g = ModelGraph::parse(text);
    CHECK(g.layers()[0].pool.kernel_w == 3);
    CHECK(g.layers()[0].pool.stride_w == 3);
    CHECK(g.layers()[0].output_shape == Shape{1, 3, 3});
    CHECK(g.layers()[1].output_shape == Shape{1, 2, 2});
    CHECK(g.layers()[2].output_shape == Shape{4});
}
