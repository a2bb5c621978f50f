// Copyright 2026 The gaia-ood Authors
// SPDX-License-Identifier: Apache-2.0

#include "gaia/graph.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "gaia/archive.hpp"

namespace gaia {

namespace {

struct RawLayer {
    std::string name;
    std::string op;
    std::map<std::string, std::string> kv;
    std::size_t line = 0;
};

struct RawTap {
    std::string id;
    std::string layer;
    std::string block;
    std::size_t line = 0;
};

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    std::string tok;
    while (in >> tok) {
        out.push_back(tok);
    }
    return out;
}

std::vector<std::string> split_commas(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(',', start);
        out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

[[noreturn]] void fail(std::size_t line, std::string_view msg) {
    throw ConfigError(fmt::format("graph line {}: {}", line, msg));
}

std::size_t parse_count(std::string_view text, std::size_t line, std::string_view what) {
    std::size_t v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) {
        fail(line, fmt::format("{} expects a non-negative integer, got '{}'", what, text));
    }
    return v;
}

double parse_real(std::string_view text, std::size_t line, std::string_view what) {
    double v = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) {
        fail(line, fmt::format("{} expects a number, got '{}'", what, text));
    }
    return v;
}

std::pair<std::size_t, std::size_t> parse_pair(std::string_view text, std::size_t line, std::string_view what) {
    const auto parts = split_commas(text);
    if (parts.size() == 1) {
        const auto v = parse_count(parts[0], line, what);
        return {v, v};
    }
    if (parts.size() == 2) {
        return {parse_count(parts[0], line, what), parse_count(parts[1], line, what)};
    }
    fail(line, fmt::format("{} expects 'k' or 'kh,kw', got '{}'", what, text));
}

std::optional<OpKind> op_from_name(std::string_view name) {
    static const std::map<std::string_view, OpKind> kinds = {
        {"conv2d", OpKind::conv2d},
        {"batchnorm", OpKind::batchnorm},
        {"relu", OpKind::relu},
        {"max_pool2d", OpKind::max_pool2d},
        {"avg_pool2d", OpKind::avg_pool2d},
        {"global_avg_pool", OpKind::global_avg_pool},
        {"add", OpKind::add},
        {"linear", OpKind::linear},
        {"flatten", OpKind::flatten},
        {"mask", OpKind::mask},
        {"softmax", OpKind::softmax},
        {"log_softmax", OpKind::log_softmax},
    };
    auto it = kinds.find(name);
    if (it == kinds.end()) {
        return std::nullopt;
    }
    return it->second;
}

// Keys accepted per op, besides `in`.
const std::set<std::string>& allowed_keys(OpKind kind) {
    static const std::set<std::string> none;
    static const std::set<std::string> conv = {"out", "kernel", "stride", "pad", "weight", "bias"};
    static const std::set<std::string> bn = {"gamma", "beta", "mean", "var", "eps"};
    static const std::set<std::string> pool = {"kernel", "stride", "pad"};
    static const std::set<std::string> lin = {"out", "weight", "bias"};
    static const std::set<std::string> mask = {"channels"};
    switch (kind) {
    case OpKind::conv2d: return conv;
    case OpKind::batchnorm: return bn;
    case OpKind::max_pool2d:
    case OpKind::avg_pool2d: return pool;
    case OpKind::linear: return lin;
    case OpKind::mask: return mask;
    default: return none;
    }
}

Shape with_batch(const Shape& s) {
    Shape out{1};
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

Shape without_batch(const Shape& s) {
    return Shape(s.begin() + 1, s.end());
}

} // namespace

ModelGraph ModelGraph::parse(std::string_view text) {
    std::vector<RawLayer> raw_layers;
    std::vector<RawTap> raw_taps;
    std::optional<std::pair<std::string, std::size_t>> raw_split;
    std::optional<Shape> input_shape;
    std::optional<std::size_t> classes;

    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        auto tokens = split_ws(line);
        if (tokens[0].back() == ':') {
            RawLayer rl;
            rl.name = tokens[0].substr(0, tokens[0].size() - 1);
            rl.line = line_no;
            if (rl.name.empty()) {
                fail(line_no, "empty layer name");
            }
            if (tokens.size() < 2) {
                fail(line_no, fmt::format("layer '{}' has no op kind", rl.name));
            }
            rl.op = tokens[1];
            for (std::size_t i = 2; i < tokens.size(); ++i) {
                const auto eq = tokens[i].find('=');
                if (eq == std::string::npos || eq == 0 || eq + 1 == tokens[i].size()) {
                    fail(line_no, fmt::format("layer '{}': expected key=value, got '{}'", rl.name, tokens[i]));
                }
                auto key = tokens[i].substr(0, eq);
                if (rl.kv.contains(key)) {
                    fail(line_no, fmt::format("layer '{}': key '{}' given twice", rl.name, key));
                }
                rl.kv.emplace(std::move(key), tokens[i].substr(eq + 1));
            }
            raw_layers.push_back(std::move(rl));
            continue;
        }
        const std::string& directive = tokens[0];
        if (directive == "input") {
            if (tokens.size() != 4) {
                fail(line_no, "input directive expects: input <C> <H> <W>");
            }
            if (input_shape) {
                fail(line_no, "input declared twice");
            }
            input_shape = Shape{parse_count(tokens[1], line_no, "input C"), parse_count(tokens[2], line_no, "input H"),
                                parse_count(tokens[3], line_no, "input W")};
            if (element_count(*input_shape) == 0) {
                fail(line_no, "input extents must be positive");
            }
        } else if (directive == "classes") {
            if (tokens.size() != 2) {
                fail(line_no, "classes directive expects: classes <C>");
            }
            if (classes) {
                fail(line_no, "classes declared twice");
            }
            classes = parse_count(tokens[1], line_no, "classes");
            if (*classes == 0) {
                fail(line_no, "classes must be positive");
            }
        } else if (directive == "tap") {
            if (tokens.size() != 4) {
                fail(line_no, "tap directive expects: tap <tap_id> <layer_name> <block_label>");
            }
            raw_taps.push_back({tokens[1], tokens[2], tokens[3], line_no});
        } else if (directive == "split") {
            if (tokens.size() != 2) {
                fail(line_no, "split directive expects: split <layer_name>");
            }
            if (raw_split) {
                fail(line_no, "split declared twice");
            }
            raw_split = std::make_pair(tokens[1], line_no);
        } else {
            fail(line_no, fmt::format("unknown directive '{}'", directive));
        }
    }

    if (!input_shape) {
        throw ConfigError("graph: missing 'input <C> <H> <W>' directive");
    }
    if (!classes) {
        throw ConfigError("graph: missing 'classes <C>' directive");
    }
    if (raw_layers.empty()) {
        throw ConfigError("graph: no layers");
    }
    if (!raw_split) {
        throw ConfigError("graph: missing 'split <layer_name>' directive");
    }

    ModelGraph g;
    g.input_shape_ = *input_shape;
    g.classes_ = *classes;

    for (const RawLayer& rl : raw_layers) {
        Layer layer;
        layer.name = rl.name;
        layer.line = rl.line;
        if (rl.name == "input") {
            fail(rl.line, "'input' is reserved for the graph input");
        }
        if (g.by_name_.contains(rl.name)) {
            fail(rl.line, fmt::format("duplicate layer name '{}'", rl.name));
        }
        const auto kind = op_from_name(rl.op);
        if (!kind) {
            fail(rl.line, fmt::format("layer '{}': unknown op kind '{}'", rl.name, rl.op));
        }
        layer.kind = *kind;
        const auto& allowed = allowed_keys(layer.kind);
        for (const auto& [key, value] : rl.kv) {
            if (key != "in" && !allowed.contains(key)) {
                fail(rl.line, fmt::format("layer '{}' ({}): unknown key '{}'", rl.name, rl.op, key));
            }
        }
        const auto get = [&](const std::string& key) -> std::optional<std::string> {
            auto it = rl.kv.find(key);
            if (it == rl.kv.end()) {
                return std::nullopt;
            }
            return it->second;
        };
        const auto require = [&](const std::string& key) -> std::string {
            auto v = get(key);
            if (!v) {
                fail(rl.line, fmt::format("layer '{}' ({}): missing required key '{}'", rl.name, rl.op, key));
            }
            return *v;
        };

        // inputs
        if (auto in = get("in")) {
            for (const auto& src : split_commas(*in)) {
                if (src == "input") {
                    layer.inputs.push_back(kGraphInput);
                } else if (auto it = g.by_name_.find(src); it != g.by_name_.end()) {
                    layer.inputs.push_back(it->second);
                } else {
                    fail(rl.line, fmt::format("layer '{}': input '{}' is not an earlier layer", rl.name, src));
                }
            }
        } else {
            layer.inputs.push_back(g.layers_.empty() ? kGraphInput : g.layers_.size() - 1);
        }
        const std::size_t want_inputs = layer.kind == OpKind::add ? 2 : 1;
        if (layer.inputs.size() != want_inputs) {
            fail(rl.line, fmt::format("layer '{}' ({}): expects {} input(s), got {}", rl.name, rl.op, want_inputs,
                                      layer.inputs.size()));
        }
        const auto shape_of = [&](std::size_t idx) -> const Shape& {
            return idx == kGraphInput ? g.input_shape_ : g.layers_[idx].output_shape;
        };
        const Shape& in_shape = shape_of(layer.inputs[0]);

        try {
            switch (layer.kind) {
            case OpKind::conv2d: {
                layer.out_features = parse_count(require("out"), rl.line, "out");
                std::tie(layer.kernel_h, layer.kernel_w) = parse_pair(require("kernel"), rl.line, "kernel");
                if (auto s = get("stride")) {
                    std::tie(layer.conv.stride_h, layer.conv.stride_w) = parse_pair(*s, rl.line, "stride");
                }
                if (auto p = get("pad")) {
                    std::tie(layer.conv.pad_h, layer.conv.pad_w) = parse_pair(*p, rl.line, "pad");
                }
                if (layer.out_features == 0 || layer.kernel_h == 0 || layer.kernel_w == 0) {
                    fail(rl.line, fmt::format("layer '{}': out and kernel must be positive", rl.name));
                }
                if (in_shape.size() != 3) {
                    fail(rl.line, fmt::format("layer '{}' (conv2d): expects C×H×W input, got {}", rl.name,
                                              to_string(in_shape)));
                }
                const Shape kshape{layer.out_features, in_shape[0], layer.kernel_h, layer.kernel_w};
                layer.output_shape = without_batch(ops::conv2d_output_shape(with_batch(in_shape), kshape, layer.conv));
                layer.weights["weight"] = require("weight");
                layer.weight_shapes["weight"] = kshape;
                if (auto b = get("bias")) {
                    layer.weights["bias"] = *b;
                    layer.weight_shapes["bias"] = {layer.out_features};
                }
                break;
            }
            case OpKind::batchnorm: {
                if (in_shape.empty()) {
                    fail(rl.line, fmt::format("layer '{}' (batchnorm): input has no channel axis", rl.name));
                }
                if (auto e = get("eps")) {
                    layer.eps = parse_real(*e, rl.line, "eps");
                    if (layer.eps < 0) {
                        fail(rl.line, fmt::format("layer '{}': eps must be non-negative", rl.name));
                    }
                }
                for (const char* role : {"gamma", "beta", "mean", "var"}) {
                    layer.weights[role] = require(role);
                    layer.weight_shapes[role] = {in_shape[0]};
                }
                layer.output_shape = in_shape;
                break;
            }
            case OpKind::relu:
                layer.output_shape = in_shape;
                break;
            case OpKind::mask: {
                if (in_shape.empty()) {
                    fail(rl.line, fmt::format("layer '{}' (mask): input has no channel axis", rl.name));
                }
                for (const auto& c : split_commas(require("channels"))) {
                    const auto ch = parse_count(c, rl.line, "channels");
                    if (ch >= in_shape[0]) {
                        fail(rl.line, fmt::format("layer '{}': masked channel {} out of range for {} channels",
                                                  rl.name, ch, in_shape[0]));
                    }
                    layer.channels.push_back(ch);
                }
                layer.output_shape = in_shape;
                break;
            }
            case OpKind::max_pool2d:
            case OpKind::avg_pool2d: {
                std::tie(layer.pool.kernel_h, layer.pool.kernel_w) = parse_pair(require("kernel"), rl.line, "kernel");
                layer.pool.stride_h = layer.pool.kernel_h;
                layer.pool.stride_w = layer.pool.kernel_w;
                if (auto s = get("stride")) {
                    std::tie(layer.pool.stride_h, layer.pool.stride_w) = parse_pair(*s, rl.line, "stride");
                }
                if (auto p = get("pad")) {
                    std::tie(layer.pool.pad_h, layer.pool.pad_w) = parse_pair(*p, rl.line, "pad");
                }
                if (in_shape.size() != 3) {
                    fail(rl.line, fmt::format("layer '{}' ({}): expects C×H×W input, got {}", rl.name, rl.op,
                                              to_string(in_shape)));
                }
                layer.output_shape = without_batch(ops::pool2d_output_shape(with_batch(in_shape), layer.pool));
                break;
            }
            case OpKind::global_avg_pool:
                if (in_shape.size() != 3) {
                    fail(rl.line, fmt::format("layer '{}' (global_avg_pool): expects C×H×W input, got {}", rl.name,
                                              to_string(in_shape)));
                }
                layer.output_shape = {in_shape[0]};
                break;
            case OpKind::flatten:
                layer.output_shape = {element_count(in_shape)};
                break;
            case OpKind::linear: {
                layer.out_features = parse_count(require("out"), rl.line, "out");
                if (layer.out_features == 0) {
                    fail(rl.line, fmt::format("layer '{}': out must be positive", rl.name));
                }
                if (in_shape.size() != 1) {
                    fail(rl.line, fmt::format("layer '{}' (linear): expects a flat input, got {}", rl.name,
                                              to_string(in_shape)));
                }
                layer.output_shape = {layer.out_features};
                layer.weights["weight"] = require("weight");
                layer.weight_shapes["weight"] = {layer.out_features, in_shape[0]};
                if (auto b = get("bias")) {
                    layer.weights["bias"] = *b;
                    layer.weight_shapes["bias"] = {layer.out_features};
                }
                break;
            }
            case OpKind::add: {
                const Shape& other = shape_of(layer.inputs[1]);
                if (other != in_shape) {
                    fail(rl.line, fmt::format("layer '{}' (add): operand shapes {} and {} differ", rl.name,
                                              to_string(in_shape), to_string(other)));
                }
                layer.output_shape = in_shape;
                break;
            }
            case OpKind::softmax:
            case OpKind::log_softmax:
                if (in_shape.size() != 1) {
                    fail(rl.line, fmt::format("layer '{}' ({}): expects a flat input, got {}", rl.name, rl.op,
                                              to_string(in_shape)));
                }
                layer.output_shape = in_shape;
                break;
            case OpKind::input:
                fail(rl.line, "unreachable");
            }
        } catch (const ConfigError& e) {
            const std::string what = e.what();
            if (what.rfind("graph line", 0) == 0) {
                throw;
            }
            fail(rl.line, fmt::format("layer '{}' ({}): {}", rl.name, rl.op, what));
        }

        g.by_name_.emplace(layer.name, g.layers_.size());
        g.layers_.push_back(std::move(layer));
    }

    const Layer& last = g.layers_.back();
    if (last.output_shape != Shape{g.classes_}) {
        fail(last.line, fmt::format("final layer '{}' produces {}, expected [{}] class scores", last.name,
                                    to_string(last.output_shape), g.classes_));
    }

    {
        auto it = g.by_name_.find(raw_split->first);
        if (it == g.by_name_.end()) {
            fail(raw_split->second, fmt::format("split references unknown layer '{}'", raw_split->first));
        }
        g.split_ = it->second;
        if (g.split_ + 1 >= g.layers_.size()) {
            fail(raw_split->second, "split must leave at least one classifier layer after it");
        }
        for (std::size_t i = g.split_ + 1; i < g.layers_.size(); ++i) {
            for (std::size_t src : g.layers_[i].inputs) {
                if (src == kGraphInput || src < g.split_) {
                    fail(g.layers_[i].line,
                         fmt::format("classifier layer '{}' reads '{}' from before the split; only '{}' may "
                                     "cross the feature/classifier boundary",
                                     g.layers_[i].name, src == kGraphInput ? "input" : g.layers_[src].name,
                                     g.layers_[g.split_].name));
                }
            }
        }
    }

    for (const RawTap& rt : raw_taps) {
        if (g.has_tap(rt.id)) {
            fail(rt.line, fmt::format("duplicate tap id '{}'", rt.id));
        }
        auto it = g.by_name_.find(rt.layer);
        if (it == g.by_name_.end()) {
            fail(rt.line, fmt::format("tap '{}' references unknown layer '{}'", rt.id, rt.layer));
        }
        g.taps_.push_back({rt.id, it->second, rt.block});
    }
    return g;
}

std::size_t ModelGraph::layer_index(std::string_view name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) {
        throw ConfigError(fmt::format("graph has no layer named '{}'", name));
    }
    return it->second;
}

bool ModelGraph::has_tap(std::string_view id) const {
    return std::any_of(taps_.begin(), taps_.end(), [&](const TapPoint& t) { return t.id == id; });
}

const TapPoint& ModelGraph::tap(std::string_view id) const {
    for (const TapPoint& t : taps_) {
        if (t.id == id) {
            return t;
        }
    }
    throw ConfigError(fmt::format("unknown tap id '{}'", id));
}

std::vector<std::string> ModelGraph::select_taps(const std::vector<std::string>& selection) const {
    std::set<std::string> wanted;
    for (const std::string& s : selection) {
        if (s == "all") {
            for (const TapPoint& t : taps_) {
                wanted.insert(t.id);
            }
            continue;
        }
        bool matched = false;
        for (const TapPoint& t : taps_) {
            if (t.id == s || t.block == s) {
                wanted.insert(t.id);
                matched = true;
            }
        }
        if (!matched) {
            std::vector<std::string> known;
            for (const TapPoint& t : taps_) {
                known.push_back(t.block == t.id ? t.id : t.id + "(" + t.block + ")");
            }
            throw ConfigError(fmt::format("no tap or block label '{}' in graph; available: {}", s,
                                          fmt::join(known, ", ")));
        }
    }
    std::vector<std::string> out;
    for (const TapPoint& t : taps_) {
        if (wanted.contains(t.id)) {
            out.push_back(t.id);
        }
    }
    return out;
}

void ModelGraph::check_weights(const WeightArchive& weights) const {
    std::vector<std::string> missing;
    for (const Layer& layer : layers_) {
        for (const auto& [role, name] : layer.weights) {
            if (!weights.contains(name)) {
                missing.push_back(name);
                continue;
            }
            const ArchiveEntry& e = weights.entry(name);
            if (e.dtype != DType::f32) {
                throw ConfigError(fmt::format("layer '{}': weight '{}' has dtype {}, expected f32", layer.name, name,
                                              dtype_name(e.dtype)));
            }
            const Shape& want = layer.weight_shapes.at(role);
            if (e.dims != want) {
                throw ConfigError(fmt::format("layer '{}': weight '{}' ({}) has shape {}, expected {}", layer.name,
                                              name, role, to_string(e.dims), to_string(want)));
            }
        }
    }
    if (!missing.empty()) {
        throw ConfigError(fmt::format("weights missing from archive: {}", fmt::join(missing, ", ")));
    }
}

std::string ModelGraph::describe() const {
    std::string out = fmt::format("input {}  classes {}\n", to_string(input_shape_), classes_);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& l = layers_[i];
        std::vector<std::string> srcs;
        for (std::size_t s : l.inputs) {
            srcs.push_back(s == kGraphInput ? "input" : layers_[s].name);
        }
        out += fmt::format("{:3d}  {:<16} {:<16} <- {:<24} out {}", i, l.name, op_name(l.kind),
                           fmt::format("{}", fmt::join(srcs, ",")), to_string(l.output_shape));
        for (const TapPoint& t : taps_) {
            if (t.layer == i) {
                out += fmt::format("  [tap {} / {}]", t.id, t.block);
            }
        }
        if (i == split_) {
            out += "  [A_last: feature/classifier split]";
        }
        out += '\n';
    }
    return out;
}

ModelGraph load_graph(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError(fmt::format("cannot open graph file '{}'", path.string()));
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return ModelGraph::parse(buf.str());
}

} // namespace gaia
