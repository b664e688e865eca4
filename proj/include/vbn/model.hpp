#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nn.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "text.hpp"

namespace vbn {

// ---------------------------------------------------------------------------
// Declarative network description. The config file is the source of truth
// for parameter counting and checkpoint layout.
// ---------------------------------------------------------------------------

enum class LayerKind { Conv, Bn, Relu, MaxPool, Dropout, Flatten, Dense, Softmax };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    // conv
    size_t filters = 0;
    size_t kernel = 3;
    size_t stride = 1;
    std::optional<size_t> pad;  // nullopt = "same"
    // maxpool
    size_t window = 2;
    size_t pool_stride = 0;  // 0 = same as window
    size_t pool_pad = 0;
    // dropout
    float rate = 0.0f;
    // dense
    size_t units = 0;

    static LayerSpec conv(size_t filters, size_t kernel = 3, size_t stride = 1, std::optional<size_t> pad = {}) {
        LayerSpec s;
        s.kind = LayerKind::Conv;
        s.filters = filters;
        s.kernel = kernel;
        s.stride = stride;
        s.pad = pad;
        return s;
    }
    static LayerSpec bn() { return LayerSpec{LayerKind::Bn}; }
    static LayerSpec relu() { return LayerSpec{LayerKind::Relu}; }
    static LayerSpec maxpool(size_t window = 2, size_t stride = 0, size_t pad = 0) {
        LayerSpec s;
        s.kind = LayerKind::MaxPool;
        s.window = window;
        s.pool_stride = stride;
        s.pool_pad = pad;
        return s;
    }
    static LayerSpec dropout(float rate) {
        LayerSpec s;
        s.kind = LayerKind::Dropout;
        s.rate = rate;
        return s;
    }
    static LayerSpec flatten() { return LayerSpec{LayerKind::Flatten}; }
    static LayerSpec dense(size_t units) {
        LayerSpec s;
        s.kind = LayerKind::Dense;
        s.units = units;
        return s;
    }
    static LayerSpec softmax() { return LayerSpec{LayerKind::Softmax}; }
};

struct ModelConfig {
    size_t input_channels = 1;
    size_t input_h = 256;
    size_t input_w = 256;
    uint64_t seed = 42;
    std::vector<LayerSpec> layers;

    bool empty() const { return layers.empty(); }
};

// The shipped architecture: six same-padded 3x3 conv blocks with a V-shaped
// filter schedule dropping to a 64-filter reduction before flatten, then a
// 512-unit head over three classes.
inline ModelConfig reference_config(uint64_t seed = 42) {
    ModelConfig c;
    c.input_channels = 1;
    c.input_h = 256;
    c.input_w = 256;
    c.seed = seed;
    const size_t filters[6] = {128, 64, 32, 64, 128, 64};
    for (size_t f : filters) {
        c.layers.push_back(LayerSpec::conv(f));
        c.layers.push_back(LayerSpec::bn());
        c.layers.push_back(LayerSpec::relu());
        c.layers.push_back(LayerSpec::maxpool(2, 2));
        c.layers.push_back(LayerSpec::dropout(0.25f));
    }
    c.layers.push_back(LayerSpec::flatten());
    c.layers.push_back(LayerSpec::dense(512));
    c.layers.push_back(LayerSpec::relu());
    c.layers.push_back(LayerSpec::dropout(0.5f));
    c.layers.push_back(LayerSpec::dense(3));
    c.layers.push_back(LayerSpec::softmax());
    return c;
}

// Two-block variant for 64x64 inputs; small enough to train on one core in
// seconds while keeping the same block pattern and head.
inline ModelConfig desk_config(uint64_t seed = 42) {
    ModelConfig c;
    c.input_channels = 1;
    c.input_h = 64;
    c.input_w = 64;
    c.seed = seed;
    const size_t filters[2] = {8, 64};
    for (size_t f : filters) {
        c.layers.push_back(LayerSpec::conv(f));
        c.layers.push_back(LayerSpec::bn());
        c.layers.push_back(LayerSpec::relu());
        c.layers.push_back(LayerSpec::maxpool(4, 4));
        c.layers.push_back(LayerSpec::dropout(0.10f));
    }
    c.layers.push_back(LayerSpec::flatten());
    c.layers.push_back(LayerSpec::dense(512));
    c.layers.push_back(LayerSpec::relu());
    c.layers.push_back(LayerSpec::dropout(0.25f));
    c.layers.push_back(LayerSpec::dense(3));
    c.layers.push_back(LayerSpec::softmax());
    return c;
}

// ---------------------------------------------------------------------------
// Config text format: `key = value` lines plus one `layer = <kind> k=v...`
// line per layer. See the repository README for the schema.
// ---------------------------------------------------------------------------

inline std::string layer_spec_to_string(const LayerSpec& s) {
    switch (s.kind) {
        case LayerKind::Conv: {
            std::string out = "conv filters=" + std::to_string(s.filters) + " kernel=" + std::to_string(s.kernel) +
                              " stride=" + std::to_string(s.stride);
            out += " pad=" + (s.pad ? std::to_string(*s.pad) : std::string("same"));
            return out;
        }
        case LayerKind::Bn:
            return "bn";
        case LayerKind::Relu:
            return "relu";
        case LayerKind::MaxPool:
            return "maxpool window=" + std::to_string(s.window) + " stride=" +
                   std::to_string(s.pool_stride == 0 ? s.window : s.pool_stride) + " pad=" +
                   std::to_string(s.pool_pad);
        case LayerKind::Dropout:
            return "dropout rate=" + fmt_float(s.rate);
        case LayerKind::Flatten:
            return "flatten";
        case LayerKind::Dense:
            return "dense units=" + std::to_string(s.units);
        case LayerKind::Softmax:
            return "softmax";
    }
    throw ConfigError("unknown layer kind");
}

inline std::string config_to_string(const ModelConfig& c) {
    std::string out;
    out += "input = " + std::to_string(c.input_channels) + "x" + std::to_string(c.input_h) + "x" +
           std::to_string(c.input_w) + "\n";
    out += "seed = " + std::to_string(c.seed) + "\n";
    for (const auto& l : c.layers) out += "layer = " + layer_spec_to_string(l) + "\n";
    return out;
}

inline LayerSpec parse_layer_spec(const std::string& text) {
    std::vector<std::string> tokens;
    for (const auto& t : split(text, ' ')) {
        if (!trim(t).empty()) tokens.push_back(trim(t));
    }
    if (tokens.empty()) throw FormatError("empty layer spec");
    const std::string kind = tokens[0];
    LayerSpec s;
    auto kv = [&](size_t i) -> std::pair<std::string, std::string> {
        const auto parts = split(tokens[i], '=');
        if (parts.size() != 2) throw FormatError("bad layer attribute '" + tokens[i] + "'");
        return {parts[0], parts[1]};
    };
    if (kind == "conv") {
        s.kind = LayerKind::Conv;
        for (size_t i = 1; i < tokens.size(); ++i) {
            auto [k, v] = kv(i);
            if (k == "filters") s.filters = parse_u64(v, "conv filters");
            else if (k == "kernel") s.kernel = parse_u64(v, "conv kernel");
            else if (k == "stride") s.stride = parse_u64(v, "conv stride");
            else if (k == "pad") s.pad = (v == "same") ? std::optional<size_t>{} : std::optional<size_t>{parse_u64(v, "conv pad")};
            else throw FormatError("unknown conv attribute '" + k + "'");
        }
        if (s.filters == 0) throw FormatError("conv layer needs filters");
    } else if (kind == "bn") {
        s.kind = LayerKind::Bn;
    } else if (kind == "relu") {
        s.kind = LayerKind::Relu;
    } else if (kind == "maxpool") {
        s.kind = LayerKind::MaxPool;
        for (size_t i = 1; i < tokens.size(); ++i) {
            auto [k, v] = kv(i);
            if (k == "window") s.window = parse_u64(v, "maxpool window");
            else if (k == "stride") s.pool_stride = parse_u64(v, "maxpool stride");
            else if (k == "pad") s.pool_pad = parse_u64(v, "maxpool pad");
            else throw FormatError("unknown maxpool attribute '" + k + "'");
        }
    } else if (kind == "dropout") {
        s.kind = LayerKind::Dropout;
        for (size_t i = 1; i < tokens.size(); ++i) {
            auto [k, v] = kv(i);
            if (k == "rate") s.rate = parse_float(v, "dropout rate");
            else throw FormatError("unknown dropout attribute '" + k + "'");
        }
    } else if (kind == "flatten") {
        s.kind = LayerKind::Flatten;
    } else if (kind == "dense") {
        s.kind = LayerKind::Dense;
        for (size_t i = 1; i < tokens.size(); ++i) {
            auto [k, v] = kv(i);
            if (k == "units") s.units = parse_u64(v, "dense units");
            else throw FormatError("unknown dense attribute '" + k + "'");
        }
        if (s.units == 0) throw FormatError("dense layer needs units");
    } else if (kind == "softmax") {
        s.kind = LayerKind::Softmax;
    } else {
        throw FormatError("unknown layer kind '" + kind + "'");
    }
    return s;
}

inline ModelConfig parse_config(const std::string& text) {
    ModelConfig c;
    c.layers.clear();
    bool saw_input = false;
    size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("config line " + std::to_string(line_no) + " is not key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "input") {
            const auto dims = split(value, 'x');
            if (dims.size() != 3) throw FormatError("input must be CxHxW, got '" + value + "'");
            c.input_channels = parse_u64(dims[0], "input channels");
            c.input_h = parse_u64(dims[1], "input height");
            c.input_w = parse_u64(dims[2], "input width");
            saw_input = true;
        } else if (key == "seed") {
            c.seed = parse_u64(value, "seed");
        } else if (key == "layer") {
            c.layers.push_back(parse_layer_spec(value));
        } else {
            throw FormatError("unknown config key '" + key + "'");
        }
    }
    if (!saw_input) throw FormatError("config missing input shape");
    if (c.layers.empty()) throw FormatError("config has no layers");
    return c;
}

inline ModelConfig load_config(const std::string& path) { return parse_config(read_text_file(path)); }

// ---------------------------------------------------------------------------
// Validation. Walks the shape chain and enforces the architecture contract:
// a V-shaped conv filter schedule (ignoring the final reduction conv), a
// 64-filter conv as the last one before flatten, and a dense(512) ->
// dense(3) -> softmax head.
// ---------------------------------------------------------------------------

struct ShapeChain {
    std::vector<std::vector<size_t>> per_layer;  // activation shape after each layer (without batch dim)
    size_t flat_features = 0;
};

inline ShapeChain validate_config(const ModelConfig& c) {
    auto fail = [](size_t idx, const std::string& msg) {
        throw ConfigError("layer " + std::to_string(idx) + ": " + msg);
    };
    if (c.input_channels != 1) throw ConfigError("input must be grayscale (1 channel)");

    ShapeChain chain;
    size_t ch = c.input_channels, h = c.input_h, w = c.input_w;
    bool flat = false;
    size_t features = 0;
    std::vector<size_t> conv_filters;
    size_t dense_count = 0;
    std::vector<size_t> dense_units;

    for (size_t i = 0; i < c.layers.size(); ++i) {
        const LayerSpec& s = c.layers[i];
        switch (s.kind) {
            case LayerKind::Conv: {
                if (flat) fail(i, "conv after flatten");
                if (s.filters == 0 || s.kernel == 0 || s.stride == 0) fail(i, "conv needs positive filters/kernel/stride");
                const Pad4 p = s.pad ? Pad4{*s.pad, *s.pad, *s.pad, *s.pad} : same_padding(h, w, s.kernel, s.kernel, s.stride);
                try {
                    h = conv_out_extent(h, s.kernel, s.stride, p.top, p.bottom);
                    w = conv_out_extent(w, s.kernel, s.stride, p.left, p.right);
                } catch (const ConfigError& e) {
                    fail(i, std::string("conv: ") + e.what());
                }
                ch = s.filters;
                conv_filters.push_back(s.filters);
                break;
            }
            case LayerKind::Bn:
                if (flat) fail(i, "bn after flatten");
                break;
            case LayerKind::Relu:
                break;
            case LayerKind::MaxPool: {
                if (flat) fail(i, "maxpool after flatten");
                const size_t stride = s.pool_stride == 0 ? s.window : s.pool_stride;
                try {
                    h = conv_out_extent(h, s.window, stride, s.pool_pad, s.pool_pad);
                    w = conv_out_extent(w, s.window, stride, s.pool_pad, s.pool_pad);
                } catch (const ConfigError& e) {
                    fail(i, std::string("maxpool: ") + e.what());
                }
                break;
            }
            case LayerKind::Dropout:
                if (s.rate < 0.0f || s.rate >= 1.0f) fail(i, "dropout rate must be in [0, 1)");
                break;
            case LayerKind::Flatten:
                if (flat) fail(i, "duplicate flatten");
                flat = true;
                features = ch * h * w;
                break;
            case LayerKind::Dense:
                if (!flat) fail(i, "dense before flatten");
                if (s.units == 0) fail(i, "dense needs units");
                features = s.units;
                ++dense_count;
                dense_units.push_back(s.units);
                break;
            case LayerKind::Softmax:
                if (i + 1 != c.layers.size()) fail(i, "softmax must be the final layer");
                break;
        }
        if (flat) {
            chain.per_layer.push_back({features});
        } else {
            chain.per_layer.push_back({ch, h, w});
        }
    }

    if (conv_filters.empty()) throw ConfigError("config needs at least one conv block");
    if (conv_filters.back() != 64) {
        throw ConfigError("last conv before flatten must have 64 filters, got " +
                          std::to_string(conv_filters.back()));
    }
    // V shape over the schedule ahead of the final reduction conv:
    // non-increasing, then non-decreasing
    {
        const size_t m = conv_filters.size() - 1;
        bool increasing = false;
        for (size_t i = 1; i < m; ++i) {
            if (conv_filters[i] > conv_filters[i - 1]) increasing = true;
            else if (conv_filters[i] < conv_filters[i - 1] && increasing) {
                throw ConfigError("conv filters must form a V shape, got a second descent at conv " +
                                  std::to_string(i));
            }
        }
    }
    if (dense_count != 2 || dense_units[0] != 512 || dense_units[1] != 3) {
        throw ConfigError("head must be dense(512) -> dense(3) -> softmax");
    }
    if (c.layers.back().kind != LayerKind::Softmax) throw ConfigError("final layer must be softmax");
    chain.flat_features = features;
    return chain;
}

// Trainable scalars: conv = out*in*kh*kw + out, bn = 2*channels (gamma and
// beta; running statistics are buffers, not parameters), dense = out*in + out.
inline size_t count_params(const ModelConfig& c) {
    validate_config(c);
    size_t total = 0;
    size_t ch = c.input_channels, h = c.input_h, w = c.input_w;
    size_t features = 0;
    bool flat = false;
    for (const LayerSpec& s : c.layers) {
        switch (s.kind) {
            case LayerKind::Conv:
                total += s.filters * ch * s.kernel * s.kernel + s.filters;
                ch = s.filters;
                if (s.pad) {
                    h = conv_out_extent(h, s.kernel, s.stride, *s.pad, *s.pad);
                    w = conv_out_extent(w, s.kernel, s.stride, *s.pad, *s.pad);
                } else {
                    const Pad4 p = same_padding(h, w, s.kernel, s.kernel, s.stride);
                    h = conv_out_extent(h, s.kernel, s.stride, p.top, p.bottom);
                    w = conv_out_extent(w, s.kernel, s.stride, p.left, p.right);
                }
                break;
            case LayerKind::Bn:
                total += 2 * ch;
                break;
            case LayerKind::MaxPool: {
                const size_t stride = s.pool_stride == 0 ? s.window : s.pool_stride;
                h = conv_out_extent(h, s.window, stride, s.pool_pad, s.pool_pad);
                w = conv_out_extent(w, s.window, stride, s.pool_pad, s.pool_pad);
                break;
            }
            case LayerKind::Flatten:
                features = ch * h * w;
                flat = true;
                break;
            case LayerKind::Dense:
                total += s.units * features + s.units;
                features = s.units;
                break;
            default:
                break;
        }
    }
    (void)flat;
    return total;
}

// ---------------------------------------------------------------------------
// The runtime model: a layer stack plus the config it was built from.
// Tests may assemble a Model directly from layers; config validation applies
// at the declarative boundary.
// ---------------------------------------------------------------------------

struct Relu {};
struct Flatten {};
struct SoftmaxOut {};

using Layer = std::variant<Conv2D, BatchNorm2D, Relu, MaxPool2D, Dropout, Flatten, Dense, SoftmaxOut>;

struct Model {
    ModelConfig config;  // empty for hand-assembled models
    std::vector<Layer> layers;
};

inline void he_uniform_fill(Tensor& t, size_t fan_in, Rng& rng) {
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(-limit, limit);
}

// He-uniform weights, zero biases, gamma=1, beta=0; draw order is layer
// order so a given seed rebuilds bit-identical parameters.
inline Model build_model(const ModelConfig& config, Rng& rng) {
    validate_config(config);
    Model m;
    m.config = config;
    size_t ch = config.input_channels, h = config.input_h, w = config.input_w;
    size_t features = 0;
    for (const LayerSpec& s : config.layers) {
        switch (s.kind) {
            case LayerKind::Conv: {
                Conv2D conv = Conv2D::make(ch, s.filters, s.kernel, s.kernel, s.stride, s.pad);
                he_uniform_fill(conv.weight, ch * s.kernel * s.kernel, rng);
                const Pad4 p = conv.padding_for(h, w);
                h = conv_out_extent(h, s.kernel, s.stride, p.top, p.bottom);
                w = conv_out_extent(w, s.kernel, s.stride, p.left, p.right);
                ch = s.filters;
                m.layers.emplace_back(std::move(conv));
                break;
            }
            case LayerKind::Bn:
                m.layers.emplace_back(BatchNorm2D::make(ch));
                break;
            case LayerKind::Relu:
                m.layers.emplace_back(Relu{});
                break;
            case LayerKind::MaxPool: {
                MaxPool2D pool;
                pool.ph = pool.pw = s.window;
                pool.stride = s.pool_stride == 0 ? s.window : s.pool_stride;
                pool.pad = s.pool_pad;
                h = conv_out_extent(h, pool.ph, pool.stride, pool.pad, pool.pad);
                w = conv_out_extent(w, pool.pw, pool.stride, pool.pad, pool.pad);
                m.layers.emplace_back(pool);
                break;
            }
            case LayerKind::Dropout:
                m.layers.emplace_back(Dropout{s.rate});
                break;
            case LayerKind::Flatten:
                features = ch * h * w;
                m.layers.emplace_back(Flatten{});
                break;
            case LayerKind::Dense: {
                Dense d = Dense::make(features, s.units);
                he_uniform_fill(d.weight, features, rng);
                features = s.units;
                m.layers.emplace_back(std::move(d));
                break;
            }
            case LayerKind::Softmax:
                m.layers.emplace_back(SoftmaxOut{});
                break;
        }
    }
    return m;
}

// trainable parameters in checkpoint manifest order
inline std::vector<Tensor*> model_parameters(Model& m) {
    std::vector<Tensor*> out;
    for (auto& layer : m.layers) {
        if (auto* c = std::get_if<Conv2D>(&layer)) {
            out.push_back(&c->weight);
            out.push_back(&c->bias);
        } else if (auto* b = std::get_if<BatchNorm2D>(&layer)) {
            out.push_back(&b->gamma);
            out.push_back(&b->beta);
        } else if (auto* d = std::get_if<Dense>(&layer)) {
            out.push_back(&d->weight);
            out.push_back(&d->bias);
        }
    }
    return out;
}

inline std::vector<std::string> model_parameter_names(const Model& m) {
    std::vector<std::string> out;
    for (size_t i = 0; i < m.layers.size(); ++i) {
        const auto& layer = m.layers[i];
        const std::string prefix = "layer" + std::to_string(i);
        if (std::holds_alternative<Conv2D>(layer)) {
            out.push_back(prefix + ".conv.weight");
            out.push_back(prefix + ".conv.bias");
        } else if (std::holds_alternative<BatchNorm2D>(layer)) {
            out.push_back(prefix + ".bn.gamma");
            out.push_back(prefix + ".bn.beta");
        } else if (std::holds_alternative<Dense>(layer)) {
            out.push_back(prefix + ".dense.weight");
            out.push_back(prefix + ".dense.bias");
        }
    }
    return out;
}

// batchnorm running statistics (state that inference needs but training
// does not differentiate)
inline std::vector<Tensor*> model_buffers(Model& m) {
    std::vector<Tensor*> out;
    for (auto& layer : m.layers) {
        if (auto* b = std::get_if<BatchNorm2D>(&layer)) {
            out.push_back(&b->running_mean);
            out.push_back(&b->running_var);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Whole-network forward/backward with explicit caches.
// ---------------------------------------------------------------------------

struct FlattenCache {
    std::vector<size_t> in_shape;
};

using StepCache = std::variant<std::monostate, ConvCache, BnCache, ReluCache, PoolCache, DropoutCache, FlattenCache,
                               DenseCache>;

struct ForwardCache {
    std::vector<StepCache> steps;
    std::vector<Tensor> outputs;  // per-layer activations, retained for gradcam
    Tensor logits;                // input of the final softmax
    Mode mode = Mode::Infer;
};

inline Tensor model_forward(Model& m, const Tensor& batch, Mode mode, Rng* rng = nullptr,
                            ForwardCache* cache = nullptr) {
    if (batch.rank() != 4) throw ShapeError("model input must be NxCxHxW, got " + shape_str(batch.shape()));
    if (!m.config.empty()) {
        if (batch.dim(1) != m.config.input_channels || batch.dim(2) != m.config.input_h ||
            batch.dim(3) != m.config.input_w) {
            throw ShapeError("batch " + shape_str(batch.shape()) + " does not match configured input " +
                             shape_str({m.config.input_channels, m.config.input_h, m.config.input_w}));
        }
    }
    if (m.layers.empty() || !std::holds_alternative<SoftmaxOut>(m.layers.back())) {
        throw ConfigError("model must end with softmax");
    }
    if (cache) {
        cache->steps.assign(m.layers.size(), std::monostate{});
        cache->outputs.assign(m.layers.size(), Tensor());
        cache->mode = mode;
    }
    Tensor x = batch;
    for (size_t i = 0; i < m.layers.size(); ++i) {
        Layer& layer = m.layers[i];
        if (auto* c = std::get_if<Conv2D>(&layer)) {
            ConvCache cc;
            x = conv_forward(*c, x, cache ? &cc : nullptr);
            if (cache) cache->steps[i] = std::move(cc);
        } else if (auto* b = std::get_if<BatchNorm2D>(&layer)) {
            BnCache bc;
            x = batchnorm_forward(*b, x, mode, cache ? &bc : nullptr);
            if (cache) cache->steps[i] = std::move(bc);
        } else if (std::holds_alternative<Relu>(layer)) {
            ReluCache rc;
            x = relu(x, cache ? &rc : nullptr);
            if (cache) cache->steps[i] = std::move(rc);
        } else if (auto* p = std::get_if<MaxPool2D>(&layer)) {
            PoolCache pc;
            x = maxpool_forward(*p, x, cache ? &pc : nullptr);
            if (cache) cache->steps[i] = std::move(pc);
        } else if (auto* d = std::get_if<Dropout>(&layer)) {
            DropoutCache dc;
            if (mode == Mode::Train && d->rate > 0.0f && rng == nullptr) {
                throw ConfigError("train-mode dropout needs an rng");
            }
            Rng dummy(0);
            x = dropout_apply(*d, x, mode, rng ? *rng : dummy, cache ? &dc : nullptr);
            if (cache) cache->steps[i] = std::move(dc);
        } else if (std::holds_alternative<Flatten>(layer)) {
            FlattenCache fc{x.shape()};
            x = x.reshaped({x.dim(0), x.numel() / x.dim(0)});
            if (cache) cache->steps[i] = std::move(fc);
        } else if (auto* dn = std::get_if<Dense>(&layer)) {
            DenseCache dc;
            x = dense_forward(*dn, x, cache ? &dc : nullptr);
            if (cache) cache->steps[i] = std::move(dc);
        } else if (std::holds_alternative<SoftmaxOut>(layer)) {
            if (cache) cache->logits = x;
            x = softmax(x);
        }
        if (cache) cache->outputs[i] = x;
    }
    return x;
}

struct BackwardResult {
    std::vector<Tensor> param_grads;  // aligned with model_parameters order
    Tensor grad_at_stop;              // gradient wrt the output of stop_layer (or the input when stop_layer < 0)
};

// Reverse pass seeded at the softmax input (the caller supplies the fused
// softmax + cross-entropy gradient). stop_layer >= 0 halts the sweep and
// reports the gradient at that layer's output instead of descending further.
inline BackwardResult model_backward(Model& m, const ForwardCache& cache, const Tensor& grad_logits,
                                     ptrdiff_t stop_layer = -1) {
    if (m.layers.empty() || !std::holds_alternative<SoftmaxOut>(m.layers.back())) {
        throw ConfigError("model must end with softmax");
    }
    BackwardResult result;
    std::vector<std::vector<Tensor>> per_layer_grads(m.layers.size());

    Tensor g = grad_logits;
    const ptrdiff_t last = static_cast<ptrdiff_t>(m.layers.size()) - 2;  // softmax handled by the fused seed
    for (ptrdiff_t i = last; i > stop_layer; --i) {
        Layer& layer = m.layers[static_cast<size_t>(i)];
        const StepCache& sc = cache.steps[static_cast<size_t>(i)];
        if (auto* c = std::get_if<Conv2D>(&layer)) {
            ConvGrads cg = conv_backward(*c, std::get<ConvCache>(sc), g);
            per_layer_grads[static_cast<size_t>(i)] = {std::move(cg.weight), std::move(cg.bias)};
            g = std::move(cg.input);
        } else if (auto* b = std::get_if<BatchNorm2D>(&layer)) {
            BnGrads bg = batchnorm_backward(*b, std::get<BnCache>(sc), g);
            per_layer_grads[static_cast<size_t>(i)] = {std::move(bg.gamma), std::move(bg.beta)};
            g = std::move(bg.input);
        } else if (std::holds_alternative<Relu>(layer)) {
            g = relu_backward(std::get<ReluCache>(sc), g);
        } else if (std::holds_alternative<MaxPool2D>(layer)) {
            g = maxpool_backward(std::get<PoolCache>(sc), g);
        } else if (std::holds_alternative<Dropout>(layer)) {
            g = dropout_backward(std::get<DropoutCache>(sc), g);
        } else if (std::holds_alternative<Flatten>(layer)) {
            g = g.reshaped(std::get<FlattenCache>(sc).in_shape);
        } else if (auto* dn = std::get_if<Dense>(&layer)) {
            DenseGrads dg = dense_backward(*dn, std::get<DenseCache>(sc), g);
            per_layer_grads[static_cast<size_t>(i)] = {std::move(dg.weight), std::move(dg.bias)};
            g = std::move(dg.input);
        } else if (std::holds_alternative<SoftmaxOut>(layer)) {
            throw ConfigError("unexpected softmax inside the stack");
        }
    }
    result.grad_at_stop = std::move(g);
    for (auto& grads : per_layer_grads) {
        for (auto& t : grads) result.param_grads.push_back(std::move(t));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints. Binary layout: magic "VBN1", u32 little-endian header length,
// UTF-8 header text (config, epoch, history, tensor manifest), raw float32
// little-endian payload for every tensor in manifest order, then a 64-bit
// FNV-1a checksum of the payload bytes.
// ---------------------------------------------------------------------------

struct EpochRecord {
    size_t epoch = 0;
    double train_loss = 0.0, train_acc = 0.0;
    double val_loss = 0.0, val_acc = 0.0;
    double lr = 0.0;
};

struct Checkpoint {
    ModelConfig config;
    std::vector<Tensor> params;
    std::vector<std::string> param_names;
    std::vector<Tensor> buffers;    // bn running statistics
    std::vector<Tensor> opt_state;  // rmsprop accumulators; empty when absent
    size_t epoch = 0;
    std::vector<EpochRecord> history;
};

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes a little-endian host");

inline uint64_t fnv1a64(const unsigned char* data, size_t n, uint64_t h = 14695981039346656037ULL) {
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline Checkpoint checkpoint_from_model(Model& m, std::vector<Tensor> opt_state = {}, size_t epoch = 0,
                                        std::vector<EpochRecord> history = {}) {
    Checkpoint c;
    c.config = m.config;
    for (Tensor* t : model_parameters(m)) c.params.push_back(*t);
    c.param_names = model_parameter_names(m);
    for (Tensor* t : model_buffers(m)) c.buffers.push_back(*t);
    c.opt_state = std::move(opt_state);
    c.epoch = epoch;
    c.history = std::move(history);
    return c;
}

// rebuild the runtime model from a checkpoint, shape-checking every tensor
// against the freshly built architecture
inline Model model_from_checkpoint(const Checkpoint& c) {
    Rng rng(c.config.seed);
    Model m = build_model(c.config, rng);
    auto params = model_parameters(m);
    if (params.size() != c.params.size()) {
        throw FormatError("checkpoint parameter count " + std::to_string(c.params.size()) +
                          " does not match config (" + std::to_string(params.size()) + ")");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape() != c.params[i].shape()) {
            throw FormatError("checkpoint parameter " + std::to_string(i) + " shape " +
                              shape_str(c.params[i].shape()) + " does not match config shape " +
                              shape_str(params[i]->shape()));
        }
        *params[i] = c.params[i];
    }
    auto buffers = model_buffers(m);
    if (buffers.size() != c.buffers.size()) throw FormatError("checkpoint buffer count mismatch");
    for (size_t i = 0; i < buffers.size(); ++i) {
        if (buffers[i]->shape() != c.buffers[i].shape()) throw FormatError("checkpoint buffer shape mismatch");
        *buffers[i] = c.buffers[i];
    }
    return m;
}

namespace detail {

inline std::string shape_csv(const std::vector<size_t>& s) {
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out;
}

inline std::vector<size_t> parse_shape_csv(const std::string& s) {
    std::vector<size_t> out;
    for (const auto& part : split(s, ',')) {
        if (part.empty()) continue;
        out.push_back(parse_u64(part, "tensor shape"));
    }
    return out;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::string header;
    header += "vbn-checkpoint v1\n";
    header += "epoch " + std::to_string(c.epoch) + "\n";
    header += "config-begin\n" + config_to_string(c.config) + "config-end\n";
    header += "history-begin\n";
    for (const auto& r : c.history) {
        header += std::to_string(r.epoch) + "\t" + fmt_double(r.train_loss) + "\t" + fmt_double(r.train_acc) +
                  "\t" + fmt_double(r.val_loss) + "\t" + fmt_double(r.val_acc) + "\t" + fmt_double(r.lr) + "\n";
    }
    header += "history-end\n";
    auto manifest_section = [&](const char* name, const std::vector<Tensor>& tensors,
                                const std::vector<std::string>* names) {
        header += std::string(name) + "-begin\n";
        for (size_t i = 0; i < tensors.size(); ++i) {
            const std::string label = names && i < names->size() ? (*names)[i] : std::string(name) + std::to_string(i);
            header += std::to_string(i) + "\t" + label + "\t" + detail::shape_csv(tensors[i].shape()) + "\n";
        }
        header += std::string(name) + "-end\n";
    };
    manifest_section("params", c.params, &c.param_names);
    manifest_section("buffers", c.buffers, nullptr);
    manifest_section("opt", c.opt_state, nullptr);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write("VBN1", 4);
    const uint32_t hlen = static_cast<uint32_t>(header.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));

    uint64_t checksum = 14695981039346656037ULL;
    auto write_tensors = [&](const std::vector<Tensor>& tensors) {
        for (const Tensor& t : tensors) {
            const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
            const size_t n = t.numel() * sizeof(float);
            checksum = fnv1a64(bytes, n, checksum);
            out.write(reinterpret_cast<const char*>(bytes), static_cast<std::streamsize>(n));
        }
    };
    write_tensors(c.params);
    write_tensors(c.buffers);
    write_tensors(c.opt_state);
    out.write(reinterpret_cast<const char*>(&checksum), 8);
    if (!out) throw IoError("write failed for checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[4];
    if (!in.read(magic, 4)) throw FormatError("checkpoint truncated before magic: " + path);
    if (std::memcmp(magic, "VBN1", 4) != 0) throw FormatError("bad checkpoint magic in " + path);
    uint32_t hlen = 0;
    if (!in.read(reinterpret_cast<char*>(&hlen), 4)) throw FormatError("checkpoint truncated in header length");
    std::string header(hlen, '\0');
    if (!in.read(header.data(), hlen)) throw FormatError("checkpoint truncated in header");

    Checkpoint c;
    std::vector<std::pair<std::string, std::vector<size_t>>> param_manifest, buffer_manifest, opt_manifest;
    {
        const auto lines = split(header, '\n');
        size_t i = 0;
        auto expect = [&](const std::string& tag) {
            if (i >= lines.size() || trim(lines[i]) != tag) {
                throw FormatError("checkpoint header: expected '" + tag + "'");
            }
            ++i;
        };
        expect("vbn-checkpoint v1");
        {
            const auto parts = split(trim(lines[i]), ' ');
            if (parts.size() != 2 || parts[0] != "epoch") throw FormatError("checkpoint header: bad epoch line");
            c.epoch = parse_u64(parts[1], "epoch");
            ++i;
        }
        expect("config-begin");
        std::string cfg_text;
        while (i < lines.size() && trim(lines[i]) != "config-end") cfg_text += lines[i++] + "\n";
        expect("config-end");
        c.config = parse_config(cfg_text);
        expect("history-begin");
        while (i < lines.size() && trim(lines[i]) != "history-end") {
            const auto f = split(lines[i], '\t');
            if (f.size() != 6) throw FormatError("checkpoint header: bad history row");
            EpochRecord r;
            r.epoch = parse_u64(f[0], "history epoch");
            r.train_loss = parse_double(f[1], "train loss");
            r.train_acc = parse_double(f[2], "train acc");
            r.val_loss = parse_double(f[3], "val loss");
            r.val_acc = parse_double(f[4], "val acc");
            r.lr = parse_double(f[5], "lr");
            c.history.push_back(r);
            ++i;
        }
        expect("history-end");
        auto read_manifest = [&](const std::string& name,
                                 std::vector<std::pair<std::string, std::vector<size_t>>>& dst) {
            expect(name + "-begin");
            while (i < lines.size() && trim(lines[i]) != name + "-end") {
                const auto f = split(lines[i], '\t');
                if (f.size() != 3) throw FormatError("checkpoint header: bad " + name + " manifest row");
                dst.emplace_back(f[1], detail::parse_shape_csv(f[2]));
                ++i;
            }
            expect(name + "-end");
        };
        read_manifest("params", param_manifest);
        read_manifest("buffers", buffer_manifest);
        read_manifest("opt", opt_manifest);
    }

    uint64_t checksum = 14695981039346656037ULL;
    auto read_tensors = [&](const std::vector<std::pair<std::string, std::vector<size_t>>>& manifest,
                            std::vector<Tensor>& dst, std::vector<std::string>* names) {
        for (const auto& [name, shape] : manifest) {
            Tensor t(shape);
            const size_t n = t.numel() * sizeof(float);
            if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n))) {
                throw FormatError("checkpoint truncated in tensor payload: " + path);
            }
            checksum = fnv1a64(reinterpret_cast<const unsigned char*>(t.data()), n, checksum);
            dst.push_back(std::move(t));
            if (names) names->push_back(name);
        }
    };
    read_tensors(param_manifest, c.params, &c.param_names);
    read_tensors(buffer_manifest, c.buffers, nullptr);
    read_tensors(opt_manifest, c.opt_state, nullptr);

    uint64_t stored = 0;
    if (!in.read(reinterpret_cast<char*>(&stored), 8)) throw FormatError("checkpoint truncated before checksum");
    if (stored != checksum) throw FormatError("checkpoint checksum mismatch in " + path);
    return c;
}

}  // namespace vbn
