#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "data.hpp"
#include "image.hpp"
#include "model.hpp"

namespace vbn {

// Class-conditional relevance map over a chosen conv layer, normalized to
// [0, 1] at the model input resolution.
struct Heatmap {
    Tensor values;  // HxW
    int target_class = 0;
    size_t target_layer = 0;
    bool degenerate = false;  // the raw map was constant and collapsed to all zeros
};

struct CamWeights {
    std::vector<float> alpha;  // one weight per feature map of the target layer
};

inline std::vector<size_t> conv_layer_indices(const Model& m) {
    std::vector<size_t> out;
    for (size_t i = 0; i < m.layers.size(); ++i) {
        if (std::holds_alternative<Conv2D>(m.layers[i])) out.push_back(i);
    }
    return out;
}

// The activation A^k of a conv layer is its rectified feature map: when the
// conv is followed by batchnorm and/or relu, the capture point sits after
// them. A bare conv (as in hand-built fixtures) is captured directly.
inline size_t gradcam_capture_index(const Model& m, size_t conv_layer) {
    size_t idx = conv_layer;
    for (size_t j = conv_layer + 1; j < m.layers.size(); ++j) {
        if (std::holds_alternative<BatchNorm2D>(m.layers[j]) || std::holds_alternative<Relu>(m.layers[j])) {
            idx = j;
        } else {
            break;
        }
    }
    return idx;
}

// channel weights: spatial mean of d(score_c)/d(activation_k) at the target
// conv layer, with the pre-softmax logit as the score
inline CamWeights gradcam_weights(Model& model, const ForwardCache& cache, int target_class, size_t target_layer) {
    const size_t capture = gradcam_capture_index(model, target_layer);
    const Tensor& activations = cache.outputs[capture];
    const size_t channels = activations.dim(1);

    Tensor seed(cache.logits.shape());
    if (target_class < 0 || static_cast<size_t>(target_class) >= cache.logits.dim(1)) {
        throw DomainError("target class " + std::to_string(target_class) + " out of range");
    }
    seed(0, static_cast<size_t>(target_class)) = 1.0f;
    BackwardResult back = model_backward(model, cache, seed, static_cast<ptrdiff_t>(capture));
    const Tensor& grad = back.grad_at_stop;  // [1, K, h, w]

    CamWeights w;
    w.alpha.resize(channels);
    const size_t spatial = grad.dim(2) * grad.dim(3);
    for (size_t k = 0; k < channels; ++k) {
        double acc = 0.0;
        const float* p = grad.data() + k * spatial;
        for (size_t t = 0; t < spatial; ++t) acc += p[t];
        w.alpha[k] = static_cast<float>(acc / static_cast<double>(spatial));
    }
    return w;
}

// Forward with activation capture, backprop the pre-softmax class score to
// the target conv activations, ReLU the alpha-weighted sum, upsample to the
// input resolution, then min-max normalize. A constant raw map degenerates
// to all zeros instead of dividing by zero.
inline Heatmap gradcam(Model& model, const Tensor& input, int target_class, size_t target_layer) {
    if (input.rank() != 4 || input.dim(0) != 1) {
        throw ShapeError("gradcam expects a single 1xCxHxW image, got " + shape_str(input.shape()));
    }
    if (target_layer >= model.layers.size() || !std::holds_alternative<Conv2D>(model.layers[target_layer])) {
        throw ConfigError("gradcam target layer " + std::to_string(target_layer) + " is not a conv layer");
    }

    ForwardCache cache;
    model_forward(model, input, Mode::Infer, nullptr, &cache);
    const CamWeights w = gradcam_weights(model, cache, target_class, target_layer);

    const Tensor& activations = cache.outputs[gradcam_capture_index(model, target_layer)];  // [1, K, h, w]
    const size_t channels = activations.dim(1), h = activations.dim(2), ww = activations.dim(3);
    GrayImage raw = GrayImage::blank(ww, h);
    for (size_t i = 0; i < h; ++i) {
        for (size_t j = 0; j < ww; ++j) {
            double acc = 0.0;
            for (size_t k = 0; k < channels; ++k) acc += static_cast<double>(w.alpha[k]) * activations(0, k, i, j);
            raw.at(i, j) = acc > 0.0 ? static_cast<float>(acc) : 0.0f;  // ReLU
        }
    }

    const size_t in_h = input.dim(2), in_w = input.dim(3);
    GrayImage up = resize_bilinear(raw, in_w, in_h);

    // normalization happens at input resolution so the peak pixel is exactly 1
    float mn = up.pixels[0], mx = up.pixels[0];
    for (float v : up.pixels) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    Heatmap hm;
    hm.target_class = target_class;
    hm.target_layer = target_layer;
    hm.values = Tensor({in_h, in_w});
    if (mx == mn) {
        hm.degenerate = true;  // constant map carries no localization signal
    } else {
        const float inv = 1.0f / (mx - mn);
        for (size_t i = 0; i < up.pixels.size(); ++i) hm.values.at(i) = (up.pixels[i] - mn) * inv;
    }
    return hm;
}

// ---------------------------------------------------------------------------
// Overlay rendering. The colormap is monotone in the heatmap value:
// black -> red -> yellow -> white with strictly increasing luminance.
// ---------------------------------------------------------------------------

inline void heat_colormap(float t, float& r, float& g, float& b) {
    t = std::clamp(t, 0.0f, 1.0f);
    if (t < 1.0f / 3.0f) {
        r = 3.0f * t;
        g = 0.0f;
        b = 0.0f;
    } else if (t < 2.0f / 3.0f) {
        r = 1.0f;
        g = 3.0f * t - 1.0f;
        b = 0.0f;
    } else {
        r = 1.0f;
        g = 1.0f;
        b = 3.0f * t - 2.0f;
    }
}

inline RgbImage overlay(const GrayImage& img, const Heatmap& hm, float alpha) {
    if (alpha < 0.0f || alpha > 1.0f) throw ConfigError("overlay alpha must be in [0, 1]");
    if (hm.values.rank() != 2 || hm.values.dim(0) != img.height || hm.values.dim(1) != img.width) {
        throw ShapeError("heatmap " + shape_str(hm.values.shape()) + " does not match image " +
                         std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    RgbImage out;
    out.width = img.width;
    out.height = img.height;
    out.rgb.resize(img.width * img.height * 3);
    for (size_t i = 0; i < img.height; ++i) {
        for (size_t j = 0; j < img.width; ++j) {
            const float gray = std::clamp(img.at(i, j), 0.0f, 1.0f);
            float r, g, b;
            heat_colormap(hm.values(i, j), r, g, b);
            const float rr = (1.0f - alpha) * gray + alpha * r;
            const float gg = (1.0f - alpha) * gray + alpha * g;
            const float bb = (1.0f - alpha) * gray + alpha * b;
            const size_t base = (i * img.width + j) * 3;
            out.rgb[base + 0] = static_cast<uint8_t>(std::lround(std::clamp(rr, 0.0f, 1.0f) * 255.0f));
            out.rgb[base + 1] = static_cast<uint8_t>(std::lround(std::clamp(gg, 0.0f, 1.0f) * 255.0f));
            out.rgb[base + 2] = static_cast<uint8_t>(std::lround(std::clamp(bb, 0.0f, 1.0f) * 255.0f));
        }
    }
    return out;
}

// raw heatmap as a tab-delimited numeric grid for downstream analysis
inline std::string heatmap_to_text(const Heatmap& hm) {
    std::string out;
    const size_t h = hm.values.dim(0), w = hm.values.dim(1);
    for (size_t i = 0; i < h; ++i) {
        for (size_t j = 0; j < w; ++j) {
            if (j) out += "\t";
            out += fmt_float(hm.values(i, j));
        }
        out += "\n";
    }
    return out;
}

// fraction of the top-decile heatmap pixels that fall inside a box;
// the decile cut is by value rank, ties resolved by pixel index
inline double top_decile_fraction_inside(const Heatmap& hm, const PatchBox& box) {
    const size_t h = hm.values.dim(0), w = hm.values.dim(1);
    const size_t n = h * w;
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    const size_t k = (n + 9) / 10;
    std::partial_sort(order.begin(), order.begin() + static_cast<ptrdiff_t>(k), order.end(),
                      [&](size_t a, size_t b) {
                          const float va = hm.values.at(a), vb = hm.values.at(b);
                          if (va != vb) return va > vb;
                          return a < b;
                      });
    size_t inside = 0;
    for (size_t i = 0; i < k; ++i) {
        const size_t px = order[i] % w, py = order[i] / w;
        if (box.contains(px, py)) ++inside;
    }
    return static_cast<double>(inside) / static_cast<double>(k);
}

}  // namespace vbn
