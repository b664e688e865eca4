#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace vbn {

enum class Mode { Train, Infer };

// symmetric-ish padding for "same" conv output; the odd remainder goes to
// the bottom/right edge
struct Pad4 {
    size_t top = 0, left = 0, bottom = 0, right = 0;
};

inline Pad4 same_padding(size_t h, size_t w, size_t kh, size_t kw, size_t stride) {
    auto total = [&](size_t in, size_t k) -> size_t {
        const size_t out = (in + stride - 1) / stride;
        const size_t need = (out - 1) * stride + k;
        return need > in ? need - in : 0;
    };
    const size_t th = total(h, kh), tw = total(w, kw);
    return Pad4{th / 2, tw / 2, th - th / 2, tw - tw / 2};
}

// ---------------------------------------------------------------------------
// Conv2D, lowered to im2col + matmul. The direct-loop formulation lives in
// the test suite as an independent oracle.
// ---------------------------------------------------------------------------

struct Conv2D {
    size_t in_channels = 0;
    size_t out_channels = 0;
    size_t kh = 3, kw = 3;
    size_t stride = 1;
    std::optional<size_t> pad;  // nullopt = "same"
    Tensor weight;              // [out, in, kh, kw]
    Tensor bias;                // [out]

    static Conv2D make(size_t in_ch, size_t out_ch, size_t kh, size_t kw, size_t stride, std::optional<size_t> pad) {
        Conv2D c;
        c.in_channels = in_ch;
        c.out_channels = out_ch;
        c.kh = kh;
        c.kw = kw;
        c.stride = stride;
        c.pad = pad;
        c.weight = Tensor({out_ch, in_ch, kh, kw});
        c.bias = Tensor({out_ch});
        return c;
    }

    Pad4 padding_for(size_t h, size_t w) const {
        if (pad.has_value()) return Pad4{*pad, *pad, *pad, *pad};
        return same_padding(h, w, kh, kw, stride);
    }
};

struct ConvCache {
    Tensor input;  // [N, C, H, W]; columns are recomputed in backward
    size_t out_h = 0, out_w = 0;
    Pad4 pad;
};

inline Tensor conv_forward(const Conv2D& layer, const Tensor& x, ConvCache* cache = nullptr) {
    if (x.rank() != 4) throw ShapeError("conv input must be NxCxHxW, got " + shape_str(x.shape()));
    if (x.dim(1) != layer.in_channels) {
        throw ShapeError("conv channel mismatch: input " + shape_str(x.shape()) + " vs " +
                         std::to_string(layer.in_channels) + " in-channels");
    }
    const size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const Pad4 p = layer.padding_for(h, w);
    const size_t out_h = conv_out_extent(h, layer.kh, layer.stride, p.top, p.bottom);
    const size_t out_w = conv_out_extent(w, layer.kw, layer.stride, p.left, p.right);
    const size_t k = c * layer.kh * layer.kw;
    const Tensor w_mat = layer.weight.reshaped({layer.out_channels, k});

    Tensor y({n, layer.out_channels, out_h, out_w});
    for (size_t i = 0; i < n; ++i) {
        Tensor xi({c, h, w}, std::vector<float>(x.data() + i * c * h * w, x.data() + (i + 1) * c * h * w));
        Tensor cols = im2col_padded(xi, layer.kh, layer.kw, layer.stride, p.top, p.left, p.bottom, p.right);
        Tensor yi = matmul(w_mat, cols);  // [out, out_h*out_w]
        float* py = y.data() + i * layer.out_channels * out_h * out_w;
        const float* pyi = yi.data();
        for (size_t o = 0; o < layer.out_channels; ++o) {
            const float b = layer.bias.at(o);
            for (size_t s = 0; s < out_h * out_w; ++s) py[o * out_h * out_w + s] = pyi[o * out_h * out_w + s] + b;
        }
    }
    debug_check_finite(y, "conv_forward");
    if (cache) {
        cache->input = x;
        cache->out_h = out_h;
        cache->out_w = out_w;
        cache->pad = p;
    }
    return y;
}

struct ConvGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

inline ConvGrads conv_backward(const Conv2D& layer, const ConvCache& cache, const Tensor& grad_out) {
    const Tensor& x = cache.input;
    const size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const size_t out_h = cache.out_h, out_w = cache.out_w;
    if (grad_out.shape() != std::vector<size_t>{n, layer.out_channels, out_h, out_w}) {
        throw ShapeError("conv grad shape mismatch: " + shape_str(grad_out.shape()));
    }
    const size_t k = c * layer.kh * layer.kw;
    const Tensor w_mat = layer.weight.reshaped({layer.out_channels, k});

    ConvGrads g;
    g.input = Tensor({n, c, h, w});
    g.weight = Tensor({layer.out_channels, c, layer.kh, layer.kw});
    g.bias = Tensor({layer.out_channels});
    std::vector<double> bias_acc(layer.out_channels, 0.0);

    for (size_t i = 0; i < n; ++i) {
        Tensor xi({c, h, w}, std::vector<float>(x.data() + i * c * h * w, x.data() + (i + 1) * c * h * w));
        Tensor cols = im2col_padded(xi, layer.kh, layer.kw, layer.stride, cache.pad.top, cache.pad.left,
                                    cache.pad.bottom, cache.pad.right);
        Tensor gy({layer.out_channels, out_h * out_w},
                  std::vector<float>(grad_out.data() + i * layer.out_channels * out_h * out_w,
                                     grad_out.data() + (i + 1) * layer.out_channels * out_h * out_w));
        // dW += gy * cols^T, accumulated across the batch
        Tensor dw = matmul_nt(gy, cols);  // [out, k]
        for (size_t j = 0; j < dw.numel(); ++j) g.weight.at(j) += dw.at(j);
        for (size_t o = 0; o < layer.out_channels; ++o) {
            double s = 0.0;
            const float* row = gy.data() + o * out_h * out_w;
            for (size_t t = 0; t < out_h * out_w; ++t) s += row[t];
            bias_acc[o] += s;
        }
        // dX = col2im(W^T * gy)
        Tensor gcols = matmul_tn(w_mat, gy);  // [k, out_h*out_w]
        Tensor gxi({c, h, w});
        col2im_add(gcols, c, h, w, layer.kh, layer.kw, layer.stride, cache.pad.top, cache.pad.left, out_h, out_w,
                   gxi);
        std::copy(gxi.data(), gxi.data() + c * h * w, g.input.data() + i * c * h * w);
    }
    for (size_t o = 0; o < layer.out_channels; ++o) g.bias.at(o) = static_cast<float>(bias_acc[o]);
    return g;
}

// ---------------------------------------------------------------------------
// BatchNorm2D over NxCxHxW, statistics per channel.
// ---------------------------------------------------------------------------

struct BatchNorm2D {
    size_t channels = 0;
    Tensor gamma;         // [C]
    Tensor beta;          // [C]
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
    float momentum = 0.9f;
    float epsilon = 1e-5f;

    static BatchNorm2D make(size_t channels) {
        BatchNorm2D b;
        b.channels = channels;
        b.gamma = Tensor::full({channels}, 1.0f);
        b.beta = Tensor({channels});
        b.running_mean = Tensor({channels});
        b.running_var = Tensor({channels});
        return b;
    }
};

struct BnCache {
    Tensor xhat;                 // normalized input (train mode)
    std::vector<float> inv_std;  // per channel
    Mode mode = Mode::Train;
};

// Train mode standardizes with batch statistics and updates the running
// stats as r <- momentum*r + (1-momentum)*batch. Inference uses the running
// statistics and is a pure per-element affine map.
inline Tensor batchnorm_forward(BatchNorm2D& layer, const Tensor& x, Mode mode, BnCache* cache = nullptr) {
    if (x.rank() != 4 || x.dim(1) != layer.channels) {
        throw ShapeError("batchnorm input mismatch: " + shape_str(x.shape()) + " vs " +
                         std::to_string(layer.channels) + " channels");
    }
    const size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const size_t m = n * h * w;  // samples per channel
    Tensor y({n, c, h, w});

    if (mode == Mode::Train && n < 2) {
        throw DomainError("batchnorm train mode needs batch size >= 2, got " + std::to_string(n));
    }

    std::vector<float> mean(c), inv_std(c);
    if (mode == Mode::Train) {
        for (size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (size_t i = 0; i < n; ++i) {
                const float* p = x.data() + (i * c + ch) * h * w;
                for (size_t t = 0; t < h * w; ++t) s += p[t];
            }
            const double mu = s / static_cast<double>(m);
            double v = 0.0;
            for (size_t i = 0; i < n; ++i) {
                const float* p = x.data() + (i * c + ch) * h * w;
                for (size_t t = 0; t < h * w; ++t) {
                    const double d = p[t] - mu;
                    v += d * d;
                }
            }
            const double var = v / static_cast<double>(m);  // population variance
            mean[ch] = static_cast<float>(mu);
            inv_std[ch] = static_cast<float>(1.0 / std::sqrt(var + layer.epsilon));
            layer.running_mean.at(ch) =
                layer.momentum * layer.running_mean.at(ch) + (1.0f - layer.momentum) * static_cast<float>(mu);
            layer.running_var.at(ch) =
                layer.momentum * layer.running_var.at(ch) + (1.0f - layer.momentum) * static_cast<float>(var);
        }
    } else {
        for (size_t ch = 0; ch < c; ++ch) {
            mean[ch] = layer.running_mean.at(ch);
            inv_std[ch] = 1.0f / std::sqrt(layer.running_var.at(ch) + layer.epsilon);
        }
    }

    Tensor xhat;
    if (cache && mode == Mode::Train) xhat = Tensor({n, c, h, w});
    for (size_t i = 0; i < n; ++i) {
        for (size_t ch = 0; ch < c; ++ch) {
            const float* p = x.data() + (i * c + ch) * h * w;
            float* py = y.data() + (i * c + ch) * h * w;
            float* ph = (cache && mode == Mode::Train) ? xhat.data() + (i * c + ch) * h * w : nullptr;
            const float g = layer.gamma.at(ch), b = layer.beta.at(ch);
            for (size_t t = 0; t < h * w; ++t) {
                const float xh = (p[t] - mean[ch]) * inv_std[ch];
                if (ph) ph[t] = xh;
                py[t] = g * xh + b;
            }
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
        cache->mode = mode;
    }
    return y;
}

struct BnGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};

inline BnGrads batchnorm_backward(const BatchNorm2D& layer, const BnCache& cache, const Tensor& grad_out) {
    const size_t n = grad_out.dim(0), c = grad_out.dim(1), h = grad_out.dim(2), w = grad_out.dim(3);
    BnGrads g;
    g.input = Tensor({n, c, h, w});
    g.gamma = Tensor({c});
    g.beta = Tensor({c});

    if (cache.mode == Mode::Infer) {
        // running stats are constants: dX = dY * gamma * inv_std
        for (size_t i = 0; i < n; ++i) {
            for (size_t ch = 0; ch < c; ++ch) {
                const float k = layer.gamma.at(ch) * cache.inv_std[ch];
                const float* pg = grad_out.data() + (i * c + ch) * h * w;
                float* px = g.input.data() + (i * c + ch) * h * w;
                for (size_t t = 0; t < h * w; ++t) px[t] = pg[t] * k;
            }
        }
        return g;
    }

    const size_t m = n * h * w;
    for (size_t ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const float* pg = grad_out.data() + (i * c + ch) * h * w;
            const float* ph = cache.xhat.data() + (i * c + ch) * h * w;
            for (size_t t = 0; t < h * w; ++t) {
                sum_dy += pg[t];
                sum_dy_xhat += static_cast<double>(pg[t]) * ph[t];
            }
        }
        g.beta.at(ch) = static_cast<float>(sum_dy);
        g.gamma.at(ch) = static_cast<float>(sum_dy_xhat);
        const double gm = layer.gamma.at(ch);
        const double inv_std = cache.inv_std[ch];
        const double inv_m = 1.0 / static_cast<double>(m);
        for (size_t i = 0; i < n; ++i) {
            const float* pg = grad_out.data() + (i * c + ch) * h * w;
            const float* ph = cache.xhat.data() + (i * c + ch) * h * w;
            float* px = g.input.data() + (i * c + ch) * h * w;
            for (size_t t = 0; t < h * w; ++t) {
                const double term = static_cast<double>(pg[t]) - sum_dy * inv_m - ph[t] * sum_dy_xhat * inv_m;
                px[t] = static_cast<float>(gm * inv_std * term);
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// MaxPool2D. Ties resolve to the first index in row-major window order so
// backward routing is deterministic.
// ---------------------------------------------------------------------------

struct MaxPool2D {
    size_t ph = 2, pw = 2;
    size_t stride = 2;
    size_t pad = 0;
};

struct PoolCache {
    std::vector<size_t> argmax;  // flat input index per output cell; SIZE_MAX when the window saw only padding
    std::vector<size_t> in_shape;
};

inline Tensor maxpool_forward(const MaxPool2D& layer, const Tensor& x, PoolCache* cache = nullptr) {
    if (x.rank() != 4) throw ShapeError("maxpool input must be NxCxHxW, got " + shape_str(x.shape()));
    if (layer.ph == 0 || layer.pw == 0) throw ConfigError("maxpool window must be >= 1x1");
    const size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const size_t out_h = conv_out_extent(h, layer.ph, layer.stride, layer.pad, layer.pad);
    const size_t out_w = conv_out_extent(w, layer.pw, layer.stride, layer.pad, layer.pad);
    Tensor y({n, c, out_h, out_w});
    if (cache) {
        cache->argmax.assign(n * c * out_h * out_w, std::numeric_limits<size_t>::max());
        cache->in_shape = {n, c, h, w};
    }
    const float* px = x.data();
    float* py = y.data();
    for (size_t i = 0; i < n; ++i) {
        for (size_t ch = 0; ch < c; ++ch) {
            const float* plane = px + (i * c + ch) * h * w;
            for (size_t oi = 0; oi < out_h; ++oi) {
                for (size_t oj = 0; oj < out_w; ++oj) {
                    float best = -std::numeric_limits<float>::infinity();
                    size_t best_idx = std::numeric_limits<size_t>::max();
                    for (size_t u = 0; u < layer.ph; ++u) {
                        const ptrdiff_t si = static_cast<ptrdiff_t>(oi * layer.stride + u) -
                                             static_cast<ptrdiff_t>(layer.pad);
                        if (si < 0 || si >= static_cast<ptrdiff_t>(h)) continue;
                        for (size_t v = 0; v < layer.pw; ++v) {
                            const ptrdiff_t sj = static_cast<ptrdiff_t>(oj * layer.stride + v) -
                                                 static_cast<ptrdiff_t>(layer.pad);
                            if (sj < 0 || sj >= static_cast<ptrdiff_t>(w)) continue;
                            const float val = plane[static_cast<size_t>(si) * w + static_cast<size_t>(sj)];
                            if (val > best) {
                                best = val;
                                best_idx = (i * c + ch) * h * w + static_cast<size_t>(si) * w +
                                           static_cast<size_t>(sj);
                            }
                        }
                    }
                    const size_t out_idx = ((i * c + ch) * out_h + oi) * out_w + oj;
                    py[out_idx] = best_idx == std::numeric_limits<size_t>::max() ? 0.0f : best;
                    if (cache) cache->argmax[out_idx] = best_idx;
                }
            }
        }
    }
    return y;
}

inline Tensor maxpool_backward(const PoolCache& cache, const Tensor& grad_out) {
    if (grad_out.numel() != cache.argmax.size()) {
        throw ShapeError("maxpool grad shape mismatch: " + shape_str(grad_out.shape()));
    }
    Tensor gx(cache.in_shape);
    for (size_t i = 0; i < cache.argmax.size(); ++i) {
        const size_t idx = cache.argmax[i];
        if (idx != std::numeric_limits<size_t>::max()) gx.at(idx) += grad_out.at(i);
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Inverted dropout: survivors are scaled by 1/(1-p) at train time so
// inference is the identity map.
// ---------------------------------------------------------------------------

struct Dropout {
    float rate = 0.0f;
};

struct DropoutCache {
    Tensor mask;  // 0 or 1/(1-p) per unit; empty when the pass was an identity
};

inline Tensor dropout_apply(const Dropout& layer, const Tensor& x, Mode mode, Rng& rng,
                            DropoutCache* cache = nullptr) {
    if (layer.rate < 0.0f || layer.rate >= 1.0f) {
        throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(layer.rate));
    }
    if (mode == Mode::Infer || layer.rate == 0.0f) {
        if (cache) cache->mask = Tensor();
        return x;
    }
    const float keep_scale = 1.0f / (1.0f - layer.rate);
    Tensor mask(x.shape());
    Tensor y(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) {
        const float m = rng.next_float() < layer.rate ? 0.0f : keep_scale;
        mask.at(i) = m;
        y.at(i) = x.at(i) * m;
    }
    if (cache) cache->mask = std::move(mask);
    return y;
}

inline Tensor dropout_backward(const DropoutCache& cache, const Tensor& grad_out) {
    if (cache.mask.numel() == 0) return grad_out;  // identity pass
    return mul(grad_out, cache.mask);
}

// ---------------------------------------------------------------------------
// Dense: y = x W^T + b with x of shape [N, in].
// ---------------------------------------------------------------------------

struct Dense {
    size_t in_features = 0;
    size_t out_features = 0;
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]

    static Dense make(size_t in_f, size_t out_f) {
        Dense d;
        d.in_features = in_f;
        d.out_features = out_f;
        d.weight = Tensor({out_f, in_f});
        d.bias = Tensor({out_f});
        return d;
    }
};

struct DenseCache {
    Tensor input;  // [N, in]
};

inline Tensor dense_forward(const Dense& layer, const Tensor& x, DenseCache* cache = nullptr) {
    if (x.rank() != 2 || x.dim(1) != layer.in_features) {
        throw ShapeError("dense feature mismatch: " + shape_str(x.shape()) + " vs " +
                         std::to_string(layer.in_features) + " in-features");
    }
    Tensor y = matmul_nt(x, layer.weight);  // [N, out]
    for (size_t i = 0; i < x.dim(0); ++i) {
        for (size_t o = 0; o < layer.out_features; ++o) y(i, o) += layer.bias.at(o);
    }
    debug_check_finite(y, "dense_forward");
    if (cache) cache->input = x;
    return y;
}

struct DenseGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

inline DenseGrads dense_backward(const Dense& layer, const DenseCache& cache, const Tensor& grad_out) {
    const size_t n = cache.input.dim(0);
    if (grad_out.rank() != 2 || grad_out.dim(0) != n || grad_out.dim(1) != layer.out_features) {
        throw ShapeError("dense grad shape mismatch: " + shape_str(grad_out.shape()));
    }
    DenseGrads g;
    g.input = matmul(grad_out, layer.weight);       // [N, in]
    g.weight = matmul_tn(grad_out, cache.input);    // [out, in]
    g.bias = Tensor({layer.out_features});
    for (size_t o = 0; o < layer.out_features; ++o) {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) s += grad_out(i, o);
        g.bias.at(o) = static_cast<float>(s);
    }
    return g;
}

// ---------------------------------------------------------------------------
// ReLU and softmax.
// ---------------------------------------------------------------------------

struct ReluCache {
    Tensor input;
};

inline Tensor relu(const Tensor& x, ReluCache* cache = nullptr) {
    Tensor y = x;
    for (size_t i = 0; i < y.numel(); ++i) {
        if (y.at(i) < 0.0f) y.at(i) = 0.0f;
    }
    if (cache) cache->input = x;
    return y;
}

// subgradient at 0 is 0
inline Tensor relu_backward(const ReluCache& cache, const Tensor& grad_out) {
    if (!cache.input.same_shape(grad_out)) {
        throw ShapeError("relu grad shape mismatch: " + shape_str(grad_out.shape()));
    }
    Tensor gx = grad_out;
    for (size_t i = 0; i < gx.numel(); ++i) {
        if (cache.input.at(i) <= 0.0f) gx.at(i) = 0.0f;
    }
    return gx;
}

// row-wise exp-normalization with max subtraction for stability
inline Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax expects NxK logits, got " + shape_str(logits.shape()));
    const size_t n = logits.dim(0), k = logits.dim(1);
    Tensor p({n, k});
    for (size_t i = 0; i < n; ++i) {
        float mx = -std::numeric_limits<float>::infinity();
        for (size_t j = 0; j < k; ++j) mx = std::max(mx, logits(i, j));
        double denom = 0.0;
        for (size_t j = 0; j < k; ++j) {
            const float e = std::exp(logits(i, j) - mx);
            p(i, j) = e;
            denom += e;
        }
        for (size_t j = 0; j < k; ++j) p(i, j) = static_cast<float>(p(i, j) / denom);
    }
    return p;
}

}  // namespace vbn
