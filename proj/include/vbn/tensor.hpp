#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"

namespace vbn {

inline std::string shape_str(const std::vector<size_t>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major float32 tensor. Images are CxHxW, batches NxCxHxW.
// Tensors are values: operations return new tensors and never alias inputs,
// so a tensor may be shared read-only across threads.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
        data_.assign(checked_numel(shape_), 0.0f);
    }

    Tensor(std::vector<size_t> shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_numel(shape_) != data_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
        }
    }

    static Tensor full(std::vector<size_t> shape, float value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor scalar(float value) { return Tensor({}, {value}); }

    const std::vector<size_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t dim(size_t i) const { return shape_.at(i); }
    size_t numel() const { return data_.size(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& at(size_t i) { return data_[i]; }
    float at(size_t i) const { return data_[i]; }

    float& operator()(size_t i) { return data_[i]; }
    float operator()(size_t i) const { return data_[i]; }
    float& operator()(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
    float operator()(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }
    float& operator()(size_t i, size_t j, size_t k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
    float operator()(size_t i, size_t j, size_t k) const { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
    float& operator()(size_t i, size_t j, size_t k, size_t l) {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    float operator()(size_t i, size_t j, size_t k, size_t l) const {
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // shape change that keeps the flat data (row-major) untouched
    Tensor reshaped(std::vector<size_t> shape) const {
        if (checked_numel(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

private:
    static size_t checked_numel(const std::vector<size_t>& shape) {
        size_t n = 1;
        for (size_t e : shape) {
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
            n *= e;
        }
        return n;
    }

    std::vector<size_t> shape_;
    std::vector<float> data_;
};

// Contract check for finite values; active in debug builds only.
inline void debug_check_finite(const Tensor& t, const char* where) {
#ifndef NDEBUG
    for (size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t.at(i))) {
            throw DomainError(std::string("non-finite value in ") + where);
        }
    }
#else
    (void)t;
    (void)where;
#endif
}

// ---------------------------------------------------------------------------
// matmul family. Accumulation is in double to bound float32 drift.
// ---------------------------------------------------------------------------

// c[m x n] = a[m x k] * b[k x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    std::vector<double> acc(n);
    const float* pa = a.data();
    const float* pb = b.data();
    float* pc = c.data();
    for (size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const float* brow = pb + p * n;
            for (size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
        }
        for (size_t j = 0; j < n; ++j) pc[i * n + j] = static_cast<float>(acc[j]);
    }
    return c;
}

// c[m x n] = a[m x k] * b[n x k]^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
        throw ShapeError("matmul_nt shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    }
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor c({m, n});
    const float* pa = a.data();
    const float* pb = b.data();
    float* pc = c.data();
    for (size_t i = 0; i < m; ++i) {
        const float* arow = pa + i * k;
        for (size_t j = 0; j < n; ++j) {
            const float* brow = pb + j * k;
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * brow[p];
            pc[i * n + j] = static_cast<float>(acc);
        }
    }
    return c;
}

// c[m x n] = a[k x m]^T * b[k x n]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
        throw ShapeError("matmul_tn shape mismatch: " + shape_str(a.shape()) + "^T x " + shape_str(b.shape()));
    }
    const size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    std::vector<double> acc(m * n, 0.0);
    const float* pa = a.data();
    const float* pb = b.data();
    for (size_t p = 0; p < k; ++p) {
        const float* arow = pa + p * m;
        const float* brow = pb + p * n;
        for (size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* accrow = acc.data() + i * n;
            for (size_t j = 0; j < n; ++j) accrow[j] += av * brow[j];
        }
    }
    float* pc = c.data();
    for (size_t i = 0; i < m * n; ++i) pc[i] = static_cast<float>(acc[i]);
    return c;
}

// ---------------------------------------------------------------------------
// Convolution lowering.
// ---------------------------------------------------------------------------

// output extent of a conv/pool window; throws if the division is not integral
inline size_t conv_out_extent(size_t in, size_t k, size_t stride, size_t pad_lo, size_t pad_hi) {
    const size_t padded = in + pad_lo + pad_hi;
    if (padded < k) {
        throw ConfigError("window " + std::to_string(k) + " larger than padded extent " + std::to_string(padded));
    }
    const size_t span = padded - k;
    if (span % stride != 0) {
        throw ConfigError("non-integral output extent: (" + std::to_string(padded) + " - " + std::to_string(k) +
                          ") not divisible by stride " + std::to_string(stride));
    }
    return span / stride + 1;
}

// im2col with independent top/left/bottom/right zero padding.
// x is CxHxW; the result is (C*kh*kw) x (out_h*out_w), one receptive field
// per column, walked row-major over output positions.
inline Tensor im2col_padded(const Tensor& x, size_t kh, size_t kw, size_t stride, size_t pad_top, size_t pad_left,
                            size_t pad_bottom, size_t pad_right) {
    if (x.rank() != 3) throw ShapeError("im2col expects CxHxW, got " + shape_str(x.shape()));
    if (kh == 0 || kw == 0 || stride == 0) throw ConfigError("im2col kernel and stride must be >= 1");
    const size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const size_t out_h = conv_out_extent(h, kh, stride, pad_top, pad_bottom);
    const size_t out_w = conv_out_extent(w, kw, stride, pad_left, pad_right);
    Tensor cols({c * kh * kw, out_h * out_w});
    float* pc = cols.data();
    const float* px = x.data();
    const size_t n_cols = out_h * out_w;
    for (size_t ch = 0; ch < c; ++ch) {
        for (size_t u = 0; u < kh; ++u) {
            for (size_t v = 0; v < kw; ++v) {
                float* row = pc + ((ch * kh + u) * kw + v) * n_cols;
                for (size_t i = 0; i < out_h; ++i) {
                    const ptrdiff_t src_i = static_cast<ptrdiff_t>(i * stride + u) - static_cast<ptrdiff_t>(pad_top);
                    for (size_t j = 0; j < out_w; ++j) {
                        const ptrdiff_t src_j =
                            static_cast<ptrdiff_t>(j * stride + v) - static_cast<ptrdiff_t>(pad_left);
                        float val = 0.0f;
                        if (src_i >= 0 && src_i < static_cast<ptrdiff_t>(h) && src_j >= 0 &&
                            src_j < static_cast<ptrdiff_t>(w)) {
                            val = px[(ch * h + static_cast<size_t>(src_i)) * w + static_cast<size_t>(src_j)];
                        }
                        row[i * out_w + j] = val;
                    }
                }
            }
        }
    }
    return cols;
}

inline Tensor im2col(const Tensor& x, size_t kh, size_t kw, size_t stride, size_t pad) {
    return im2col_padded(x, kh, kw, stride, pad, pad, pad, pad);
}

// scatter-add of column gradients back onto a CxHxW image; inverse indexing
// of im2col_padded with the same geometry
inline void col2im_add(const Tensor& cols, size_t c, size_t h, size_t w, size_t kh, size_t kw, size_t stride,
                       size_t pad_top, size_t pad_left, size_t out_h, size_t out_w, Tensor& out) {
    if (cols.rank() != 2 || cols.dim(0) != c * kh * kw || cols.dim(1) != out_h * out_w) {
        throw ShapeError("col2im geometry mismatch for " + shape_str(cols.shape()));
    }
    const size_t n_cols = out_h * out_w;
    float* po = out.data();
    const float* pc = cols.data();
    for (size_t ch = 0; ch < c; ++ch) {
        for (size_t u = 0; u < kh; ++u) {
            for (size_t v = 0; v < kw; ++v) {
                const float* row = pc + ((ch * kh + u) * kw + v) * n_cols;
                for (size_t i = 0; i < out_h; ++i) {
                    const ptrdiff_t src_i = static_cast<ptrdiff_t>(i * stride + u) - static_cast<ptrdiff_t>(pad_top);
                    if (src_i < 0 || src_i >= static_cast<ptrdiff_t>(h)) continue;
                    for (size_t j = 0; j < out_w; ++j) {
                        const ptrdiff_t src_j =
                            static_cast<ptrdiff_t>(j * stride + v) - static_cast<ptrdiff_t>(pad_left);
                        if (src_j < 0 || src_j >= static_cast<ptrdiff_t>(w)) continue;
                        po[(ch * h + static_cast<size_t>(src_i)) * w + static_cast<size_t>(src_j)] +=
                            row[i * out_w + j];
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

enum class Reduce { Sum, Max, Mean };

// Reduce over the given axes (all axes when empty). Reduced axes are dropped;
// reducing everything yields a scalar tensor (empty shape, one element).
inline Tensor reduce(const Tensor& x, Reduce op, std::vector<size_t> axes = {}) {
    if (x.numel() == 0) throw DomainError("empty reduction");
    const size_t rank = x.rank();
    if (axes.empty()) {
        axes.resize(rank);
        std::iota(axes.begin(), axes.end(), size_t{0});
    }
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (size_t a : axes) {
        if (a >= rank) throw DomainError("reduce axis " + std::to_string(a) + " out of range for " + shape_str(x.shape()));
    }

    std::vector<bool> reduced(rank, false);
    for (size_t a : axes) reduced[a] = true;
    std::vector<size_t> out_shape;
    size_t reduce_count = 1;
    for (size_t d = 0; d < rank; ++d) {
        if (reduced[d]) reduce_count *= x.dim(d);
        else out_shape.push_back(x.dim(d));
    }

    Tensor out(out_shape);
    const size_t out_n = out.numel();
    std::vector<double> acc;
    if (op == Reduce::Max) {
        acc.assign(out_n, -std::numeric_limits<double>::infinity());
    } else {
        acc.assign(out_n, 0.0);
    }

    // walk the input once, mapping each element to its output slot
    std::vector<size_t> idx(rank, 0);
    const float* px = x.data();
    for (size_t flat = 0; flat < x.numel(); ++flat) {
        size_t out_flat = 0;
        for (size_t d = 0; d < rank; ++d) {
            if (!reduced[d]) out_flat = out_flat * x.dim(d) + idx[d];
        }
        const double v = px[flat];
        if (op == Reduce::Max) {
            if (v > acc[out_flat]) acc[out_flat] = v;
        } else {
            acc[out_flat] += v;
        }
        for (size_t d = rank; d-- > 0;) {
            if (++idx[d] < x.dim(d)) break;
            idx[d] = 0;
        }
    }

    float* po = out.data();
    for (size_t i = 0; i < out_n; ++i) {
        double v = acc[i];
        if (op == Reduce::Mean) v /= static_cast<double>(reduce_count);
        po[i] = static_cast<float>(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Small elementwise helpers used across modules.
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor c = a;
    for (size_t i = 0; i < c.numel(); ++i) c.at(i) += b.at(i);
    return c;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor c = a;
    for (size_t i = 0; i < c.numel(); ++i) c.at(i) *= b.at(i);
    return c;
}

inline Tensor scale(const Tensor& a, float s) {
    Tensor c = a;
    for (size_t i = 0; i < c.numel(); ++i) c.at(i) *= s;
    return c;
}

inline double sum_all(const Tensor& a) {
    double s = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) s += a.at(i);
    return s;
}

}  // namespace vbn
