#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "text.hpp"

namespace vbn {

// Row-major grayscale image with intensities normalized to [0, 1].
struct GrayImage {
    size_t width = 0;
    size_t height = 0;
    std::vector<float> pixels;

    static GrayImage blank(size_t w, size_t h, float value = 0.0f) {
        GrayImage img;
        img.width = w;
        img.height = h;
        img.pixels.assign(w * h, value);
        return img;
    }

    float& at(size_t row, size_t col) { return pixels[row * width + col]; }
    float at(size_t row, size_t col) const { return pixels[row * width + col]; }
};

struct RgbImage {
    size_t width = 0;
    size_t height = 0;
    std::vector<uint8_t> rgb;  // 3 bytes per pixel, row-major
};

inline Tensor image_to_tensor(const GrayImage& img) {
    return Tensor({1, img.height, img.width}, std::vector<float>(img.pixels.begin(), img.pixels.end()));
}

// ---------------------------------------------------------------------------
// PGM (P5), 8- or 16-bit big-endian per the format.
// ---------------------------------------------------------------------------

inline void write_pgm(const GrayImage& img, const std::string& path, int bits = 16) {
    if (bits != 8 && bits != 16) throw ConfigError("pgm depth must be 8 or 16 bits");
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n";
    const int maxval = bits == 8 ? 255 : 65535;
    out += std::to_string(maxval) + "\n";
    out.reserve(out.size() + img.pixels.size() * (bits / 8));
    for (float p : img.pixels) {
        const float clamped = std::clamp(p, 0.0f, 1.0f);
        const unsigned v = static_cast<unsigned>(std::lround(clamped * maxval));
        if (bits == 8) {
            out += static_cast<char>(v & 0xFF);
        } else {
            out += static_cast<char>((v >> 8) & 0xFF);
            out += static_cast<char>(v & 0xFF);
        }
    }
    write_text_file(path, out);
}

inline GrayImage read_pgm(const std::string& path) {
    const std::string raw = read_text_file(path);
    size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < raw.size()) {
            if (raw[pos] == '#') {  // comment until end of line
                while (pos < raw.size() && raw[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(raw[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const size_t start = pos;
        while (pos < raw.size() && !std::isspace(static_cast<unsigned char>(raw[pos]))) ++pos;
        if (start == pos) throw FormatError("truncated pgm header in " + path);
        return raw.substr(start, pos - start);
    };
    if (next_token() != "P5") throw FormatError("not a binary pgm: " + path);
    const size_t w = parse_u64(next_token(), "pgm width");
    const size_t h = parse_u64(next_token(), "pgm height");
    const size_t maxval = parse_u64(next_token(), "pgm maxval");
    if (maxval == 0 || maxval > 65535) throw FormatError("bad pgm maxval in " + path);
    ++pos;  // single whitespace after maxval
    const size_t bytes_per = maxval > 255 ? 2 : 1;
    if (raw.size() - pos < w * h * bytes_per) throw FormatError("truncated pgm pixel data in " + path);
    GrayImage img = GrayImage::blank(w, h);
    const float inv = 1.0f / static_cast<float>(maxval);
    for (size_t i = 0; i < w * h; ++i) {
        unsigned v;
        if (bytes_per == 1) {
            v = static_cast<unsigned char>(raw[pos + i]);
        } else {
            v = (static_cast<unsigned>(static_cast<unsigned char>(raw[pos + 2 * i])) << 8) |
                static_cast<unsigned char>(raw[pos + 2 * i + 1]);
        }
        img.pixels[i] = static_cast<float>(v) * inv;
    }
    return img;
}

// ---------------------------------------------------------------------------
// PNG via libpng: 8/16-bit grayscale in, 8-bit RGB out.
// ---------------------------------------------------------------------------

inline GrayImage read_png_gray(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        std::fclose(fp);
        throw FormatError("not a png file: " + path);
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng initialization failed");
    }

    GrayImage img;
    std::vector<unsigned char> rowbuf;
    bool bad_color = false;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw FormatError("png decode failed: " + path);
    }
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_GRAY_ALPHA) {
        bad_color = true;
        longjmp(png_jmpbuf(png), 1);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
    if (bit_depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        bit_depth = 8;
    }
    png_read_update_info(png, info);
    const size_t row_bytes = png_get_rowbytes(png, info);

    img = GrayImage::blank(w, h);
    rowbuf.assign(row_bytes, 0);
    const float inv = bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, rowbuf.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x) {
            unsigned v;
            if (bit_depth == 16) {
                v = (static_cast<unsigned>(rowbuf[2 * x]) << 8) | rowbuf[2 * x + 1];  // png is big-endian
            } else {
                v = rowbuf[x];
            }
            img.pixels[y * w + x] = static_cast<float>(v) * inv;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    if (bad_color) throw FormatError("png is not grayscale: " + path);
    return img;
}

inline void write_png_gray(const GrayImage& img, const std::string& path, int bits = 16) {
    if (bits != 8 && bits != 16) throw ConfigError("png gray depth must be 8 or 16 bits");
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng initialization failed");
    }
    std::vector<unsigned char> row(img.width * (bits / 8));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("png encode failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), bits,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const unsigned maxval = bits == 8 ? 255u : 65535u;
    for (size_t y = 0; y < img.height; ++y) {
        for (size_t x = 0; x < img.width; ++x) {
            const float clamped = std::clamp(img.at(y, x), 0.0f, 1.0f);
            const unsigned v = static_cast<unsigned>(std::lround(clamped * maxval));
            if (bits == 8) {
                row[x] = static_cast<unsigned char>(v);
            } else {
                row[2 * x] = static_cast<unsigned char>((v >> 8) & 0xFF);  // png stores 16-bit big-endian
                row[2 * x + 1] = static_cast<unsigned char>(v & 0xFF);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline void write_png_rgb(const RgbImage& img, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("png encode failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (size_t y = 0; y < img.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(img.rgb.data() + y * img.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// dispatch on extension; the raw corpus layout allows .png and .pgm
inline GrayImage read_gray_image(const std::string& path) {
    auto ends_with = [&](const char* suffix) {
        const std::string s(suffix);
        return path.size() >= s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".pgm")) return read_pgm(path);
    if (ends_with(".png")) return read_png_gray(path);
    throw FormatError("unsupported image extension (expected .png or .pgm): " + path);
}

// ---------------------------------------------------------------------------
// Quality scores used by curation.
// ---------------------------------------------------------------------------

// Sharpness: convolve with the 4-neighbour Laplacian [[0,1,0],[1,-4,1],[0,1,0]]
// over the valid region (no padding) and return the population variance of
// the response. Blurry images score low.
inline double laplacian_variance(const GrayImage& img) {
    if (img.width < 3 || img.height < 3) {
        throw DomainError("laplacian variance needs at least a 3x3 image, got " + std::to_string(img.width) + "x" +
                          std::to_string(img.height));
    }
    const size_t rows = img.height - 2, cols = img.width - 2;
    const size_t n = rows * cols;
    double sum = 0.0, sum_sq = 0.0;
    for (size_t i = 1; i + 1 < img.height; ++i) {
        for (size_t j = 1; j + 1 < img.width; ++j) {
            const double r = static_cast<double>(img.at(i - 1, j)) + img.at(i + 1, j) + img.at(i, j - 1) +
                             img.at(i, j + 1) - 4.0 * img.at(i, j);
            sum += r;
            sum_sq += r * r;
        }
    }
    const double mean = sum / static_cast<double>(n);
    return sum_sq / static_cast<double>(n) - mean * mean;
}

// Contrast: population standard deviation of the intensities.
inline double contrast_score(const GrayImage& img) {
    if (img.pixels.empty()) throw DomainError("contrast score of an empty image");
    double sum = 0.0, sum_sq = 0.0;
    for (float p : img.pixels) {
        sum += p;
        sum_sq += static_cast<double>(p) * p;
    }
    const double n = static_cast<double>(img.pixels.size());
    const double mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - mean * mean);
    return std::sqrt(var);
}

// ---------------------------------------------------------------------------
// Resampling.
// ---------------------------------------------------------------------------

// bilinear fetch at continuous pixel coordinates, clamped at the borders
inline float sample_bilinear_clamped(const GrayImage& img, float x, float y) {
    x = std::clamp(x, 0.0f, static_cast<float>(img.width - 1));
    y = std::clamp(y, 0.0f, static_cast<float>(img.height - 1));
    const size_t x0 = static_cast<size_t>(x);
    const size_t y0 = static_cast<size_t>(y);
    const size_t x1 = std::min(x0 + 1, img.width - 1);
    const size_t y1 = std::min(y0 + 1, img.height - 1);
    const float fx = x - static_cast<float>(x0);
    const float fy = y - static_cast<float>(y0);
    const float top = img.at(y0, x0) * (1.0f - fx) + img.at(y0, x1) * fx;
    const float bot = img.at(y1, x0) * (1.0f - fx) + img.at(y1, x1) * fx;
    return top * (1.0f - fy) + bot * fy;
}

// bilinear fetch that reads zero outside the image
inline float sample_bilinear_zero(const GrayImage& img, float x, float y) {
    const float xf = std::floor(x), yf = std::floor(y);
    const float fx = x - xf, fy = y - yf;
    auto fetch = [&](ptrdiff_t yy, ptrdiff_t xx) -> float {
        if (yy < 0 || xx < 0 || yy >= static_cast<ptrdiff_t>(img.height) || xx >= static_cast<ptrdiff_t>(img.width))
            return 0.0f;
        return img.at(static_cast<size_t>(yy), static_cast<size_t>(xx));
    };
    const ptrdiff_t x0 = static_cast<ptrdiff_t>(xf), y0 = static_cast<ptrdiff_t>(yf);
    const float top = fetch(y0, x0) * (1.0f - fx) + fetch(y0, x0 + 1) * fx;
    const float bot = fetch(y0 + 1, x0) * (1.0f - fx) + fetch(y0 + 1, x0 + 1) * fx;
    return top * (1.0f - fy) + bot * fy;
}

// half-pixel-centre bilinear resize
inline GrayImage resize_bilinear(const GrayImage& img, size_t out_w, size_t out_h) {
    if (out_w == 0 || out_h == 0) throw ConfigError("resize target must be positive");
    if (out_w == img.width && out_h == img.height) return img;
    GrayImage out = GrayImage::blank(out_w, out_h);
    const float sx = static_cast<float>(img.width) / static_cast<float>(out_w);
    const float sy = static_cast<float>(img.height) / static_cast<float>(out_h);
    for (size_t i = 0; i < out_h; ++i) {
        const float src_y = (static_cast<float>(i) + 0.5f) * sy - 0.5f;
        for (size_t j = 0; j < out_w; ++j) {
            const float src_x = (static_cast<float>(j) + 0.5f) * sx - 0.5f;
            out.at(i, j) = sample_bilinear_clamped(img, src_x, src_y);
        }
    }
    return out;
}

inline GrayImage center_crop(const GrayImage& img, float fraction) {
    if (fraction <= 0.0f || fraction > 1.0f) throw ConfigError("crop fraction must be in (0, 1]");
    if (fraction == 1.0f) return img;
    const size_t cw = std::max<size_t>(1, static_cast<size_t>(std::lround(fraction * static_cast<float>(img.width))));
    const size_t ch = std::max<size_t>(1, static_cast<size_t>(std::lround(fraction * static_cast<float>(img.height))));
    const size_t x0 = (img.width - cw) / 2;
    const size_t y0 = (img.height - ch) / 2;
    GrayImage out = GrayImage::blank(cw, ch);
    for (size_t i = 0; i < ch; ++i) {
        for (size_t j = 0; j < cw; ++j) out.at(i, j) = img.at(y0 + i, x0 + j);
    }
    return out;
}

// separable gaussian with replicated edges
inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kernel[static_cast<size_t>(i + radius)] = v;
        ksum += v;
    }
    for (double& v : kernel) v /= ksum;

    const ptrdiff_t w = static_cast<ptrdiff_t>(img.width), h = static_cast<ptrdiff_t>(img.height);
    GrayImage tmp = GrayImage::blank(img.width, img.height);
    for (ptrdiff_t y = 0; y < h; ++y) {
        for (ptrdiff_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const ptrdiff_t xx = std::clamp<ptrdiff_t>(x + k, 0, w - 1);
                acc += kernel[static_cast<size_t>(k + radius)] * img.at(static_cast<size_t>(y), static_cast<size_t>(xx));
            }
            tmp.at(static_cast<size_t>(y), static_cast<size_t>(x)) = static_cast<float>(acc);
        }
    }
    GrayImage out = GrayImage::blank(img.width, img.height);
    for (ptrdiff_t y = 0; y < h; ++y) {
        for (ptrdiff_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                const ptrdiff_t yy = std::clamp<ptrdiff_t>(y + k, 0, h - 1);
                acc += kernel[static_cast<size_t>(k + radius)] * tmp.at(static_cast<size_t>(yy), static_cast<size_t>(x));
            }
            out.at(static_cast<size_t>(y), static_cast<size_t>(x)) = static_cast<float>(acc);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation: rotation / translation / zoom / brightness with bilinear
// resampling and zero fill outside the source. Horizontal flips are
// deliberately absent: chest X-rays encode laterality.
// ---------------------------------------------------------------------------

struct AugmentTransform {
    float rot_deg = 0.0f;
    float tx_frac = 0.0f;  // translation as a fraction of width
    float ty_frac = 0.0f;  // translation as a fraction of height
    float zoom = 1.0f;
    float brightness = 0.0f;

    std::string descriptor() const {
        return "rot=" + fmt_float(rot_deg) + ";tx=" + fmt_float(tx_frac) + ";ty=" + fmt_float(ty_frac) +
               ";zoom=" + fmt_float(zoom) + ";bright=" + fmt_float(brightness);
    }

    static AugmentTransform from_descriptor(const std::string& text) {
        AugmentTransform t;
        for (const auto& part : split(text, ';')) {
            const auto kv = split(part, '=');
            if (kv.size() != 2) throw FormatError("bad transform descriptor '" + text + "'");
            if (kv[0] == "rot") t.rot_deg = parse_float(kv[1], "rot");
            else if (kv[0] == "tx") t.tx_frac = parse_float(kv[1], "tx");
            else if (kv[0] == "ty") t.ty_frac = parse_float(kv[1], "ty");
            else if (kv[0] == "zoom") t.zoom = parse_float(kv[1], "zoom");
            else if (kv[0] == "bright") t.brightness = parse_float(kv[1], "bright");
            else throw FormatError("unknown transform field '" + kv[0] + "'");
        }
        return t;
    }
};

struct AugmentRanges {
    float max_rot_deg = 7.0f;
    float max_translate_frac = 0.05f;
    float max_zoom_delta = 0.10f;
    float max_brightness = 0.05f;
};

inline void check_transform_in_range(const AugmentTransform& t, const AugmentRanges& r) {
    if (std::abs(t.rot_deg) > r.max_rot_deg + 1e-6f || std::abs(t.tx_frac) > r.max_translate_frac + 1e-6f ||
        std::abs(t.ty_frac) > r.max_translate_frac + 1e-6f || std::abs(t.zoom - 1.0f) > r.max_zoom_delta + 1e-6f ||
        std::abs(t.brightness) > r.max_brightness + 1e-6f) {
        throw ConfigError("augment transform outside configured ranges: " + t.descriptor());
    }
    if (t.zoom <= 0.0f) throw ConfigError("augment zoom must be positive");
}

inline AugmentTransform draw_transform(const AugmentRanges& r, Rng& rng) {
    AugmentTransform t;
    t.rot_deg = rng.uniform(-r.max_rot_deg, r.max_rot_deg);
    t.tx_frac = rng.uniform(-r.max_translate_frac, r.max_translate_frac);
    t.ty_frac = rng.uniform(-r.max_translate_frac, r.max_translate_frac);
    t.zoom = 1.0f + rng.uniform(-r.max_zoom_delta, r.max_zoom_delta);
    t.brightness = rng.uniform(-r.max_brightness, r.max_brightness);
    return t;
}

inline GrayImage augment_image(const GrayImage& img, const AugmentTransform& t) {
    const float cx = static_cast<float>(img.width - 1) * 0.5f;
    const float cy = static_cast<float>(img.height - 1) * 0.5f;
    const float theta = t.rot_deg * 3.14159265358979323846f / 180.0f;
    const float cos_t = std::cos(theta), sin_t = std::sin(theta);
    const float tx = t.tx_frac * static_cast<float>(img.width);
    const float ty = t.ty_frac * static_cast<float>(img.height);
    const float inv_zoom = 1.0f / t.zoom;

    GrayImage out = GrayImage::blank(img.width, img.height);
    for (size_t i = 0; i < img.height; ++i) {
        for (size_t j = 0; j < img.width; ++j) {
            const float dx = static_cast<float>(j) - cx;
            const float dy = static_cast<float>(i) - cy;
            // inverse map: undo translation, then rotation and zoom about the centre
            const float rx = (cos_t * dx + sin_t * dy) * inv_zoom;
            const float ry = (-sin_t * dx + cos_t * dy) * inv_zoom;
            const float src_x = rx + cx - tx;
            const float src_y = ry + cy - ty;
            float v = sample_bilinear_zero(img, src_x, src_y) + t.brightness;
            out.at(i, j) = std::clamp(v, 0.0f, 1.0f);
        }
    }
    return out;
}

}  // namespace vbn
