#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "image.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "text.hpp"

namespace vbn {

// class order is fixed: rows/columns of every metric follow it
enum class ClassLabel { Normal = 0, Covid = 1, Pneumonia = 2 };

inline const char* class_name(ClassLabel c) {
    switch (c) {
        case ClassLabel::Normal: return "Normal";
        case ClassLabel::Covid: return "Covid";
        case ClassLabel::Pneumonia: return "Pneumonia";
    }
    return "?";
}

inline ClassLabel parse_class(const std::string& s) {
    if (s == "Normal") return ClassLabel::Normal;
    if (s == "Covid") return ClassLabel::Covid;
    if (s == "Pneumonia") return ClassLabel::Pneumonia;
    throw FormatError("unknown class '" + s + "'");
}

constexpr size_t kNumClasses = 3;

enum class Split { Train, Test };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw FormatError("unknown split '" + s + "'");
}

enum class Provenance { Original, Augmented };

struct Sample {
    std::string path;  // identifier; equals the source file for originals, source + "#augN" for augments
    ClassLabel label = ClassLabel::Normal;
    float blur_score = 0.0f;
    float contrast_score = 0.0f;
    Split split = Split::Train;
    Provenance provenance = Provenance::Original;
    std::string source;           // file path of the original (augments only)
    AugmentTransform transform;   // augments only

    const std::string& file_path() const { return provenance == Provenance::Original ? path : source; }
};

struct CurationParams {
    float blur_min = 0.0015f;
    float contrast_min = 0.04f;
    float contrast_max = 0.45f;
    size_t target_per_class = 0;  // 0 = keep current counts (no balancing)
    float split_ratio = 0.8f;
    uint64_t seed = 42;
    AugmentRanges augment;
};

struct Rejection {
    std::string path;
    std::string reason;
    float score = 0.0f;
};

struct DatasetManifest {
    std::string root;  // sample paths are relative to this directory
    CurationParams params;
    std::vector<Sample> samples;

    std::vector<size_t> split_indices(Split s) const {
        std::vector<size_t> out;
        for (size_t i = 0; i < samples.size(); ++i) {
            if (samples[i].split == s) out.push_back(i);
        }
        return out;
    }

    std::vector<size_t> class_counts() const {
        std::vector<size_t> counts(kNumClasses, 0);
        for (const auto& s : samples) ++counts[static_cast<size_t>(s.label)];
        return counts;
    }
};

// ---------------------------------------------------------------------------
// Manifest file: a header block of curation parameters, then one
// tab-separated record per sample in a stable order. Downstream stages
// always consume manifests, never raw directories.
// ---------------------------------------------------------------------------

inline std::string manifest_to_string(const DatasetManifest& m) {
    std::string out;
    out += "# vbn-manifest v1\n";
    out += "root\t" + m.root + "\n";
    out += "seed\t" + std::to_string(m.params.seed) + "\n";
    out += "blur_min\t" + fmt_float(m.params.blur_min) + "\n";
    out += "contrast_min\t" + fmt_float(m.params.contrast_min) + "\n";
    out += "contrast_max\t" + fmt_float(m.params.contrast_max) + "\n";
    out += "target_per_class\t" + std::to_string(m.params.target_per_class) + "\n";
    out += "split_ratio\t" + fmt_float(m.params.split_ratio) + "\n";
    out += "samples\t" + std::to_string(m.samples.size()) + "\n";
    out += "# path\tclass\tsplit\tblur\tcontrast\tprovenance\tsource\ttransform\n";
    for (const auto& s : m.samples) {
        out += s.path + "\t" + class_name(s.label) + "\t" + split_name(s.split) + "\t" + fmt_float(s.blur_score) +
               "\t" + fmt_float(s.contrast_score) + "\t";
        if (s.provenance == Provenance::Original) {
            out += "original\t-\t-\n";
        } else {
            out += "augmented\t" + s.source + "\t" + s.transform.descriptor() + "\n";
        }
    }
    return out;
}

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
    write_text_file(path, manifest_to_string(m));
}

inline DatasetManifest parse_manifest(const std::string& text) {
    DatasetManifest m;
    size_t declared = 0;
    bool have_count = false;
    for (const auto& raw : split(text, '\n')) {
        const std::string line = raw;
        if (line.empty() || line[0] == '#') continue;
        const auto f = split(line, '\t');
        if (f.size() == 2) {
            if (f[0] == "root") m.root = f[1];
            else if (f[0] == "seed") m.params.seed = parse_u64(f[1], "seed");
            else if (f[0] == "blur_min") m.params.blur_min = parse_float(f[1], "blur_min");
            else if (f[0] == "contrast_min") m.params.contrast_min = parse_float(f[1], "contrast_min");
            else if (f[0] == "contrast_max") m.params.contrast_max = parse_float(f[1], "contrast_max");
            else if (f[0] == "target_per_class") m.params.target_per_class = parse_u64(f[1], "target_per_class");
            else if (f[0] == "split_ratio") m.params.split_ratio = parse_float(f[1], "split_ratio");
            else if (f[0] == "samples") {
                declared = parse_u64(f[1], "samples");
                have_count = true;
            } else {
                throw FormatError("unknown manifest key '" + f[0] + "'");
            }
        } else if (f.size() == 8) {
            Sample s;
            s.path = f[0];
            s.label = parse_class(f[1]);
            s.split = parse_split(f[2]);
            s.blur_score = parse_float(f[3], "blur");
            s.contrast_score = parse_float(f[4], "contrast");
            if (f[5] == "original") {
                s.provenance = Provenance::Original;
            } else if (f[5] == "augmented") {
                s.provenance = Provenance::Augmented;
                s.source = f[6];
                s.transform = AugmentTransform::from_descriptor(f[7]);
            } else {
                throw FormatError("unknown provenance '" + f[5] + "'");
            }
            m.samples.push_back(std::move(s));
        } else {
            throw FormatError("malformed manifest line: '" + line + "'");
        }
    }
    if (have_count && declared != m.samples.size()) {
        throw FormatError("manifest declares " + std::to_string(declared) + " samples but carries " +
                          std::to_string(m.samples.size()));
    }
    return m;
}

inline DatasetManifest load_manifest(const std::string& path) { return parse_manifest(read_text_file(path)); }

inline std::string rejections_to_string(const std::vector<Rejection>& rejections) {
    std::string out = "# path\treason\tscore\n";
    for (const auto& r : rejections) out += r.path + "\t" + r.reason + "\t" + fmt_float(r.score) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Curation: score every file under <root>/{Normal,Covid,Pneumonia}/ and drop
// blurred or poorly contrasted images, recording each rejection.
// ---------------------------------------------------------------------------

struct CurationResult {
    std::vector<Sample> accepted;  // originals only; splits not yet assigned
    std::vector<Rejection> rejected;
    std::vector<size_t> surviving_per_class{0, 0, 0};
};

inline std::vector<std::string> list_class_files(const std::string& root, ClassLabel label) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(root) / class_name(label);
    if (!fs::is_directory(dir)) {
        throw DomainError("missing class directory " + dir.string());
    }
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext == ".png" || ext == ".pgm") {
            files.push_back((fs::path(class_name(label)) / entry.path().filename()).generic_string());
        }
    }
    if (files.empty()) throw DomainError("class directory has no images: " + dir.string());
    std::sort(files.begin(), files.end());
    return files;
}

inline CurationResult curate(const std::string& root, const CurationParams& params) {
    CurationResult result;
    for (size_t c = 0; c < kNumClasses; ++c) {
        const ClassLabel label = static_cast<ClassLabel>(c);
        for (const std::string& rel : list_class_files(root, label)) {
            const GrayImage img = read_gray_image((std::filesystem::path(root) / rel).string());
            const float blur = static_cast<float>(laplacian_variance(img));
            const float contrast = static_cast<float>(contrast_score(img));
            // contrast filtering runs ahead of the blur filter
            if (contrast < params.contrast_min) {
                result.rejected.push_back({rel, "low-contrast", contrast});
                continue;
            }
            if (contrast > params.contrast_max) {
                result.rejected.push_back({rel, "high-contrast", contrast});
                continue;
            }
            if (blur < params.blur_min) {
                result.rejected.push_back({rel, "blur", blur});
                continue;
            }
            Sample s;
            s.path = rel;
            s.label = label;
            s.blur_score = blur;
            s.contrast_score = contrast;
            result.accepted.push_back(std::move(s));
            ++result.surviving_per_class[c];
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Balancing: pad every class to the target count with augmented copies of
// its originals (round-robin over the originals, transforms drawn from the
// configured ranges). Augments inherit the split of their source, and no
// two augments of one source share a transform descriptor.
// ---------------------------------------------------------------------------

inline std::vector<Sample> balance_classes(const std::vector<Sample>& samples, size_t target_per_class,
                                           const AugmentRanges& ranges, Rng& rng) {
    std::vector<Sample> out = samples;
    std::map<std::string, size_t> aug_counter;  // per-source ordinal
    std::set<std::pair<std::string, std::string>> seen;  // (source, descriptor)
    for (const auto& s : samples) {
        if (s.provenance == Provenance::Augmented) {
            seen.emplace(s.source, s.transform.descriptor());
            auto& n = aug_counter[s.source];
            ++n;
        }
    }
    for (size_t c = 0; c < kNumClasses; ++c) {
        const ClassLabel label = static_cast<ClassLabel>(c);
        std::vector<const Sample*> originals;
        size_t count = 0;
        for (const auto& s : samples) {
            if (s.label != label) continue;
            ++count;
            if (s.provenance == Provenance::Original) originals.push_back(&s);
        }
        if (count > target_per_class) {
            throw ConfigError("class " + std::string(class_name(label)) + " already has " + std::to_string(count) +
                              " samples, above the target " + std::to_string(target_per_class));
        }
        if (count == target_per_class) continue;
        if (originals.empty()) {
            throw DomainError("class " + std::string(class_name(label)) + " has no original samples to augment");
        }
        const size_t needed = target_per_class - count;
        for (size_t i = 0; i < needed; ++i) {
            const Sample& src = *originals[i % originals.size()];
            AugmentTransform t;
            do {
                t = draw_transform(ranges, rng);
            } while (!seen.emplace(src.path, t.descriptor()).second);
            Sample aug;
            const size_t ordinal = ++aug_counter[src.path];
            aug.path = src.path + "#aug" + std::to_string(ordinal);
            aug.label = src.label;
            aug.blur_score = src.blur_score;          // scores describe the source image
            aug.contrast_score = src.contrast_score;
            aug.split = src.split;
            aug.provenance = Provenance::Augmented;
            aug.source = src.path;
            aug.transform = t;
            out.push_back(std::move(aug));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stratified train/test split. Samples are grouped by their source original
// so an original and all of its augments land in the same split. For
// all-original manifests the per-class train count is exactly
// floor(ratio * class_count).
// ---------------------------------------------------------------------------

inline void split_train_test(std::vector<Sample>& samples, float ratio, Rng& rng) {
    if (ratio <= 0.0f || ratio >= 1.0f) throw ConfigError("split ratio must be in (0, 1)");
    for (size_t c = 0; c < kNumClasses; ++c) {
        const ClassLabel label = static_cast<ClassLabel>(c);
        // group sample indices by source original, keeping first-seen order
        std::vector<std::string> group_keys;
        std::map<std::string, std::vector<size_t>> groups;
        size_t class_total = 0;
        for (size_t i = 0; i < samples.size(); ++i) {
            if (samples[i].label != label) continue;
            ++class_total;
            const std::string key = samples[i].provenance == Provenance::Original ? samples[i].path
                                                                                  : samples[i].source;
            auto [it, inserted] = groups.try_emplace(key);
            if (inserted) group_keys.push_back(key);
            it->second.push_back(i);
        }
        if (class_total == 0) throw DomainError("class " + std::string(class_name(label)) + " has no samples to split");
        if (group_keys.size() < 2) {
            throw DomainError("class " + std::string(class_name(label)) + " is too small to split (needs >= 2 originals)");
        }
        rng.shuffle(group_keys);
        const size_t target_train = static_cast<size_t>(std::floor(static_cast<double>(ratio) * class_total));
        if (target_train == 0 || target_train >= class_total) {
            throw DomainError("split ratio leaves an empty side for class " + std::string(class_name(label)));
        }
        size_t assigned = 0;
        std::vector<std::string> train_keys, leftover;
        for (const auto& key : group_keys) {
            const size_t size = groups[key].size();
            if (assigned + size <= target_train) {
                train_keys.push_back(key);
                assigned += size;
            } else {
                leftover.push_back(key);
            }
        }
        // repair pass: move a leftover group whose size exactly closes the gap
        if (assigned < target_train && leftover.size() > 1) {
            const size_t gap = target_train - assigned;
            for (auto it = leftover.begin(); it != leftover.end(); ++it) {
                if (groups[*it].size() == gap) {
                    train_keys.push_back(*it);
                    assigned += gap;
                    leftover.erase(it);
                    break;
                }
            }
        }
        // both sides must hold at least one group
        if (train_keys.empty()) {
            train_keys.push_back(leftover.back());
            leftover.pop_back();
        }
        if (leftover.empty()) {
            leftover.push_back(train_keys.back());
            train_keys.pop_back();
        }
        for (const auto& key : train_keys) {
            for (size_t idx : groups[key]) samples[idx].split = Split::Train;
        }
        for (const auto& key : leftover) {
            for (size_t idx : groups[key]) samples[idx].split = Split::Test;
        }
    }
}

// ---------------------------------------------------------------------------
// The full curation pipeline behind `vbn curate`: score and filter, subsample
// classes above the target, split the originals stratified by ratio, then
// balance each side separately. Balancing after the split keeps every
// augment with its source and makes the per-side counts exact:
// train = floor(target*ratio), test = target - train, per class.
// ---------------------------------------------------------------------------

inline void sort_manifest(std::vector<Sample>& samples) {
    std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
        if (a.label != b.label) return a.label < b.label;
        if (a.split != b.split) return a.split < b.split;
        return a.path < b.path;
    });
}

inline DatasetManifest curate_pipeline(const std::string& root, const CurationParams& params, Rng& rng,
                                       std::vector<Rejection>* rejections = nullptr) {
    CurationResult cur = curate(root, params);
    if (rejections) *rejections = cur.rejected;
    std::vector<Sample> samples = std::move(cur.accepted);

    size_t target = params.target_per_class;
    if (target == 0) {
        // default: balance up to the largest surviving class
        target = *std::max_element(cur.surviving_per_class.begin(), cur.surviving_per_class.end());
    }

    // subsample classes that exceed the target (deterministic shuffle, keep first)
    {
        std::vector<std::vector<Sample>> per_class(kNumClasses);
        for (auto& s : samples) per_class[static_cast<size_t>(s.label)].push_back(std::move(s));
        samples.clear();
        for (size_t c = 0; c < kNumClasses; ++c) {
            auto& of_class = per_class[c];
            if (of_class.size() > target) {
                Rng sub = rng.child(1000 + c);
                std::vector<size_t> idx(of_class.size());
                for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
                sub.shuffle(idx);
                idx.resize(target);
                std::sort(idx.begin(), idx.end());
                for (size_t i : idx) samples.push_back(std::move(of_class[i]));
            } else {
                for (auto& s : of_class) samples.push_back(std::move(s));
            }
        }
    }

    split_train_test(samples, params.split_ratio, rng);

    const size_t train_target = static_cast<size_t>(std::floor(static_cast<double>(params.split_ratio) * target));
    const size_t test_target = target - train_target;
    if (train_target == 0 || test_target == 0) throw ConfigError("split ratio leaves an empty side at the target count");

    // rebalance the original split so neither side exceeds its target
    for (size_t c = 0; c < kNumClasses; ++c) {
        const ClassLabel label = static_cast<ClassLabel>(c);
        std::vector<size_t> train_idx, test_idx;
        for (size_t i = 0; i < samples.size(); ++i) {
            if (samples[i].label != label) continue;
            (samples[i].split == Split::Train ? train_idx : test_idx).push_back(i);
        }
        while (train_idx.size() > train_target && test_idx.size() < test_target) {
            samples[train_idx.back()].split = Split::Test;
            test_idx.push_back(train_idx.back());
            train_idx.pop_back();
        }
        while (test_idx.size() > test_target && train_idx.size() < train_target) {
            samples[test_idx.back()].split = Split::Train;
            train_idx.push_back(test_idx.back());
            test_idx.pop_back();
        }
        if (train_idx.empty() || test_idx.empty()) {
            throw DomainError("class " + std::string(class_name(label)) + " cannot cover both splits");
        }
    }

    // balance each side to its exact per-class target
    std::vector<Sample> train_side, test_side;
    for (auto& s : samples) (s.split == Split::Train ? train_side : test_side).push_back(std::move(s));
    Rng train_rng = rng.child(1);
    Rng test_rng = rng.child(2);
    train_side = balance_classes(train_side, train_target, params.augment, train_rng);
    test_side = balance_classes(test_side, test_target, params.augment, test_rng);

    DatasetManifest manifest;
    manifest.root = root;
    manifest.params = params;
    manifest.params.target_per_class = target;
    manifest.samples = std::move(train_side);
    for (auto& s : test_side) manifest.samples.push_back(std::move(s));
    sort_manifest(manifest.samples);
    return manifest;
}

// ---------------------------------------------------------------------------
// Batch loading: decode, apply the recorded transform for augments, optional
// centre crop, resize to the model resolution.
// ---------------------------------------------------------------------------

struct LoaderOptions {
    size_t height = 256;
    size_t width = 256;
    float crop_center = 1.0f;  // 1 = no crop
};

inline GrayImage load_sample_image(const DatasetManifest& m, const Sample& s, const LoaderOptions& opts) {
    const std::string full = (std::filesystem::path(m.root) / s.file_path()).string();
    GrayImage img = read_gray_image(full);
    if (s.provenance == Provenance::Augmented) img = augment_image(img, s.transform);
    if (opts.crop_center < 1.0f) img = center_crop(img, opts.crop_center);
    return resize_bilinear(img, opts.width, opts.height);
}

inline std::pair<Tensor, std::vector<int>> load_batch(const DatasetManifest& m, const std::vector<size_t>& indices,
                                                      const LoaderOptions& opts) {
    if (indices.empty()) throw DomainError("empty batch request");
    Tensor batch({indices.size(), 1, opts.height, opts.width});
    std::vector<int> labels(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m.samples.size()) throw DomainError("batch index out of range");
        const Sample& s = m.samples[indices[i]];
        const GrayImage img = load_sample_image(m, s, opts);
        std::copy(img.pixels.begin(), img.pixels.end(), batch.data() + i * opts.height * opts.width);
        labels[i] = static_cast<int>(s.label);
    }
    return {std::move(batch), std::move(labels)};
}

// ---------------------------------------------------------------------------
// Synthetic corpus: three procedurally distinct classes whose discriminative
// evidence is a textured patch at a recorded bounding box, over a smooth
// class-independent background. Ground-truth boxes feed the localization
// tests for the saliency maps.
// ---------------------------------------------------------------------------

struct PatchBox {
    size_t x = 0, y = 0, w = 0, h = 0;

    bool contains(size_t px, size_t py) const { return px >= x && px < x + w && py >= y && py < y + h; }
};

inline void write_patch_boxes(const std::vector<std::pair<std::string, PatchBox>>& boxes, const std::string& path) {
    std::string out = "# path\tx\ty\tw\th\n";
    for (const auto& [rel, box] : boxes) {
        out += rel + "\t" + std::to_string(box.x) + "\t" + std::to_string(box.y) + "\t" + std::to_string(box.w) +
               "\t" + std::to_string(box.h) + "\n";
    }
    write_text_file(path, out);
}

inline std::map<std::string, PatchBox> read_patch_boxes(const std::string& path) {
    std::map<std::string, PatchBox> out;
    for (const auto& line : split(read_text_file(path), '\n')) {
        if (line.empty() || line[0] == '#') continue;
        const auto f = split(line, '\t');
        if (f.size() != 5) throw FormatError("malformed patch box line: '" + line + "'");
        out[f[0]] = PatchBox{parse_u64(f[1], "x"), parse_u64(f[2], "y"), parse_u64(f[3], "w"), parse_u64(f[4], "h")};
    }
    return out;
}

namespace detail {

inline GrayImage synth_background(size_t size, Rng& rng) {
    GrayImage img = GrayImage::blank(size, size, 0.15f);
    const float scale = static_cast<float>(size) / 64.0f;
    for (int blob = 0; blob < 3; ++blob) {
        const float cx = rng.uniform(0.0f, static_cast<float>(size - 1));
        const float cy = rng.uniform(0.0f, static_cast<float>(size - 1));
        const float sigma = rng.uniform(8.0f, 20.0f) * scale;
        const float amp = rng.uniform(0.10f, 0.30f);
        for (size_t i = 0; i < size; ++i) {
            for (size_t j = 0; j < size; ++j) {
                const float dx = static_cast<float>(j) - cx;
                const float dy = static_cast<float>(i) - cy;
                img.at(i, j) += amp * std::exp(-(dx * dx + dy * dy) / (2.0f * sigma * sigma));
            }
        }
    }
    for (auto& p : img.pixels) {
        p += rng.uniform(-0.03f, 0.03f);
        p = std::clamp(p, 0.0f, 1.0f);
    }
    return img;
}

inline void synth_patch(GrayImage& img, const PatchBox& box, ClassLabel label, Rng& rng) {
    const float hi = 0.95f, lo = 0.10f;
    for (size_t i = 0; i < box.h; ++i) {
        for (size_t j = 0; j < box.w; ++j) {
            bool bright = false;
            switch (label) {
                case ClassLabel::Normal:  // horizontal stripes
                    bright = (i / 3) % 2 == 0;
                    break;
                case ClassLabel::Covid:  // vertical stripes
                    bright = (j / 3) % 2 == 0;
                    break;
                case ClassLabel::Pneumonia:  // checkerboard
                    bright = ((i / 3) + (j / 3)) % 2 == 0;
                    break;
            }
            const float v = (bright ? hi : lo) + rng.uniform(-0.02f, 0.02f);
            img.at(box.y + i, box.x + j) = std::clamp(v, 0.0f, 1.0f);
        }
    }
}

}  // namespace detail

struct SyntheticCorpus {
    std::string root;
    std::vector<std::pair<std::string, PatchBox>> boxes;  // relpath -> ground-truth patch
};

inline SyntheticCorpus generate_synthetic(const std::string& out_dir, size_t per_class, Rng& rng, size_t size = 64) {
    namespace fs = std::filesystem;
    if (per_class < 4) throw DomainError("synthetic corpus needs at least 4 images per class");
    if (size < 32) throw ConfigError("synthetic image size must be >= 32");
    SyntheticCorpus corpus;
    corpus.root = out_dir;
    const size_t patch = (size * 7) / 16;  // 28 px at the default 64
    const size_t margin = 2;
    for (size_t c = 0; c < kNumClasses; ++c) {
        const ClassLabel label = static_cast<ClassLabel>(c);
        const fs::path dir = fs::path(out_dir) / class_name(label);
        fs::create_directories(dir);
        for (size_t i = 0; i < per_class; ++i) {
            Rng img_rng = rng.child(c * 100000 + i);
            // a flat noisy background keeps the class evidence confined to
            // the patch, which the saliency localization tests rely on
            GrayImage img = GrayImage::blank(size, size, 0.15f);
            for (auto& p : img.pixels) p = std::clamp(p + img_rng.uniform(-0.03f, 0.03f), 0.0f, 1.0f);
            PatchBox box;
            box.w = box.h = patch;
            box.x = margin + static_cast<size_t>(img_rng.next_index(size - patch - 2 * margin + 1));
            box.y = margin + static_cast<size_t>(img_rng.next_index(size - patch - 2 * margin + 1));
            detail::synth_patch(img, box, label, img_rng);

            char name[64];
            std::snprintf(name, sizeof(name), "%s_%04zu.pgm", class_name(label), i);
            const std::string rel = (fs::path(class_name(label)) / name).generic_string();
            write_pgm(img, (fs::path(out_dir) / rel).string(), 16);
            corpus.boxes.emplace_back(rel, box);
        }
    }
    std::sort(corpus.boxes.begin(), corpus.boxes.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    write_patch_boxes(corpus.boxes, (fs::path(out_dir) / "patches.txt").string());
    return corpus;
}

}  // namespace vbn
