#include <catch2/catch_amalgamated.hpp>
#include <filesystem>

#include "oracles.hpp"
#include "vbn/data.hpp"

using namespace vbn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

GrayImage noise_image(size_t w, size_t h, Rng& rng) {
    GrayImage img = GrayImage::blank(w, h);
    for (auto& p : img.pixels) p = rng.uniform(0.1f, 0.9f);
    return img;
}

// direct 2-loop laplacian + two-pass variance, independent of the
// production implementation
double direct_laplacian_variance(const GrayImage& img) {
    std::vector<double> responses;
    for (size_t i = 1; i + 1 < img.height; ++i) {
        for (size_t j = 1; j + 1 < img.width; ++j) {
            double r = 0.0;
            const double kernel[3][3] = {{0, 1, 0}, {1, -4, 1}, {0, 1, 0}};
            for (int u = -1; u <= 1; ++u) {
                for (int v = -1; v <= 1; ++v) {
                    r += kernel[u + 1][v + 1] * img.at(i + static_cast<size_t>(u + 1) - 1,
                                                       j + static_cast<size_t>(v + 1) - 1);
                }
            }
            responses.push_back(r);
        }
    }
    double mean = 0.0;
    for (double r : responses) mean += r;
    mean /= static_cast<double>(responses.size());
    double var = 0.0;
    for (double r : responses) var += (r - mean) * (r - mean);
    return var / static_cast<double>(responses.size());
}

}  // namespace

TEST_CASE("laplacian variance: constant image scores zero") {
    GrayImage img = GrayImage::blank(8, 8, 0.4f);
    CHECK(laplacian_variance(img) == 0.0);
}

TEST_CASE("laplacian variance: single bright pixel in a 5x5 black image") {
    GrayImage img = GrayImage::blank(5, 5, 0.0f);
    img.at(2, 2) = 1.0f;
    // valid 3x3 response region: center -4, its four neighbours 1, corners 0
    // mean 0, population variance (16 + 4)/9
    CHECK(laplacian_variance(img) == Catch::Approx(20.0 / 9.0).epsilon(1e-9));
    CHECK(laplacian_variance(img) == Catch::Approx(direct_laplacian_variance(img)).epsilon(1e-12));
}

TEST_CASE("laplacian variance matches the direct 2-loop oracle on random images") {
    Rng rng(4);
    for (int t = 0; t < 10; ++t) {
        GrayImage img = noise_image(6 + rng.next_index(6), 6 + rng.next_index(6), rng);
        CHECK(laplacian_variance(img) == Catch::Approx(direct_laplacian_variance(img)).epsilon(1e-9));
    }
}

TEST_CASE("laplacian variance rejects tiny images") {
    GrayImage img = GrayImage::blank(2, 5, 0.5f);
    CHECK_THROWS_AS(laplacian_variance(img), DomainError);
}

TEST_CASE("gaussian blur strictly lowers the laplacian variance") {
    Rng rng(9);
    for (int t = 0; t < 25; ++t) {
        GrayImage img = noise_image(16, 16, rng);
        const double before = laplacian_variance(img);
        const double after = laplacian_variance(gaussian_blur(img, 1.0 + rng.next_float()));
        CHECK(after < before);
    }
}

TEST_CASE("contrast score: constant, bimodal, permutation invariant") {
    CHECK(contrast_score(GrayImage::blank(4, 4, 0.7f)) == 0.0);

    GrayImage half = GrayImage::blank(4, 4, 0.0f);
    for (size_t i = 0; i < 8; ++i) half.pixels[i] = 1.0f;
    CHECK(contrast_score(half) == Catch::Approx(0.5).epsilon(1e-9));

    Rng rng(2);
    GrayImage img = noise_image(5, 5, rng);
    GrayImage shuffled = img;
    std::vector<size_t> idx(img.pixels.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    for (size_t i = 0; i < idx.size(); ++i) shuffled.pixels[i] = img.pixels[idx[i]];
    CHECK(contrast_score(shuffled) == Catch::Approx(contrast_score(img)).epsilon(1e-12));
}

TEST_CASE("pgm round-trips at 8 and 16 bits") {
    TempDir tmp("vbn_pgm_test");
    Rng rng(5);
    GrayImage img = noise_image(9, 7, rng);
    for (int bits : {8, 16}) {
        const std::string path = (tmp.path / ("img" + std::to_string(bits) + ".pgm")).string();
        write_pgm(img, path, bits);
        GrayImage back = read_pgm(path);
        REQUIRE(back.width == img.width);
        REQUIRE(back.height == img.height);
        const double tol = bits == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
        for (size_t i = 0; i < img.pixels.size(); ++i) {
            CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= tol);
        }
    }
}

TEST_CASE("png gray round-trips through libpng") {
    TempDir tmp("vbn_png_test");
    Rng rng(6);
    GrayImage img = noise_image(12, 10, rng);
    for (int bits : {8, 16}) {
        const std::string path = (tmp.path / ("img" + std::to_string(bits) + ".png")).string();
        write_png_gray(img, path, bits);
        GrayImage back = read_png_gray(path);
        REQUIRE(back.width == img.width);
        REQUIRE(back.height == img.height);
        const double tol = bits == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
        for (size_t i = 0; i < img.pixels.size(); ++i) {
            CHECK(std::abs(back.pixels[i] - img.pixels[i]) <= tol);
        }
    }
    // color input is rejected
    RgbImage rgb;
    rgb.width = rgb.height = 4;
    rgb.rgb.assign(48, 100);
    const std::string color_path = (tmp.path / "color.png").string();
    write_png_rgb(rgb, color_path);
    CHECK_THROWS_AS(read_png_gray(color_path), FormatError);
}

TEST_CASE("augment identity is pixel-identical") {
    Rng rng(7);
    GrayImage img = noise_image(16, 16, rng);
    GrayImage out = augment_image(img, AugmentTransform{});
    for (size_t i = 0; i < img.pixels.size(); ++i) REQUIRE(out.pixels[i] == img.pixels[i]);
}

TEST_CASE("augment full rotation returns to the original within tolerance") {
    Rng rng(8);
    GrayImage img = noise_image(24, 24, rng);
    AugmentTransform t;
    t.rot_deg = 360.0f;
    GrayImage out = augment_image(img, t);
    double mean_abs = 0.0;
    for (size_t i = 0; i < img.pixels.size(); ++i) mean_abs += std::abs(out.pixels[i] - img.pixels[i]);
    mean_abs /= static_cast<double>(img.pixels.size());
    CHECK(mean_abs < 1e-3);
}

TEST_CASE("augment brightness shifts the mean before clamping") {
    GrayImage img = GrayImage::blank(10, 10, 0.5f);
    AugmentTransform t;
    t.brightness = 0.1f;
    GrayImage out = augment_image(img, t);
    double mean = 0.0;
    for (float p : out.pixels) mean += p;
    CHECK(mean / 100.0 == Catch::Approx(0.6).epsilon(1e-6));
}

TEST_CASE("transform descriptors round-trip") {
    Rng rng(11);
    AugmentRanges ranges;
    for (int i = 0; i < 20; ++i) {
        AugmentTransform t = draw_transform(ranges, rng);
        AugmentTransform back = AugmentTransform::from_descriptor(t.descriptor());
        CHECK(back.rot_deg == t.rot_deg);
        CHECK(back.tx_frac == t.tx_frac);
        CHECK(back.ty_frac == t.ty_frac);
        CHECK(back.zoom == t.zoom);
        CHECK(back.brightness == t.brightness);
        CHECK_NOTHROW(check_transform_in_range(t, ranges));
    }
    AugmentTransform wild;
    wild.rot_deg = 45.0f;
    CHECK_THROWS_AS(check_transform_in_range(wild, ranges), ConfigError);
}

TEST_CASE("curation drops blurred and flat images and records reasons") {
    TempDir tmp("vbn_curate_test");
    Rng rng(12);
    // per class: 3 sharp structured originals, 1 heavy blur of the first,
    // 1 constant white. Structure (smooth blobs) keeps contrast through the
    // blur so only sharpness drops.
    for (size_t c = 0; c < kNumClasses; ++c) {
        const fs::path dir = tmp.path / class_name(static_cast<ClassLabel>(c));
        fs::create_directories(dir);
        for (int i = 0; i < 3; ++i) {
            Rng img_rng = rng.child(c * 10 + static_cast<size_t>(i));
            GrayImage img = vbn::detail::synth_background(64, img_rng);
            write_pgm(img, (dir / ("sharp" + std::to_string(i) + ".pgm")).string());
            if (i == 0) {
                write_pgm(gaussian_blur(img, 4.0), (dir / "blurred0.pgm").string());
            }
        }
        write_pgm(GrayImage::blank(64, 64, 1.0f), (dir / "white.pgm").string());
    }
    CurationParams params;
    CurationResult result = curate(tmp.str(), params);
    CHECK(result.accepted.size() == 9);
    CHECK(result.rejected.size() == 6);
    for (size_t c = 0; c < kNumClasses; ++c) CHECK(result.surviving_per_class[c] == 3);
    size_t blur_rejects = 0, contrast_rejects = 0;
    for (const auto& r : result.rejected) {
        if (r.reason == "blur") ++blur_rejects;
        if (r.reason == "low-contrast") ++contrast_rejects;
    }
    CHECK(blur_rejects == 3);
    CHECK(contrast_rejects == 3);

    // all-pass thresholds keep everything
    CurationParams open;
    open.blur_min = 0.0f;
    open.contrast_min = 0.0f;
    open.contrast_max = 1e9f;
    CurationResult everything = curate(tmp.str(), open);
    CHECK(everything.accepted.size() == 15);
    CHECK(everything.rejected.empty());
}

TEST_CASE("curation requires the class layout") {
    TempDir tmp("vbn_curate_empty");
    fs::create_directories(tmp.path / "Normal");
    CHECK_THROWS_AS(curate(tmp.str(), CurationParams{}), DomainError);
}

TEST_CASE("balance pads classes to the target with recorded augments") {
    std::vector<Sample> samples;
    auto add = [&](ClassLabel c, int n) {
        for (int i = 0; i < n; ++i) {
            Sample s;
            s.path = std::string(class_name(c)) + "/img" + std::to_string(i) + ".pgm";
            s.label = c;
            samples.push_back(s);
        }
    };
    add(ClassLabel::Normal, 10);
    add(ClassLabel::Covid, 7);
    add(ClassLabel::Pneumonia, 3);

    Rng rng(13);
    std::vector<Sample> out = balance_classes(samples, 10, AugmentRanges{}, rng);
    std::array<size_t, 3> counts{}, augmented{};
    std::set<std::pair<std::string, std::string>> pairs;
    for (const auto& s : out) {
        ++counts[static_cast<size_t>(s.label)];
        if (s.provenance == Provenance::Augmented) {
            ++augmented[static_cast<size_t>(s.label)];
            CHECK(!s.source.empty());
            CHECK(pairs.emplace(s.source, s.transform.descriptor()).second);  // no duplicate (source, transform)
        }
    }
    CHECK(counts == std::array<size_t, 3>{10, 10, 10});
    CHECK(augmented == std::array<size_t, 3>{0, 3, 7});

    // determinism: same seed, same augmented set
    Rng rng2(13);
    std::vector<Sample> out2 = balance_classes(samples, 10, AugmentRanges{}, rng2);
    REQUIRE(out.size() == out2.size());
    for (size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i].path == out2[i].path);
        if (out[i].provenance == Provenance::Augmented) {
            CHECK(out[i].transform.descriptor() == out2[i].transform.descriptor());
        }
    }

    // target below the current count is a configuration error
    Rng rng3(13);
    CHECK_THROWS_AS(balance_classes(samples, 5, AugmentRanges{}, rng3), ConfigError);
}

TEST_CASE("stratified split: exact floor counts and the two-original case") {
    auto originals = [](size_t per_class) {
        std::vector<Sample> samples;
        for (size_t c = 0; c < kNumClasses; ++c) {
            for (size_t i = 0; i < per_class; ++i) {
                Sample s;
                s.path = std::string(class_name(static_cast<ClassLabel>(c))) + "/img" + std::to_string(i) + ".pgm";
                s.label = static_cast<ClassLabel>(c);
                samples.push_back(s);
            }
        }
        return samples;
    };
    {
        std::vector<Sample> samples = originals(25);
        Rng rng(14);
        split_train_test(samples, 0.8f, rng);
        std::array<size_t, 3> train_counts{};
        for (const auto& s : samples) {
            if (s.split == Split::Train) ++train_counts[static_cast<size_t>(s.label)];
        }
        CHECK(train_counts == std::array<size_t, 3>{20, 20, 20});
    }
    {
        std::vector<Sample> samples = originals(2);
        Rng rng(15);
        split_train_test(samples, 0.5f, rng);
        for (size_t c = 0; c < kNumClasses; ++c) {
            size_t train = 0, test = 0;
            for (const auto& s : samples) {
                if (s.label != static_cast<ClassLabel>(c)) continue;
                (s.split == Split::Train ? train : test) += 1;
            }
            CHECK(train == 1);
            CHECK(test == 1);
        }
    }
    {
        std::vector<Sample> samples = originals(1);
        Rng rng(16);
        CHECK_THROWS_AS(split_train_test(samples, 0.5f, rng), DomainError);
        CHECK_THROWS_AS(split_train_test(samples, 1.5f, rng), ConfigError);
    }
}

TEST_CASE("split keeps augments with their source") {
    std::vector<Sample> samples;
    Rng aug_rng(17);
    for (size_t c = 0; c < kNumClasses; ++c) {
        for (size_t i = 0; i < 6; ++i) {
            Sample s;
            s.path = std::string(class_name(static_cast<ClassLabel>(c))) + "/img" + std::to_string(i) + ".pgm";
            s.label = static_cast<ClassLabel>(c);
            samples.push_back(s);
        }
    }
    samples = balance_classes(samples, 10, AugmentRanges{}, aug_rng);
    Rng rng(18);
    split_train_test(samples, 0.7f, rng);
    std::map<std::string, Split> source_split;
    for (const auto& s : samples) {
        if (s.provenance == Provenance::Original) source_split[s.path] = s.split;
    }
    for (const auto& s : samples) {
        if (s.provenance == Provenance::Augmented) {
            REQUIRE(source_split.count(s.source) == 1);
            CHECK(source_split[s.source] == s.split);  // leakage guard
        }
    }
}

TEST_CASE("synthetic corpus: layout, ground truth, determinism") {
    TempDir tmp("vbn_synth_test");
    Rng rng(19);
    SyntheticCorpus corpus = generate_synthetic(tmp.str(), 5, rng, 64);
    CHECK(corpus.boxes.size() == 15);
    for (size_t c = 0; c < kNumClasses; ++c) {
        size_t n = 0;
        for (const auto& e : fs::directory_iterator(tmp.path / class_name(static_cast<ClassLabel>(c)))) {
            (void)e;
            ++n;
        }
        CHECK(n == 5);
    }
    const auto boxes = read_patch_boxes((tmp.path / "patches.txt").string());
    CHECK(boxes.size() == 15);
    for (const auto& [rel, box] : boxes) {
        CHECK(box.w == 28);
        CHECK(box.x + box.w <= 64);
        CHECK(box.y + box.h <= 64);
        // the image passes the default curation thresholds
        GrayImage img = read_gray_image((tmp.path / rel).string());
        CHECK(laplacian_variance(img) > CurationParams{}.blur_min);
        CHECK(contrast_score(img) > CurationParams{}.contrast_min);
        CHECK(contrast_score(img) < CurationParams{}.contrast_max);
    }

    TempDir tmp2("vbn_synth_test2");
    Rng rng2(19);
    generate_synthetic(tmp2.str(), 5, rng2, 64);
    for (const auto& [rel, box] : boxes) {
        const std::string a = read_text_file((tmp.path / rel).string());
        const std::string b = read_text_file((tmp2.path / rel).string());
        REQUIRE(a == b);  // same seed, byte-identical corpus
    }
    CHECK_THROWS_AS(generate_synthetic(tmp.str(), 3, rng, 64), DomainError);
}

TEST_CASE("curation pipeline: exact per-class split sizes and manifest round-trip") {
    TempDir tmp("vbn_pipeline_test");
    Rng gen(20);
    generate_synthetic(tmp.str(), 10, gen, 64);

    CurationParams params;
    params.target_per_class = 10;
    params.split_ratio = 0.8f;
    params.seed = 33;
    Rng rng(params.seed);
    DatasetManifest manifest = curate_pipeline(tmp.str(), params, rng);

    CHECK(manifest.samples.size() == 30);
    for (size_t c = 0; c < kNumClasses; ++c) {
        size_t train = 0, test = 0;
        for (const auto& s : manifest.samples) {
            if (s.label != static_cast<ClassLabel>(c)) continue;
            (s.split == Split::Train ? train : test) += 1;
        }
        CHECK(train == 8);
        CHECK(test == 2);
    }

    const std::string path = (tmp.path / "manifest.txt").string();
    write_manifest(manifest, path);
    DatasetManifest loaded = load_manifest(path);
    CHECK(manifest_to_string(loaded) == manifest_to_string(manifest));

    // pipeline determinism: same seed gives a byte-identical manifest
    Rng rng2(params.seed);
    DatasetManifest manifest2 = curate_pipeline(tmp.str(), params, rng2);
    CHECK(manifest_to_string(manifest2) == manifest_to_string(manifest));
}

TEST_CASE("pipeline balances with augments when curation rejects images") {
    TempDir tmp("vbn_pipeline_blur");
    Rng gen(21);
    generate_synthetic(tmp.str(), 10, gen, 64);
    // blur two Normal images so curation drops them
    for (int i = 0; i < 2; ++i) {
        const fs::path p = tmp.path / "Normal" / ("Normal_000" + std::to_string(i) + ".pgm");
        write_pgm(gaussian_blur(read_pgm(p.string()), 5.0), p.string());
    }
    CurationParams params;
    params.target_per_class = 10;
    params.split_ratio = 0.8f;
    Rng rng(44);
    DatasetManifest manifest = curate_pipeline(tmp.str(), params, rng);
    size_t augmented = 0, normal_total = 0;
    for (const auto& s : manifest.samples) {
        if (s.label == ClassLabel::Normal) {
            ++normal_total;
            if (s.provenance == Provenance::Augmented) ++augmented;
        }
    }
    CHECK(normal_total == 10);
    CHECK(augmented == 2);
}

TEST_CASE("load_batch decodes deterministically to the target shape") {
    TempDir tmp("vbn_load_test");
    Rng gen(22);
    generate_synthetic(tmp.str(), 4, gen, 64);
    CurationParams params;
    params.target_per_class = 4;
    Rng rng(1);
    DatasetManifest manifest = curate_pipeline(tmp.str(), params, rng);

    LoaderOptions opts;
    opts.height = 32;
    opts.width = 32;
    auto [x, y] = load_batch(manifest, {0, 1, 5}, opts);
    REQUIRE(x.shape() == std::vector<size_t>{3, 1, 32, 32});
    REQUIRE(y.size() == 3);

    auto [x2, y2] = load_batch(manifest, {0, 1, 5}, opts);
    CHECK(oracle::max_abs_diff(x, x2) == 0.0);

    // all-black source decodes to an all-zero slice
    const fs::path black = tmp.path / "Normal" / "black.pgm";
    write_pgm(GrayImage::blank(64, 64, 0.0f), black.string());
    DatasetManifest tiny;
    tiny.root = tmp.str();
    Sample s;
    s.path = "Normal/black.pgm";
    s.label = ClassLabel::Normal;
    tiny.samples.push_back(s);
    auto [xb, yb] = load_batch(tiny, {0}, opts);
    CHECK(sum_all(xb) == 0.0);

    // unreadable file names the path
    Sample missing;
    missing.path = "Normal/nope.pgm";
    tiny.samples.push_back(missing);
    try {
        load_batch(tiny, {1}, opts);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("nope.pgm") != std::string::npos);
    }
}

TEST_CASE("manifest parser rejects malformed input") {
    CHECK_THROWS_AS(parse_manifest("root\tx\nbad line here\n"), FormatError);
    CHECK_THROWS_AS(parse_manifest("samples\t5\n"), FormatError);  // declared count mismatch
    CHECK_THROWS_AS(parse_manifest("a\tNormal\ttrain\t0\t0\tweird\t-\t-\n"), FormatError);
}
