#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "data.hpp"
#include "eval.hpp"
#include "explain.hpp"
#include "model.hpp"
#include "train.hpp"

namespace vbn::cli {

// exit codes, also listed in the README
enum ExitCode : int {
    kOk = 0,
    kUnexpected = 1,
    kUsage = 2,
    kMissingFile = 3,
    kFormat = 4,
    kShape = 5,
    kConfig = 6,
    kDomain = 7,
    kIo = 8,
};

namespace detail {

inline int fail(int code, const char* kind, const std::string& msg) {
    std::cerr << "error: code=" << code << " kind=" << kind << " msg=\"" << msg << "\"\n";
    return code;
}

inline void require_exists(const std::string& path) {
    if (!std::filesystem::exists(path)) throw IoError("missing input: " + path);
}

// every run logs its fully resolved settings next to its outputs
inline void write_resolved(const std::string& out_dir, const std::string& command,
                           const std::map<std::string, std::string>& kv) {
    std::string text = "command = " + command + "\n";
    for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
    write_text_file((std::filesystem::path(out_dir) / "resolved_config.cfg").string(), text);
}

inline std::string sanitize_stem(const std::string& rel) {
    std::string out;
    for (char c : rel) {
        out += (c == '/' || c == '\\' || c == '#') ? '_' : c;
    }
    const auto dot = out.rfind('.');
    if (dot != std::string::npos) out = out.substr(0, dot);
    return out;
}

}  // namespace detail

inline int run(std::vector<std::string> args) {
    CLI::App app{"lung x-ray classification pipeline: synthesize, curate, train, evaluate, explain"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate the synthetic desk-scale corpus");
    std::string synth_out;
    size_t synth_per_class = 20, synth_size = 64;
    uint64_t synth_seed = 42;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--per-class", synth_per_class, "images per class (default 20)");
    synth->add_option("--size", synth_size, "square image size (default 64)");
    synth->add_option("--seed", synth_seed, "rng seed (default 42)");

    // ---- curate ----
    auto* curate_cmd = app.add_subcommand("curate", "score, filter, balance, and split a raw corpus");
    std::string curate_data, curate_out;
    CurationParams cp;
    bool curate_seed_given = false;
    uint64_t curate_seed = 42;
    curate_cmd->add_option("--data", curate_data, "raw corpus root with Normal/Covid/Pneumonia subdirectories")->required();
    curate_cmd->add_option("--out", curate_out, "output directory")->required();
    curate_cmd->add_option("--blur-min", cp.blur_min, "minimum laplacian variance (default 0.0015)");
    curate_cmd->add_option("--contrast-min", cp.contrast_min, "minimum intensity stddev (default 0.04)");
    curate_cmd->add_option("--contrast-max", cp.contrast_max, "maximum intensity stddev (default 0.45)");
    curate_cmd->add_option("--target-per-class", cp.target_per_class,
                           "samples per class after balancing (default: largest surviving class)");
    curate_cmd->add_option("--split-ratio", cp.split_ratio, "train fraction (default 0.8)");
    curate_cmd->add_option("--seed", curate_seed, "rng seed (default 42)")->each([&](const std::string&) {
        curate_seed_given = true;
    });

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train a model over a curated manifest");
    std::string train_manifest, train_out, train_config, train_preset = "reference";
    size_t train_epochs_n = 25, train_batch = 32;
    double train_lr = 0.001;
    uint64_t train_seed = 0;
    bool train_seed_given = false;
    float train_crop = 1.0f;
    train_cmd->add_option("--manifest", train_manifest, "curated manifest file")->required();
    train_cmd->add_option("--out", train_out, "output directory")->required();
    train_cmd->add_option("--config", train_config, "model config file (overrides --preset)");
    train_cmd->add_option("--preset", train_preset, "built-in config: reference | desk (default reference)");
    train_cmd->add_option("--epochs", train_epochs_n, "training epochs (default 25)");
    train_cmd->add_option("--batch-size", train_batch, "batch size (default 32)");
    train_cmd->add_option("--lr", train_lr, "initial learning rate (default 0.001)");
    train_cmd->add_option("--seed", train_seed, "seed override (default: the model config seed)")
        ->each([&](const std::string&) { train_seed_given = true; });
    train_cmd->add_option("--crop-center", train_crop, "center-crop fraction before resizing (default 1.0)");

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint over a manifest split");
    std::string eval_manifest, eval_ckpt, eval_out, eval_split = "test";
    size_t eval_limit = 0, eval_size = 0, eval_batch = 32;
    float eval_crop = 1.0f;
    eval_cmd->add_option("--manifest", eval_manifest, "curated manifest file")->required();
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--out", eval_out, "output directory")->required();
    eval_cmd->add_option("--split", eval_split, "train | test (default test)");
    eval_cmd->add_option("--limit", eval_limit, "evaluate only the first N samples of the split (default all)");
    eval_cmd->add_option("--size", eval_size, "loader resolution override (default: the model input size)");
    eval_cmd->add_option("--batch-size", eval_batch, "inference batch size (default 32)");
    eval_cmd->add_option("--crop-center", eval_crop, "center-crop fraction before resizing (default 1.0)");

    // ---- explain ----
    auto* explain_cmd = app.add_subcommand("explain", "write gradcam overlays for one image or a manifest subset");
    std::string ex_ckpt, ex_out, ex_image, ex_manifest, ex_split = "test";
    long long ex_layer = -1, ex_class = -1;
    size_t ex_limit = 8;
    float ex_alpha = 0.5f, ex_crop = 1.0f;
    bool ex_raw = false;
    explain_cmd->add_option("--ckpt", ex_ckpt, "checkpoint file")->required();
    explain_cmd->add_option("--out", ex_out, "output directory")->required();
    explain_cmd->add_option("--image", ex_image, "single grayscale image (.png or .pgm)");
    explain_cmd->add_option("--manifest", ex_manifest, "curated manifest file");
    explain_cmd->add_option("--split", ex_split, "manifest split to draw from (default test)");
    explain_cmd->add_option("--limit", ex_limit, "number of manifest images (default 8)");
    explain_cmd->add_option("--layer", ex_layer, "target conv layer index in the model (default: last conv)");
    explain_cmd->add_option("--class", ex_class, "target class index 0..2 (default: the predicted class)");
    explain_cmd->add_option("--alpha", ex_alpha, "overlay blend strength (default 0.5)");
    explain_cmd->add_flag("--raw", ex_raw, "also write the raw heatmap grid next to each overlay");
    explain_cmd->add_option("--crop-center", ex_crop, "center-crop fraction before resizing (default 1.0)");

    try {
        std::reverse(args.begin(), args.end());  // CLI11 consumes reversed argv-style vectors
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        return detail::fail(kUsage, "usage", e.what());
    }

    try {
        namespace fs = std::filesystem;
        if (*synth) {
            fs::create_directories(synth_out);
            Rng rng(synth_seed);
            SyntheticCorpus corpus = generate_synthetic(synth_out, synth_per_class, rng, synth_size);
            detail::write_resolved(synth_out, "synth",
                                   {{"out", synth_out},
                                    {"per_class", std::to_string(synth_per_class)},
                                    {"size", std::to_string(synth_size)},
                                    {"seed", std::to_string(synth_seed)}});
            std::cout << "synthetic corpus: " << corpus.boxes.size() << " images under " << synth_out << "\n";
        } else if (*curate_cmd) {
            detail::require_exists(curate_data);
            fs::create_directories(curate_out);
            cp.seed = curate_seed_given ? curate_seed : cp.seed;
            Rng rng(cp.seed);
            std::vector<Rejection> rejected;
            DatasetManifest manifest = curate_pipeline(curate_data, cp, rng, &rejected);
            write_manifest(manifest, (fs::path(curate_out) / "manifest.txt").string());
            write_text_file((fs::path(curate_out) / "rejections.txt").string(), rejections_to_string(rejected));
            detail::write_resolved(curate_out, "curate",
                                   {{"data", curate_data},
                                    {"blur_min", fmt_float(cp.blur_min)},
                                    {"contrast_min", fmt_float(cp.contrast_min)},
                                    {"contrast_max", fmt_float(cp.contrast_max)},
                                    {"target_per_class", std::to_string(manifest.params.target_per_class)},
                                    {"split_ratio", fmt_float(cp.split_ratio)},
                                    {"seed", std::to_string(cp.seed)}});
            const auto counts = manifest.class_counts();
            std::cout << "curated manifest: " << manifest.samples.size() << " samples ("
                      << rejected.size() << " rejected)\n";
            for (size_t c = 0; c < kNumClasses; ++c) {
                std::cout << "  " << class_name(static_cast<ClassLabel>(c)) << ": " << counts[c] << "\n";
            }
        } else if (*train_cmd) {
            detail::require_exists(train_manifest);
            fs::create_directories(train_out);
            ModelConfig config;
            if (!train_config.empty()) {
                detail::require_exists(train_config);
                config = load_config(train_config);
            } else if (train_preset == "reference") {
                config = reference_config();
            } else if (train_preset == "desk") {
                config = desk_config();
            } else {
                throw ConfigError("unknown preset '" + train_preset + "' (expected reference or desk)");
            }
            if (train_seed_given) config.seed = train_seed;

            DatasetManifest manifest = load_manifest(train_manifest);
            LoaderOptions loader;
            loader.height = config.input_h;
            loader.width = config.input_w;
            loader.crop_center = train_crop;

            const std::vector<size_t> train_idx = manifest.split_indices(Split::Train);
            const std::vector<size_t> val_idx = manifest.split_indices(Split::Test);
            auto source_for = [&](const std::vector<size_t>& pool) {
                return DataSource{pool.size(), [&manifest, &loader, pool](const std::vector<size_t>& want) {
                                      std::vector<size_t> real;
                                      real.reserve(want.size());
                                      for (size_t w : want) real.push_back(pool[w]);
                                      return load_batch(manifest, real, loader);
                                  }};
            };

            Rng build_rng(config.seed);
            Model model = build_model(config, build_rng);
            TrainOptions opts;
            opts.epochs = train_epochs_n;
            opts.batch_size = train_batch;
            opts.schedule.initial = train_lr;
            Rng train_rng(config.seed ^ 0x7261696e);  // independent stream for shuffling and dropout
            TrainResult result = train_epochs(
                model, source_for(train_idx), source_for(val_idx), opts, train_rng,
                [](const EpochRecord& r) {
                    std::cerr << "epoch " << r.epoch << ": train_loss=" << r.train_loss
                              << " train_acc=" << r.train_acc << " val_loss=" << r.val_loss
                              << " val_acc=" << r.val_acc << " lr=" << r.lr << "\n";
                });

            save_checkpoint(result.last, (fs::path(train_out) / "checkpoint_last.vbn").string());
            save_checkpoint(result.best, (fs::path(train_out) / "checkpoint_best.vbn").string());
            write_text_file((fs::path(train_out) / "report.txt").string(), report_table(result.history));
            write_text_file((fs::path(train_out) / "report.tsv").string(), report_tsv(result.history));
            detail::write_resolved(train_out, "train",
                                   {{"manifest", train_manifest},
                                    {"config", train_config.empty() ? "preset:" + train_preset : train_config},
                                    {"epochs", std::to_string(train_epochs_n)},
                                    {"batch_size", std::to_string(train_batch)},
                                    {"lr", fmt_double(train_lr)},
                                    {"seed", std::to_string(config.seed)},
                                    {"crop_center", fmt_float(train_crop)}});
            std::cout << report_table(result.history);
            std::cout << "best epoch " << result.best_epoch << " (val_acc="
                      << result.history[result.best_epoch].val_acc << ")\n";
        } else if (*eval_cmd) {
            detail::require_exists(eval_manifest);
            detail::require_exists(eval_ckpt);
            fs::create_directories(eval_out);
            DatasetManifest manifest = load_manifest(eval_manifest);
            Checkpoint ckpt = load_checkpoint(eval_ckpt);
            Model model = model_from_checkpoint(ckpt);
            LoaderOptions loader;
            loader.height = eval_size ? eval_size : model.config.input_h;
            loader.width = eval_size ? eval_size : model.config.input_w;
            loader.crop_center = eval_crop;
            EvalResult r = evaluate(model, manifest, parse_split(eval_split), loader, eval_batch, eval_limit);
            write_text_file((fs::path(eval_out) / "metrics.txt").string(), metrics_table(r.cm, r.metrics));
            write_text_file((fs::path(eval_out) / "metrics.tsv").string(), metrics_tsv(r.cm, r.metrics));
            detail::write_resolved(eval_out, "eval",
                                   {{"manifest", eval_manifest},
                                    {"ckpt", eval_ckpt},
                                    {"split", eval_split},
                                    {"limit", std::to_string(eval_limit)},
                                    {"size", std::to_string(loader.height)},
                                    {"crop_center", fmt_float(eval_crop)}});
            std::cout << metrics_table(r.cm, r.metrics);
        } else if (*explain_cmd) {
            detail::require_exists(ex_ckpt);
            fs::create_directories(ex_out);
            Checkpoint ckpt = load_checkpoint(ex_ckpt);
            Model model = model_from_checkpoint(ckpt);
            const auto convs = conv_layer_indices(model);
            const size_t layer = ex_layer < 0 ? convs.back() : static_cast<size_t>(ex_layer);

            LoaderOptions loader;
            loader.height = model.config.input_h;
            loader.width = model.config.input_w;
            loader.crop_center = ex_crop;

            struct Job {
                std::string name;
                GrayImage image;
            };
            std::vector<Job> jobs;
            if (!ex_image.empty()) {
                detail::require_exists(ex_image);
                GrayImage raw = read_gray_image(ex_image);
                if (loader.crop_center < 1.0f) raw = center_crop(raw, loader.crop_center);
                jobs.push_back({fs::path(ex_image).filename().string(), resize_bilinear(raw, loader.width, loader.height)});
            } else if (!ex_manifest.empty()) {
                detail::require_exists(ex_manifest);
                DatasetManifest manifest = load_manifest(ex_manifest);
                std::vector<size_t> idx = manifest.split_indices(parse_split(ex_split));
                if (ex_limit > 0 && idx.size() > ex_limit) idx.resize(ex_limit);
                for (size_t i : idx) {
                    jobs.push_back({manifest.samples[i].path, load_sample_image(manifest, manifest.samples[i], loader)});
                }
            } else {
                throw ConfigError("explain needs --image or --manifest");
            }

            for (const auto& job : jobs) {
                Tensor input({1, 1, loader.height, loader.width},
                             std::vector<float>(job.image.pixels.begin(), job.image.pixels.end()));
                int target = static_cast<int>(ex_class);
                if (target < 0) {
                    Tensor probs = model_forward(model, input, Mode::Infer);
                    target = static_cast<int>(argmax_row(probs, 0));
                }
                Heatmap hm = gradcam(model, input, target, layer);
                if (hm.degenerate) {
                    std::cerr << "warning: degenerate (constant) heatmap for " << job.name << "\n";
                }
                const std::string stem = detail::sanitize_stem(job.name);
                write_png_rgb(overlay(job.image, hm, ex_alpha),
                              (fs::path(ex_out) / (stem + "_cam.png")).string());
                if (ex_raw) {
                    write_text_file((fs::path(ex_out) / (stem + "_cam.txt")).string(), heatmap_to_text(hm));
                }
                std::cout << job.name << " -> " << stem << "_cam.png (class " << target << ", layer " << layer
                          << ")\n";
            }
            detail::write_resolved(ex_out, "explain",
                                   {{"ckpt", ex_ckpt},
                                    {"image", ex_image},
                                    {"manifest", ex_manifest},
                                    {"split", ex_split},
                                    {"limit", std::to_string(ex_limit)},
                                    {"layer", std::to_string(layer)},
                                    {"class", std::to_string(ex_class)},
                                    {"alpha", fmt_float(ex_alpha)},
                                    {"raw", ex_raw ? "true" : "false"},
                                    {"crop_center", fmt_float(ex_crop)}});
        }
        return kOk;
    } catch (const FormatError& e) {
        return detail::fail(kFormat, "format", e.what());
    } catch (const ShapeError& e) {
        return detail::fail(kShape, "shape", e.what());
    } catch (const ConfigError& e) {
        return detail::fail(kConfig, "config", e.what());
    } catch (const DomainError& e) {
        return detail::fail(kDomain, "domain", e.what());
    } catch (const IoError& e) {
        const std::string msg = e.what();
        if (msg.rfind("missing input:", 0) == 0) return detail::fail(kMissingFile, "missing-file", msg);
        return detail::fail(kIo, "io", msg);
    } catch (const std::exception& e) {
        return detail::fail(kUnexpected, "unexpected", e.what());
    }
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(std::move(args));
}

}  // namespace vbn::cli
