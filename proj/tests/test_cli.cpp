#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <sstream>

#include "vbn/cli.hpp"

using namespace vbn;
namespace fs = std::filesystem;

namespace {

// in-process invocation with stdout/stderr swallowed
int run_cli(std::vector<std::string> args) {
    std::ostringstream sink_out, sink_err;
    auto* old_out = std::cout.rdbuf(sink_out.rdbuf());
    auto* old_err = std::cerr.rdbuf(sink_err.rdbuf());
    const int code = cli::run(std::move(args));
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    return code;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string sub(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("cli help and usage errors") {
    CHECK(run_cli({"--help"}) == cli::kOk);
    CHECK(run_cli({"synth", "--frobnicate"}) == cli::kUsage);
    CHECK(run_cli({"no-such-command"}) == cli::kUsage);
    CHECK(run_cli({}) == cli::kUsage);
}

TEST_CASE("cli missing files and malformed inputs get distinct codes") {
    TempDir tmp("vbn_cli_err");
    CHECK(run_cli({"curate", "--data", tmp.sub("nope"), "--out", tmp.sub("out")}) == cli::kMissingFile);
    CHECK(run_cli({"train", "--manifest", tmp.sub("nope.txt"), "--out", tmp.sub("out")}) == cli::kMissingFile);

    write_text_file(tmp.sub("garbage.txt"), "not\ta\tmanifest at all\n");
    CHECK(run_cli({"eval", "--manifest", tmp.sub("garbage.txt"), "--ckpt", tmp.sub("garbage.txt"), "--out",
                   tmp.sub("out")}) == cli::kFormat);
}

TEST_CASE("cli end-to-end pipeline on a tiny synthetic corpus") {
    TempDir tmp("vbn_cli_e2e");
    REQUIRE(run_cli({"synth", "--out", tmp.sub("corpus"), "--per-class", "8", "--seed", "5"}) == cli::kOk);
    REQUIRE(fs::exists(tmp.sub("corpus") + "/patches.txt"));
    REQUIRE(fs::exists(tmp.sub("corpus") + "/resolved_config.cfg"));

    REQUIRE(run_cli({"curate", "--data", tmp.sub("corpus"), "--out", tmp.sub("curated"), "--target-per-class", "8",
                     "--seed", "5"}) == cli::kOk);
    REQUIRE(fs::exists(tmp.sub("curated") + "/manifest.txt"));
    REQUIRE(fs::exists(tmp.sub("curated") + "/rejections.txt"));

    REQUIRE(run_cli({"train", "--manifest", tmp.sub("curated") + "/manifest.txt", "--out", tmp.sub("run"),
                     "--preset", "desk", "--epochs", "2", "--batch-size", "8", "--seed", "5"}) == cli::kOk);
    REQUIRE(fs::exists(tmp.sub("run") + "/checkpoint_last.vbn"));
    REQUIRE(fs::exists(tmp.sub("run") + "/checkpoint_best.vbn"));
    REQUIRE(fs::exists(tmp.sub("run") + "/report.tsv"));

    REQUIRE(run_cli({"eval", "--manifest", tmp.sub("curated") + "/manifest.txt", "--ckpt",
                     tmp.sub("run") + "/checkpoint_best.vbn", "--out", tmp.sub("eval")}) == cli::kOk);
    REQUIRE(fs::exists(tmp.sub("eval") + "/metrics.txt"));
    REQUIRE(fs::exists(tmp.sub("eval") + "/metrics.tsv"));

    REQUIRE(run_cli({"explain", "--ckpt", tmp.sub("run") + "/checkpoint_best.vbn", "--manifest",
                     tmp.sub("curated") + "/manifest.txt", "--out", tmp.sub("cams"), "--limit", "2", "--raw"}) ==
            cli::kOk);
    size_t pngs = 0, txts = 0;
    for (const auto& e : fs::directory_iterator(tmp.sub("cams"))) {
        const std::string name = e.path().filename().string();
        if (name.size() > 8 && name.substr(name.size() - 8) == "_cam.png") ++pngs;
        if (name.size() > 8 && name.substr(name.size() - 8) == "_cam.txt") ++txts;
    }
    CHECK(pngs == 2);
    CHECK(txts == 2);

    // checkpoint resolution mismatch against the loader surfaces as a shape exit
    CHECK(run_cli({"eval", "--manifest", tmp.sub("curated") + "/manifest.txt", "--ckpt",
                   tmp.sub("run") + "/checkpoint_best.vbn", "--out", tmp.sub("eval_bad"), "--size", "32"}) ==
          cli::kShape);

    // single-image explain
    std::string one_image;
    for (const auto& e : fs::directory_iterator(fs::path(tmp.sub("corpus")) / "Covid")) {
        one_image = e.path().string();
        break;
    }
    REQUIRE(run_cli({"explain", "--ckpt", tmp.sub("run") + "/checkpoint_best.vbn", "--image", one_image, "--out",
                     tmp.sub("cam_one"), "--class", "1"}) == cli::kOk);
}

TEST_CASE("cli reruns with the same seed are byte-identical") {
    TempDir tmp("vbn_cli_repro");
    REQUIRE(run_cli({"synth", "--out", tmp.sub("corpus"), "--per-class", "6", "--seed", "9"}) == cli::kOk);

    // identical curate runs produce byte-identical manifests
    for (const std::string tag : {"a", "b"}) {
        REQUIRE(run_cli({"curate", "--data", tmp.sub("corpus"), "--out", tmp.sub("curated_" + tag),
                         "--target-per-class", "6", "--seed", "9"}) == cli::kOk);
    }
    CHECK(read_text_file(tmp.sub("curated_a") + "/manifest.txt") ==
          read_text_file(tmp.sub("curated_b") + "/manifest.txt"));

    // identical train/eval runs over the same manifest are byte-identical too
    const std::string manifest = tmp.sub("curated_a") + "/manifest.txt";
    for (const std::string tag : {"a", "b"}) {
        REQUIRE(run_cli({"train", "--manifest", manifest, "--out", tmp.sub("run_" + tag), "--preset", "desk",
                         "--epochs", "2", "--batch-size", "6", "--seed", "9"}) == cli::kOk);
        REQUIRE(run_cli({"eval", "--manifest", manifest, "--ckpt", tmp.sub("run_" + tag) + "/checkpoint_last.vbn",
                         "--out", tmp.sub("eval_" + tag)}) == cli::kOk);
    }
    CHECK(read_text_file(tmp.sub("run_a") + "/checkpoint_last.vbn") ==
          read_text_file(tmp.sub("run_b") + "/checkpoint_last.vbn"));
    CHECK(read_text_file(tmp.sub("run_a") + "/report.tsv") == read_text_file(tmp.sub("run_b") + "/report.tsv"));
    CHECK(read_text_file(tmp.sub("eval_a") + "/metrics.tsv") == read_text_file(tmp.sub("eval_b") + "/metrics.tsv"));
    CHECK(read_text_file(tmp.sub("run_a") + "/resolved_config.cfg") ==
          read_text_file(tmp.sub("run_b") + "/resolved_config.cfg"));
}
