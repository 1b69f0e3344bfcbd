#include "unit.hpp"

#include <array>
#include <cstdio>
#include <sstream>

#include <sys/wait.h>

#include "helpers.hpp"
#include "maskfill/cli.hpp"
#include "maskfill/training.hpp"

using namespace maskfill;
namespace fs = std::filesystem;

namespace {

struct Invocation {
    int code = -1;
    std::string output;  ///< stdout and stderr
};

// Runs the installed binary so stdout can be inspected.
Invocation invoke(const std::string& args, const std::string& env = {}) {
    const std::string cmd = env + (env.empty() ? "" : " ") + MASKFILL_BIN + std::string(" ") + args + " 2>&1";
    Invocation r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), p) != nullptr) r.output += buf.data();
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

int count_files(const fs::path& dir, const std::string& ext) {
    int n = 0;
    if (!fs::is_directory(dir)) return 0;
    for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
    return n;
}

// synth -> preprocess into <root>/samples.maskfill with aligned/masked exports.
void prepare(const testing::TempDir& root, int subjects, int per_subject, bool mirror = false) {
    REQUIRE(cli::run({"synth", "--out", (root / "raw").string(), "--subjects", std::to_string(subjects), "--per-subject",
                      std::to_string(per_subject), "--seed", "3"}) == 0);
    std::vector<std::string> args{"preprocess", "--images", (root / "raw" / "images").string(), "--landmarks",
                                  (root / "raw" / "landmarks").string(), "--out", (root / "samples.maskfill").string(),
                                  "--export", (root / "export").string()};
    if (mirror) args.emplace_back("--mirror");
    REQUIRE(cli::run(args) == 0);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes") {
    testing::TempDir dir;
    CHECK(cli::run({"--help"}) == 0);
    CHECK(cli::run({}) == 2);
    CHECK(cli::run({"no-such-command"}) == 2);
    CHECK(cli::run({"preprocess", "--images", (dir / "nope").string(), "--landmarks", dir.path().string()}) == 2);
    CHECK(cli::run({"plot", "--run-dir", dir.path().string()}) == 1);
    CHECK(cli::run({"train", "--samples", (dir / "missing.maskfill").string(), "--seed", "1"}) == 2);
    CHECK(invoke("replace-bg --image x.png").code == 2);
    CHECK(invoke("--help").code == 0);
}

TEST_CASE("preprocess counts and idempotence") {
    testing::TempDir root;
    prepare(root, 2, 2);
    CHECK(data::pyramids_from_archive(Archive::load(root / "samples.maskfill")).size() == 4);
    CHECK(count_files(root / "export" / "masked", ".png") == 4);
    const auto first = testing::slurp(root / "samples.maskfill");
    REQUIRE(cli::run({"preprocess", "--images", (root / "raw" / "images").string(), "--landmarks",
                      (root / "raw" / "landmarks").string(), "--out", (root / "again.maskfill").string()}) == 0);
    CHECK(testing::slurp(root / "again.maskfill") == first);

    REQUIRE(cli::run({"preprocess", "--images", (root / "raw" / "images").string(), "--landmarks",
                      (root / "raw" / "landmarks").string(), "--out", (root / "mirrored.maskfill").string(), "--mirror"}) == 0);
    CHECK(data::pyramids_from_archive(Archive::load(root / "mirrored.maskfill")).size() == 8);

    // Without --out the sample archive lands under MASKFILL_RUN_DIR.
    const auto r = invoke("preprocess --images " + q(root / "raw" / "images") + " --landmarks " + q(root / "raw" / "landmarks"),
                          "MASKFILL_RUN_DIR=" + q(root / "env"));
    CHECK(r.code == 0);
    CHECK(testing::slurp(root / "env" / "samples.maskfill") == first);
    CHECK(invoke("preprocess --images " + q(root / "raw" / "images") + " --landmarks " + q(root / "raw" / "landmarks"),
                 "MASKFILL_RUN_DIR=").code == 2);
}

TEST_CASE("train echoes the resolved configuration") {
    testing::TempDir root;
    prepare(root, 1, 2);
    const auto r = invoke("train --samples " + q(root / "samples.maskfill") + " --seed 4 --width-divisor 16 --batch-size 2" +
                          " --epochs 1 --run-dir " + q(root / "run"));
    REQUIRE(r.code == 0);
    const auto echoed = nlohmann::json::parse(r.output.substr(r.output.find('{'), r.output.find('}') - r.output.find('{') + 1));
    CHECK(echoed.at("lambda_perceptual") == 1.0);
    CHECK(echoed.at("lambda_adversarial") == 0.1);
    CHECK(echoed.at("lambda_identity") == 10.0);
    CHECK(echoed.at("lambda_tv") == 1e-6);
    CHECK(echoed.at("generator_lr") == 1e-4);
    CHECK(echoed.at("discriminator_lr") == 2e-4);
    CHECK(echoed.at("seed") == 4);
    CHECK(fs::exists(root / "run" / "final.ckpt"));
    CHECK(fs::exists(root / "run" / "config.json"));

    CHECK(invoke("train --samples " + q(root / "samples.maskfill") + " --width-divisor 16 --run-dir " + q(root / "r2")).code == 2);
    CHECK(invoke("train --samples " + q(root / "samples.maskfill") + " --seed 1 --width-divisor 3 --run-dir " + q(root / "r3")).code == 2);

    const auto off = invoke("train --samples " + q(root / "samples.maskfill") + " --seed 4 --width-divisor 16 --batch-size 2" +
                            " --epochs 1 --disable-pc --disable-adv --run-dir " + q(root / "off"));
    REQUIRE(off.code == 0);
    for (const auto& row : train::read_metrics(root / "off" / "metrics.csv")) {
        CHECK(row.perceptual == 0.0);
        CHECK(row.adversarial == 0.0);
    }
}

TEST_CASE("progressive training writes one checkpoint per stage") {
    testing::TempDir root;
    prepare(root, 1, 2);
    REQUIRE(cli::run({"train", "--samples", (root / "samples.maskfill").string(), "--seed", "2", "--regime", "progressive",
                      "--width-divisor", "16", "--batch-size", "2", "--epochs", "1", "--run-dir", (root / "run").string()}) == 0);
    CHECK(count_files(root / "run" / "stages", ".ckpt") == 5);
    for (int r : data::kResolutions) CHECK(fs::exists(root / "run" / "stages" / ("stage_" + std::to_string(r) + ".ckpt")));
}

TEST_CASE("hallucinate, evaluate and plot") {
    testing::TempDir root;
    prepare(root, 2, 3);
    REQUIRE(cli::run({"train", "--samples", (root / "samples.maskfill").string(), "--seed", "8", "--width-divisor", "16",
                      "--batch-size", "3", "--epochs", "5", "--snapshot-every", "1", "--run-dir", (root / "run").string()}) == 0);
    CHECK(count_files(root / "run" / "snapshots", ".ckpt") == 5);

    SUBCASE("hallucinate") {
        const auto masked = root / "export" / "masked";
        std::vector<fs::path> inputs;
        for (const auto& e : fs::directory_iterator(masked)) inputs.push_back(e.path());
        std::sort(inputs.begin(), inputs.end());
        inputs.resize(3);
        std::vector<std::string> args{"hallucinate", "--checkpoint", (root / "run" / "final.ckpt").string(), "--out",
                                      (root / "out").string(), "--masks", (root / "export" / "masks").string(), "--grid",
                                      (root / "grid.png").string()};
        for (const auto& p : inputs) args.push_back(p.string());
        REQUIRE(cli::run(args) == 0);
        CHECK(count_files(root / "out", ".png") == 3);
        for (const auto& p : inputs) {
            const auto in = read_image(p), mask = read_gray(root / "export" / "masks" / p.filename());
            const auto out = read_image(root / "out" / p.filename());
            REQUIRE(out.height == 128);
            REQUIRE(out.width == 128);
            bool kept = true;
            for (int y = 0; y < 128; ++y)
                for (int x = 0; x < 128; ++x)
                    if (mask.at(y, x) >= 0.5f)
                        for (int c = 0; c < 3; ++c) kept = kept && out.at(y, x, c) == in.at(y, x, c);
            CHECK(kept);
        }
        const auto grid = read_image(root / "grid.png");
        CHECK(grid.width == 3 * 128);
        CHECK(grid.height == 2 * 128);

        // Masks derived from the non-zero hull give the same result as the exported masks.
        REQUIRE(cli::run({"hallucinate", "--checkpoint", (root / "run" / "final.ckpt").string(), "--out",
                          (root / "derived").string(), inputs[0].string()}) == 0);
        CHECK(read_image(root / "derived" / inputs[0].filename()) == read_image(root / "out" / inputs[0].filename()));
    }

    SUBCASE("evaluate") {
        const auto aligned = root / "export" / "aligned";
        REQUIRE(cli::run({"evaluate", "--real", aligned.string(), "--synth", aligned.string(), "--out",
                          (root / "eval").string()}) == 0);
        for (const char* f : {"report.csv", "scores_original.csv", "scores_ours.csv", "roc_original.csv", "roc_ours.csv",
                              "embeddings_real.maskfill", "embeddings_synth.maskfill"}) {
            CAPTURE(f);
            CHECK(fs::exists(root / "eval" / f));
        }
        std::istringstream report(testing::slurp(root / "eval" / "report.csv"));
        std::string line;
        std::getline(report, line);
        CHECK(line == "metric,original,ours");
        int tpr_rows = 0;
        while (std::getline(report, line)) {
            if (!line.starts_with("TPR@FPR=")) continue;
            ++tpr_rows;
            const auto a = line.find(','), b = line.rfind(',');
            // Identical directories: the cross-set scores are the within-set scores, each pair twice.
            CHECK(line.substr(a + 1, b - a - 1) == line.substr(b + 1));
        }
        CHECK(tpr_rows == 3);

        const auto one = root / "one";
        fs::create_directories(one);
        fs::copy_file(aligned / "s000_00.png", one / "s000_00.png");
        fs::copy_file(aligned / "s000_01.png", one / "s000_01.png");
        const auto r = invoke("evaluate --real " + q(one) + " --synth " + q(one) + " --out " + q(root / "eval1"));
        CHECK(r.code == 0);
        CHECK(r.output.find("no impostor pairs") != std::string::npos);

        const auto empty = root / "empty";
        fs::create_directories(empty);
        CHECK(cli::run({"evaluate", "--real", empty.string(), "--synth", empty.string(), "--out", (root / "e2").string()}) == 1);
    }

    SUBCASE("plot") {
        REQUIRE(cli::run({"plot", "--run-dir", (root / "run").string(), "--out", (root / "plots").string()}) == 0);
        const auto loss = read_image(root / "plots" / "loss.png");
        CHECK(loss.width > 0);
        const auto grid = read_image(root / "plots" / "snapshots.png");
        CHECK(grid.width == 5 * 128);
        CHECK(grid.height > 4 * 128);
        REQUIRE(cli::run({"plot", "--run-dir", (root / "run").string(), "--out", (root / "plots2").string()}) == 0);
        CHECK(testing::slurp(root / "plots" / "snapshots.png") == testing::slurp(root / "plots2" / "snapshots.png"));
        CHECK(testing::slurp(root / "plots" / "loss.png") == testing::slurp(root / "plots2" / "loss.png"));
    }
}

TEST_CASE("replace-bg") {
    testing::TempDir root;
    Image fg(64, 48, 3, 0.8f), bg(128, 96, 3, 0.2f), seg(64, 48, 1);
    for (int y = 10; y < 54; ++y)
        for (int x = 12; x < 36; ++x) seg.at(y, x) = 1.0f;
    write_image(root / "fg.png", fg);
    write_image(root / "bg.png", bg);
    write_image(root / "seg.png", seg);
    REQUIRE(cli::run({"replace-bg", "--image", (root / "fg.png").string(), "--background", (root / "bg.png").string(), "--seg",
                      (root / "seg.png").string(), "--auto-contour", "--levels", "2", "--out", (root / "out.png").string(), "--mask-out",
                      (root / "mask.png").string()}) == 0);
    const auto out = read_image(root / "out.png");
    CHECK(out.height == 64);
    CHECK(out.width == 48);
    CHECK(std::abs(out.at(32, 24, 0) - 0.8f) < 0.01f);
    CHECK(std::abs(out.at(1, 1, 0) - 0.2f) < 0.01f);
    CHECK(fs::exists(root / "mask.png"));
    CHECK(cli::run({"replace-bg", "--image", (root / "fg.png").string(), "--background", (root / "bg.png").string(), "--seg",
                    (root / "bg.png").string(), "--out", (root / "x.png").string()}) != 0);
}

}
