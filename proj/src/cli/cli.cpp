#include <cstdlib>
#include <iostream>

#include "commands.hpp"

namespace maskfill::cli {

fs::path default_output(const std::string& leaf, const std::string& flag) {
    const char* root = std::getenv("MASKFILL_RUN_DIR");
    if (root == nullptr || *root == '\0') throw UsageError(flag + " is required when MASKFILL_RUN_DIR is not set");
    return fs::path(root) / leaf;
}

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

void add_synth(CLI::App& app, SynthOptions& o) {
    auto* c = app.add_subcommand("synth", "Write a procedural face fixture (images + landmark files)");
    c->add_option("--out", o.out, "Output directory (images/ and landmarks/ are created)")->required();
    c->add_option("--subjects", o.subjects, "Number of distinct subjects")->check(CLI::Range(1, 100000));
    c->add_option("--per-subject", o.per_subject, "Images per subject")->check(CLI::Range(1, 1000));
    c->add_option("--seed", o.seed, "Fixture seed");
    c->add_option("--without-landmarks", o.without_landmarks, "Extra images written without a landmark file")
        ->check(CLI::NonNegativeNumber);
}

void add_preprocess(CLI::App& app, PreprocessOptions& o) {
    auto* c = app.add_subcommand("preprocess", "Align, mask and build pyramids for a directory of images");
    c->add_option("--images", o.images, "Image directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--landmarks", o.landmarks, "Landmark directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--out", o.out, "Sample archive to write");
    c->add_option("--export", o.export_dir, "Also write aligned/, masked/ and masks/ PNGs here");
    c->add_flag("--mirror", o.mirror, "Add a mirrored copy of every sample");
}

void add_train(CLI::App& app, TrainOptions& o) {
    auto* c = app.add_subcommand("train", "Train the cascaded or progressive model");
    c->add_option("--samples", o.samples, "Sample archive from preprocess")->required()->check(CLI::ExistingFile);
    c->add_option("--config", o.config, "JSON config file; flags override its values")->check(CLI::ExistingFile);
    c->add_option("--run-dir", o.run_dir, "Run directory (default: $MASKFILL_RUN_DIR/train-<config hash>)");
    c->add_option("--seed", o.seed, "Random seed (required unless the config sets one)");
    c->add_option("--regime", o.regime, "cascaded or progressive")->check(CLI::IsMember({"cascaded", "progressive"}));
    c->add_option("--epochs", o.epochs, "Epochs (per stage for progressive)");
    c->add_option("--batch-size", o.batch_size, "Mini-batch size");
    c->add_option("--max-iterations", o.max_iterations, "Iteration cap (per stage); 0 = none");
    c->add_option("--width-divisor", o.width_divisor, "Divide every channel count by this power of two");
    c->add_option("--snapshot-every", o.snapshot_every, "Snapshot interval in epochs; 0 disables");
    c->add_option("--generator-lr", o.generator_lr, "Generator/upscaler learning rate");
    c->add_option("--discriminator-lr", o.discriminator_lr, "Discriminator learning rate");
    c->add_option("--real-label", o.real_label, "Smoothed label of the real mini-batch");
    c->add_flag("--use-l2-pixel", o.use_l2_pixel, "Replace the l1 pixel loss with l2");
    c->add_flag("--disable-adv", o.disable_adv, "Drop the adversarial term (and the discriminators)");
    c->add_flag("--disable-id", o.disable_id, "Drop the identity term");
    c->add_flag("--disable-pc", o.disable_pc, "Drop the perceptual term");
    c->add_flag("--detach-between-blocks", o.detach_between_blocks, "Stop gradients between cascade levels");
    c->add_flag("--no-shuffle", o.no_shuffle, "Keep the dataset order fixed");
    c->add_option("--resume", o.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
    c->add_option("--identity-extractor", o.identity_extractor, "Feature-extractor archive for the identity loss")
        ->check(CLI::ExistingFile);
    c->add_option("--perceptual-extractor", o.perceptual_extractor, "Feature-extractor archive for the perceptual metric")
        ->check(CLI::ExistingFile);
    c->add_flag("--verbose", o.verbose, "Per-epoch progress on stderr");
}

void add_hallucinate(CLI::App& app, HallucinateOptions& o) {
    auto* c = app.add_subcommand("hallucinate", "Fill in context and background for masked faces");
    c->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
    c->add_option("--out", o.out, "Output directory (default: $MASKFILL_RUN_DIR/hallucinations)");
    c->add_option("--masks", o.masks, "Directory of <stem>.png masks; otherwise the hull of non-zero pixels")
        ->check(CLI::ExistingDirectory);
    c->add_option("--grid", o.grid, "Write an input/output comparison sheet to this file");
    c->add_option("inputs", o.inputs, "Masked 128x128 images or directories of them")->required()->check(CLI::ExistingPath);
}

void add_evaluate(CLI::App& app, EvaluateOptions& o) {
    auto* c = app.add_subcommand("evaluate", "Verification report of original vs synthesized faces");
    c->add_option("--real", o.real, "Directory of original aligned faces")->required()->check(CLI::ExistingDirectory);
    c->add_option("--synth", o.synth, "Directory of synthesized faces (same file names)")->required()->check(CLI::ExistingDirectory);
    c->add_option("--extractor", o.extractor, "Embedding extractor archive (default: built-in conv stack)")
        ->check(CLI::ExistingFile);
    c->add_option("--out", o.out, "Report directory (default: $MASKFILL_RUN_DIR/evaluation)");
    c->add_option("--fpr", o.fprs, "FPR operating points")->delimiter(',');
}

void add_replace_bg(CLI::App& app, ReplaceBgOptions& o) {
    auto* c = app.add_subcommand("replace-bg", "Blend a new background behind the person");
    c->add_option("--image", o.image, "Foreground image")->required()->check(CLI::ExistingFile);
    c->add_option("--background", o.background, "Background image")->required()->check(CLI::ExistingFile);
    c->add_option("--seg", o.seg, "Person segmentation mask (8-bit grayscale)")->required()->check(CLI::ExistingFile);
    auto* contour = c->add_option("--contour", o.contour, "Salient contour interior mask")->check(CLI::ExistingFile);
    c->add_flag("--auto-contour", o.auto_contour, "Compute the contour interior from image gradients")->excludes(contour);
    c->add_option("--levels", o.levels, "Laplacian pyramid depth")->check(CLI::Range(1, 16));
    c->add_option("--feather", o.feather, "Gaussian sigma for mask feathering (0 = none)")->check(CLI::NonNegativeNumber);
    c->add_option("--out", o.out, "Output image")->required();
    c->add_option("--mask-out", o.mask_out, "Also write the foreground mask");
}

void add_plot(CLI::App& app, PlotOptions& o) {
    auto* c = app.add_subcommand("plot", "Loss curves and snapshot grid of a run directory");
    c->add_option("--run-dir", o.run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--out", o.out, "Output directory (default: the run directory)");
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"maskfill: face context and background hallucination", "maskfill"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "maskfill 1.0");

    SynthOptions synth;
    PreprocessOptions pre;
    TrainOptions tr;
    HallucinateOptions hal;
    EvaluateOptions ev;
    ReplaceBgOptions rb;
    PlotOptions pl;
    add_synth(app, synth);
    add_preprocess(app, pre);
    add_train(app, tr);
    add_hallucinate(app, hal);
    add_evaluate(app, ev);
    add_replace_bg(app, rb);
    add_plot(app, pl);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, std::cout, std::cerr);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "synth") return cmd_synth(synth);
        if (name == "preprocess") return cmd_preprocess(pre);
        if (name == "train") return cmd_train(tr);
        if (name == "hallucinate") return cmd_hallucinate(hal);
        if (name == "evaluate") return cmd_evaluate(ev);
        if (name == "replace-bg") return cmd_replace_bg(rb);
        if (name == "plot") return cmd_plot(pl);
        std::cerr << "error: unknown command " << name << '\n';
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"maskfill"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace maskfill::cli
