#include <fstream>
#include <iostream>

#include "commands.hpp"
#include "maskfill/datapipe.hpp"
#include "maskfill/training.hpp"

namespace maskfill::cli {

namespace {

train::TrainConfig resolve_config(const TrainOptions& o) {
    train::TrainConfig cfg;
    try {
        if (!o.config.empty()) {
            std::ifstream f(o.config);
            cfg = train::TrainConfig::from_json(nlohmann::json::parse(f));
        }
        if (o.seed) cfg.seed = *o.seed;
        if (o.regime) cfg.regime = train::regime_from_string(*o.regime);
        if (o.epochs) cfg.epochs = *o.epochs;
        if (o.batch_size) cfg.batch_size = *o.batch_size;
        if (o.max_iterations) cfg.max_iterations = *o.max_iterations;
        if (o.width_divisor) cfg.width_divisor = *o.width_divisor;
        if (o.snapshot_every) cfg.snapshot_every = *o.snapshot_every;
        if (o.generator_lr) cfg.generator_lr = *o.generator_lr;
        if (o.discriminator_lr) cfg.discriminator_lr = *o.discriminator_lr;
        if (o.real_label) cfg.real_label = *o.real_label;
        if (o.use_l2_pixel) cfg.pixel_norm = loss::PixelNorm::l2;
        if (o.disable_adv) cfg.weights.adversarial = 0.0;
        if (o.disable_id) cfg.weights.identity = 0.0;
        if (o.disable_pc) cfg.weights.perceptual = 0.0;
        if (o.detach_between_blocks) cfg.detach_between_blocks = true;
        if (o.no_shuffle) cfg.shuffle = false;
        cfg.validate();
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("invalid config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("invalid config: ") + e.what());
    }
    return cfg;
}

Image derived_mask(const Image& masked) {
    std::vector<data::Point> pts;
    for (int y = 0; y < masked.height; ++y)
        for (int x = 0; x < masked.width; ++x)
            for (int c = 0; c < masked.channels; ++c)
                if (masked.at(y, x, c) > 0.0f) {
                    pts.push_back({static_cast<double>(x), static_cast<double>(y)});
                    break;
                }
    if (pts.size() < 3) throw std::runtime_error("input has no visible face pixels to derive a mask from");
    return data::rasterize_hull(pts, masked.height, masked.width);
}

}  // namespace

int cmd_train(const TrainOptions& o) {
    const auto cfg = resolve_config(o);
    const fs::path run_dir = o.run_dir.empty() ? default_output("train-" + cfg.hash(), "--run-dir") : o.run_dir;

    std::cout << cfg.to_json().dump(2) << '\n';
    const auto pyramids = data::pyramids_from_archive(Archive::load(o.samples));
    std::cerr << "training " << train::to_string(cfg.regime) << " on " << pyramids.size() << " samples in " << run_dir.string()
              << '\n';

    auto extractors = train::Extractors::defaults();
    if (!o.identity_extractor.empty()) extractors.identity = load_feature_extractor(o.identity_extractor);
    if (!o.perceptual_extractor.empty()) {
        extractors.perceptual = std::make_shared<ConvPerceptualMetric>(load_feature_extractor(o.perceptual_extractor));
    }

    train::RunDirLock lock(run_dir);
    train::RunOptions ro;
    ro.run_dir = run_dir;
    ro.verbose = o.verbose;
    if (!o.resume.empty()) ro.resume = o.resume;
    const auto result = train::train(pyramids, cfg, extractors, ro);

    std::cout << "final checkpoint: " << (run_dir / "final.ckpt").string() << '\n';
    for (const auto& s : result.stages) {
        std::cout << "stage " << s.resolution << ": " << s.parameters << " parameters, " << s.transferred.size()
                  << " tensors transferred -> " << s.checkpoint.string() << '\n';
    }
    std::cout << "snapshots: " << result.snapshots.size() << ", iterations: " << result.final_checkpoint.iteration << ", "
              << result.seconds << " s\n";
    return kExitOk;
}

int cmd_hallucinate(const HallucinateOptions& o) {
    const fs::path out_dir = o.out.empty() ? default_output("hallucinations", "--out") : o.out;
    std::vector<fs::path> inputs;
    for (const auto& p : o.inputs) {
        if (fs::is_directory(p)) {
            for (auto& f : list_images(p)) inputs.push_back(f);
        } else {
            inputs.push_back(p);
        }
    }
    if (inputs.empty()) throw UsageError("no input images");

    const train::Hallucinator model(train::load_checkpoint(o.checkpoint));
    fs::create_directories(out_dir);
    std::vector<Image> top, bottom;
    for (const auto& path : inputs) {
        const Image masked = read_image(path);
        if (masked.height != data::kFrameSize || masked.width != data::kFrameSize) {
            throw std::runtime_error(path.string() + " is " + std::to_string(masked.width) + "x" + std::to_string(masked.height) +
                                     "; inputs must be 128x128 aligned faces");
        }
        Image mask;
        if (!o.masks.empty()) {
            mask = read_gray(o.masks / (path.stem().string() + ".png"));
            for (auto& v : mask.pixels) v = v >= 0.5f ? 1.0f : 0.0f;
        } else {
            mask = derived_mask(masked);
        }
        const Image result = model.run(masked, mask);
        write_image(out_dir / (path.stem().string() + ".png"), result);
        if (!o.grid.empty()) {
            top.push_back(masked);
            bottom.push_back(result);
        }
    }
    if (!o.grid.empty()) {
        if (o.grid.has_parent_path()) fs::create_directories(o.grid.parent_path());
        write_image(o.grid, vconcat({hconcat(top), hconcat(bottom)}));
    }
    std::cout << "wrote " << inputs.size() << " images to " << out_dir.string() << '\n';
    return kExitOk;
}

}  // namespace maskfill::cli
