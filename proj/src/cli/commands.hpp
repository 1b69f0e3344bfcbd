#ifndef MASKFILL_CLI_COMMANDS_HPP
#define MASKFILL_CLI_COMMANDS_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maskfill/cli.hpp"
#include "maskfill/image.hpp"

namespace maskfill::cli {

namespace fs = std::filesystem;

struct SynthOptions {
    fs::path out;
    int subjects = 4;
    int per_subject = 2;
    std::uint64_t seed = 0;
    int without_landmarks = 0;
};

struct PreprocessOptions {
    fs::path images, landmarks, out, export_dir;
    bool mirror = false;
};

struct TrainOptions {
    fs::path samples, config, run_dir, resume, identity_extractor, perceptual_extractor;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> regime;
    std::optional<int> epochs, batch_size, width_divisor, snapshot_every;
    std::optional<std::int64_t> max_iterations;
    std::optional<double> generator_lr, discriminator_lr, real_label;
    bool use_l2_pixel = false, disable_adv = false, disable_id = false, disable_pc = false;
    bool detach_between_blocks = false, no_shuffle = false, verbose = false;
};

struct HallucinateOptions {
    fs::path checkpoint, out, masks, grid;
    std::vector<fs::path> inputs;
};

struct EvaluateOptions {
    fs::path real, synth, extractor, out;
    std::vector<double> fprs{0.001, 0.01, 0.1};
};

struct ReplaceBgOptions {
    fs::path image, background, seg, contour, out, mask_out;
    bool auto_contour = false;
    int levels = 4;
    double feather = 1.0;
};

struct PlotOptions {
    fs::path run_dir, out;
};

int cmd_synth(const SynthOptions& o);
int cmd_preprocess(const PreprocessOptions& o);
int cmd_train(const TrainOptions& o);
int cmd_hallucinate(const HallucinateOptions& o);
int cmd_evaluate(const EvaluateOptions& o);
int cmd_replace_bg(const ReplaceBgOptions& o);
int cmd_plot(const PlotOptions& o);

/// Output root from MASKFILL_RUN_DIR joined with `leaf`; throws UsageError
/// when the variable is unset.
fs::path default_output(const std::string& leaf, const std::string& flag);

/// Sorted .png/.jpg/.jpeg files of a directory.
std::vector<fs::path> list_images(const fs::path& dir);

/// Line chart rendered with OpenCV. Each series is (x, y) pairs.
struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
};
Image line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label, int width = 900,
                 int height = 540);

/// Adds a caption strip of `strip` pixels above an RGB image.
Image caption(const Image& image, const std::string& text, int strip = 18);

}  // namespace maskfill::cli

#endif  // MASKFILL_CLI_COMMANDS_HPP
