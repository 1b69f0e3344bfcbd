#ifndef MASKFILL_TRAINING_HPP
#define MASKFILL_TRAINING_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "maskfill/datapipe.hpp"
#include "maskfill/extractors.hpp"
#include "maskfill/losses.hpp"
#include "maskfill/netblocks.hpp"

namespace maskfill::train {

enum class Regime { cascaded, progressive };

std::string to_string(Regime regime);
Regime regime_from_string(const std::string& name);

struct TrainConfig {
    Regime regime = Regime::cascaded;
    double generator_lr = 1e-4;
    double discriminator_lr = 2e-4;
    int batch_size = 10;
    int epochs = 50;               ///< per stage in the progressive regime
    std::int64_t max_iterations = 0;  ///< per stage; 0 = no cap
    loss::LossWeights weights;
    loss::PixelNorm pixel_norm = loss::PixelNorm::l1;
    double real_label = 0.9;
    std::optional<std::uint64_t> seed;  ///< mandatory; validate() rejects a missing seed
    int snapshot_every = 10;       ///< epochs; 0 disables snapshots
    int width_divisor = 1;
    bool detach_between_blocks = false;
    bool shuffle = true;

    /// Throws std::invalid_argument on any out-of-range field.
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static TrainConfig from_json(const nlohmann::json& j);
    /// crc32 of the canonical JSON form, as 8 hex digits.
    [[nodiscard]] std::string hash() const;
};

/// Five generator blocks, four upscalers and five discriminators. Submodule
/// names are generator_<R>, upscaler_<R> (R -> 2R) and discriminator_<R>.
class CascadeImpl : public torch::nn::Module {
public:
    CascadeImpl(int width_divisor, std::uint64_t seed);
    std::array<nets::GeneratorBlock, 5> generators{nullptr, nullptr, nullptr, nullptr, nullptr};
    std::array<nets::Upscaler2x, 4> upscalers{nullptr, nullptr, nullptr, nullptr};
    std::array<nets::Discriminator, 5> discriminators{nullptr, nullptr, nullptr, nullptr, nullptr};

    /// Runs block_8 -> up -> ... -> block_128 on per-level masked inputs and
    /// masks (index 0 = 8x8). Returns the mask-composed output of every block.
    std::vector<torch::Tensor> forward(const std::vector<torch::Tensor>& masked, const std::vector<torch::Tensor>& masks,
                                       bool detach_between_blocks = false);
};
TORCH_MODULE(Cascade);

/// One stage of the progressive regime: a single generator/discriminator pair.
class StageImpl : public torch::nn::Module {
public:
    StageImpl(int resolution, int width_divisor, std::uint64_t seed);
    int resolution;
    nets::GeneratorBlock generator{nullptr};
    nets::Discriminator discriminator{nullptr};
};
TORCH_MODULE(Stage);

/// Serialized training state: weights (parameters and buffers), Adam state
/// and run metadata.
struct Checkpoint {
    static constexpr int kFormatVersion = 1;

    Regime regime = Regime::cascaded;
    int epoch = 0;             ///< completed epochs (of the current stage)
    int stage = 0;             ///< resolution of the active progressive stage; 0 for cascaded
    std::int64_t iteration = 0;
    int width_divisor = 1;
    std::string config_hash;
    nlohmann::json config;
    std::map<std::string, torch::Tensor> weights;
    std::map<std::string, torch::Tensor> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws ArchiveError on corrupt files or format-version mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Flattened parameters and buffers of a module (detached clones).
std::map<std::string, torch::Tensor> state_of(const torch::nn::Module& module);
/// Copies every entry of `state` into `module`. All names and shapes are
/// checked before anything is written; a mismatch throws and leaves the
/// module untouched.
void load_state(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& state);
/// Names of `source` that have a same-named, same-shaped tensor in `target`.
std::vector<std::string> matching_names(const std::map<std::string, torch::Tensor>& source, const torch::nn::Module& target);
/// Copies every matching entry of `source` into `target`; returns the names copied.
std::vector<std::string> transfer_matching(const std::map<std::string, torch::Tensor>& source, torch::nn::Module& target);

/// Pluggable frozen networks used by the loss.
struct Extractors {
    std::shared_ptr<FeatureExtractor> identity;
    std::shared_ptr<PerceptualMetric> perceptual;
    static Extractors defaults();
};

struct MetricRow {
    std::int64_t iteration = 0;
    int epoch = 0;
    int stage = 0;
    int resolution = 0;
    double pixel = 0.0;
    double perceptual = 0.0;
    bool perceptual_applied = false;
    double adversarial = 0.0;
    double identity = 0.0;
    double total_variation = 0.0;
    double total = 0.0;
    double d_real = 0.0;
    double d_fake = 0.0;
};

/// metrics.csv header (one row per iteration and block).
std::string metrics_header();
std::string format_metrics(const MetricRow& row);
std::vector<MetricRow> read_metrics(const std::filesystem::path& path);

struct StageReport {
    int resolution = 0;
    std::int64_t parameters = 0;  ///< generator + discriminator
    std::vector<std::string> transferred;
    std::vector<std::string> matchable;  ///< previous-stage names with a same-shape counterpart
    std::filesystem::path checkpoint;
};

struct TrainResult {
    Checkpoint final_checkpoint;
    std::vector<MetricRow> metrics;
    std::vector<std::filesystem::path> snapshots;
    std::vector<StageReport> stages;  ///< progressive only
    double seconds = 0.0;
};

struct RunOptions {
    std::filesystem::path run_dir;  ///< empty: keep everything in memory
    std::optional<std::filesystem::path> resume;
    bool verbose = false;
};

/// Thrown when a loss becomes non-finite; a checkpoint has been dumped.
struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

TrainResult train_cascaded(const std::vector<data::ImagePyramid>& dataset, const TrainConfig& config,
                           const Extractors& extractors, const RunOptions& options = {});
TrainResult train_progressive(const std::vector<data::ImagePyramid>& dataset, const TrainConfig& config,
                              const Extractors& extractors, const RunOptions& options = {});
TrainResult train(const std::vector<data::ImagePyramid>& dataset, const TrainConfig& config, const Extractors& extractors,
                  const RunOptions& options = {});

/// Inference model restored from a checkpoint. Cascaded checkpoints run the
/// whole chain; progressive ones run block_128 alone.
class Hallucinator {
public:
    explicit Hallucinator(const Checkpoint& checkpoint);
    /// masked: 128x128x3, mask: 128x128x1. Face pixels (mask >= 0.5) of the
    /// result are copied from `masked`.
    [[nodiscard]] Image run(const Image& masked, const Image& mask) const;
    [[nodiscard]] Regime regime() const { return regime_; }
    /// Resolutions of the generator blocks used at inference.
    [[nodiscard]] std::vector<int> blocks_used() const;

private:
    Regime regime_;
    mutable Cascade cascade_{nullptr};
    mutable nets::GeneratorBlock block128_{nullptr};
};

/// Untrained checkpoint (He-initialized weights) for the given regime.
Checkpoint initial_checkpoint(Regime regime, int width_divisor, std::uint64_t seed);

/// Holds an exclusive advisory lock on <dir>/run.lock for the object's lifetime.
class RunDirLock {
public:
    explicit RunDirLock(const std::filesystem::path& dir);
    ~RunDirLock();
    RunDirLock(const RunDirLock&) = delete;
    RunDirLock& operator=(const RunDirLock&) = delete;

private:
    int fd_ = -1;
};

}  // namespace maskfill::train

#endif  // MASKFILL_TRAINING_HPP
