#ifndef MASKFILL_EXTRACTORS_HPP
#define MASKFILL_EXTRACTORS_HPP

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "maskfill/archive.hpp"

namespace maskfill {

/// Frozen image -> #F feature map (identity features, recognition embeddings).
/// Input is NCHW in [0,1] of any square size; implementations resize to
/// their native input size.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    [[nodiscard]] virtual int input_size() const = 0;
    [[nodiscard]] virtual int feature_dim() const = 0;
    [[nodiscard]] virtual torch::Tensor forward(const torch::Tensor& images) const = 0;
};

/// Frozen pairwise image dissimilarity; returns one value per batch item.
class PerceptualMetric {
public:
    virtual ~PerceptualMetric() = default;
    [[nodiscard]] virtual int min_resolution() const = 0;
    [[nodiscard]] virtual torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) const = 0;
};

struct ConvStackConfig {
    int input_size = 64;                  ///< native side length; inputs are bilinearly resized to it
    std::vector<int> channels{16, 32, 64, 64};  ///< one stride-2 3x3 conv per entry
    int feature_dim = 256;                ///< width of the fixed output projection
    bool normalize = true;                ///< L2-normalize the output vector
};

/// Stack of stride-2 convolutions with leaky ReLU followed by a fixed linear
/// projection. All weights are frozen. The desk-scale stand-in for the
/// pretrained recognition networks.
class ConvFeatureStack final : public FeatureExtractor {
public:
    ConvFeatureStack(ConvStackConfig config, std::uint64_t seed);

    [[nodiscard]] int input_size() const override { return config_.input_size; }
    [[nodiscard]] int feature_dim() const override { return config_.feature_dim; }
    [[nodiscard]] torch::Tensor forward(const torch::Tensor& images) const override;

    /// Per-layer activations at the image's own resolution (no resize).
    [[nodiscard]] std::vector<torch::Tensor> activations(const torch::Tensor& images) const;

    [[nodiscard]] const ConvStackConfig& config() const { return config_; }
    /// Converts all weights (e.g. to kFloat64 for gradient checks).
    void to(torch::Dtype dtype);

    [[nodiscard]] Archive to_archive() const;
    static std::unique_ptr<ConvFeatureStack> from_archive(const Archive& archive);

private:
    ConvFeatureStack() = default;
    ConvStackConfig config_;
    std::vector<torch::Tensor> weights_, biases_;
    torch::Tensor projection_;
};

/// LPIPS-style metric on a frozen conv stack: channel-normalized activations
/// per layer, squared difference, spatial mean, averaged over layers and
/// scaled to [0,1]. Symmetric and zero on identical inputs by construction.
class ConvPerceptualMetric final : public PerceptualMetric {
public:
    explicit ConvPerceptualMetric(std::shared_ptr<ConvFeatureStack> stack, int min_resolution = 32);
    [[nodiscard]] int min_resolution() const override { return min_resolution_; }
    [[nodiscard]] torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) const override;
    [[nodiscard]] ConvFeatureStack& stack() { return *stack_; }

private:
    std::shared_ptr<ConvFeatureStack> stack_;
    int min_resolution_;
};

/// Default desk-scale stand-ins, fixed seeds so that every run shares them.
std::shared_ptr<ConvFeatureStack> default_identity_extractor();
std::shared_ptr<ConvPerceptualMetric> default_perceptual_metric();
std::shared_ptr<ConvFeatureStack> default_embedding_extractor();

/// Loads a ConvFeatureStack weight archive (the extractor plug-in format).
std::shared_ptr<ConvFeatureStack> load_feature_extractor(const std::filesystem::path& path);

}  // namespace maskfill

#endif  // MASKFILL_EXTRACTORS_HPP
