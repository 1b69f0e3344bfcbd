#ifndef MASKFILL_LOSSES_HPP
#define MASKFILL_LOSSES_HPP

#include <optional>

#include <torch/torch.h>

#include "maskfill/extractors.hpp"

namespace maskfill::loss {

/// Weights of the non-pixel terms. Each may be zeroed for ablation.
struct LossWeights {
    double perceptual = 1.0;
    double adversarial = 0.1;
    double identity = 10.0;
    double total_variation = 1e-6;

    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

enum class PixelNorm { l1, l2 };

/// Keeps the masked-input pixels wherever mask == 1 and the generated pixels
/// elsewhere. mask is [N,1,H,W] (or broadcastable) with values in {0,1}.
torch::Tensor mask_compose(const torch::Tensor& generated, const torch::Tensor& masked_input, const torch::Tensor& mask);

/// Mean absolute (or squared, for the l2 ablation) difference over N*C*H*W.
torch::Tensor pixel_loss(const torch::Tensor& ground_truth, const torch::Tensor& generated, PixelNorm norm = PixelNorm::l1);

/// Batch mean of metric(gen_n, gt_n); std::nullopt when the images are below
/// the metric's minimum resolution (the term is absent from the total).
std::optional<torch::Tensor> perceptual_loss(const torch::Tensor& generated, const torch::Tensor& ground_truth,
                                             const PerceptualMetric& metric);

/// Least-squares generator objective: mean (score - 1)^2.
torch::Tensor adversarial_loss_g(const torch::Tensor& fake_scores);

/// Discriminator objective on the real mini-batch: mean (score - real_label)^2.
torch::Tensor discriminator_real_loss(const torch::Tensor& real_scores, double real_label = 0.9);
/// Discriminator objective on the synthesized mini-batch: mean score^2.
torch::Tensor discriminator_fake_loss(const torch::Tensor& fake_scores);
/// Sum of the two mini-batch objectives.
torch::Tensor discriminator_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores, double real_label = 0.9);

/// (1 / (N * #F)) * sum of squared feature differences.
torch::Tensor identity_loss(const torch::Tensor& generated, const torch::Tensor& ground_truth, const FeatureExtractor& extractor);

/// Sum of squared forward differences (horizontal + vertical) over valid
/// indices and channels; averaged over the batch for 4-D input.
torch::Tensor tv_loss(const torch::Tensor& generated);

struct LossTerms {
    torch::Tensor pixel;
    std::optional<torch::Tensor> perceptual;
    torch::Tensor adversarial;
    torch::Tensor identity;
    torch::Tensor total_variation;
};

/// L_pixel + w_pc * L_pc + w_adv * L_adv + w_id * L_id + w_tv * L_tv.
/// An absent perceptual term contributes nothing.
torch::Tensor total_loss(const LossTerms& terms, const LossWeights& weights);

}  // namespace maskfill::loss

#endif  // MASKFILL_LOSSES_HPP
