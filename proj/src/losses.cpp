#include "maskfill/losses.hpp"

#include <stdexcept>

namespace maskfill::loss {

void LossWeights::validate() const {
    for (double w : {perceptual, adversarial, identity, total_variation}) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("loss weights must be finite and nonnegative");
    }
}

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) + " vs " +
                                    c10::str(b.sizes()));
    }
}

}  // namespace

torch::Tensor mask_compose(const torch::Tensor& generated, const torch::Tensor& masked_input, const torch::Tensor& mask) {
    require_same_shape(generated, masked_input, "mask_compose");
    if (mask.dim() != generated.dim() || mask.size(0) != generated.size(0) || mask.size(-1) != generated.size(-1) ||
        mask.size(-2) != generated.size(-2) || (mask.size(1) != 1 && mask.size(1) != generated.size(1))) {
        throw std::invalid_argument("mask_compose: mask shape " + c10::str(mask.sizes()) + " does not fit " +
                                    c10::str(generated.sizes()));
    }
    // where() copies masked pixels bit-exactly and routes no gradient to them.
    return torch::where(mask > 0.5, masked_input, generated);
}

torch::Tensor pixel_loss(const torch::Tensor& ground_truth, const torch::Tensor& generated, PixelNorm norm) {
    require_same_shape(ground_truth, generated, "pixel_loss");
    const auto diff = ground_truth - generated;
    return norm == PixelNorm::l1 ? diff.abs().mean() : diff.pow(2).mean();
}

std::optional<torch::Tensor> perceptual_loss(const torch::Tensor& generated, const torch::Tensor& ground_truth,
                                             const PerceptualMetric& metric) {
    require_same_shape(generated, ground_truth, "perceptual_loss");
    if (generated.size(-1) < metric.min_resolution() || generated.size(-2) < metric.min_resolution()) return std::nullopt;
    return metric.distance(generated, ground_truth).mean();
}

torch::Tensor adversarial_loss_g(const torch::Tensor& fake_scores) { return (fake_scores - 1.0).pow(2).mean(); }

torch::Tensor discriminator_real_loss(const torch::Tensor& real_scores, double real_label) {
    if (!(real_label > 0.0 && real_label <= 1.0)) throw std::invalid_argument("real label must be in (0, 1]");
    return (real_scores - real_label).pow(2).mean();
}

torch::Tensor discriminator_fake_loss(const torch::Tensor& fake_scores) { return fake_scores.pow(2).mean(); }

torch::Tensor discriminator_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores, double real_label) {
    return discriminator_real_loss(real_scores, real_label) + discriminator_fake_loss(fake_scores);
}

torch::Tensor identity_loss(const torch::Tensor& generated, const torch::Tensor& ground_truth, const FeatureExtractor& extractor) {
    require_same_shape(generated, ground_truth, "identity_loss");
    const auto fg = extractor.forward(generated);
    const auto ft = extractor.forward(ground_truth);
    return (fg - ft).pow(2).mean();
}

torch::Tensor tv_loss(const torch::Tensor& generated) {
    if (generated.dim() == 3) return tv_loss(generated.unsqueeze(0));
    TORCH_CHECK(generated.dim() == 4, "tv_loss expects [C,H,W] or [N,C,H,W]");
    if (generated.size(2) < 2 && generated.size(3) < 2) throw std::invalid_argument("tv_loss needs at least two pixels");
    using torch::indexing::Slice;
    auto total = torch::zeros({generated.size(0)}, generated.options());
    if (generated.size(3) >= 2) {
        const auto dx = generated.index({Slice(), Slice(), Slice(), Slice(1)}) -
                        generated.index({Slice(), Slice(), Slice(), Slice(0, -1)});
        total = total + dx.pow(2).sum({1, 2, 3});
    }
    if (generated.size(2) >= 2) {
        const auto dy = generated.index({Slice(), Slice(), Slice(1), Slice()}) -
                        generated.index({Slice(), Slice(), Slice(0, -1), Slice()});
        total = total + dy.pow(2).sum({1, 2, 3});
    }
    return total.mean();
}

torch::Tensor total_loss(const LossTerms& t, const LossWeights& w) {
    torch::Tensor total = t.pixel + w.adversarial * t.adversarial + w.identity * t.identity + w.total_variation * t.total_variation;
    if (t.perceptual) total = total + w.perceptual * *t.perceptual;
    return total;
}

}  // namespace maskfill::loss
