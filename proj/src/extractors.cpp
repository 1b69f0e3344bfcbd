#include "maskfill/extractors.hpp"

#include <cmath>

#include "maskfill/netblocks.hpp"
#include "maskfill/tensor_io.hpp"

namespace maskfill {

namespace F = torch::nn::functional;

namespace {

constexpr const char* kStackKind = "conv-feature-stack";

torch::Tensor run_conv(const torch::Tensor& x, const torch::Tensor& w, const torch::Tensor& b) {
    return F::leaky_relu(F::conv2d(x, w, F::Conv2dFuncOptions().bias(b).stride(2).padding(1)),
                         F::LeakyReLUFuncOptions().negative_slope(0.2));
}

}  // namespace

ConvFeatureStack::ConvFeatureStack(ConvStackConfig config, std::uint64_t seed) : config_(std::move(config)) {
    if (config_.channels.empty() || config_.input_size < (1 << config_.channels.size()) || config_.feature_dim < 1) {
        throw std::invalid_argument("invalid conv feature stack configuration");
    }
    auto gen = nets::make_generator(seed);
    int in = 3;
    for (int c : config_.channels) {
        weights_.push_back(nets::he_init(in * 9, {c, in, 3, 3}, gen));
        biases_.push_back(torch::zeros({c}));
        in = c;
    }
    const int side = config_.input_size >> config_.channels.size();
    const std::int64_t flat = static_cast<std::int64_t>(in) * side * side;
    // Variance-preserving projection (1 / fan_in) so feature magnitudes stay O(1).
    projection_ = nets::he_init(flat, {config_.feature_dim, flat}, gen) / std::sqrt(2.0);
}

std::vector<torch::Tensor> ConvFeatureStack::activations(const torch::Tensor& images) const {
    TORCH_CHECK(images.dim() == 4 && images.size(1) == 3, "feature stack expects [N, 3, H, W]");
    std::vector<torch::Tensor> out;
    torch::Tensor x = images * 2.0 - 1.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        x = run_conv(x, weights_[i], biases_[i]);
        out.push_back(x);
    }
    return out;
}

torch::Tensor ConvFeatureStack::forward(const torch::Tensor& images) const {
    TORCH_CHECK(images.dim() == 4 && images.size(1) == 3, "feature stack expects [N, 3, H, W]");
    torch::Tensor x = images;
    if (x.size(2) != config_.input_size || x.size(3) != config_.input_size) {
        x = F::interpolate(x, F::InterpolateFuncOptions()
                                  .size(std::vector<std::int64_t>{config_.input_size, config_.input_size})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
    }
    const auto acts = activations(x);
    auto f = torch::matmul(acts.back().flatten(1), projection_.t());
    if (config_.normalize) f = f / torch::sqrt((f * f).sum(1, true) + 1e-12);
    return f;
}

void ConvFeatureStack::to(torch::Dtype dtype) {
    for (auto& w : weights_) w = w.to(dtype);
    for (auto& b : biases_) b = b.to(dtype);
    projection_ = projection_.to(dtype);
}

Archive ConvFeatureStack::to_archive() const {
    Archive a;
    a.metadata = {{"kind", kStackKind},
                  {"input_size", config_.input_size},
                  {"channels", config_.channels},
                  {"feature_dim", config_.feature_dim},
                  {"normalize", config_.normalize}};
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        a.add(to_named_array("conv" + std::to_string(i) + ".weight", weights_[i]));
        a.add(to_named_array("conv" + std::to_string(i) + ".bias", biases_[i]));
    }
    a.add(to_named_array("projection.weight", projection_));
    return a;
}

std::unique_ptr<ConvFeatureStack> ConvFeatureStack::from_archive(const Archive& a) {
    if (a.metadata.value("kind", "") != kStackKind) throw ArchiveError("archive is not a conv feature stack");
    std::unique_ptr<ConvFeatureStack> s(new ConvFeatureStack());
    s->config_.input_size = a.metadata.at("input_size").get<int>();
    s->config_.channels = a.metadata.at("channels").get<std::vector<int>>();
    s->config_.feature_dim = a.metadata.at("feature_dim").get<int>();
    s->config_.normalize = a.metadata.value("normalize", false);
    int in = 3;
    for (std::size_t i = 0; i < s->config_.channels.size(); ++i) {
        const int c = s->config_.channels[i];
        auto w = to_tensor(a.get("conv" + std::to_string(i) + ".weight"));
        auto b = to_tensor(a.get("conv" + std::to_string(i) + ".bias"));
        if (w.sizes() != at::IntArrayRef({c, in, 3, 3}) || b.sizes() != at::IntArrayRef({c})) {
            throw ArchiveError("feature stack layer " + std::to_string(i) + " has the wrong shape");
        }
        s->weights_.push_back(w.to(torch::kFloat32));
        s->biases_.push_back(b.to(torch::kFloat32));
        in = c;
    }
    const int side = s->config_.input_size >> s->config_.channels.size();
    auto p = to_tensor(a.get("projection.weight"));
    if (p.sizes() != at::IntArrayRef({s->config_.feature_dim, static_cast<std::int64_t>(in) * side * side})) {
        throw ArchiveError("feature stack projection has the wrong shape");
    }
    s->projection_ = p.to(torch::kFloat32);
    return s;
}

ConvPerceptualMetric::ConvPerceptualMetric(std::shared_ptr<ConvFeatureStack> stack, int min_resolution)
    : stack_(std::move(stack)), min_resolution_(min_resolution) {}

torch::Tensor ConvPerceptualMetric::distance(const torch::Tensor& a, const torch::Tensor& b) const {
    TORCH_CHECK(a.sizes() == b.sizes(), "perceptual metric inputs must have equal shapes");
    const auto fa = stack_->activations(a);
    const auto fb = stack_->activations(b);
    torch::Tensor total = torch::zeros({a.size(0)}, a.options());
    for (std::size_t l = 0; l < fa.size(); ++l) {
        auto na = fa[l] / torch::sqrt((fa[l] * fa[l]).sum(1, true) + 1e-10);
        auto nb = fb[l] / torch::sqrt((fb[l] * fb[l]).sum(1, true) + 1e-10);
        total = total + (na - nb).pow(2).sum(1).mean({1, 2});
    }
    // Unit vectors differ by at most 4 in squared norm: scale to [0, 1].
    return total / (4.0 * static_cast<double>(fa.size()));
}

std::shared_ptr<ConvFeatureStack> default_identity_extractor() {
    return std::make_shared<ConvFeatureStack>(ConvStackConfig{64, {16, 32, 64, 64}, 256, true}, 0x1D0001);
}

std::shared_ptr<ConvPerceptualMetric> default_perceptual_metric() {
    auto stack = std::make_shared<ConvFeatureStack>(ConvStackConfig{32, {16, 32, 64}, 1, false}, 0x1D0002);
    return std::make_shared<ConvPerceptualMetric>(std::move(stack), 32);
}

std::shared_ptr<ConvFeatureStack> default_embedding_extractor() {
    return std::make_shared<ConvFeatureStack>(ConvStackConfig{64, {16, 32, 64, 64}, 256, true}, 0x1D0003);
}

std::shared_ptr<ConvFeatureStack> load_feature_extractor(const std::filesystem::path& path) {
    return ConvFeatureStack::from_archive(Archive::load(path));
}

}  // namespace maskfill
