#include "maskfill/netblocks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <stdexcept>

#include <ATen/CPUGeneratorImpl.h>

namespace maskfill::nets {

namespace F = torch::nn::functional;

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv: return "conv";
        case LayerKind::atrous_conv: return "atrous_conv";
        case LayerKind::residual_block: return "residual_block";
        case LayerKind::fully_connected: return "fully_connected";
        case LayerKind::pixel_shuffle: return "pixel_shuffle";
        case LayerKind::fuse_conv: return "fuse_conv";
        case LayerKind::avg_pool: return "avg_pool";
    }
    return "?";
}

std::int64_t LayerSpec::parameter_count() const {
    const std::int64_t in = in_channels, out = out_channels, k = kernel;
    switch (kind) {
        case LayerKind::conv:
        case LayerKind::atrous_conv:
        case LayerKind::fuse_conv: return in * out * k * k + out + (batch_norm ? 2 * out : 0);
        case LayerKind::residual_block: return 2 * (in * out * k * k + out);
        case LayerKind::fully_connected: return in * out + out;
        case LayerKind::pixel_shuffle:
        case LayerKind::avg_pool: return 0;
    }
    return 0;
}

namespace {

template <typename Layers>
std::int64_t sum_parameters(const Layers& layers) {
    std::int64_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
}

}  // namespace

int GeneratorSpec::residual_blocks() const {
    return static_cast<int>(std::count_if(layers.begin(), layers.end(), [](const auto& l) { return l.kind == LayerKind::residual_block; }));
}

int GeneratorSpec::pixel_shuffle_stages() const {
    return static_cast<int>(std::count_if(layers.begin(), layers.end(), [](const auto& l) { return l.kind == LayerKind::pixel_shuffle; }));
}

std::int64_t GeneratorSpec::parameter_count() const { return sum_parameters(layers); }
std::int64_t DiscriminatorSpec::parameter_count() const { return sum_parameters(layers); }
std::int64_t UpscalerSpec::parameter_count() const { return sum_parameters(layers); }

const LayerSpec& GeneratorSpec::layer(const std::string& name) const {
    for (const auto& l : layers)
        if (l.name == name) return l;
    throw std::out_of_range("generator has no layer " + name);
}

bool is_supported_resolution(int resolution) {
    return resolution == 8 || resolution == 16 || resolution == 32 || resolution == 64 || resolution == 128;
}

void check_width_divisor(int width_divisor) {
    if (width_divisor < 1 || width_divisor > 64 || !std::has_single_bit(static_cast<unsigned>(width_divisor))) {
        throw std::invalid_argument("width divisor must be a power of two in [1, 64]");
    }
}

// ---------------------------------------------------------------------------
// Layer tables
// ---------------------------------------------------------------------------

GeneratorSpec generator_spec(int resolution, int width_divisor) {
    if (!is_supported_resolution(resolution)) {
        throw std::invalid_argument("no generator block for resolution " + std::to_string(resolution));
    }
    check_width_divisor(width_divisor);
    auto ch = [&](int c) { return std::max(1, c / width_divisor); };
    const int levels = std::countr_zero(static_cast<unsigned>(resolution / 4));

    GeneratorSpec g;
    g.resolution = resolution;
    g.width_divisor = width_divisor;
    auto& L = g.layers;

    struct Tap {
        std::string name;
        int size, channels;
    };
    std::vector<Tap> taps;

    int size = resolution;
    L.push_back({.name = "conv0", .kind = LayerKind::atrous_conv, .kernel = 3, .stride = 1, .dilation = 2,
                 .in_channels = 3, .out_channels = ch(128), .activation = Activation::leaky_relu_01, .out_size = size});
    taps.push_back({"conv0", size, ch(128)});
    int c_in = ch(128);

    // Encoder: one stride-2 conv + residual block per level, named by depth
    // from the bottleneck so that blocks of different resolutions share names.
    for (int i = 1; i <= levels; ++i) {
        const int depth = levels - i;
        const int c = ch(1024 >> depth);
        // block_8's only encoder conv dilates instead of striding.
        const bool keep = resolution == 8;
        if (!keep) size /= 2;
        const std::string prefix = "enc" + std::to_string(depth);
        L.push_back({.name = prefix + "_down", .kind = keep ? LayerKind::atrous_conv : LayerKind::conv, .kernel = 3,
                     .stride = keep ? 1 : 2, .dilation = keep ? 2 : 1, .in_channels = c_in, .out_channels = c,
                     .activation = Activation::leaky_relu_01, .out_size = size});
        L.push_back({.name = prefix + "_res", .kind = LayerKind::residual_block, .kernel = 3, .stride = 1, .dilation = 1,
                     .in_channels = c, .out_channels = c, .activation = Activation::leaky_relu_01, .out_size = size});
        taps.push_back({prefix + "_res", size, c});
        c_in = c;
    }

    // block_8 never strides, so its 8x8 map is pooled to the 4x4 every other
    // block hands to fc1.
    if (size > 4) {
        L.push_back({.name = "pool", .kind = LayerKind::avg_pool, .kernel = size / 4, .stride = size / 4, .dilation = 1,
                     .in_channels = c_in, .out_channels = c_in, .out_size = 4});
        size = 4;
    }

    const int bottleneck = ch(1024);
    L.push_back({.name = "fc1", .kind = LayerKind::fully_connected, .kernel = 0, .stride = 0, .dilation = 0,
                 .in_channels = c_in * size * size, .out_channels = ch(512), .activation = Activation::leaky_relu_01,
                 .out_size = 0});
    L.push_back({.name = "fc2", .kind = LayerKind::fully_connected, .kernel = 0, .stride = 0, .dilation = 0,
                 .in_channels = ch(512), .out_channels = bottleneck * 16, .activation = Activation::leaky_relu_01,
                 .out_size = 4, .reshape_to = {bottleneck, 4, 4}});

    size = 4;
    int c = bottleneck;
    auto add_skip = [&](int level) {
        for (auto it = taps.rbegin(); it != taps.rend(); ++it) {
            if (it->size == size && it->channels == c) {
                L.push_back({.name = "dec" + std::to_string(level) + "_fuse", .kind = LayerKind::fuse_conv, .kernel = 1,
                             .stride = 1, .dilation = 1, .in_channels = 2 * c, .out_channels = c,
                             .activation = Activation::leaky_relu_01, .out_size = size, .skip_from = it->name});
                return;
            }
        }
    };
    for (int k = 0; k < levels; ++k) {
        add_skip(k);
        const int out = 4 * ch(std::max(512 >> k, 64));
        L.push_back({.name = "dec" + std::to_string(k) + "_conv", .kind = LayerKind::conv, .kernel = 3, .stride = 1,
                     .dilation = 1, .in_channels = c, .out_channels = out, .activation = Activation::leaky_relu_01,
                     .out_size = size});
        size *= 2;
        c = out / 4;
        L.push_back({.name = "dec" + std::to_string(k) + "_shuffle", .kind = LayerKind::pixel_shuffle, .kernel = 0,
                     .stride = 0, .dilation = 0, .in_channels = out, .out_channels = c, .out_size = size});
    }
    add_skip(levels);
    L.push_back({.name = "head", .kind = LayerKind::conv, .kernel = 5, .stride = 1, .dilation = 1, .in_channels = c,
                 .out_channels = 3, .activation = Activation::tanh, .out_size = size});
    return g;
}

DiscriminatorSpec discriminator_spec(int resolution, int width_divisor) {
    if (!is_supported_resolution(resolution)) {
        throw std::invalid_argument("no discriminator for resolution " + std::to_string(resolution));
    }
    check_width_divisor(width_divisor);
    struct Row {
        const char* name;
        int filters, stride;
    };
    // Conv stack with the pooling layers removed; the conv after each removed
    // pool carries stride 2 instead.
    constexpr Row rows[] = {{"conv11", 32, 1},  {"conv12", 64, 1},  {"conv21", 64, 2},  {"conv22", 128, 1},
                            {"conv31", 96, 2},  {"conv32", 192, 1}, {"conv41", 128, 2}, {"conv42", 256, 1},
                            {"conv51", 160, 2}, {"conv52", 320, 1}};
    DiscriminatorSpec d;
    d.resolution = resolution;
    d.width_divisor = width_divisor;
    int size = resolution;
    int c_in = 3;
    bool first = true;
    for (const auto& r : rows) {
        const int out_size = size / r.stride;
        if (out_size < 2) break;
        const int c = std::max(1, r.filters / width_divisor);
        d.layers.push_back({.name = r.name, .kind = LayerKind::conv, .kernel = 3, .stride = r.stride, .dilation = 1,
                            .in_channels = c_in, .out_channels = c, .activation = Activation::leaky_relu_02,
                            .batch_norm = !first, .out_size = out_size});
        first = false;
        size = out_size;
        c_in = c;
    }
    d.layers.push_back({.name = "head", .kind = LayerKind::conv, .kernel = 3, .stride = 1, .dilation = 1,
                        .in_channels = c_in, .out_channels = 1, .activation = Activation::sigmoid,
                        .batch_norm = false, .out_size = size});
    return d;
}

UpscalerSpec upscaler_spec() {
    UpscalerSpec u;
    for (int s = 0; s < 4; ++s) {
        const std::string i = std::to_string(s);
        u.layers.push_back({.name = "up" + i, .kind = LayerKind::conv, .kernel = 3, .stride = 1, .dilation = 1,
                            .in_channels = 3, .out_channels = 12, .activation = Activation::none});
        u.layers.push_back({.name = "shuffle" + i, .kind = LayerKind::pixel_shuffle, .in_channels = 12, .out_channels = 3});
        if (s < 3) {
            u.layers.push_back({.name = "down" + i, .kind = LayerKind::conv, .kernel = 3, .stride = 2, .dilation = 1,
                                .in_channels = 3, .out_channels = 3, .activation = Activation::leaky_relu_01});
        }
    }
    return u;
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

torch::Tensor pixel_shuffle(const torch::Tensor& x, std::int64_t r) {
    TORCH_CHECK(x.dim() == 4, "pixel_shuffle expects an NCHW tensor");
    TORCH_CHECK(r >= 1, "pixel_shuffle factor must be positive");
    const auto n = x.size(0), cin = x.size(1), h = x.size(2), w = x.size(3);
    if (cin % (r * r) != 0) {
        throw std::invalid_argument("pixel_shuffle: channel count " + std::to_string(cin) + " not divisible by r^2 = " +
                                    std::to_string(r * r));
    }
    const auto c = cin / (r * r);
    return x.reshape({n, c, r, r, h, w}).permute({0, 1, 4, 2, 5, 3}).reshape({n, c, h * r, w * r});
}

torch::Tensor pixel_unshuffle(const torch::Tensor& x, std::int64_t r) {
    TORCH_CHECK(x.dim() == 4, "pixel_unshuffle expects an NCHW tensor");
    const auto n = x.size(0), c = x.size(1), hr = x.size(2), wr = x.size(3);
    if (hr % r != 0 || wr % r != 0) throw std::invalid_argument("pixel_unshuffle: spatial size not divisible by r");
    const auto h = hr / r, w = wr / r;
    return x.reshape({n, c, h, r, w, r}).permute({0, 1, 3, 5, 2, 4}).reshape({n, c * r * r, h, w});
}

at::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor he_init(std::int64_t fan_in, at::IntArrayRef shape, at::Generator& generator, torch::Dtype dtype) {
    if (fan_in < 1) throw std::invalid_argument("he_init: fan_in must be >= 1");
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    return at::normal(0.0, stddev, shape, generator, torch::TensorOptions().dtype(dtype));
}

void he_initialize(torch::nn::Module& module, std::uint64_t seed) {
    auto gen = make_generator(seed);
    torch::NoGradGuard no_grad;
    for (auto& item : module.named_parameters(/*recurse=*/true)) {
        const auto& name = item.key();
        auto& p = item.value();
        const bool is_bias = name.ends_with("bias");
        if (name.ends_with("bn_weight")) {
            p.fill_(1.0);
        } else if (is_bias) {
            p.zero_();
        } else if (p.dim() >= 2) {
            const std::int64_t fan_in = p.numel() / p.size(0);
            p.copy_(he_init(fan_in, p.sizes(), gen, p.scalar_type()));
        }
    }
}

std::int64_t count_parameters(const torch::nn::Module& module) {
    std::int64_t n = 0;
    for (const auto& p : module.parameters()) n += p.numel();
    return n;
}

namespace {

torch::Tensor activate(const torch::Tensor& x, Activation a) {
    switch (a) {
        case Activation::none: return x;
        case Activation::leaky_relu_01: return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.1));
        case Activation::leaky_relu_02: return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
        case Activation::tanh: return torch::tanh(x);
        case Activation::sigmoid: return torch::sigmoid(x);
    }
    return x;
}

torch::nn::Conv2d make_conv(const LayerSpec& s, int in_channels, int out_channels) {
    const int pad = s.stride == 1 ? s.dilation * (s.kernel - 1) / 2 : (s.kernel - 1) / 2;
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, s.kernel)
                                 .stride(s.stride)
                                 .padding(pad)
                                 .dilation(s.dilation)
                                 .bias(true));
}

}  // namespace

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

GeneratorBlockImpl::GeneratorBlockImpl(GeneratorSpec spec) : spec_(std::move(spec)) {
    layers_.reserve(spec_.layers.size());
    for (const auto& s : spec_.layers) {
        Layer layer;
        switch (s.kind) {
            case LayerKind::conv:
            case LayerKind::atrous_conv:
            case LayerKind::fuse_conv:
                layer.conv = register_module(s.name, make_conv(s, s.in_channels, s.out_channels));
                break;
            case LayerKind::residual_block:
                layer.conv = register_module(s.name + "_a", make_conv(s, s.in_channels, s.out_channels));
                layer.conv_b = register_module(s.name + "_b", make_conv(s, s.out_channels, s.out_channels));
                break;
            case LayerKind::fully_connected:
                layer.linear = register_module(s.name, torch::nn::Linear(s.in_channels, s.out_channels));
                break;
            case LayerKind::pixel_shuffle:
            case LayerKind::avg_pool: break;
        }
        layers_.push_back(layer);
    }
}

torch::Tensor GeneratorBlockImpl::forward(const torch::Tensor& input) {
    const int r = spec_.resolution;
    if (input.dim() != 4 || input.size(1) != 3 || input.size(2) != r || input.size(3) != r) {
        throw std::invalid_argument("block_" + std::to_string(r) + " expects input [N, 3, " + std::to_string(r) + ", " +
                                    std::to_string(r) + "], got " + c10::str(input.sizes()));
    }
    std::map<std::string, torch::Tensor> taps;
    for (const auto& s : spec_.layers)
        if (s.kind == LayerKind::fuse_conv) taps[s.skip_from] = torch::Tensor();

    torch::Tensor x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& layer = layers_[i];
        const LayerSpec& s = spec_.layers[i];
        switch (s.kind) {
            case LayerKind::conv:
            case LayerKind::atrous_conv: x = activate(layer.conv->forward(x), s.activation); break;
            case LayerKind::residual_block:
                x = x + layer.conv_b->forward(activate(layer.conv->forward(x), Activation::leaky_relu_01));
                break;
            case LayerKind::fully_connected:
                x = activate(layer.linear->forward(x.flatten(1)), s.activation);
                if (!s.reshape_to.empty()) x = x.reshape({x.size(0), s.reshape_to[0], s.reshape_to[1], s.reshape_to[2]});
                break;
            case LayerKind::fuse_conv:
                x = activate(layer.conv->forward(torch::cat({x, taps.at(s.skip_from)}, 1)), s.activation);
                break;
            case LayerKind::pixel_shuffle: x = nets::pixel_shuffle(x, 2); break;
            case LayerKind::avg_pool: x = torch::avg_pool2d(x, s.kernel, s.stride); break;
        }
        if (auto it = taps.find(s.name); it != taps.end()) it->second = x;
    }
    return (x + 1.0) * 0.5;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorSpec spec) : spec_(std::move(spec)) {
    for (const auto& s : spec_.layers) {
        Layer layer;
        layer.conv = register_module(s.name, make_conv(s, s.in_channels, s.out_channels));
        if (s.batch_norm) {
            layer.bn_weight = register_parameter(s.name + "_bn_weight", torch::ones({s.out_channels}));
            layer.bn_bias = register_parameter(s.name + "_bn_bias", torch::zeros({s.out_channels}));
            layer.running_mean = register_buffer(s.name + "_bn_running_mean", torch::zeros({s.out_channels}));
            layer.running_var = register_buffer(s.name + "_bn_running_var", torch::ones({s.out_channels}));
        }
        layers_.push_back(layer);
    }
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& input, bool update_running_stats) {
    const int r = spec_.resolution;
    if (input.dim() != 4 || input.size(1) != 3 || input.size(2) != r || input.size(3) != r) {
        throw std::invalid_argument("discriminator_" + std::to_string(r) + " got input " + c10::str(input.sizes()));
    }
    torch::Tensor x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& layer = layers_[i];
        const LayerSpec& s = spec_.layers[i];
        x = layer.conv->forward(x);
        if (s.batch_norm) {
            const bool use_batch = is_training();
            const bool track = !use_batch || update_running_stats;
            x = torch::batch_norm(x, layer.bn_weight, layer.bn_bias, track ? layer.running_mean : torch::Tensor(),
                                  track ? layer.running_var : torch::Tensor(), use_batch, 0.1, 1e-5, false);
        }
        if (s.activation != Activation::sigmoid) x = activate(x, s.activation);
    }
    return torch::sigmoid(x.mean({1, 2, 3}));
}

// ---------------------------------------------------------------------------
// Upscaler
// ---------------------------------------------------------------------------

Upscaler2xImpl::Upscaler2xImpl() {
    for (const auto& s : upscaler_spec().layers) {
        if (s.kind != LayerKind::conv) continue;
        auto conv = register_module(s.name, make_conv(s, s.in_channels, s.out_channels));
        (s.name.starts_with("up") ? up_ : down_).push_back(conv);
    }
}

torch::Tensor Upscaler2xImpl::forward(const torch::Tensor& input) {
    TORCH_CHECK(input.dim() == 4 && input.size(1) == 3, "upscaler expects [N, 3, H, W]");
    torch::Tensor x = input;
    for (std::size_t s = 0; s < up_.size(); ++s) {
        x = nets::pixel_shuffle(up_[s]->forward(x), 2);
        if (s < down_.size()) x = activate(down_[s]->forward(x), Activation::leaky_relu_01);
    }
    return x;
}

void Upscaler2xImpl::init_identity() {
    torch::NoGradGuard no_grad;
    for (auto& conv : up_) {
        conv->weight.zero_();
        conv->bias.zero_();
        for (int c = 0; c < 3; ++c)
            for (int sub = 0; sub < 4; ++sub) conv->weight[c * 4 + sub][c][1][1] = 1.0;
    }
    for (auto& conv : down_) {
        conv->weight.zero_();
        conv->bias.zero_();
        for (int c = 0; c < 3; ++c) conv->weight[c][c][1][1] = 1.0;
    }
}

GeneratorBlock build_generator(int resolution, int width_divisor, std::uint64_t seed) {
    GeneratorBlock g(generator_spec(resolution, width_divisor));
    he_initialize(*g, seed);
    return g;
}

Discriminator build_discriminator(int resolution, int width_divisor, std::uint64_t seed) {
    Discriminator d(discriminator_spec(resolution, width_divisor));
    he_initialize(*d, seed);
    return d;
}

Upscaler2x build_upscaler(std::uint64_t seed) {
    Upscaler2x u;
    he_initialize(*u, seed);
    return u;
}

}  // namespace maskfill::nets
