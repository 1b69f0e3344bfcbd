#ifndef MASKFILL_NETBLOCKS_HPP
#define MASKFILL_NETBLOCKS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace maskfill::nets {

enum class LayerKind { conv, atrous_conv, residual_block, fully_connected, pixel_shuffle, fuse_conv, avg_pool };
enum class Activation { none, leaky_relu_01, leaky_relu_02, tanh, sigmoid };

std::string to_string(LayerKind kind);

/// One row of a block's layer table. `kernel`/`stride`/`dilation` are 0 for
/// layers that have none (fully connected, pixel shuffle).
struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::conv;
    int kernel = 0;
    int stride = 1;
    int dilation = 1;
    int in_channels = 0;
    int out_channels = 0;
    Activation activation = Activation::none;
    bool batch_norm = false;
    int out_size = 0;             ///< spatial side after the layer (0 for fc1)
    std::string skip_from;        ///< fuse_conv: layer whose output is concatenated
    std::vector<std::int64_t> reshape_to;  ///< fc: reshape of the output (C, H, W)

    [[nodiscard]] std::int64_t parameter_count() const;
};

struct GeneratorSpec {
    int resolution = 0;
    int width_divisor = 1;
    std::vector<LayerSpec> layers;

    [[nodiscard]] int residual_blocks() const;
    [[nodiscard]] int pixel_shuffle_stages() const;
    [[nodiscard]] std::int64_t parameter_count() const;
    [[nodiscard]] const LayerSpec& layer(const std::string& name) const;
};

struct DiscriminatorSpec {
    int resolution = 0;
    int width_divisor = 1;
    std::vector<LayerSpec> layers;  ///< conv stack followed by the 1-channel "head" conv
    [[nodiscard]] std::int64_t parameter_count() const;
};

struct UpscalerSpec {
    int width_divisor = 1;
    std::vector<LayerSpec> layers;
    [[nodiscard]] std::int64_t parameter_count() const;
};

bool is_supported_resolution(int resolution);
void check_width_divisor(int width_divisor);

/// Layer table of block_<resolution>. `width_divisor` scales every channel
/// count (and fc width) down for desk-scale runs; 1 gives the full network.
GeneratorSpec generator_spec(int resolution, int width_divisor = 1);
DiscriminatorSpec discriminator_spec(int resolution, int width_divisor = 1);
UpscalerSpec upscaler_spec();

/// Channel-to-space rearrangement, NCHW: [N, C*r*r, H, W] -> [N, C, H*r, W*r] with
/// out[c, y, x] = in[c*r*r + (y%r)*r + (x%r), y/r, x/r].
torch::Tensor pixel_shuffle(const torch::Tensor& x, std::int64_t r);
/// Exact inverse of pixel_shuffle.
torch::Tensor pixel_unshuffle(const torch::Tensor& x, std::int64_t r);

/// Zero-mean normal draws with variance 2 / fan_in.
torch::Tensor he_init(std::int64_t fan_in, at::IntArrayRef shape, at::Generator& generator,
                      torch::Dtype dtype = torch::kFloat32);
at::Generator make_generator(std::uint64_t seed);

/// He-initializes every conv/linear weight of `module` in registration order
/// (biases zero, batch-norm scale one).
void he_initialize(torch::nn::Module& module, std::uint64_t seed);

/// Generator block (encoder, fc bottleneck, pixel-shuffle decoder).
/// Input and output are NCHW images in [0,1]; the tanh output is remapped by (x+1)/2.
class GeneratorBlockImpl : public torch::nn::Module {
public:
    explicit GeneratorBlockImpl(GeneratorSpec spec);
    torch::Tensor forward(const torch::Tensor& input);
    [[nodiscard]] const GeneratorSpec& spec() const { return spec_; }
    [[nodiscard]] int resolution() const { return spec_.resolution; }

private:
    struct Layer {
        torch::nn::Conv2d conv{nullptr};
        torch::nn::Conv2d conv_b{nullptr};
        torch::nn::Linear linear{nullptr};
    };
    GeneratorSpec spec_;
    std::vector<Layer> layers_;
};
TORCH_MODULE(GeneratorBlock);

/// Convolutional discriminator emitting one probability per image.
class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(DiscriminatorSpec spec);
    /// In training mode batch statistics are used; running statistics are
    /// only updated when `update_running_stats` is set.
    torch::Tensor forward(const torch::Tensor& input, bool update_running_stats = true);
    [[nodiscard]] const DiscriminatorSpec& spec() const { return spec_; }

private:
    struct Layer {
        torch::nn::Conv2d conv{nullptr};
        torch::Tensor bn_weight, bn_bias, running_mean, running_var;
    };
    DiscriminatorSpec spec_;
    std::vector<Layer> layers_;
};
TORCH_MODULE(Discriminator);

/// Exact 2x upscaler made of four (conv -> pixel shuffle -> strided downmix)
/// stages; the last stage has no downmix.
class Upscaler2xImpl : public torch::nn::Module {
public:
    Upscaler2xImpl();
    torch::Tensor forward(const torch::Tensor& input);
    /// Sets every conv to a channel-preserving centre tap (nearest-neighbour upscaling).
    void init_identity();

private:
    std::vector<torch::nn::Conv2d> up_;
    std::vector<torch::nn::Conv2d> down_;
};
TORCH_MODULE(Upscaler2x);

GeneratorBlock build_generator(int resolution, int width_divisor = 1, std::uint64_t seed = 0);
Discriminator build_discriminator(int resolution, int width_divisor = 1, std::uint64_t seed = 0);
Upscaler2x build_upscaler(std::uint64_t seed = 0);

std::int64_t count_parameters(const torch::nn::Module& module);

}  // namespace maskfill::nets

#endif  // MASKFILL_NETBLOCKS_HPP
