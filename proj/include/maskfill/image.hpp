#ifndef MASKFILL_IMAGE_HPP
#define MASKFILL_IMAGE_HPP

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace maskfill {

/// Interleaved (HWC) float image. Pixel values are in [0,1] everywhere in
/// the pipeline; single-channel images are used for masks.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {
        if (h < 0 || w < 0 || c < 0) throw std::invalid_argument("Image: negative dimension");
    }

    [[nodiscard]] std::size_t index(int y, int x, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    float& at(int y, int x, int c = 0) { return pixels[index(y, x, c)]; }
    [[nodiscard]] float at(int y, int x, int c = 0) const { return pixels[index(y, x, c)]; }

    [[nodiscard]] bool empty() const { return pixels.empty(); }
    [[nodiscard]] bool same_shape(const Image& other) const {
        return height == other.height && width == other.width && channels == other.channels;
    }

    bool operator==(const Image&) const = default;
};

/// Reads an 8-bit image file as RGB in [0,1]. Throws std::runtime_error when unreadable.
Image read_image(const std::filesystem::path& path);

/// Reads an 8-bit grayscale image (masks) in [0,1].
Image read_gray(const std::filesystem::path& path);

/// Writes 1- or 3-channel images as 8-bit PNG/JPEG (format from extension).
/// Values are clamped to [0,1] and rounded to the nearest level.
void write_image(const std::filesystem::path& path, const Image& image);

/// Horizontal concatenation of equally tall images (used for comparison sheets).
Image hconcat(const std::vector<Image>& images);
/// Vertical concatenation of equally wide images.
Image vconcat(const std::vector<Image>& images);

/// Expands a 1-channel image to 3 channels.
Image to_rgb(const Image& gray);

}  // namespace maskfill

#endif  // MASKFILL_IMAGE_HPP
