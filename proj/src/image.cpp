#include "maskfill/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace maskfill {

namespace {

Image from_mat_u8(const cv::Mat& mat) {
    Image out(mat.rows, mat.cols, mat.channels());
    for (int y = 0; y < mat.rows; ++y) {
        const auto* row = mat.ptr<std::uint8_t>(y);
        for (int i = 0; i < mat.cols * mat.channels(); ++i) {
            out.pixels[static_cast<std::size_t>(y) * mat.cols * mat.channels() + i] = row[i] / 255.0f;
        }
    }
    return out;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw std::runtime_error("cannot read image: " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return from_mat_u8(rgb);
}

Image read_gray(const std::filesystem::path& path) {
    cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (gray.empty()) throw std::runtime_error("cannot read image: " + path.string());
    return from_mat_u8(gray);
}

void write_image(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw std::invalid_argument("write_image: expected 1 or 3 channels");
    }
    cv::Mat mat(image.height, image.width, image.channels == 3 ? CV_8UC3 : CV_8UC1);
    for (int y = 0; y < image.height; ++y) {
        auto* row = mat.ptr<std::uint8_t>(y);
        for (int i = 0; i < image.width * image.channels; ++i) {
            const float v = std::clamp(image.pixels[static_cast<std::size_t>(y) * image.width * image.channels + i], 0.0f, 1.0f);
            row[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    }
    if (image.channels == 3) cv::cvtColor(mat, mat, cv::COLOR_RGB2BGR);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), mat)) throw std::runtime_error("cannot write image: " + path.string());
}

Image hconcat(const std::vector<Image>& images) {
    if (images.empty()) return {};
    const int h = images.front().height;
    const int c = images.front().channels;
    int w = 0;
    for (const auto& im : images) {
        if (im.height != h || im.channels != c) throw std::invalid_argument("hconcat: mismatched images");
        w += im.width;
    }
    Image out(h, w, c);
    int x0 = 0;
    for (const auto& im : images) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < im.width; ++x)
                for (int k = 0; k < c; ++k) out.at(y, x0 + x, k) = im.at(y, x, k);
        x0 += im.width;
    }
    return out;
}

Image vconcat(const std::vector<Image>& images) {
    if (images.empty()) return {};
    const int w = images.front().width;
    const int c = images.front().channels;
    Image out;
    out.width = w;
    out.channels = c;
    for (const auto& im : images) {
        if (im.width != w || im.channels != c) throw std::invalid_argument("vconcat: mismatched images");
        out.height += im.height;
        out.pixels.insert(out.pixels.end(), im.pixels.begin(), im.pixels.end());
    }
    return out;
}

Image to_rgb(const Image& gray) {
    if (gray.channels == 3) return gray;
    Image out(gray.height, gray.width, 3);
    for (int y = 0; y < gray.height; ++y)
        for (int x = 0; x < gray.width; ++x)
            for (int k = 0; k < 3; ++k) out.at(y, x, k) = gray.at(y, x, 0);
    return out;
}

}  // namespace maskfill
