#include "maskfill/postproc.hpp"

#include <algorithm>
#include <stdexcept>

#include <opencv2/imgproc.hpp>

namespace maskfill::post {

cv::Mat to_mat(const Image& image) {
    cv::Mat m(image.height, image.width, CV_64FC(image.channels));
    auto* dst = m.ptr<double>();
    for (std::size_t i = 0; i < image.pixels.size(); ++i) dst[i] = image.pixels[i];
    return m;
}

Image from_mat(const cv::Mat& mat) {
    cv::Mat m;
    mat.convertTo(m, CV_64F);
    m = m.isContinuous() ? m : m.clone();
    Image out(m.rows, m.cols, m.channels());
    const auto* src = m.ptr<double>();
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = static_cast<float>(src[i]);
    return out;
}

namespace {

cv::Mat binary(const Image& image) {
    if (image.channels != 1) throw std::invalid_argument("mask maps must have one channel");
    cv::Mat m = to_mat(image);
    cv::Mat b;
    cv::threshold(m, b, 0.5 - 1e-12, 1.0, cv::THRESH_BINARY);
    return b;
}

}  // namespace

Image foreground_mask(const Image& person_seg, const Image& contour_interior, double feather_sigma) {
    cv::Mat m = binary(person_seg);
    if (!contour_interior.empty()) {
        if (!contour_interior.same_shape(person_seg)) throw std::invalid_argument("foreground_mask: shape mismatch");
        m = cv::max(m, binary(contour_interior));
    }
    if (feather_sigma > 0.0) cv::GaussianBlur(m, m, cv::Size(0, 0), feather_sigma, feather_sigma, cv::BORDER_REPLICATE);
    return from_mat(m);
}

Image salient_contour_interior(const Image& image) {
    cv::Mat rgb, gray;
    to_mat(image).convertTo(rgb, CV_32F);
    if (image.channels == 3) {
        cv::cvtColor(rgb, gray, cv::COLOR_RGB2GRAY);
    } else {
        gray = rgb;
    }
    cv::Mat gx, gy, mag;
    cv::Sobel(gray, gx, CV_64F, 1, 0);
    cv::Sobel(gray, gy, CV_64F, 0, 1);
    cv::magnitude(gx, gy, mag);
    double hi = 0.0;
    cv::minMaxLoc(mag, nullptr, &hi);
    cv::Mat edges8;
    mag.convertTo(edges8, CV_8U, hi > 0.0 ? 255.0 / hi : 0.0);
    cv::threshold(edges8, edges8, 0, 255, cv::THRESH_BINARY | cv::THRESH_OTSU);
    cv::morphologyEx(edges8, edges8, cv::MORPH_CLOSE, cv::getStructuringElement(cv::MORPH_ELLIPSE, {5, 5}));

    std::vector<std::vector<cv::Point>> contours;
    cv::findContours(edges8, contours, cv::RETR_EXTERNAL, cv::CHAIN_APPROX_SIMPLE);
    cv::Mat filled = cv::Mat::zeros(image.height, image.width, CV_8U);
    if (!contours.empty()) {
        const auto largest = std::max_element(contours.begin(), contours.end(), [](const auto& a, const auto& b) {
            return cv::contourArea(a) < cv::contourArea(b);
        });
        cv::drawContours(filled, contours, static_cast<int>(largest - contours.begin()), 255, cv::FILLED);
    }
    Image out(image.height, image.width, 1);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) out.at(y, x) = filled.at<std::uint8_t>(y, x) ? 1.0f : 0.0f;
    return out;
}

int max_levels(int height, int width) {
    int n = 1;
    for (int s = std::min(height, width); s >= 2; s /= 2) ++n;
    return n - 1;
}

std::vector<cv::Mat> gaussian_pyramid(const cv::Mat& image, int levels) {
    if (levels < 1 || levels > max_levels(image.rows, image.cols)) {
        throw std::invalid_argument("pyramid level count " + std::to_string(levels) + " out of range");
    }
    std::vector<cv::Mat> g{image};
    for (int i = 1; i < levels; ++i) {
        cv::Mat next;
        cv::pyrDown(g.back(), next);
        g.push_back(next);
    }
    return g;
}

std::vector<cv::Mat> laplacian_pyramid(const cv::Mat& image, int levels) {
    auto g = gaussian_pyramid(image, levels);
    std::vector<cv::Mat> lap;
    for (int i = 0; i + 1 < levels; ++i) {
        cv::Mat up;
        cv::pyrUp(g[i + 1], up, g[i].size());
        lap.push_back(g[i] - up);
    }
    lap.push_back(g.back());
    return lap;
}

cv::Mat collapse(const std::vector<cv::Mat>& pyramid) {
    if (pyramid.empty()) throw std::invalid_argument("collapse: empty pyramid");
    cv::Mat x = pyramid.back().clone();
    for (auto it = pyramid.rbegin() + 1; it != pyramid.rend(); ++it) {
        cv::Mat up;
        cv::pyrUp(x, up, it->size());
        x = up + *it;
    }
    return x;
}

Image laplacian_blend(const Image& foreground, const Image& background, const Image& mask, int levels) {
    if (!foreground.same_shape(background)) throw std::invalid_argument("laplacian_blend: image shapes differ");
    if (mask.channels != 1 || mask.height != foreground.height || mask.width != foreground.width) {
        throw std::invalid_argument("laplacian_blend: mask must be 1-channel and match the images");
    }
    const cv::Mat fg = to_mat(foreground), bg = to_mat(background);
    const auto lf = laplacian_pyramid(fg, levels);
    const auto lb = laplacian_pyramid(bg, levels);
    const auto gm = gaussian_pyramid(to_mat(mask), levels);

    // The composite is bg + collapse(m * (Lf - Lb)), which equals the usual
    // collapse(Lb + m * (Lf - Lb)) and returns bg untouched wherever fg == bg.
    std::vector<cv::Mat> delta;
    for (int i = 0; i < levels; ++i) {
        cv::Mat m;
        if (foreground.channels == 1) {
            m = gm[i];
        } else {
            std::vector<cv::Mat> planes(static_cast<std::size_t>(foreground.channels), gm[i]);
            cv::merge(planes, m);
        }
        delta.push_back(m.mul(lf[i] - lb[i]));
    }
    cv::Mat out = bg + collapse(delta);
    cv::min(cv::max(out, 0.0), 1.0, out);
    return from_mat(out);
}

}  // namespace maskfill::post
