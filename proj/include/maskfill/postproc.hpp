#ifndef MASKFILL_POSTPROC_HPP
#define MASKFILL_POSTPROC_HPP

#include <vector>

#include <opencv2/core.hpp>

#include "maskfill/image.hpp"

namespace maskfill::post {

inline constexpr int kDefaultLevels = 4;

/// Union of the person segmentation and the salient-contour interior (both
/// 1-channel, thresholded at 0.5), optionally feathered by a Gaussian of the
/// given sigma. Pass an empty image for a missing contour map.
Image foreground_mask(const Image& person_seg, const Image& contour_interior, double feather_sigma = 1.0);

/// Best-effort saliency: Sobel gradient magnitude, Otsu threshold, closing,
/// then the filled interior of the largest external contour.
Image salient_contour_interior(const Image& image);

/// Gaussian pyramid with the 5-tap binomial kernel; level 0 is the input.
std::vector<cv::Mat> gaussian_pyramid(const cv::Mat& image, int levels);
/// Band-pass levels plus the coarsest Gaussian level as the last entry.
std::vector<cv::Mat> laplacian_pyramid(const cv::Mat& image, int levels);
cv::Mat collapse(const std::vector<cv::Mat>& pyramid);

/// Largest usable level count for an image of this size.
int max_levels(int height, int width);

/// Multi-band composite of `foreground` over `background` with a 1-channel
/// mask in [0,1]. Output is clipped to [0,1].
Image laplacian_blend(const Image& foreground, const Image& background, const Image& mask, int levels = kDefaultLevels);

cv::Mat to_mat(const Image& image);
Image from_mat(const cv::Mat& mat);

}  // namespace maskfill::post

#endif  // MASKFILL_POSTPROC_HPP
