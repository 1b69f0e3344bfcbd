#ifndef MASKFILL_DATAPIPE_HPP
#define MASKFILL_DATAPIPE_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "maskfill/archive.hpp"
#include "maskfill/image.hpp"

namespace maskfill::data {

inline constexpr int kFrameSize = 128;
inline constexpr std::array<int, 5> kResolutions = {8, 16, 32, 64, 128};

/// Canonical eye positions in the aligned frame, as fractions of width/height.
inline constexpr double kLeftEyeX = 0.3;
inline constexpr double kRightEyeX = 0.7;
inline constexpr double kEyeY = 0.4;

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
};

/// 68 facial keypoints plus the two eye centers (image-left eye first).
struct LandmarkSet {
    std::array<Point, 68> points{};
    std::array<Point, 2> eye_centers{};

    /// Throws std::invalid_argument on non-finite coordinates or coincident eyes.
    void validate() const;
    bool operator==(const LandmarkSet&) const = default;
};

/// One training/inference sample at a single resolution.
/// masked == ground_truth inside the mask and 0 outside; mask is binary.
struct FaceSample {
    Image ground_truth;
    Image masked;
    Image mask;
    std::string subject_id;

    /// Throws std::logic_error if any sample invariant is violated.
    void check_invariants() const;
    bool operator==(const FaceSample&) const = default;
};

/// Five-level pyramid, index i holds resolution kResolutions[i].
struct ImagePyramid {
    std::array<FaceSample, 5> levels;

    [[nodiscard]] const FaceSample& at(int resolution) const;
    [[nodiscard]] FaceSample& at(int resolution);
};

int level_index(int resolution);

struct AlignedFace {
    Image image;
    LandmarkSet landmarks;
};

/// Similarity warp placing the eye centers at the canonical frame positions;
/// output is kFrameSize x kFrameSize.
AlignedFace align_face(const Image& image, const LandmarkSet& landmarks);

/// 2x3 forward similarity matrix (row-major) used by align_face.
std::array<double, 6> alignment_transform(const LandmarkSet& landmarks, int frame_size = kFrameSize);

Point apply_transform(const std::array<double, 6>& m, Point p);

/// Convex hull (counter-clockwise in image coordinates, no collinear points).
std::vector<Point> convex_hull(std::vector<Point> points);

/// Filled convex hull of the points, rasterized at integer pixel centers
/// (boundary inclusive). Throws if the hull has zero area.
Image rasterize_hull(const std::vector<Point>& points, int height, int width);

FaceSample compute_face_mask(const Image& aligned, const LandmarkSet& landmarks, std::string subject_id = {});

/// 2x reduction with the bilinear kernel at half-pixel centers (mean of each 2x2 block).
Image halve(const Image& image);

ImagePyramid build_pyramid(const FaceSample& sample);

/// Pyramid of an inference input where only the masked image and mask are known.
/// Returns (masked, mask) per level using the same reduction as build_pyramid.
std::array<std::pair<Image, Image>, 5> build_input_pyramid(const Image& masked, const Image& mask);

Image mirror(const Image& image);
FaceSample augment_mirror(const FaceSample& sample);

struct SynthFace {
    Image image;
    LandmarkSet landmarks;
};

/// Deterministic procedural face; same seed gives bit-identical output.
SynthFace synth_face(std::uint64_t seed);

/// Procedural face whose appearance is drawn from `subject` and whose pose,
/// lighting and noise are drawn from `variant`.
SynthFace synth_subject_face(std::uint64_t subject, std::uint64_t variant);

/// Landmark file: 70 rows "x y" (68 points then left/right eye centers);
/// '#' starts a comment. A .json file instead holds
/// {"points": [[x,y],...], "eye_centers": [[x,y],[x,y]]}.
LandmarkSet read_landmarks(const std::filesystem::path& path);
/// Writes the JSON form for a .json path and the text form otherwise.
void write_landmarks(const std::filesystem::path& path, const LandmarkSet& landmarks);

struct DatasetOptions {
    bool mirror = false;
};

struct Dataset {
    std::vector<FaceSample> samples;
    std::vector<std::string> names;  ///< source file stem per sample; mirrored copies get "<stem>-mirror"
    std::vector<std::string> warnings;
};

/// Loads every image in `image_dir` whose stem has a landmark file
/// (<stem>.txt / .pts / .json) in `landmark_dir`, then aligns and masks it.
/// Images that cannot be read or lack valid landmarks are skipped with a
/// warning. Throws std::runtime_error if nothing usable remains.
/// The subject id is the file stem up to its last '_' (whole stem if none).
Dataset load_dataset(const std::filesystem::path& image_dir, const std::filesystem::path& landmark_dir,
                     const DatasetOptions& options = {});

std::string subject_from_stem(const std::string& stem);

Archive pyramids_to_archive(const std::vector<ImagePyramid>& pyramids);
std::vector<ImagePyramid> pyramids_from_archive(const Archive& archive);

}  // namespace maskfill::data

#endif  // MASKFILL_DATAPIPE_HPP
