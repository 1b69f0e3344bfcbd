#include "maskfill/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include <opencv2/imgproc.hpp>

namespace maskfill::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

void LandmarkSet::validate() const {
    auto finite = [](const Point& p) { return std::isfinite(p.x) && std::isfinite(p.y); };
    for (const auto& p : points)
        if (!finite(p)) throw std::invalid_argument("landmark coordinate is not finite");
    for (const auto& p : eye_centers)
        if (!finite(p)) throw std::invalid_argument("eye center coordinate is not finite");
    const double dx = eye_centers[1].x - eye_centers[0].x;
    const double dy = eye_centers[1].y - eye_centers[0].y;
    if (std::hypot(dx, dy) < 1e-6) throw std::invalid_argument("degenerate eye centers (coincident)");
}

void FaceSample::check_invariants() const {
    if (!ground_truth.same_shape(masked) || ground_truth.channels != 3 || mask.channels != 1 ||
        mask.height != ground_truth.height || mask.width != ground_truth.width) {
        throw std::logic_error("FaceSample: inconsistent shapes");
    }
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            const float m = mask.at(y, x);
            if (m != 0.0f && m != 1.0f) throw std::logic_error("FaceSample: mask is not binary");
            for (int c = 0; c < 3; ++c) {
                const float g = ground_truth.at(y, x, c);
                const float v = masked.at(y, x, c);
                if (g < 0.0f || g > 1.0f) throw std::logic_error("FaceSample: pixel outside [0,1]");
                if (m == 1.0f ? v != g : v != 0.0f) throw std::logic_error("FaceSample: masked image inconsistent with mask");
            }
        }
    }
}

int level_index(int resolution) {
    for (std::size_t i = 0; i < kResolutions.size(); ++i)
        if (kResolutions[i] == resolution) return static_cast<int>(i);
    throw std::invalid_argument("unsupported resolution " + std::to_string(resolution));
}

const FaceSample& ImagePyramid::at(int resolution) const { return levels[level_index(resolution)]; }
FaceSample& ImagePyramid::at(int resolution) { return levels[level_index(resolution)]; }

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

std::array<double, 6> alignment_transform(const LandmarkSet& landmarks, int frame_size) {
    landmarks.validate();
    // Similarity as a complex affine map z -> a*z + t.
    const Point s0 = landmarks.eye_centers[0];
    const Point s1 = landmarks.eye_centers[1];
    const Point d0{kLeftEyeX * frame_size, kEyeY * frame_size};
    const Point d1{kRightEyeX * frame_size, kEyeY * frame_size};
    const double sx = s1.x - s0.x, sy = s1.y - s0.y;
    const double dx = d1.x - d0.x, dy = d1.y - d0.y;
    const double denom = sx * sx + sy * sy;
    const double ar = (dx * sx + dy * sy) / denom;
    const double ai = (dy * sx - dx * sy) / denom;
    const double tx = d0.x - (ar * s0.x - ai * s0.y);
    const double ty = d0.y - (ai * s0.x + ar * s0.y);
    return {ar, -ai, tx, ai, ar, ty};
}

Point apply_transform(const std::array<double, 6>& m, Point p) {
    return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
}

AlignedFace align_face(const Image& image, const LandmarkSet& landmarks) {
    if (image.channels != 3) throw std::invalid_argument("align_face: expected an RGB image");
    landmarks.validate();
    auto inside = [&](const Point& p) {
        return p.x >= 0.0 && p.y >= 0.0 && p.x <= image.width && p.y <= image.height;
    };
    for (const auto& p : landmarks.points)
        if (!inside(p)) throw std::invalid_argument("align_face: landmark outside image bounds");
    for (const auto& p : landmarks.eye_centers)
        if (!inside(p)) throw std::invalid_argument("align_face: eye center outside image bounds");

    const auto m = alignment_transform(landmarks);
    cv::Mat src(image.height, image.width, CV_32FC3, const_cast<float*>(image.pixels.data()));
    cv::Mat affine = (cv::Mat_<double>(2, 3) << m[0], m[1], m[2], m[3], m[4], m[5]);
    AlignedFace out;
    out.image = Image(kFrameSize, kFrameSize, 3);
    cv::Mat dst(kFrameSize, kFrameSize, CV_32FC3, out.image.pixels.data());
    cv::warpAffine(src, dst, affine, dst.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar::all(0));
    for (auto& v : out.image.pixels) v = std::clamp(v, 0.0f, 1.0f);

    for (std::size_t i = 0; i < landmarks.points.size(); ++i) out.landmarks.points[i] = apply_transform(m, landmarks.points[i]);
    for (std::size_t i = 0; i < 2; ++i) out.landmarks.eye_centers[i] = apply_transform(m, landmarks.eye_centers[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Face mask
// ---------------------------------------------------------------------------

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::vector<Point> convex_hull(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) return pts;
    std::vector<Point> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
        hull[k++] = pts[i - 1];
    }
    hull.resize(k - 1);
    return hull;
}

Image rasterize_hull(const std::vector<Point>& points, int height, int width) {
    const auto hull = convex_hull(points);
    double area = 0.0;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const auto& a = hull[i];
        const auto& b = hull[(i + 1) % hull.size()];
        area += a.x * b.y - b.x * a.y;
    }
    if (hull.size() < 3 || std::abs(area) < 1e-9) throw std::invalid_argument("face mask hull has zero area");

    constexpr double eps = 1e-9;
    Image mask(height, width, 1);
    for (int y = 0; y < height; ++y) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < hull.size(); ++i) {
            const auto& a = hull[i];
            const auto& b = hull[(i + 1) % hull.size()];
            const double ymin = std::min(a.y, b.y), ymax = std::max(a.y, b.y);
            if (y < ymin - eps || y > ymax + eps) continue;
            if (std::abs(b.y - a.y) < eps) {
                lo = std::min({lo, a.x, b.x});
                hi = std::max({hi, a.x, b.x});
            } else {
                const double t = std::clamp((y - a.y) / (b.y - a.y), 0.0, 1.0);
                const double x = a.x + t * (b.x - a.x);
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
        }
        if (lo > hi) continue;
        const int x0 = std::max(0, static_cast<int>(std::ceil(lo - eps)));
        const int x1 = std::min(width - 1, static_cast<int>(std::floor(hi + eps)));
        for (int x = x0; x <= x1; ++x) mask.at(y, x) = 1.0f;
    }
    return mask;
}

FaceSample compute_face_mask(const Image& aligned, const LandmarkSet& landmarks, std::string subject_id) {
    if (aligned.channels != 3) throw std::invalid_argument("compute_face_mask: expected an RGB image");
    FaceSample s;
    s.ground_truth = aligned;
    s.mask = rasterize_hull({landmarks.points.begin(), landmarks.points.end()}, aligned.height, aligned.width);
    s.masked = Image(aligned.height, aligned.width, 3);
    for (int y = 0; y < aligned.height; ++y)
        for (int x = 0; x < aligned.width; ++x)
            if (s.mask.at(y, x) == 1.0f)
                for (int c = 0; c < 3; ++c) s.masked.at(y, x, c) = aligned.at(y, x, c);
    s.subject_id = std::move(subject_id);
    return s;
}

// ---------------------------------------------------------------------------
// Pyramid
// ---------------------------------------------------------------------------

Image halve(const Image& image) {
    if (image.height % 2 != 0 || image.width % 2 != 0) throw std::invalid_argument("halve: odd image size");
    Image out(image.height / 2, image.width / 2, image.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < image.channels; ++c) {
                const float sum = image.at(2 * y, 2 * x, c) + image.at(2 * y, 2 * x + 1, c) +
                                  image.at(2 * y + 1, 2 * x, c) + image.at(2 * y + 1, 2 * x + 1, c);
                out.at(y, x, c) = sum * 0.25f;
            }
    return out;
}

namespace {

Image binarize(const Image& soft) {
    Image out = soft;
    for (auto& v : out.pixels) v = v >= 0.5f ? 1.0f : 0.0f;
    return out;
}

Image apply_mask(const Image& image, const Image& mask) {
    Image out(image.height, image.width, image.channels);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            if (mask.at(y, x) == 1.0f)
                for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(y, x, c);
    return out;
}

}  // namespace

ImagePyramid build_pyramid(const FaceSample& sample) {
    if (sample.ground_truth.height != kFrameSize || sample.ground_truth.width != kFrameSize) {
        throw std::invalid_argument("build_pyramid: sample must be 128x128");
    }
    ImagePyramid p;
    p.levels[4] = sample;
    Image gt = sample.ground_truth;
    Image soft_mask = sample.mask;
    for (int i = 3; i >= 0; --i) {
        gt = halve(gt);
        soft_mask = halve(soft_mask);
        auto& level = p.levels[static_cast<std::size_t>(i)];
        level.ground_truth = gt;
        level.mask = binarize(soft_mask);
        level.masked = apply_mask(gt, level.mask);
        level.subject_id = sample.subject_id;
    }
    return p;
}

std::array<std::pair<Image, Image>, 5> build_input_pyramid(const Image& masked, const Image& mask) {
    if (masked.height != kFrameSize || masked.width != kFrameSize || mask.height != kFrameSize || mask.width != kFrameSize) {
        throw std::invalid_argument("build_input_pyramid: inputs must be 128x128");
    }
    std::array<std::pair<Image, Image>, 5> out;
    out[4] = {masked, mask};
    Image img = masked;
    Image soft_mask = mask;
    for (int i = 3; i >= 0; --i) {
        img = halve(img);
        soft_mask = halve(soft_mask);
        Image m = binarize(soft_mask);
        out[static_cast<std::size_t>(i)] = {apply_mask(img, m), m};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

Image mirror(const Image& image) {
    Image out(image.height, image.width, image.channels);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c) out.at(y, image.width - 1 - x, c) = image.at(y, x, c);
    return out;
}

FaceSample augment_mirror(const FaceSample& sample) {
    return {mirror(sample.ground_truth), mirror(sample.masked), mirror(sample.mask), sample.subject_id};
}

// ---------------------------------------------------------------------------
// Synthetic faces
// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Small counter-based generator: portable and independent of <random>
/// distribution implementations, so synthetic data is identical across toolchains.
class Hash01 {
public:
    explicit Hash01(std::uint64_t seed) : state_(splitmix(seed)) {}
    double next() {
        state_ = splitmix(state_);
        return static_cast<double>(state_ >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * next(); }

private:
    std::uint64_t state_;
};

double pixel_noise(std::uint64_t seed, int x, int y) {
    const auto h = splitmix(seed ^ (static_cast<std::uint64_t>(x) << 32) ^ static_cast<std::uint64_t>(y) * 0x632BE59BD9B4E019ULL);
    return static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5;
}

struct Rgb {
    double r, g, b;
};

Rgb mix(Rgb a, Rgb b, double t) { return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t}; }

struct SubjectLook {
    Rgb skin, hair, clothes, bg_a, bg_b, lips;
    double face_a, face_b, hair_volume, hair_drop, stripe_freq, stripe_angle;
};

SubjectLook draw_subject(std::uint64_t subject) {
    Hash01 h(subject * 7919 + 17);
    SubjectLook s{};
    const double tone = h.uniform(0.25, 0.9);
    s.skin = {std::min(1.0, tone + 0.12), tone * h.uniform(0.75, 0.85), tone * h.uniform(0.55, 0.7)};
    s.hair = {h.uniform(0.02, 0.6), h.uniform(0.02, 0.45), h.uniform(0.0, 0.3)};
    s.clothes = {h.uniform(0.05, 0.95), h.uniform(0.05, 0.95), h.uniform(0.05, 0.95)};
    s.bg_a = {h.uniform(0.1, 0.9), h.uniform(0.1, 0.9), h.uniform(0.1, 0.9)};
    s.bg_b = {h.uniform(0.1, 0.9), h.uniform(0.1, 0.9), h.uniform(0.1, 0.9)};
    s.lips = {h.uniform(0.55, 0.85), h.uniform(0.2, 0.35), h.uniform(0.25, 0.4)};
    s.face_a = h.uniform(30.0, 34.0);
    s.face_b = h.uniform(38.0, 44.0);
    s.hair_volume = h.uniform(6.0, 16.0);
    s.hair_drop = h.uniform(62.0, 84.0);
    s.stripe_freq = h.uniform(0.05, 0.3);
    s.stripe_angle = h.uniform(0.0, std::numbers::pi);
    return s;
}

constexpr double kCx = 64.0;
constexpr double kCy = 70.0;

// Colour of canonical-frame location (u, v); canonical eyes sit at the
// aligned-frame positions so an aligned synthetic face is roughly upright.
Rgb render_canonical(const SubjectLook& s, double u, double v, double light) {
    const double ex0 = kLeftEyeX * kFrameSize, ex1 = kRightEyeX * kFrameSize, ey = kEyeY * kFrameSize;

    const double t = std::clamp(v / kFrameSize, 0.0, 1.0);
    Rgb c = mix(s.bg_a, s.bg_b, t);
    const double stripe = std::sin((u * std::cos(s.stripe_angle) + v * std::sin(s.stripe_angle)) * s.stripe_freq);
    c = mix(c, {c.r * 0.7, c.g * 0.7, c.b * 0.7}, 0.5 + 0.5 * stripe);

    // Shoulders / clothes.
    if (v > 104.0 && std::abs(u - kCx) < 26.0 + (v - 104.0) * 2.0) c = mix(s.clothes, {0, 0, 0}, 0.15 * (v - 104.0) / 24.0);
    // Neck.
    if (std::abs(u - kCx) < 14.0 && v > 90.0 && v < 112.0) c = mix(s.skin, {0, 0, 0}, 0.25);

    // Hair cap behind/above the face.
    const double hu = (u - kCx) / (s.face_a + s.hair_volume);
    const double hv = (v - (kCy - 6.0)) / (s.face_b + s.hair_volume);
    if (hu * hu + hv * hv <= 1.0 && v < s.hair_drop) {
        const double strand = 0.5 + 0.5 * std::sin(u * 0.9 + std::sin(v * 0.2) * 2.0);
        c = mix(s.hair, {s.hair.r * 0.6, s.hair.g * 0.6, s.hair.b * 0.6}, strand);
    }

    // Face.
    const double fu = (u - kCx) / s.face_a;
    const double fv = (v - kCy) / s.face_b;
    const double r2 = fu * fu + fv * fv;
    const bool fringe = v < ey - 12.0 - 4.0 * std::cos(fu * 2.0);
    if (r2 <= 1.0 && !fringe) {
        c = mix(s.skin, {s.skin.r * 0.7, s.skin.g * 0.7, s.skin.b * 0.7}, 0.5 * r2);
        for (double ex : {ex0, ex1}) {
            const double du = (u - ex) / 6.0, dv = (v - ey) / 3.0;
            if (du * du + dv * dv <= 1.0) c = {0.95, 0.95, 0.95};
            if ((u - ex) * (u - ex) + (v - ey) * (v - ey) <= 5.0) c = {0.1, 0.07, 0.05};
            if (std::abs(v - (ey - 8.0 + 0.02 * (u - ex) * (u - ex))) < 1.3 && std::abs(u - ex) < 9.0) c = s.hair;
        }
        if (std::abs(u - kCx) < 3.0 && v > ey + 4.0 && v < 76.0) c = mix(c, {0, 0, 0}, 0.12);
        const double mu = (u - kCx) / 12.0, mv = (v - 92.0) / 4.5;
        if (mu * mu + mv * mv <= 1.0) c = s.lips;
    }
    return {c.r * light, c.g * light, c.b * light};
}

LandmarkSet canonical_landmarks(const SubjectLook& s) {
    LandmarkSet lm;
    const double pi = std::numbers::pi;
    const double ex0 = kLeftEyeX * kFrameSize, ex1 = kRightEyeX * kFrameSize, ey = kEyeY * kFrameSize;
    // Jaw 0..16: left temple, around the chin, right temple.
    for (int i = 0; i <= 16; ++i) {
        const double th = pi - i * pi / 16.0;
        lm.points[static_cast<std::size_t>(i)] = {kCx + s.face_a * std::cos(th), kCy + s.face_b * std::sin(th)};
        if (i == 0 || i == 16) lm.points[static_cast<std::size_t>(i)].y = ey;
    }
    // Brows 17..26.
    for (int i = 0; i < 5; ++i) {
        const double off = (i - 2) * 4.5;
        lm.points[static_cast<std::size_t>(17 + i)] = {ex0 + off, ey - 8.0 + 0.02 * off * off};
        lm.points[static_cast<std::size_t>(22 + i)] = {ex1 + off, ey - 8.0 + 0.02 * off * off};
    }
    // Nose bridge 27..30, nostrils 31..35.
    for (int i = 0; i < 4; ++i) lm.points[static_cast<std::size_t>(27 + i)] = {kCx, ey + 3.0 + i * 6.0};
    for (int i = 0; i < 5; ++i) lm.points[static_cast<std::size_t>(31 + i)] = {kCx - 8.0 + i * 4.0, 76.0 + (i == 2 ? 1.5 : 0.0)};
    // Eyes 36..41, 42..47.
    for (int i = 0; i < 6; ++i) {
        const double th = pi - i * pi / 3.0;
        lm.points[static_cast<std::size_t>(36 + i)] = {ex0 + 6.0 * std::cos(th), ey - 3.0 * std::sin(th)};
        lm.points[static_cast<std::size_t>(42 + i)] = {ex1 + 6.0 * std::cos(th), ey - 3.0 * std::sin(th)};
    }
    // Lips 48..59 outer, 60..67 inner.
    for (int i = 0; i < 12; ++i) {
        const double th = pi - i * 2.0 * pi / 12.0;
        lm.points[static_cast<std::size_t>(48 + i)] = {kCx + 12.0 * std::cos(th), 92.0 - 4.5 * std::sin(th)};
    }
    for (int i = 0; i < 8; ++i) {
        const double th = pi - i * 2.0 * pi / 8.0;
        lm.points[static_cast<std::size_t>(60 + i)] = {kCx + 8.0 * std::cos(th), 92.0 - 1.5 * std::sin(th)};
    }
    lm.eye_centers = {Point{ex0, ey}, Point{ex1, ey}};
    return lm;
}

}  // namespace

SynthFace synth_subject_face(std::uint64_t subject, std::uint64_t variant) {
    const SubjectLook look = draw_subject(subject);
    Hash01 h(splitmix(subject) ^ (variant * 0x2545F4914F6CDD1DULL + 3));
    const double angle = h.uniform(-0.2, 0.2);
    const double scale = h.uniform(0.9, 1.1);
    const double tx = h.uniform(-5.0, 5.0), ty = h.uniform(-5.0, 5.0);
    const double light = h.uniform(0.85, 1.1);
    const std::uint64_t noise_seed = splitmix(subject * 31 + variant);

    // canonical -> camera: rotate/scale about the frame centre, then shift.
    const double ca = std::cos(angle) * scale, sa = std::sin(angle) * scale;
    const double c0 = kFrameSize / 2.0;
    auto forward = [&](Point p) {
        const double x = p.x - c0, y = p.y - c0;
        return Point{ca * x - sa * y + c0 + tx, sa * x + ca * y + c0 + ty};
    };
    auto inverse = [&](double x, double y) {
        const double det = ca * ca + sa * sa;
        const double dx = x - c0 - tx, dy = y - c0 - ty;
        return Point{(ca * dx + sa * dy) / det + c0, (-sa * dx + ca * dy) / det + c0};
    };

    SynthFace out;
    out.image = Image(kFrameSize, kFrameSize, 3);
    for (int y = 0; y < kFrameSize; ++y) {
        for (int x = 0; x < kFrameSize; ++x) {
            const Point q = inverse(x, y);
            const Rgb c = render_canonical(look, q.x, q.y, light);
            const double n = 0.06 * pixel_noise(noise_seed, x, y);
            out.image.at(y, x, 0) = static_cast<float>(std::clamp(c.r + n, 0.0, 1.0));
            out.image.at(y, x, 1) = static_cast<float>(std::clamp(c.g + n, 0.0, 1.0));
            out.image.at(y, x, 2) = static_cast<float>(std::clamp(c.b + n, 0.0, 1.0));
        }
    }
    const LandmarkSet canon = canonical_landmarks(look);
    for (std::size_t i = 0; i < canon.points.size(); ++i) out.landmarks.points[i] = forward(canon.points[i]);
    for (std::size_t i = 0; i < 2; ++i) out.landmarks.eye_centers[i] = forward(canon.eye_centers[i]);
    return out;
}

SynthFace synth_face(std::uint64_t seed) { return synth_subject_face(seed, seed); }

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

LandmarkSet read_landmarks(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open landmark file: " + path.string());
    std::vector<Point> pts;
    if (path.extension() == ".json") {
        nlohmann::json j;
        try {
            f >> j;
            for (const auto& p : j.at("points")) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            for (const auto& p : j.at("eye_centers")) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("malformed landmark JSON " + path.string() + ": " + e.what());
        }
    } else {
        std::string line;
        while (std::getline(f, line)) {
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            std::istringstream ss(line);
            Point p;
            if (!(ss >> p.x)) continue;
            if (!(ss >> p.y)) throw std::runtime_error("malformed landmark row in " + path.string());
            pts.push_back(p);
        }
    }
    if (pts.size() != 70) {
        throw std::runtime_error("landmark file " + path.string() + " has " + std::to_string(pts.size()) +
                                 " points (expected 68 + 2 eye centers)");
    }
    LandmarkSet lm;
    std::copy_n(pts.begin(), 68, lm.points.begin());
    lm.eye_centers = {pts[68], pts[69]};
    lm.validate();
    return lm;
}

void write_landmarks(const fs::path& path, const LandmarkSet& lm) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write landmark file: " + path.string());
    if (path.extension() == ".json") {
        nlohmann::json j{{"points", nlohmann::json::array()}, {"eye_centers", nlohmann::json::array()}};
        for (const auto& p : lm.points) j["points"].push_back({p.x, p.y});
        for (const auto& p : lm.eye_centers) j["eye_centers"].push_back({p.x, p.y});
        f << j.dump() << '\n';
        return;
    }
    f.precision(17);
    f << "# 68 landmarks then left and right eye centers, one \"x y\" per row\n";
    for (const auto& p : lm.points) f << p.x << ' ' << p.y << '\n';
    for (const auto& p : lm.eye_centers) f << p.x << ' ' << p.y << '\n';
}

std::string subject_from_stem(const std::string& stem) {
    const auto pos = stem.rfind('_');
    return pos == std::string::npos || pos == 0 ? stem : stem.substr(0, pos);
}

Dataset load_dataset(const fs::path& image_dir, const fs::path& landmark_dir, const DatasetOptions& options) {
    if (!fs::is_directory(image_dir)) throw std::runtime_error("image directory not found: " + image_dir.string());
    if (!fs::is_directory(landmark_dir)) throw std::runtime_error("landmark directory not found: " + landmark_dir.string());

    std::vector<fs::path> images;
    for (const auto& entry : fs::directory_iterator(image_dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") images.push_back(entry.path());
    }
    std::sort(images.begin(), images.end());

    Dataset out;
    auto warn = [&](std::string msg) {
        std::cerr << "warning: " << msg << '\n';
        out.warnings.push_back(std::move(msg));
    };
    for (const auto& img_path : images) {
        const auto stem = img_path.stem().string();
        fs::path lm_path;
        for (const char* ext : {".txt", ".pts", ".json"}) {
            if (fs::exists(landmark_dir / (stem + ext))) {
                lm_path = landmark_dir / (stem + ext);
                break;
            }
        }
        if (lm_path.empty()) {
            warn("skipping " + img_path.filename().string() + ": no landmark file");
            continue;
        }
        try {
            const Image img = read_image(img_path);
            const LandmarkSet lm = read_landmarks(lm_path);
            const AlignedFace aligned = align_face(img, lm);
            FaceSample s = compute_face_mask(aligned.image, aligned.landmarks, subject_from_stem(stem));
            out.names.push_back(stem);
            if (options.mirror) {
                FaceSample m = augment_mirror(s);
                out.samples.push_back(std::move(s));
                out.samples.push_back(std::move(m));
                out.names.push_back(stem + "-mirror");
            } else {
                out.samples.push_back(std::move(s));
            }
        } catch (const std::exception& e) {
            warn("skipping " + img_path.filename().string() + ": " + e.what());
        }
    }
    if (out.samples.empty()) throw std::runtime_error("dataset is empty: no usable images in " + image_dir.string());
    return out;
}

// ---------------------------------------------------------------------------
// Sample archives
// ---------------------------------------------------------------------------

Archive pyramids_to_archive(const std::vector<ImagePyramid>& pyramids) {
    Archive a;
    a.metadata["kind"] = "maskfill-samples";
    a.metadata["count"] = pyramids.size();
    auto subjects = nlohmann::json::array();
    for (std::size_t i = 0; i < pyramids.size(); ++i) {
        subjects.push_back(pyramids[i].levels[4].subject_id);
        for (int r : kResolutions) {
            const auto& s = pyramids[i].at(r);
            const std::string prefix = "sample/" + std::to_string(i) + "/r" + std::to_string(r) + "/";
            a.add(NamedArray::from_floats(prefix + "ground_truth", {r, r, 3}, s.ground_truth.pixels));
            a.add(NamedArray::from_floats(prefix + "masked", {r, r, 3}, s.masked.pixels));
            a.add(NamedArray::from_floats(prefix + "mask", {r, r, 1}, s.mask.pixels));
        }
    }
    a.metadata["subjects"] = subjects;
    return a;
}

std::vector<ImagePyramid> pyramids_from_archive(const Archive& a) {
    if (a.metadata.value("kind", "") != "maskfill-samples") throw ArchiveError("archive does not hold preprocessed samples");
    const auto count = a.metadata.at("count").get<std::size_t>();
    const auto& subjects = a.metadata.at("subjects");
    std::vector<ImagePyramid> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        for (int r : kResolutions) {
            const std::string prefix = "sample/" + std::to_string(i) + "/r" + std::to_string(r) + "/";
            auto load = [&](const std::string& name, int channels) {
                const auto& e = a.get(prefix + name);
                if (e.shape != std::vector<std::int64_t>{r, r, channels}) throw ArchiveError("bad shape for " + e.name);
                Image im(r, r, channels);
                im.pixels = e.to_floats();
                return im;
            };
            auto& s = out[i].at(r);
            s.ground_truth = load("ground_truth", 3);
            s.masked = load("masked", 3);
            s.mask = load("mask", 1);
            s.subject_id = subjects.at(i).get<std::string>();
        }
    }
    return out;
}

}  // namespace maskfill::data
