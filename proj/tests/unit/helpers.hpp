#ifndef MASKFILL_TEST_HELPERS_HPP
#define MASKFILL_TEST_HELPERS_HPP

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "maskfill/datapipe.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Directory removed when the object goes out of scope.
class TempDir {
public:
    TempDir() {
        std::string templ = (fs::temp_directory_path() / "maskfill-test-XXXXXX").string();
        if (mkdtemp(templ.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
        path_ = templ;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Aligned, masked sample of a procedural subject face.
inline maskfill::data::FaceSample fixture_sample(std::uint64_t subject, std::uint64_t variant) {
    using namespace maskfill::data;
    const auto face = synth_subject_face(subject, variant);
    const auto aligned = align_face(face.image, face.landmarks);
    return compute_face_mask(aligned.image, aligned.landmarks, "s" + std::to_string(subject));
}

/// n pyramids: two variants each of n/2 subjects.
inline std::vector<maskfill::data::ImagePyramid> fixture_pyramids(int n, std::uint64_t base = 11) {
    std::vector<maskfill::data::ImagePyramid> out;
    for (int i = 0; i < n; ++i) out.push_back(maskfill::data::build_pyramid(fixture_sample(base + i / 2, i % 2)));
    return out;
}

}  // namespace testing

#endif  // MASKFILL_TEST_HELPERS_HPP
