#include <cstdio>
#include <iostream>

#include "commands.hpp"
#include "maskfill/datapipe.hpp"

namespace maskfill::cli {

int cmd_synth(const SynthOptions& o) {
    fs::create_directories(o.out / "images");
    fs::create_directories(o.out / "landmarks");
    int written = 0;
    char stem[64];
    for (int s = 0; s < o.subjects; ++s) {
        for (int k = 0; k < o.per_subject; ++k) {
            const auto face = data::synth_subject_face(o.seed * 100003 + static_cast<std::uint64_t>(s),
                                                       static_cast<std::uint64_t>(k));
            std::snprintf(stem, sizeof stem, "s%03d_%02d", s, k);
            write_image(o.out / "images" / (std::string(stem) + ".png"), face.image);
            data::write_landmarks(o.out / "landmarks" / (std::string(stem) + ".txt"), face.landmarks);
            ++written;
        }
    }
    for (int i = 0; i < o.without_landmarks; ++i) {
        const auto face = data::synth_subject_face(o.seed * 100003 + 99991 + static_cast<std::uint64_t>(i), 0);
        std::snprintf(stem, sizeof stem, "nolm_%02d", i);
        write_image(o.out / "images" / (std::string(stem) + ".png"), face.image);
    }
    std::cout << "wrote " << written << " images with landmarks and " << o.without_landmarks << " without to "
              << o.out.string() << '\n';
    return kExitOk;
}

int cmd_preprocess(const PreprocessOptions& o) {
    const fs::path out = o.out.empty() ? default_output("samples.maskfill", "--out") : o.out;
    const auto dataset = data::load_dataset(o.images, o.landmarks, {.mirror = o.mirror});

    std::vector<data::ImagePyramid> pyramids;
    pyramids.reserve(dataset.samples.size());
    for (const auto& s : dataset.samples) pyramids.push_back(data::build_pyramid(s));
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    data::pyramids_to_archive(pyramids).save(out);

    if (!o.export_dir.empty()) {
        for (const char* sub : {"aligned", "masked", "masks"}) fs::create_directories(o.export_dir / sub);
        for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
            const auto& s = dataset.samples[i];
            const auto file = dataset.names[i] + ".png";
            write_image(o.export_dir / "aligned" / file, s.ground_truth);
            write_image(o.export_dir / "masked" / file, s.masked);
            write_image(o.export_dir / "masks" / file, s.mask);
        }
    }
    std::cout << "kept " << dataset.samples.size() << " samples, skipped " << dataset.warnings.size() << " images -> "
              << out.string() << '\n';
    return kExitOk;
}

}  // namespace maskfill::cli
