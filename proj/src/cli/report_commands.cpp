#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include <opencv2/imgproc.hpp>

#include "commands.hpp"
#include "maskfill/datapipe.hpp"
#include "maskfill/evaluation.hpp"
#include "maskfill/extractors.hpp"
#include "maskfill/postproc.hpp"
#include "maskfill/training.hpp"

namespace maskfill::cli {

namespace {

// Canvases are drawn directly in RGB order, so no channel swap is needed.
Image from_canvas(const cv::Mat& canvas) {
    Image out(canvas.rows, canvas.cols, 3);
    for (int y = 0; y < canvas.rows; ++y) {
        const auto* row = canvas.ptr<cv::Vec3b>(y);
        for (int x = 0; x < canvas.cols; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = row[x][c] / 255.0f;
    }
    return out;
}

cv::Mat to_canvas(const Image& image) {
    const Image rgb = image.channels == 1 ? to_rgb(image) : image;
    cv::Mat canvas(rgb.height, rgb.width, CV_8UC3);
    for (int y = 0; y < rgb.height; ++y) {
        auto* row = canvas.ptr<cv::Vec3b>(y);
        for (int x = 0; x < rgb.width; ++x)
            for (int c = 0; c < 3; ++c)
                row[x][c] = static_cast<unsigned char>(std::lround(std::clamp(rgb.at(y, x, c), 0.0f, 1.0f) * 255.0f));
    }
    return canvas;
}

std::string fmt(double v, const char* spec = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

double tpr_or_guard(const eval::VerificationResult* r, double fpr) { return r == nullptr ? 1.0 : r->tpr_at(fpr); }

std::unique_ptr<eval::VerificationResult> verify(const std::vector<eval::ScorePair>& scores, const std::vector<double>& fprs,
                                                 const std::string& label) {
    std::vector<double> genuine, impostor;
    for (const auto& s : scores) (s.genuine ? genuine : impostor).push_back(s.score);
    if (genuine.empty()) throw std::runtime_error(label + ": no genuine pairs; each subject needs at least two images");
    if (impostor.empty()) {
        std::cerr << "warning: " << label << ": no impostor pairs (single subject); TPR reported as 1.0\n";
        return nullptr;
    }
    return std::make_unique<eval::VerificationResult>(eval::verification_roc(genuine, impostor, fprs));
}

}  // namespace

Image line_chart(const std::vector<Series>& series, const std::string& title, const std::string& x_label, int width,
                 int height) {
    static const cv::Scalar palette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189},
                                         {140, 86, 75},  {227, 119, 194}, {127, 127, 127}};
    cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    const int left = 70, right = 150, top = 40, bottom = 50;
    const cv::Rect plot(left, top, width - left - right, height - top - bottom);

    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
        }
    if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    y0 = std::min(y0, 0.0);

    const auto px = [&](double x) { return plot.x + static_cast<int>(std::lround((x - x0) / (x1 - x0) * plot.width)); };
    const auto py = [&](double y) {
        return plot.y + plot.height - static_cast<int>(std::lround((y - y0) / (y1 - y0) * plot.height));
    };

    const cv::Scalar ink(40, 40, 40), grid(225, 225, 225);
    for (int i = 0; i <= 5; ++i) {
        const double yv = y0 + (y1 - y0) * i / 5.0, xv = x0 + (x1 - x0) * i / 5.0;
        cv::line(canvas, {plot.x, py(yv)}, {plot.x + plot.width, py(yv)}, grid, 1);
        cv::putText(canvas, fmt(yv, "%.3g"), {4, py(yv) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, ink, 1, cv::LINE_AA);
        cv::putText(canvas, fmt(xv, "%.0f"), {px(xv) - 12, plot.y + plot.height + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, ink, 1,
                    cv::LINE_AA);
    }
    cv::rectangle(canvas, plot, ink, 1);
    cv::putText(canvas, title, {left, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.6, ink, 1, cv::LINE_AA);
    cv::putText(canvas, x_label, {plot.x + plot.width / 2 - 30, height - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.45, ink, 1,
                cv::LINE_AA);

    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& color = palette[i % std::size(palette)];
        std::vector<cv::Point> pts;
        for (const auto& [x, y] : series[i].points)
            if (std::isfinite(x) && std::isfinite(y)) pts.emplace_back(px(x), py(y));
        if (pts.size() == 1) cv::circle(canvas, pts[0], 2, color, cv::FILLED);
        if (pts.size() > 1) cv::polylines(canvas, pts, false, color, 1, cv::LINE_AA);
        const int ly = top + 12 + static_cast<int>(i) * 20;
        cv::line(canvas, {width - right + 12, ly - 4}, {width - right + 36, ly - 4}, color, 2);
        cv::putText(canvas, series[i].label, {width - right + 42, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.45, ink, 1, cv::LINE_AA);
    }
    return from_canvas(canvas);
}

Image caption(const Image& image, const std::string& text, int strip) {
    cv::Mat canvas(image.height + strip, image.width, CV_8UC3, cv::Scalar(0, 0, 0));
    to_canvas(image).copyTo(canvas(cv::Rect(0, strip, image.width, image.height)));
    cv::putText(canvas, text, {3, strip - 5}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(255, 255, 255), 1, cv::LINE_AA);
    return from_canvas(canvas);
}

int cmd_evaluate(const EvaluateOptions& o) {
    const fs::path out_dir = o.out.empty() ? default_output("evaluation", "--out") : o.out;
    std::map<std::string, fs::path> synth_by_stem;
    for (const auto& p : list_images(o.synth)) synth_by_stem[p.stem().string()] = p;

    std::vector<fs::path> real_paths, synth_paths;
    for (const auto& p : list_images(o.real)) {
        auto it = synth_by_stem.find(p.stem().string());
        if (it == synth_by_stem.end()) continue;
        real_paths.push_back(p);
        synth_paths.push_back(it->second);
    }
    if (real_paths.size() < 2) throw std::runtime_error("need at least two images present in both directories");
    if (real_paths.size() < synth_by_stem.size() || real_paths.size() < list_images(o.real).size())
        std::cerr << "warning: only " << real_paths.size() << " file names appear in both directories\n";

    const std::shared_ptr<FeatureExtractor> extractor =
        o.extractor.empty() ? default_embedding_extractor() : load_feature_extractor(o.extractor);
    std::vector<eval::Embedding> real, synth;
    for (std::size_t i = 0; i < real_paths.size(); ++i) {
        const auto subject = data::subject_from_stem(real_paths[i].stem().string());
        real.push_back(eval::extract_embedding(read_image(real_paths[i]), extractor.get(), real_paths[i].string(), subject));
        synth.push_back(eval::extract_embedding(read_image(synth_paths[i]), extractor.get(), synth_paths[i].string(), subject));
    }

    const auto original_scores = eval::score_within(real);
    const auto ours_scores = eval::score_across(real, synth);
    const auto original = verify(original_scores, o.fprs, "original");
    const auto ours = verify(ours_scores, o.fprs, "ours");
    const double corr_original = eval::mean_correlation(real, real, true);
    const double corr_ours = eval::mean_correlation(real, synth);

    fs::create_directories(out_dir);
    eval::write_scores_csv(out_dir / "scores_original.csv", original_scores);
    eval::write_scores_csv(out_dir / "scores_ours.csv", ours_scores);
    if (original) eval::write_roc_csv(out_dir / "roc_original.csv", *original);
    if (ours) eval::write_roc_csv(out_dir / "roc_ours.csv", *ours);
    eval::embeddings_to_archive(real).save(out_dir / "embeddings_real.maskfill");
    eval::embeddings_to_archive(synth).save(out_dir / "embeddings_synth.maskfill");

    std::ofstream report(out_dir / "report.csv");
    report << "metric,original,ours\n";
    std::printf("%-24s%-12s%s\n", "metric", "Original", "Ours");
    for (const double f : o.fprs) {
        const auto name = "TPR@FPR=" + fmt(f, "%g");
        const double a = tpr_or_guard(original.get(), f), b = tpr_or_guard(ours.get(), f);
        report << name << ',' << fmt(a, "%.17g") << ',' << fmt(b, "%.17g") << '\n';
        std::printf("%-24s%-12s%s\n", name.c_str(), fmt(a).c_str(), fmt(b).c_str());
    }
    report << "mean_correlation," << fmt(corr_original, "%.17g") << ',' << fmt(corr_ours, "%.17g") << '\n';
    std::printf("%-24s%-12s%s\n", "mean correlation", fmt(corr_original).c_str(), fmt(corr_ours).c_str());
    if (!report) throw std::runtime_error("cannot write " + (out_dir / "report.csv").string());
    std::cout << real.size() << " image pairs; report in " << out_dir.string() << '\n';
    return kExitOk;
}

int cmd_replace_bg(const ReplaceBgOptions& o) {
    const Image image = read_image(o.image);
    Image background = read_image(o.background);
    if (background.height != image.height || background.width != image.width) {
        cv::Mat resized;
        cv::resize(post::to_mat(background), resized, cv::Size(image.width, image.height), 0, 0, cv::INTER_AREA);
        background = post::from_mat(resized);
    }
    const Image seg = read_gray(o.seg);
    if (seg.height != image.height || seg.width != image.width)
        throw std::runtime_error("segmentation mask size differs from the image");
    Image contour;
    if (o.auto_contour) {
        contour = post::salient_contour_interior(image);
    } else if (!o.contour.empty()) {
        contour = read_gray(o.contour);
    }
    const Image mask = post::foreground_mask(seg, contour, o.feather);
    const Image result = post::laplacian_blend(image, background, mask, o.levels);
    if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
    write_image(o.out, result);
    if (!o.mask_out.empty()) write_image(o.mask_out, mask);
    std::cout << "wrote " << o.out.string() << '\n';
    return kExitOk;
}

int cmd_plot(const PlotOptions& o) {
    const fs::path metrics_path = o.run_dir / "metrics.csv";
    if (!fs::exists(metrics_path)) throw std::runtime_error("no metrics.csv in " + o.run_dir.string());
    const fs::path out_dir = o.out.empty() ? o.run_dir : o.out;
    fs::create_directories(out_dir);

    std::map<int, Series> by_res;
    for (const auto& row : train::read_metrics(metrics_path)) {
        auto& s = by_res[row.resolution];
        s.label = std::to_string(row.resolution) + "x" + std::to_string(row.resolution);
        s.points.emplace_back(static_cast<double>(row.iteration), row.pixel);
    }
    std::vector<Series> series;
    for (auto& [res, s] : by_res) series.push_back(std::move(s));
    write_image(out_dir / "loss.png", line_chart(series, "pixel loss per block", "iteration"));
    std::cout << "wrote " << (out_dir / "loss.png").string() << '\n';

    std::vector<fs::path> snapshots;
    if (fs::is_directory(o.run_dir / "snapshots")) {
        for (const auto& e : fs::directory_iterator(o.run_dir / "snapshots"))
            if (e.path().extension() == ".ckpt") snapshots.push_back(e.path());
    }
    std::sort(snapshots.begin(), snapshots.end());
    const fs::path preview_path = o.run_dir / "preview.samples";
    if (snapshots.empty() || !fs::exists(preview_path)) {
        std::cerr << "warning: no snapshots to plot\n";
        return kExitOk;
    }
    const auto preview = data::pyramids_from_archive(Archive::load(preview_path));
    std::vector<Image> columns;
    for (const auto& path : snapshots) {
        const auto ckpt = train::load_checkpoint(path);
        const train::Hallucinator model(ckpt);
        std::vector<Image> cells;
        for (const auto& p : preview) cells.push_back(model.run(p.at(128).masked, p.at(128).mask));
        columns.push_back(caption(vconcat(cells), "epoch " + std::to_string(ckpt.epoch)));
    }
    write_image(out_dir / "snapshots.png", hconcat(columns));
    std::cout << "wrote " << (out_dir / "snapshots.png").string() << " (" << columns.size() << " snapshots)\n";
    return kExitOk;
}

}  // namespace maskfill::cli
