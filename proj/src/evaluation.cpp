#include "maskfill/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <zlib.h>

#include <torch/torch.h>

#include "maskfill/extractors.hpp"
#include "maskfill/tensor_io.hpp"

namespace maskfill::eval {

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("pearson: vectors differ in length");
    if (a.size() < 2) throw UndefinedScore("pearson: need at least two elements");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) throw UndefinedScore("pearson: zero variance");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Embedding pool_template(const std::vector<std::vector<Embedding>>& media_groups) {
    if (media_groups.empty()) throw std::invalid_argument("pool_template: empty template");
    std::size_t dim = 0;
    for (const auto& g : media_groups) {
        if (g.empty()) throw std::invalid_argument("pool_template: empty media group");
        for (const auto& e : g) {
            if (dim == 0) dim = e.vector.size();
            if (e.vector.size() != dim) throw std::invalid_argument("pool_template: mixed embedding dimensions");
        }
    }
    Embedding out;
    out.vector.assign(dim, 0.0);
    out.subject = media_groups.front().front().subject;
    for (const auto& g : media_groups) {
        std::vector<double> mean(dim, 0.0);
        for (const auto& e : g)
            for (std::size_t i = 0; i < dim; ++i) mean[i] += e.vector[i];
        for (std::size_t i = 0; i < dim; ++i) out.vector[i] += mean[i] / static_cast<double>(g.size());
    }
    for (auto& v : out.vector) v /= static_cast<double>(media_groups.size());
    return out;
}

double VerificationResult::tpr_at(double target_fpr) const {
    double best = 0.0;
    for (const auto& p : roc)
        if (p.fpr <= target_fpr) best = std::max(best, p.tpr);
    return best;
}

VerificationResult verification_roc(std::span<const double> genuine, std::span<const double> impostor,
                                    std::span<const double> target_fprs) {
    if (genuine.empty() || impostor.empty()) throw std::invalid_argument("verification_roc: empty score list");
    std::vector<double> g(genuine.begin(), genuine.end()), im(impostor.begin(), impostor.end());
    std::sort(g.begin(), g.end(), std::greater<>());
    std::sort(im.begin(), im.end(), std::greater<>());
    std::vector<double> thresholds;
    thresholds.reserve(g.size() + im.size());
    std::merge(g.begin(), g.end(), im.begin(), im.end(), std::back_inserter(thresholds), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    VerificationResult r;
    r.genuine_count = g.size();
    r.impostor_count = im.size();
    const double ng = static_cast<double>(g.size()), ni = static_cast<double>(im.size());
    r.roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t gi = 0, ii = 0;
    for (double t : thresholds) {
        while (gi < g.size() && g[gi] >= t) ++gi;
        while (ii < im.size() && im[ii] >= t) ++ii;
        r.roc.push_back({t, static_cast<double>(ii) / ni, static_cast<double>(gi) / ng});
    }
    for (double f : target_fprs) r.operating_points.push_back({f, r.tpr_at(f), [&] {
        double thr = std::numeric_limits<double>::infinity();
        double best = -1.0;
        for (const auto& p : r.roc)
            if (p.fpr <= f && p.tpr > best) {
                best = p.tpr;
                thr = p.threshold;
            }
        return thr;
    }()});
    return r;
}

double mean_correlation(const std::vector<Embedding>& set_a, const std::vector<Embedding>& set_b, bool same_set) {
    if (set_a.empty() || set_b.empty()) throw std::invalid_argument("mean_correlation: empty set");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < set_a.size(); ++i) {
        for (std::size_t j = 0; j < set_b.size(); ++j) {
            if (same_set && i == j) continue;
            sum += pearson(set_a[i].vector, set_b[j].vector);
            ++count;
        }
    }
    if (count == 0) {
        // A single-element set against itself: the only pair is the self-pair.
        return pearson(set_a.front().vector, set_b.front().vector);
    }
    return sum / static_cast<double>(count);
}

Embedding extract_embedding(const Image& image, const FeatureExtractor* extractor, std::string source_id, std::string subject) {
    if (extractor == nullptr) throw std::invalid_argument("extract_embedding: no extractor loaded");
    torch::NoGradGuard no_grad;
    const auto f = extractor->forward(image_to_tensor(image).unsqueeze(0)).to(torch::kFloat64).contiguous();
    Embedding e;
    e.vector.assign(f.data_ptr<double>(), f.data_ptr<double>() + f.numel());
    e.source_id = std::move(source_id);
    e.subject = std::move(subject);
    return e;
}

std::vector<ScorePair> score_within(const std::vector<Embedding>& set) {
    std::vector<ScorePair> out;
    for (std::size_t i = 0; i < set.size(); ++i)
        for (std::size_t j = i + 1; j < set.size(); ++j)
            out.push_back({set[i].source_id, set[j].source_id, pearson(set[i].vector, set[j].vector),
                           set[i].subject == set[j].subject});
    return out;
}

std::vector<ScorePair> score_across(const std::vector<Embedding>& originals, const std::vector<Embedding>& synthetic) {
    std::vector<ScorePair> out;
    for (std::size_t i = 0; i < originals.size(); ++i)
        for (std::size_t j = 0; j < synthetic.size(); ++j) {
            if (i == j) continue;
            out.push_back({originals[i].source_id, synthetic[j].source_id, pearson(originals[i].vector, synthetic[j].vector),
                           originals[i].subject == synthetic[j].subject});
        }
    return out;
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScorePair>& scores) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.precision(17);
    f << "a,b,score,genuine\n";
    for (const auto& s : scores) f << s.a << ',' << s.b << ',' << s.score << ',' << (s.genuine ? 1 : 0) << '\n';
}

void write_roc_csv(const std::filesystem::path& path, const VerificationResult& r) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f.precision(17);
    f << "threshold,fpr,tpr\n";
    for (const auto& p : r.roc) f << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
}

namespace {

std::string source_key(const std::string& source_id) {
    const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(source_id.data()), static_cast<uInt>(source_id.size()));
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
    return buf;
}

}  // namespace

Archive embeddings_to_archive(const std::vector<Embedding>& embeddings) {
    Archive a;
    a.metadata["kind"] = "maskfill-embeddings";
    auto items = nlohmann::json::array();
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        const auto& e = embeddings[i];
        const auto key = source_key(e.source_id) + "/" + std::to_string(i);
        items.push_back({{"source", e.source_id}, {"subject", e.subject}, {"key", key}});
        NamedArray arr;
        arr.name = key;
        arr.dtype = DType::f64;
        arr.shape = {static_cast<std::int64_t>(e.vector.size())};
        arr.bytes.resize(e.vector.size() * sizeof(double));
        std::memcpy(arr.bytes.data(), e.vector.data(), arr.bytes.size());
        a.add(std::move(arr));
    }
    a.metadata["items"] = items;
    return a;
}

std::vector<Embedding> embeddings_from_archive(const Archive& a) {
    if (a.metadata.value("kind", "") != "maskfill-embeddings") throw ArchiveError("archive does not hold embeddings");
    std::vector<Embedding> out;
    for (const auto& item : a.metadata.at("items")) {
        Embedding e;
        e.source_id = item.at("source").get<std::string>();
        e.subject = item.at("subject").get<std::string>();
        const auto& arr = a.get(item.at("key").get<std::string>());
        if (arr.dtype != DType::f64) throw ArchiveError("embedding " + e.source_id + " is not float64");
        e.vector.resize(static_cast<std::size_t>(arr.numel()));
        std::memcpy(e.vector.data(), arr.bytes.data(), arr.bytes.size());
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace maskfill::eval
