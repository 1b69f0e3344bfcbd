#ifndef MASKFILL_EVALUATION_HPP
#define MASKFILL_EVALUATION_HPP

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "maskfill/archive.hpp"
#include "maskfill/image.hpp"

namespace maskfill {
class FeatureExtractor;
}

namespace maskfill::eval {

struct Embedding {
    std::vector<double> vector;
    std::string source_id;
    std::string subject;
};

/// Thrown when a correlation is undefined (constant vector, length < 2).
struct UndefinedScore : std::domain_error {
    using std::domain_error::domain_error;
};

/// Sample Pearson correlation of two equal-length vectors.
double pearson(std::span<const double> a, std::span<const double> b);

/// Two-stage average: mean within each media group, then the unweighted mean
/// of the group means.
Embedding pool_template(const std::vector<std::vector<Embedding>>& media_groups);

struct RocPoint {
    double threshold;
    double fpr;
    double tpr;
};

struct OperatingPoint {
    double target_fpr;
    double tpr;
    double threshold;
};

struct VerificationResult {
    std::vector<RocPoint> roc;  ///< ordered by decreasing threshold (increasing FPR)
    std::vector<OperatingPoint> operating_points;
    std::size_t genuine_count = 0;
    std::size_t impostor_count = 0;

    /// TPR at the given FPR target (step function: the best TPR among
    /// thresholds whose FPR does not exceed the target).
    [[nodiscard]] double tpr_at(double target_fpr) const;
};

/// Threshold sweep over the union of scores; a pair is accepted when
/// score >= threshold.
VerificationResult verification_roc(std::span<const double> genuine, std::span<const double> impostor,
                                    std::span<const double> target_fprs = {});

/// Mean pairwise Pearson over set_a x set_b. When `same_set` is true the
/// sets are the same collection and i == j pairs are skipped.
double mean_correlation(const std::vector<Embedding>& set_a, const std::vector<Embedding>& set_b, bool same_set = false);

/// Runs the extractor on one image; the vector is the extractor's output.
Embedding extract_embedding(const Image& image, const FeatureExtractor* extractor, std::string source_id = {},
                            std::string subject = {});

struct ScorePair {
    std::string a, b;
    double score;
    bool genuine;
};

/// All-vs-all scores within one set (i < j).
std::vector<ScorePair> score_within(const std::vector<Embedding>& set);
/// All cross pairs between two parallel sets, skipping pairs that come from the
/// same source index (an image against its own counterpart).
std::vector<ScorePair> score_across(const std::vector<Embedding>& originals, const std::vector<Embedding>& synthetic);

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScorePair>& scores);
void write_roc_csv(const std::filesystem::path& path, const VerificationResult& result);

/// Embedding cache; entries are keyed by a hash of the source id (image path).
Archive embeddings_to_archive(const std::vector<Embedding>& embeddings);
std::vector<Embedding> embeddings_from_archive(const Archive& archive);

}  // namespace maskfill::eval

#endif  // MASKFILL_EVALUATION_HPP
