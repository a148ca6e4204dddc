#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "preselect/classifier.hpp"
#include "preselect/corpus.hpp"

namespace preselect {

// ---- Feature influence -------------------------------------------------------

/// Pre-softmax class-score difference produced by a single one-hot unigram.
/// Positive values push towards the positive class.
struct FeatureInfluence {
    std::string token;
    double influence = 0.0;
};

/// (B_pos - B_neg) . row for any embedding row expression.
template <typename Derived>
double influence_of_row(const ClassifierModel& model, const Eigen::MatrixBase<Derived>& row) {
    return (model.output.row(0) - model.output.row(1)).template cast<double>().dot(row.template cast<double>());
}

/// Throws LookupError when `token` is not a unigram of the model.
FeatureInfluence feature_influence(const ClassifierModel& model, std::string_view token);

/// Influence of every vocabulary entry, in vocabulary id order.
Eigen::VectorXd all_influences(const ClassifierModel& model);

enum class InfluenceSign { Positive, Negative };

/// The k most positive (or most negative) unigrams; ties ordered by token.
std::vector<FeatureInfluence> top_features(const ClassifierModel& model, std::size_t k, InfluenceSign sign);

struct DecompositionReport {
    double logit_difference = 0.0;  // mean-pool then project
    double mean_influence = 0.0;    // project each unigram then average
    double abs_deviation = 0.0;
    /// abs_deviation / max(|logit_difference|, mean |influence|); 0 when both vanish.
    double relative_deviation = 0.0;
    std::size_t features = 0;
};

/// Checks that the unigram-only logit difference of `text` equals the mean
/// influence of its in-vocabulary unigrams.
DecompositionReport influence_decomposition_check(const ClassifierModel& model, std::string_view text);

// ---- Corpus analytics ----------------------------------------------------------

struct DomainDensityRow {
    std::string domain;
    std::uint64_t chars = 0;
    double char_fraction = 0.0;
};

class DomainDensityAccumulator {
public:
    void add(const Document& doc) { add(domain_or_unknown(doc), doc.char_count); }
    void add(const std::string& domain, std::uint64_t chars) { chars_[domain] += chars; }
    void merge(const DomainDensityAccumulator& other);
    std::uint64_t total_chars() const;

    /// Rows sorted by descending share (then domain). Throws EmptyInputError
    /// when no characters were seen.
    std::vector<DomainDensityRow> rows() const;

private:
    std::map<std::string, std::uint64_t> chars_;
};

std::vector<DomainDensityRow> domain_density(std::span<const Document> docs);

struct LengthHistogram {
    std::vector<std::uint64_t> bin_edges;  // strictly increasing, in characters
    std::vector<std::uint64_t> counts;     // one per [edge_i, edge_i+1)
    std::uint64_t documents = 0;
    std::uint64_t total_chars = 0;
    double mean_chars = 0.0;
};

/// Lengths below the first edge land in the first bin, lengths at or past the
/// last edge in the final bin, so counts always sum to the document count.
class LengthHistogramAccumulator {
public:
    explicit LengthHistogramAccumulator(std::vector<std::uint64_t> edges);
    void add(std::uint64_t char_count);
    void merge(const LengthHistogramAccumulator& other);
    LengthHistogram result() const;

private:
    std::vector<std::uint64_t> edges_;
    std::vector<std::uint64_t> counts_;
    std::uint64_t docs_ = 0;
    std::uint64_t chars_ = 0;
};

LengthHistogram length_histogram(std::span<const Document> docs, std::vector<std::uint64_t> edges);

/// Edges used by reports when none are configured.
std::vector<std::uint64_t> default_length_edges();

// ---- Rendering -------------------------------------------------------------------

std::string format_density_table(std::span<const DomainDensityRow> rows, std::size_t max_rows = 30);
std::string format_length_histogram(const LengthHistogram& hist);
std::string format_features(std::span<const FeatureInfluence> features);
std::string render_length_histogram_svg(const LengthHistogram& hist, std::string_view title);

}  // namespace preselect
