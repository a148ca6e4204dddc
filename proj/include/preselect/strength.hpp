#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "preselect/compression.hpp"
#include "preselect/errors.hpp"

namespace preselect {

/// Number of unordered model pairs, N(N-1)/2.
constexpr std::size_t pair_count(std::size_t n) noexcept { return n * (n - 1) / 2; }

namespace detail {

// Counts pairs i < j with v[i] > v[j] strictly, by merge sort. Equal values are
// merged left-first so ties never count.
inline std::size_t merge_count(std::vector<double>& v, std::vector<double>& scratch, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) {
        return 0;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    std::size_t inv = merge_count(v, scratch, lo, mid) + merge_count(v, scratch, mid, hi);
    std::size_t a = lo, b = mid, out = lo;
    while (a < mid && b < hi) {
        if (v[a] <= v[b]) {
            scratch[out++] = v[a++];
        } else {
            inv += mid - a;
            scratch[out++] = v[b++];
        }
    }
    while (a < mid) scratch[out++] = v[a++];
    while (b < hi) scratch[out++] = v[b++];
    std::copy(scratch.begin() + static_cast<std::ptrdiff_t>(lo), scratch.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return inv;
}

}  // namespace detail

/// Number of strictly inverted pairs (i < j, c[i] > c[j]) in a BPC vector.
template <typename Derived>
std::size_t count_inverted_pairs(const Eigen::DenseBase<Derived>& bpc) {
    std::vector<double> v(static_cast<std::size_t>(bpc.size()));
    for (Eigen::Index i = 0; i < bpc.size(); ++i) {
        const double x = static_cast<double>(bpc.derived().coeff(i));
        if (!std::isfinite(x)) {
            throw ValueError("predictive strength: non-finite BPC value");
        }
        v[static_cast<std::size_t>(i)] = x;
    }
    std::vector<double> scratch(v.size());
    return detail::merge_count(v, scratch, 0, v.size());
}

/// Predictive strength of one document. `bpc` holds one value per model,
/// ordered by ascending benchmark score. Returns the fraction of model pairs
/// whose losses are inversely ordered to their benchmark ranks: 1 when the
/// losses rank the models perfectly, 0 when perfectly backwards. Ties count 0.
template <typename Derived>
double predictive_strength(const Eigen::DenseBase<Derived>& bpc) {
    const auto n = static_cast<std::size_t>(bpc.size());
    if (n < 2) {
        throw DegenerateInputError("predictive strength needs at least two models");
    }
    return static_cast<double>(count_inverted_pairs(bpc)) / static_cast<double>(pair_count(n));
}

inline double predictive_strength(std::span<const double> bpc) {
    return predictive_strength(Eigen::Map<const Eigen::VectorXd>(bpc.data(), static_cast<Eigen::Index>(bpc.size())));
}

// ---- Roster ------------------------------------------------------------------

struct RosterEntry {
    std::string model_id;
    double benchmark_score = 0.0;
};

/// Reference models ordered by strictly increasing benchmark score.
class ModelRoster {
public:
    /// Sorts by score. Throws ConfigError on fewer than two models, tied
    /// scores, duplicate ids or non-finite scores.
    explicit ModelRoster(std::vector<RosterEntry> entries);

    const std::vector<RosterEntry>& models() const noexcept { return models_; }
    std::size_t size() const noexcept { return models_.size(); }
    std::string to_json() const;
    /// Content digest of the canonical JSON form.
    std::string digest() const;

private:
    std::vector<RosterEntry> models_;
};

ModelRoster parse_roster(std::string_view json_text);
ModelRoster load_roster(const std::filesystem::path& path);

// ---- Corpus scoring ------------------------------------------------------------

struct StrengthTable {
    /// (doc_id, strength), sorted by doc_id.
    std::vector<std::pair<std::string, double>> scores;
    std::string roster_hash;
    std::size_t num_models = 0;

    bool operator==(const StrengthTable&) const = default;
};

/// Scores every document of `losses` against `roster`. Throws SchemaError
/// naming the first roster model absent from the table.
StrengthTable score_corpus(const LossTable& losses, const ModelRoster& roster, unsigned workers = 1);

struct StrengthHistogram {
    std::vector<double> edges;  // bins + 1 edges over [0, 1]
    std::vector<std::size_t> counts;
};

/// Equal-width histogram over [0, 1]; the last bin is closed on the right.
StrengthHistogram strength_histogram(const StrengthTable& table, std::size_t bins);

/// Writes `strength.jsonl` and `manifest.json` {roster_hash, N, Z, ...} into `dir`.
void save_strength_table(const StrengthTable& table, const std::filesystem::path& dir);
StrengthTable load_strength_table(const std::filesystem::path& dir);

}  // namespace preselect
