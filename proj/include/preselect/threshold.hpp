#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace preselect {

/// Resolution of the pass-one score histogram over [0, 1].
inline constexpr std::size_t kThresholdBins = std::size_t{1} << 16;

inline std::size_t score_bin(double score) noexcept {
    if (!(score > 0.0)) return 0;
    const auto b = static_cast<std::size_t>(score * static_cast<double>(kThresholdBins));
    return b < kThresholdBins ? b : kThresholdBins - 1;
}

/// Tie-break hash of a document id (64-bit FNV-1a, unseeded).
std::uint64_t tie_break_hash(std::string_view doc_id) noexcept;

class ScoreHistogram {
public:
    ScoreHistogram() : counts_(kThresholdBins, 0) {}
    void add(double score) {
        ++counts_[score_bin(score)];
        ++total_;
    }
    void merge(const ScoreHistogram& other);
    std::uint64_t total() const noexcept { return total_; }
    std::uint64_t count(std::size_t bin) const { return counts_[bin]; }

private:
    std::vector<std::uint64_t> counts_;
    std::uint64_t total_ = 0;
};

/// A document competing for the last admitted slots inside the boundary bin.
struct BoundaryCandidate {
    double score = 0.0;
    std::uint64_t hash = 0;
    std::string id;
};

/// Admission rule realizing a target count. Documents in bins above
/// `boundary_bin` are admitted; inside the boundary bin the documents are
/// ranked by (score desc, id hash asc, id asc) and the first `boundary_need`
/// are admitted.
struct Threshold {
    double fraction = 0.0;
    std::uint64_t total = 0;
    std::uint64_t target = 0;
    /// Lower edge of the boundary bin; every admitted score is >= this.
    double threshold = 0.0;
    std::size_t boundary_bin = 0;
    std::uint64_t above = 0;
    std::uint64_t boundary_total = 0;
    std::uint64_t boundary_need = 0;
    bool admit_all = false;
    bool admit_none = false;

    /// True once the in-bin cutoff is known (or not needed).
    bool resolved = false;
    BoundaryCandidate cutoff;

    bool needs_boundary_pass() const noexcept { return !resolved; }
    bool in_boundary(double score) const noexcept { return score_bin(score) == boundary_bin; }

    /// Fixes the in-bin cutoff from the full candidate list of the boundary bin.
    void resolve(std::vector<BoundaryCandidate> candidates);

    /// Requires resolved.
    bool admits(double score, std::string_view doc_id) const;
    /// The decision when it does not depend on the id itself, that is unless
    /// (score, hash) equals the cutoff's. Candidates may be resolved with
    /// blank ids when no other candidate shares the cutoff's (score, hash).
    /// Requires resolved.
    std::optional<bool> admits(double score, std::uint64_t id_hash) const;
};

/// Target count round(fraction x total) and the bin holding its boundary.
/// Throws EmptyInputError on an empty histogram and ConfigError when
/// fraction is outside (0, 1].
Threshold plan_threshold(const ScoreHistogram& hist, double fraction);

struct ScoredDoc {
    std::string id;
    double score = 0.0;
};

/// In-memory form of the two-pass procedure.
Threshold compute_threshold(std::span<const ScoredDoc> scores, double fraction);

}  // namespace preselect
