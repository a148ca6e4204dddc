#include "preselect/threshold.hpp"

#include <algorithm>
#include <cmath>

#include "preselect/errors.hpp"
#include "preselect/util.hpp"

namespace preselect {

std::uint64_t tie_break_hash(std::string_view doc_id) noexcept { return fnv1a64(doc_id); }

void ScoreHistogram::merge(const ScoreHistogram& other) {
    for (std::size_t i = 0; i < kThresholdBins; ++i) counts_[i] += other.counts_[i];
    total_ += other.total_;
}

namespace {

// Ranking inside the boundary bin: true if a is admitted before b.
bool ranks_before(const BoundaryCandidate& a, const BoundaryCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.hash != b.hash) return a.hash < b.hash;
    return a.id < b.id;
}

}  // namespace

Threshold plan_threshold(const ScoreHistogram& hist, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ConfigError("selection fraction must be in (0, 1]");
    }
    if (hist.total() == 0) {
        throw EmptyInputError("threshold over an empty score stream");
    }
    Threshold t;
    t.fraction = fraction;
    t.total = hist.total();
    t.target = std::min<std::uint64_t>(
        t.total, static_cast<std::uint64_t>(std::llround(fraction * static_cast<double>(t.total))));

    if (t.target == t.total) {
        t.admit_all = true;
        t.resolved = true;
        t.threshold = 0.0;
        t.above = t.total;
        return t;
    }
    if (t.target == 0) {
        t.admit_none = true;
        t.resolved = true;
        t.threshold = 1.0;
        return t;
    }

    std::uint64_t above = 0;
    std::size_t b = kThresholdBins;
    while (b-- > 0) {
        if (above + hist.count(b) >= t.target) break;
        above += hist.count(b);
    }
    t.boundary_bin = b;
    t.threshold = static_cast<double>(b) / static_cast<double>(kThresholdBins);
    t.above = above;
    t.boundary_total = hist.count(b);
    t.boundary_need = t.target - above;
    t.resolved = t.boundary_need == t.boundary_total;
    return t;
}

void Threshold::resolve(std::vector<BoundaryCandidate> candidates) {
    if (admit_all || admit_none || boundary_need == boundary_total) {
        resolved = true;
        return;
    }
    if (candidates.size() != boundary_total) {
        throw Error(ErrorKind::Internal, "boundary pass saw " + std::to_string(candidates.size()) +
                                             " documents, expected " + std::to_string(boundary_total));
    }
    const auto nth = candidates.begin() + static_cast<std::ptrdiff_t>(boundary_need - 1);
    std::nth_element(candidates.begin(), nth, candidates.end(), ranks_before);
    cutoff = *nth;
    resolved = true;
}

bool Threshold::admits(double score, std::string_view doc_id) const {
    if (admit_all) return true;
    if (admit_none) return false;
    const std::size_t bin = score_bin(score);
    if (bin != boundary_bin) return bin > boundary_bin;
    if (boundary_need == boundary_total) return true;
    const BoundaryCandidate c{score, tie_break_hash(doc_id), std::string(doc_id)};
    return !ranks_before(cutoff, c);
}

Threshold compute_threshold(std::span<const ScoredDoc> scores, double fraction) {
    ScoreHistogram hist;
    for (const auto& s : scores) hist.add(s.score);
    Threshold t = plan_threshold(hist, fraction);
    if (t.needs_boundary_pass()) {
        std::vector<BoundaryCandidate> cands;
        for (const auto& s : scores) {
            if (t.in_boundary(s.score)) cands.push_back({s.score, tie_break_hash(s.id), s.id});
        }
        t.resolve(std::move(cands));
    }
    return t;
}

std::optional<bool> Threshold::admits(double score, std::uint64_t id_hash) const {
    if (admit_all) return true;
    if (admit_none) return false;
    const std::size_t bin = score_bin(score);
    if (bin != boundary_bin) return bin > boundary_bin;
    if (boundary_need == boundary_total) return true;
    if (score == cutoff.score && id_hash == cutoff.hash) {
        // A blank cutoff id means the key was unique, so this is the cutoff document.
        if (cutoff.id.empty()) return true;
        return std::nullopt;
    }
    return !ranks_before(cutoff, BoundaryCandidate{score, id_hash, {}});
}

}  // namespace preselect
