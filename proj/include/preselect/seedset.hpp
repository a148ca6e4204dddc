#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "preselect/strength.hpp"

namespace preselect {

inline constexpr std::string_view kPositiveLabel = "__label__pos";
inline constexpr std::string_view kNegativeLabel = "__label__neg";

struct SeedSet {
    std::vector<std::string> positives;
    std::vector<std::string> negatives;
    double pos_cutoff = 1.0;
    double neg_cutoff = 0.0;
    std::uint64_t rng_seed = 0;
};

/// Takes whole strength levels from the top down until `pos_target` is
/// reached, then subsamples the boundary level uniformly to hit the target
/// exactly; negatives likewise from the bottom up. When both boundaries land
/// on the same level it is shuffled once and split between the two sides.
///
/// Throws CapacityError if pos_target + neg_target exceeds the table and
/// OverlapError if the positive boundary would sit below the negative one.
SeedSet select_seed_examples(const StrengthTable& table, std::size_t pos_target, std::size_t neg_target,
                             std::uint64_t rng_seed);

/// Resolves a doc id to its text, or nullopt when unknown.
using TextLookup = std::function<std::optional<std::string_view>(std::string_view doc_id)>;

/// Writes the fastText-style training file: one `__label__pos|neg <text>`
/// line per example, newlines flattened to spaces, order shuffled under the
/// seed set's rng seed. Writes `<path>.manifest.json` beside it.
void emit_training_file(const SeedSet& seeds, const TextLookup& lookup, const std::filesystem::path& path);

/// Single-line form of a text: CR and LF become spaces.
std::string flatten_newlines(std::string_view text);

}  // namespace preselect
