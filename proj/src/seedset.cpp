#include "preselect/seedset.hpp"

#include <algorithm>
#include <map>

#include <json.hpp>

#include "preselect/util.hpp"

namespace preselect {

SeedSet select_seed_examples(const StrengthTable& table, std::size_t pos_target, std::size_t neg_target,
                             std::uint64_t rng_seed) {
    if (pos_target == 0 || neg_target == 0) {
        throw ConfigError("positive and negative targets must be >= 1");
    }
    if (table.scores.empty()) {
        throw EmptyInputError("seed selection over an empty strength table");
    }
    if (pos_target + neg_target > table.scores.size()) {
        throw CapacityError("requested " + std::to_string(pos_target) + " + " + std::to_string(neg_target) +
                            " examples from a table of " + std::to_string(table.scores.size()));
    }

    std::map<double, std::vector<std::string>> by_level;
    for (const auto& [id, s] : table.scores) {
        by_level[s].push_back(id);
    }
    std::vector<std::pair<double, std::vector<std::string>>> levels(by_level.begin(), by_level.end());

    std::size_t p = levels.size() - 1;
    std::size_t taken = 0;
    while (taken + levels[p].second.size() < pos_target) {
        taken += levels[p].second.size();
        --p;
    }
    const std::size_t pos_need = pos_target - taken;

    std::size_t q = 0;
    taken = 0;
    while (taken + levels[q].second.size() < neg_target) {
        taken += levels[q].second.size();
        ++q;
    }
    const std::size_t neg_need = neg_target - taken;

    if (p < q) {
        throw OverlapError("positive boundary level " + std::to_string(levels[p].first) +
                           " lies below negative boundary level " + std::to_string(levels[q].first));
    }

    SeedSet out;
    out.rng_seed = rng_seed;
    out.pos_cutoff = levels[p].first;
    out.neg_cutoff = levels[q].first;
    for (std::size_t l = p + 1; l < levels.size(); ++l) {
        out.positives.insert(out.positives.end(), levels[l].second.begin(), levels[l].second.end());
    }
    for (std::size_t l = 0; l < q; ++l) {
        out.negatives.insert(out.negatives.end(), levels[l].second.begin(), levels[l].second.end());
    }

    Rng rng(rng_seed);
    auto& pos_level = levels[p].second;
    rng.shuffle(pos_level);
    out.positives.insert(out.positives.end(), pos_level.begin(), pos_level.begin() + static_cast<std::ptrdiff_t>(pos_need));
    if (p == q) {
        const auto start = pos_level.begin() + static_cast<std::ptrdiff_t>(pos_need);
        out.negatives.insert(out.negatives.end(), start, start + static_cast<std::ptrdiff_t>(neg_need));
    } else {
        auto& neg_level = levels[q].second;
        rng.shuffle(neg_level);
        out.negatives.insert(out.negatives.end(), neg_level.begin(),
                             neg_level.begin() + static_cast<std::ptrdiff_t>(neg_need));
    }
    std::sort(out.positives.begin(), out.positives.end());
    std::sort(out.negatives.begin(), out.negatives.end());
    return out;
}

std::string flatten_newlines(std::string_view text) {
    std::string s(text);
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

void emit_training_file(const SeedSet& seeds, const TextLookup& lookup, const std::filesystem::path& path) {
    std::vector<std::pair<std::string_view, const std::string*>> examples;
    examples.reserve(seeds.positives.size() + seeds.negatives.size());
    for (const auto& id : seeds.positives) {
        examples.emplace_back(kPositiveLabel, &id);
    }
    for (const auto& id : seeds.negatives) {
        examples.emplace_back(kNegativeLabel, &id);
    }
    Rng rng(mix64(seeds.rng_seed));
    rng.shuffle(examples);

    std::string out;
    for (const auto& [label, id] : examples) {
        auto text = lookup(*id);
        if (!text) {
            throw LookupError("no text for seed document " + *id);
        }
        out += label;
        out += ' ';
        out += flatten_newlines(*text);
        out += '\n';
    }
    write_file_atomic(path, out);

    nlohmann::json m;
    m["pos_target"] = seeds.positives.size();
    m["neg_target"] = seeds.negatives.size();
    m["pos_cutoff"] = seeds.pos_cutoff;
    m["neg_cutoff"] = seeds.neg_cutoff;
    m["rng_seed"] = seeds.rng_seed;
    m["training_file_digest"] = content_digest(out);
    auto mpath = path;
    mpath += ".manifest.json";
    write_file_atomic(mpath, m.dump(2) + "\n");
}

}  // namespace preselect
