#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "preselect/corpus.hpp"

namespace preselect {

/// Deterministic synthetic web-like corpus. "Clean" documents are sentences
/// from a fixed word-level Markov language; "noisy" ones are boilerplate
/// spam, random character soup, or clean text with corrupted tokens. Domains
/// follow a Zipf-like frequency profile.
struct SyntheticOptions {
    std::size_t documents = 1000;
    std::uint64_t seed = 1;
    double clean_fraction = 0.5;
    std::size_t clean_domains = 12;
    std::size_t noisy_domains = 12;
    std::size_t min_words = 40;
    std::size_t max_words = 250;
    double missing_url_rate = 0.02;
    std::string id_prefix = "doc";
};

std::vector<Document> synthetic_corpus(const SyntheticOptions& options);

/// Clean-language texts for training the oracle n-gram ladder.
std::vector<std::string> synthetic_reference_texts(std::size_t count, std::uint64_t seed, std::size_t min_words = 40,
                                                   std::size_t max_words = 250);

/// One clean-language text of roughly `target_bytes` bytes.
std::string synthetic_clean_text(std::uint64_t seed, std::size_t target_bytes);

}  // namespace preselect
