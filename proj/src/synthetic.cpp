#include "preselect/synthetic.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "preselect/util.hpp"

namespace preselect {

namespace {

constexpr std::size_t kLexiconSize = 600;
constexpr std::size_t kSuccessors = 6;

struct Language {
    std::vector<std::string> words;
    std::vector<std::array<std::uint32_t, kSuccessors>> next;
};

// Fixed for every corpus so clean documents and reference texts share a language.
const Language& language() {
    static const Language lang = [] {
        static constexpr std::array<const char*, 24> onsets = {"b", "c", "d", "f", "g", "h", "k", "l",
                                                               "m", "n", "p", "r", "s", "t", "v", "w",
                                                               "br", "st", "tr", "pl", "gr", "ch", "th", "sh"};
        static constexpr std::array<const char*, 8> vowels = {"a", "e", "i", "o", "u", "ea", "io", "ou"};
        static constexpr std::array<const char*, 8> codas = {"", "n", "r", "s", "t", "l", "m", "nd"};
        Language l;
        Rng rng(0x5EEDF00DULL);
        while (l.words.size() < kLexiconSize) {
            const auto syllables = 1 + rng.below(3);
            std::string w;
            for (std::uint64_t s = 0; s < syllables; ++s) {
                w += onsets[rng.below(onsets.size())];
                w += vowels[rng.below(vowels.size())];
                w += codas[rng.below(codas.size())];
            }
            bool dup = false;
            for (const auto& x : l.words) dup = dup || x == w;
            if (!dup) l.words.push_back(std::move(w));
        }
        l.next.resize(kLexiconSize);
        for (auto& succ : l.next) {
            for (auto& s : succ) s = static_cast<std::uint32_t>(rng.below(kLexiconSize));
        }
        return l;
    }();
    return lang;
}

// Zipf-ish index in [0, n): squaring a uniform skews toward small indices.
std::size_t skewed(Rng& rng, std::size_t n) {
    const double u = rng.uniform();
    return std::min(n - 1, static_cast<std::size_t>(u * u * static_cast<double>(n)));
}

std::string clean_text(Rng& rng, std::size_t words) {
    const auto& lang = language();
    std::string out;
    std::size_t cur = skewed(rng, kLexiconSize);
    std::size_t in_sentence = 0;
    std::size_t sentence_len = 6 + rng.below(12);
    for (std::size_t i = 0; i < words; ++i) {
        std::string w = lang.words[cur];
        if (in_sentence == 0) {
            w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
        }
        if (!out.empty()) out += ' ';
        out += w;
        ++in_sentence;
        if (in_sentence == sentence_len || i + 1 == words) {
            out += '.';
            in_sentence = 0;
            sentence_len = 6 + rng.below(12);
        } else if (rng.below(10) == 0) {
            out += ',';
        }
        cur = rng.uniform() < 0.85 ? lang.next[cur][rng.below(kSuccessors)] : skewed(rng, kLexiconSize);
    }
    return out;
}

std::string garbled_token(Rng& rng) {
    static constexpr std::string_view alphabet = "abcdefghijklmnopqrstuvwxyzQXZJK0123456789#$%&*+=@~_";
    std::string t;
    const auto len = 2 + rng.below(9);
    for (std::uint64_t i = 0; i < len; ++i) t += alphabet[rng.below(alphabet.size())];
    return t;
}

std::string spam_text(Rng& rng, std::size_t words) {
    static constexpr std::array<const char*, 30> boiler = {
        "Click", "here", "Buy", "now", "FREE", "shipping", "Posted", "by", "Comment", "Login",
        "Home", "About", "Contact", "Share", "Tweet", "|", "»", "Read", "more", "©",
        "2014", "2017", "Subscribe", "deal", "offer", "Best", "price", "Sale!!!", "WIN", "$$$"};
    std::string out;
    for (std::size_t i = 0; i < words; ++i) {
        if (!out.empty()) out += rng.below(8) == 0 ? "\n" : " ";
        if (rng.below(6) == 0) {
            out += std::to_string(rng.below(100000));
        } else {
            out += boiler[skewed(rng, boiler.size())];
        }
    }
    return out;
}

std::string garbled_text(Rng& rng, std::size_t words) {
    std::string out;
    for (std::size_t i = 0; i < words; ++i) {
        if (!out.empty()) out += ' ';
        out += garbled_token(rng);
    }
    return out;
}

std::string mixed_text(Rng& rng, std::size_t words) {
    const auto base = clean_text(rng, words);
    std::string out;
    std::size_t start = 0;
    while (start < base.size()) {
        auto end = base.find(' ', start);
        if (end == std::string::npos) end = base.size();
        if (!out.empty()) out += ' ';
        if (rng.below(5) < 2) {
            out += garbled_token(rng);
        } else {
            out.append(base, start, end - start);
        }
        start = end + 1;
    }
    return out;
}

}  // namespace

std::vector<Document> synthetic_corpus(const SyntheticOptions& o) {
    Rng rng(mix64(o.seed));
    std::vector<Document> docs;
    docs.reserve(o.documents);
    char id[64];
    for (std::size_t i = 0; i < o.documents; ++i) {
        const bool clean = rng.uniform() < o.clean_fraction;
        const std::size_t words = o.min_words + rng.below(o.max_words - o.min_words + 1);
        std::string text;
        std::string host;
        if (clean) {
            text = clean_text(rng, words);
            const auto d = skewed(rng, o.clean_domains);
            host = (d % 2 == 0 ? "wiki" : "edu") + std::to_string(d) + (d % 2 == 0 ? ".example.org" : ".example.edu");
        } else {
            const auto kind = rng.below(10);
            text = kind < 4 ? spam_text(rng, words) : kind < 7 ? garbled_text(rng, words) : mixed_text(rng, words);
            host = "shop" + std::to_string(skewed(rng, o.noisy_domains)) + ".example.com";
        }
        std::snprintf(id, sizeof id, "%s-%07zu", o.id_prefix.c_str(), i);
        std::optional<std::string> url;
        if (rng.uniform() >= o.missing_url_rate) {
            url = "https://" + host + "/page/" + std::to_string(rng.below(1000000));
        }
        docs.push_back(Document::make(id, std::move(text), std::move(url)));
    }
    return docs;
}

std::vector<std::string> synthetic_reference_texts(std::size_t count, std::uint64_t seed, std::size_t min_words,
                                                   std::size_t max_words) {
    Rng rng(mix64(seed ^ 0xABCDEFULL));
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(clean_text(rng, min_words + rng.below(max_words - min_words + 1)));
    }
    return out;
}

std::string synthetic_clean_text(std::uint64_t seed, std::size_t target_bytes) {
    Rng rng(mix64(seed));
    std::string t = clean_text(rng, std::max<std::size_t>(1, target_bytes / 6));
    while (t.size() < target_bytes) {
        t += ' ';
        t += clean_text(rng, 8);
    }
    t.resize(target_bytes);
    return t;
}

}  // namespace preselect
