#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace preselect {

// ---- UTF-8 ---------------------------------------------------------------

/// Number of Unicode scalar values in a UTF-8 string (counts lead bytes).
std::size_t utf8_length(std::string_view text) noexcept;

/// Decodes UTF-8 into scalar values; invalid sequences decode to U+FFFD.
std::u32string utf8_decode(std::string_view text);

// ---- Hashing -------------------------------------------------------------

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

/// 64-bit FNV-1a. Used for bigram bucketing, tie-breaks and content digests.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

/// "fnv1a64:<16 hex digits>" digest of a byte string.
std::string content_digest(std::string_view bytes);
std::string file_digest(const std::filesystem::path& path);

/// SplitMix64 mix of a seed and a 64-bit value; a keyed hash for tie-breaks.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t keyed_hash(std::uint64_t seed, std::string_view key) noexcept {
    return mix64(fnv1a64(key) ^ mix64(seed));
}

// ---- Random numbers --------------------------------------------------------

/// Portable deterministic generator (SplitMix64). The standard distributions
/// are implementation-defined, so sampling code uses these helpers instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, n); n must be > 0.
    std::uint64_t below(std::uint64_t n) noexcept {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t r;
        do {
            r = next();
        } while (r >= limit);
        return r % n;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    template <typename T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::uint64_t state_;
};

// ---- Files -----------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// True if `dir` exists and has at least one entry.
bool directory_nonempty(const std::filesystem::path& dir);

}  // namespace preselect
