#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace preselect {

/// Bucket for documents whose URL is absent or has no parsable host.
inline constexpr std::string_view kUnknownDomain = "(unknown)";

struct FieldNames {
    std::string id = "id";
    std::string text = "text";
    std::string url = "url";
};

/// One corpus record. `char_count` is the number of Unicode scalar values in `text`.
struct Document {
    std::string id;
    std::string text;
    std::optional<std::string> url;
    std::size_t char_count = 0;

    static Document make(std::string id, std::string text, std::optional<std::string> url = std::nullopt);
};

/// Parses one JSONL record. Throws RecordError (tagged with `line_no`) for
/// malformed JSON, a missing/empty id or a missing text field.
Document parse_document(std::string_view line, const FieldNames& fields = {}, std::size_t line_no = 1);

/// Inverse of parse_document for the default field names.
std::string to_jsonl(const Document& doc, const FieldNames& fields = {});

// ---- Streaming -------------------------------------------------------------

/// Line reader over a plain or gzip-compressed file (gzip detected by magic bytes).
class LineReader {
public:
    explicit LineReader(const std::filesystem::path& path);
    ~LineReader();
    LineReader(LineReader&&) noexcept;
    LineReader& operator=(LineReader&&) noexcept;
    LineReader(const LineReader&) = delete;
    LineReader& operator=(const LineReader&) = delete;

    /// Next line without its terminator; false at end of file.
    bool next(std::string& line);
    /// 1-based number of the line most recently returned.
    std::size_t line_number() const noexcept { return line_no_; }
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    bool fill();

    std::filesystem::path path_;
    void* handle_ = nullptr;  // gzFile
    std::vector<char> buf_;
    std::size_t pos_ = 0;
    std::size_t end_ = 0;
    bool eof_ = false;
    std::size_t line_no_ = 0;
};

struct ReadOptions {
    FieldNames fields;
    bool skip_bad_records = false;
};

struct ShardStats {
    std::string path;
    std::size_t records = 0;
    std::size_t errors = 0;
    std::size_t chars = 0;
};

/// Yields the documents of several JSONL shards in path order, then file order.
class CorpusStream {
public:
    CorpusStream(std::vector<std::filesystem::path> paths, ReadOptions options = {});

    /// Next document, or nullopt when every shard is exhausted.
    std::optional<Document> next();

    /// Per-shard counters for shards opened so far.
    const std::vector<ShardStats>& stats() const noexcept { return stats_; }

private:
    std::vector<std::filesystem::path> paths_;
    ReadOptions options_;
    std::size_t current_ = 0;
    std::unique_ptr<LineReader> reader_;
    std::vector<ShardStats> stats_;
    std::string line_;
};

std::vector<Document> read_corpus(const std::vector<std::filesystem::path>& paths, const ReadOptions& options = {});

/// Writes documents as JSONL (plain text, no compression).
void write_corpus(const std::filesystem::path& path, std::span<const Document> docs, const FieldNames& fields = {});

// ---- Domains ---------------------------------------------------------------

struct DomainName {
    std::string host;
    friend auto operator<=>(const DomainName&, const DomainName&) = default;
};

/// Lowercased host of a URL, stripped of scheme, userinfo, port, path, query and
/// fragment. Throws DomainError when there is no parsable host.
DomainName extract_domain(std::string_view url);

/// Host for a document, or "(unknown)" when it has no usable URL.
std::string domain_or_unknown(const Document& doc);

// ---- Seed sampling ---------------------------------------------------------

struct SeedSample {
    std::vector<Document> documents;
    std::map<std::string, std::size_t> per_domain_counts;
    std::uint64_t rng_seed = 0;
    std::size_t top_k = 0;
    std::size_t per_domain = 0;
    std::vector<std::string> source_shards;
};

/// Two-pass stratified sampler. Pass one counts documents per domain; the
/// top-k domains by count are kept (ties broken by host). Pass two keeps, per
/// selected domain, the `per_domain` documents with the smallest seeded hash of
/// their id: a uniform sample that does not depend on arrival order.
class SeedSampler {
public:
    SeedSampler(std::size_t top_k, std::size_t per_domain, std::uint64_t rng_seed);

    void count(const Document& doc);
    /// Ends the counting pass. Throws EmptyInputError if nothing was counted.
    void select_domains();
    void offer(const Document& doc);
    SeedSample finish();

    const std::vector<std::string>& selected_domains() const noexcept { return selected_; }

private:
    std::size_t top_k_;
    std::size_t per_domain_;
    std::uint64_t seed_;
    std::size_t counted_ = 0;
    std::map<std::string, std::size_t> counts_;
    std::vector<std::string> selected_;
    std::map<std::string, std::vector<std::pair<std::uint64_t, Document>>> reservoirs_;
};

SeedSample sample_seed(std::span<const Document> corpus, std::size_t top_k, std::size_t per_domain,
                       std::uint64_t rng_seed);

SeedSample sample_seed(const std::vector<std::filesystem::path>& shards, const ReadOptions& options,
                       std::size_t top_k, std::size_t per_domain, std::uint64_t rng_seed);

/// Persists `sample.jsonl` plus `manifest.json` into `dir`.
void save_seed_sample(const SeedSample& sample, const std::filesystem::path& dir);
SeedSample load_seed_sample(const std::filesystem::path& dir);

}  // namespace preselect
