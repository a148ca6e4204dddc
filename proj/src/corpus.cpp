#include "preselect/corpus.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <fstream>

#include <json.hpp>

#include "preselect/errors.hpp"
#include "preselect/util.hpp"

namespace preselect {

using nlohmann::json;

Document Document::make(std::string id, std::string text, std::optional<std::string> url) {
    Document d;
    d.char_count = utf8_length(text);
    d.id = std::move(id);
    d.text = std::move(text);
    d.url = std::move(url);
    return d;
}

Document parse_document(std::string_view line, const FieldNames& fields, std::size_t line_no) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw RecordError(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw RecordError(line_no, "record is not a JSON object");
    }

    std::string id;
    auto it = j.find(fields.id);
    if (it == j.end()) {
        throw RecordError(line_no, "missing id field \"" + fields.id + "\"");
    }
    if (it->is_string()) {
        id = it->get<std::string>();
    } else if (it->is_number_integer()) {
        id = it->dump();
    } else {
        throw RecordError(line_no, "id field is neither string nor integer");
    }
    if (id.empty()) {
        throw RecordError(line_no, "empty id");
    }

    it = j.find(fields.text);
    if (it == j.end() || !it->is_string()) {
        throw RecordError(line_no, "missing text field \"" + fields.text + "\"");
    }
    std::string text = it->get<std::string>();

    std::optional<std::string> url;
    it = j.find(fields.url);
    if (it != j.end() && it->is_string()) {
        url = it->get<std::string>();
    }
    return Document::make(std::move(id), std::move(text), std::move(url));
}

std::string to_jsonl(const Document& doc, const FieldNames& fields) {
    json j = json::object();
    j[fields.id] = doc.id;
    j[fields.text] = doc.text;
    if (doc.url) {
        j[fields.url] = *doc.url;
    }
    return j.dump();
}

// ---- LineReader ------------------------------------------------------------

LineReader::LineReader(const std::filesystem::path& path) : path_(path), buf_(1 << 16) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (f == nullptr) {
        throw IoError("cannot open " + path.string());
    }
    gzbuffer(f, 1 << 17);
    handle_ = f;
}

LineReader::~LineReader() {
    if (handle_ != nullptr) {
        gzclose(static_cast<gzFile>(handle_));
    }
}

LineReader::LineReader(LineReader&& o) noexcept
    : path_(std::move(o.path_)),
      handle_(std::exchange(o.handle_, nullptr)),
      buf_(std::move(o.buf_)),
      pos_(o.pos_),
      end_(o.end_),
      eof_(o.eof_),
      line_no_(o.line_no_) {}

LineReader& LineReader::operator=(LineReader&& o) noexcept {
    if (this != &o) {
        if (handle_ != nullptr) {
            gzclose(static_cast<gzFile>(handle_));
        }
        path_ = std::move(o.path_);
        handle_ = std::exchange(o.handle_, nullptr);
        buf_ = std::move(o.buf_);
        pos_ = o.pos_;
        end_ = o.end_;
        eof_ = o.eof_;
        line_no_ = o.line_no_;
    }
    return *this;
}

bool LineReader::fill() {
    if (eof_) {
        return false;
    }
    const int n = gzread(static_cast<gzFile>(handle_), buf_.data(), static_cast<unsigned>(buf_.size()));
    if (n < 0) {
        int err = 0;
        const char* msg = gzerror(static_cast<gzFile>(handle_), &err);
        throw IoError("read error in " + path_.string() + ": " + (msg ? msg : "unknown"));
    }
    pos_ = 0;
    end_ = static_cast<std::size_t>(n);
    if (n == 0) {
        eof_ = true;
        return false;
    }
    return true;
}

bool LineReader::next(std::string& line) {
    line.clear();
    bool got_any = false;
    for (;;) {
        if (pos_ == end_ && !fill()) {
            break;
        }
        got_any = true;
        const char* begin = buf_.data() + pos_;
        const char* stop = buf_.data() + end_;
        const char* nl = std::find(begin, stop, '\n');
        line.append(begin, nl);
        pos_ += static_cast<std::size_t>(nl - begin);
        if (nl != stop) {
            ++pos_;
            ++line_no_;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            return true;
        }
    }
    if (got_any && !line.empty()) {
        ++line_no_;
        if (line.back() == '\r') {
            line.pop_back();
        }
        return true;
    }
    return false;
}

// ---- CorpusStream ----------------------------------------------------------

CorpusStream::CorpusStream(std::vector<std::filesystem::path> paths, ReadOptions options)
    : paths_(std::move(paths)), options_(std::move(options)) {}

std::optional<Document> CorpusStream::next() {
    for (;;) {
        if (!reader_) {
            if (current_ >= paths_.size()) {
                return std::nullopt;
            }
            reader_ = std::make_unique<LineReader>(paths_[current_]);
            stats_.push_back({paths_[current_].string(), 0, 0, 0});
        }
        while (reader_->next(line_)) {
            if (line_.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            auto& st = stats_.back();
            try {
                Document d = parse_document(line_, options_.fields, reader_->line_number());
                ++st.records;
                st.chars += d.char_count;
                return d;
            } catch (const RecordError& e) {
                ++st.errors;
                if (!options_.skip_bad_records) {
                    throw RecordError(e.line(), reader_->path().string() + ": " + e.what());
                }
            }
        }
        reader_.reset();
        ++current_;
    }
}

std::vector<Document> read_corpus(const std::vector<std::filesystem::path>& paths, const ReadOptions& options) {
    CorpusStream stream(paths, options);
    std::vector<Document> out;
    while (auto d = stream.next()) {
        out.push_back(std::move(*d));
    }
    return out;
}

void write_corpus(const std::filesystem::path& path, std::span<const Document> docs, const FieldNames& fields) {
    std::string buf;
    for (const auto& d : docs) {
        buf += to_jsonl(d, fields);
        buf += '\n';
    }
    write_file_atomic(path, buf);
}

// ---- Domains ---------------------------------------------------------------

namespace {

bool valid_host_char(unsigned char c) {
    if (c <= 0x20 || c == 0x7F) {
        return false;
    }
    switch (c) {
        case '<': case '>': case '"': case '{': case '}': case '|':
        case '\\': case '^': case '`': case '/': case '?': case '#': case '@':
            return false;
        default:
            return true;
    }
}

}  // namespace

DomainName extract_domain(std::string_view url) {
    const auto first = url.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        throw DomainError("empty URL");
    }
    url = url.substr(first, url.find_last_not_of(" \t\r\n") - first + 1);

    std::string_view rest;
    if (const auto sep = url.find("://"); sep != std::string_view::npos) {
        const auto scheme = url.substr(0, sep);
        const bool scheme_ok =
            !scheme.empty() && std::isalpha(static_cast<unsigned char>(scheme[0])) &&
            std::all_of(scheme.begin(), scheme.end(), [](unsigned char c) {
                return std::isalnum(c) || c == '+' || c == '-' || c == '.';
            });
        if (!scheme_ok) {
            throw DomainError("bad scheme in URL: " + std::string(url));
        }
        rest = url.substr(sep + 3);
    } else if (url.starts_with("//")) {
        rest = url.substr(2);
    } else {
        throw DomainError("no scheme in URL: " + std::string(url));
    }

    auto authority = rest.substr(0, rest.find_first_of("/?#"));
    if (const auto at = authority.rfind('@'); at != std::string_view::npos) {
        authority = authority.substr(at + 1);
    }

    std::string_view host;
    if (authority.starts_with('[')) {
        const auto close = authority.find(']');
        if (close == std::string_view::npos) {
            throw DomainError("unterminated IPv6 literal: " + std::string(url));
        }
        host = authority.substr(0, close + 1);
        const auto tail = authority.substr(close + 1);
        if (!tail.empty() && (tail[0] != ':' ||
                              !std::all_of(tail.begin() + 1, tail.end(),
                                           [](unsigned char c) { return std::isdigit(c); }))) {
            throw DomainError("bad port: " + std::string(url));
        }
    } else {
        host = authority;
        if (const auto colon = authority.rfind(':'); colon != std::string_view::npos) {
            const auto port = authority.substr(colon + 1);
            if (!std::all_of(port.begin(), port.end(), [](unsigned char c) { return std::isdigit(c); })) {
                throw DomainError("bad port: " + std::string(url));
            }
            host = authority.substr(0, colon);
        }
        while (host.ends_with('.')) {
            host.remove_suffix(1);
        }
        if (!std::all_of(host.begin(), host.end(), [](unsigned char c) { return valid_host_char(c) && c != ':'; })) {
            throw DomainError("bad host: " + std::string(url));
        }
    }
    if (host.empty()) {
        throw DomainError("no host in URL: " + std::string(url));
    }

    DomainName d;
    d.host.reserve(host.size());
    for (unsigned char c : host) {
        d.host.push_back(static_cast<char>(std::tolower(c)));
    }
    return d;
}

std::string domain_or_unknown(const Document& doc) {
    if (!doc.url) {
        return std::string(kUnknownDomain);
    }
    try {
        return extract_domain(*doc.url).host;
    } catch (const DomainError&) {
        return std::string(kUnknownDomain);
    }
}

// ---- Seed sampling ---------------------------------------------------------

SeedSampler::SeedSampler(std::size_t top_k, std::size_t per_domain, std::uint64_t rng_seed)
    : top_k_(top_k), per_domain_(per_domain), seed_(rng_seed) {
    if (top_k == 0 || per_domain == 0) {
        throw ConfigError("top_k_domains and per_domain must be >= 1");
    }
}

void SeedSampler::count(const Document& doc) {
    ++counted_;
    const auto host = domain_or_unknown(doc);
    if (host != kUnknownDomain) {
        ++counts_[host];
    }
}

void SeedSampler::select_domains() {
    if (counted_ == 0) {
        throw EmptyInputError("seed sampling over an empty corpus");
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts_.begin(), counts_.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > top_k_) {
        ranked.resize(top_k_);
    }
    selected_.clear();
    reservoirs_.clear();
    for (auto& [host, n] : ranked) {
        selected_.push_back(host);
        reservoirs_[host];
    }
}

void SeedSampler::offer(const Document& doc) {
    const auto host = domain_or_unknown(doc);
    auto it = reservoirs_.find(host);
    if (it == reservoirs_.end()) {
        return;
    }
    auto& heap = it->second;
    const std::uint64_t key = keyed_hash(seed_, doc.id);
    // Max-heap on (key, id): the root is the current worst kept document.
    auto cmp = [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first < b.first : a.second.id < b.second.id;
    };
    if (heap.size() < per_domain_) {
        heap.emplace_back(key, doc);
        std::push_heap(heap.begin(), heap.end(), cmp);
        return;
    }
    const auto& worst = heap.front();
    if (key < worst.first || (key == worst.first && doc.id < worst.second.id)) {
        std::pop_heap(heap.begin(), heap.end(), cmp);
        heap.back() = {key, doc};
        std::push_heap(heap.begin(), heap.end(), cmp);
    }
}

SeedSample SeedSampler::finish() {
    SeedSample out;
    out.rng_seed = seed_;
    out.top_k = top_k_;
    out.per_domain = per_domain_;
    for (const auto& host : selected_) {
        auto& heap = reservoirs_[host];
        std::sort(heap.begin(), heap.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first < b.first : a.second.id < b.second.id;
        });
        out.per_domain_counts[host] = heap.size();
        for (auto& [key, doc] : heap) {
            out.documents.push_back(std::move(doc));
        }
        heap.clear();
    }
    return out;
}

SeedSample sample_seed(std::span<const Document> corpus, std::size_t top_k, std::size_t per_domain,
                       std::uint64_t rng_seed) {
    SeedSampler sampler(top_k, per_domain, rng_seed);
    for (const auto& d : corpus) {
        sampler.count(d);
    }
    sampler.select_domains();
    for (const auto& d : corpus) {
        sampler.offer(d);
    }
    return sampler.finish();
}

SeedSample sample_seed(const std::vector<std::filesystem::path>& shards, const ReadOptions& options,
                       std::size_t top_k, std::size_t per_domain, std::uint64_t rng_seed) {
    SeedSampler sampler(top_k, per_domain, rng_seed);
    {
        CorpusStream s(shards, options);
        while (auto d = s.next()) {
            sampler.count(*d);
        }
    }
    sampler.select_domains();
    {
        CorpusStream s(shards, options);
        while (auto d = s.next()) {
            sampler.offer(*d);
        }
    }
    auto out = sampler.finish();
    for (const auto& p : shards) {
        out.source_shards.push_back(p.string());
    }
    return out;
}

void save_seed_sample(const SeedSample& sample, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_corpus(dir / "sample.jsonl", sample.documents);
    json m;
    m["rng_seed"] = sample.rng_seed;
    m["top_k"] = sample.top_k;
    m["per_domain"] = sample.per_domain;
    m["per_domain_counts"] = sample.per_domain_counts;
    m["source_shards"] = sample.source_shards;
    m["documents"] = sample.documents.size();
    m["sample_digest"] = file_digest(dir / "sample.jsonl");
    write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

SeedSample load_seed_sample(const std::filesystem::path& dir) {
    json m;
    try {
        m = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw FormatError("bad seed manifest in " + dir.string() + ": " + e.what());
    }
    SeedSample s;
    try {
        s.rng_seed = m.at("rng_seed").get<std::uint64_t>();
        s.top_k = m.at("top_k").get<std::size_t>();
        s.per_domain = m.at("per_domain").get<std::size_t>();
        s.per_domain_counts = m.at("per_domain_counts").get<std::map<std::string, std::size_t>>();
        s.source_shards = m.at("source_shards").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw FormatError("bad seed manifest in " + dir.string() + ": " + e.what());
    }
    s.documents = read_corpus({dir / "sample.jsonl"});
    return s;
}

}  // namespace preselect
