#include "preselect/compression.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <json.hpp>

#include "preselect/corpus.hpp"
#include "preselect/errors.hpp"
#include "preselect/util.hpp"

namespace preselect {

using nlohmann::json;

BpcValue bits_per_character(std::span<const double> token_logprobs, std::size_t char_count) {
    if (char_count == 0) {
        throw DegenerateInputError("bits_per_character: char_count must be >= 1");
    }
    double nats = 0.0;
    for (double lp : token_logprobs) {
        if (!std::isfinite(lp) || lp > 0.0) {
            throw ValueError("bits_per_character: log-probabilities must be finite and <= 0");
        }
        nats -= lp;
    }
    return {nats / std::numbers::ln2 / static_cast<double>(char_count)};
}

// ---- LossTable -------------------------------------------------------------

LossTable::LossTable(std::vector<std::string> doc_ids, std::vector<std::string> model_ids, Eigen::MatrixXd bpc)
    : doc_ids_(std::move(doc_ids)), model_ids_(std::move(model_ids)), bpc_(std::move(bpc)) {
    if (bpc_.rows() != static_cast<Eigen::Index>(doc_ids_.size()) ||
        bpc_.cols() != static_cast<Eigen::Index>(model_ids_.size())) {
        throw SchemaError("loss table shape does not match its ids");
    }
    if (!bpc_.allFinite() || (bpc_.size() > 0 && bpc_.minCoeff() < 0.0)) {
        throw ValueError("loss table holds negative or non-finite BPC");
    }
}

LossTable LossTable::from_rows(std::span<const LossRow> rows) {
    std::vector<std::string> models;
    std::unordered_map<std::string, std::size_t> model_pos;
    std::vector<std::string> docs;
    std::unordered_map<std::string, std::size_t> doc_pos;
    std::vector<std::map<std::size_t, double>> values;
    std::size_t duplicates = 0;

    for (const auto& r : rows) {
        if (!std::isfinite(r.bpc) || r.bpc < 0.0) {
            throw ValueError("negative or non-finite bpc for (" + r.doc_id + ", " + r.model_id + ")");
        }
        auto [mit, mnew] = model_pos.try_emplace(r.model_id, models.size());
        if (mnew) {
            models.push_back(r.model_id);
        }
        auto [dit, dnew] = doc_pos.try_emplace(r.doc_id, docs.size());
        if (dnew) {
            docs.push_back(r.doc_id);
            values.emplace_back();
        }
        auto [vit, vnew] = values[dit->second].insert_or_assign(mit->second, r.bpc);
        if (!vnew) {
            ++duplicates;
        }
    }

    std::vector<std::size_t> complete;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        if (values[d].size() == models.size()) {
            complete.push_back(d);
        }
    }
    if (complete.empty()) {
        throw EmptyInputError("loss table has no document covered by every model");
    }

    Eigen::MatrixXd m(static_cast<Eigen::Index>(complete.size()), static_cast<Eigen::Index>(models.size()));
    std::vector<std::string> kept;
    kept.reserve(complete.size());
    for (std::size_t r = 0; r < complete.size(); ++r) {
        for (const auto& [col, v] : values[complete[r]]) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = v;
        }
        kept.push_back(std::move(docs[complete[r]]));
    }

    LossTable t(std::move(kept), std::move(models), std::move(m));
    t.quarantined_ = docs.size() - complete.size();
    t.duplicates_ = duplicates;
    if (duplicates > 0) {
        log_warning(std::to_string(duplicates) + " duplicate (doc, model) loss rows; kept the last value");
    }
    if (t.quarantined_ > 0) {
        log_warning(std::to_string(t.quarantined_) + " documents quarantined for incomplete model coverage");
    }
    return t;
}

std::optional<Eigen::Index> LossTable::model_index(std::string_view model_id) const {
    auto it = std::find(model_ids_.begin(), model_ids_.end(), model_id);
    if (it == model_ids_.end()) {
        return std::nullopt;
    }
    return static_cast<Eigen::Index>(it - model_ids_.begin());
}

LossTable load_loss_table(const std::filesystem::path& path) {
    LineReader reader(path);
    std::vector<LossRow> rows;
    std::string line;
    while (reader.next(line)) {
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        const auto n = reader.line_number();
        try {
            const auto j = json::parse(line);
            LossRow r;
            r.doc_id = j.at("doc_id").get<std::string>();
            r.model_id = j.at("model_id").get<std::string>();
            r.bpc = j.at("bpc").get<double>();
            if (!std::isfinite(r.bpc) || r.bpc < 0.0) {
                throw RecordError(n, "bpc must be finite and >= 0");
            }
            rows.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw RecordError(n, path.string() + ": " + e.what());
        }
    }
    return LossTable::from_rows(rows);
}

void save_loss_table(const LossTable& table, const std::filesystem::path& path) {
    std::string out;
    for (std::size_t d = 0; d < table.doc_ids().size(); ++d) {
        for (std::size_t m = 0; m < table.model_ids().size(); ++m) {
            json j;
            j["doc_id"] = table.doc_ids()[d];
            j["model_id"] = table.model_ids()[m];
            j["bpc"] = table.at(d, m);
            out += j.dump();
            out += '\n';
        }
    }
    write_file_atomic(path, out);
}

// ---- CharNgramLM -------------------------------------------------------------

CharNgramLM::CharNgramLM(int order, double alpha) : order_(order), alpha_(alpha) {
    if (order < 1) {
        throw ConfigError("n-gram order must be >= 1");
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw ConfigError("smoothing alpha must be positive and finite");
    }
}

void CharNgramLM::observe(std::u32string_view text) {
    const auto ctx_len = static_cast<std::size_t>(order_ - 1);
    std::u32string padded(ctx_len, kBeginOfText);
    padded.append(text);
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char32_t c = text[i];
        vocab_.insert(c);
        auto& cc = contexts_[padded.substr(i, ctx_len)];
        ++cc.total;
        ++cc.next[c];
    }
}

CharNgramLM CharNgramLM::train(std::span<const std::string> texts, int order, double alpha) {
    CharNgramLM lm(order, alpha);
    for (const auto& t : texts) {
        if (!t.empty()) {
            lm.observe(utf8_decode(t));
        }
    }
    if (lm.vocab_.empty()) {
        throw EmptyInputError("n-gram training needs at least one nonempty text");
    }
    return lm;
}

CharNgramLM CharNgramLM::uniform(std::u32string_view alphabet, double alpha) {
    CharNgramLM lm(1, alpha);
    lm.vocab_.insert(alphabet.begin(), alphabet.end());
    if (lm.vocab_.empty()) {
        throw EmptyInputError("uniform model needs a nonempty alphabet");
    }
    return lm;
}

double CharNgramLM::probability(std::u32string_view context, char32_t next) const {
    const double v = static_cast<double>(vocab_.size());
    std::uint64_t total = 0;
    std::uint64_t count = 0;
    if (auto it = contexts_.find(std::u32string(context)); it != contexts_.end()) {
        total = it->second.total;
        if (auto jt = it->second.next.find(next); jt != it->second.next.end()) {
            count = jt->second;
        }
    }
    return (static_cast<double>(count) + alpha_) / (static_cast<double>(total) + alpha_ * v);
}

BpcValue CharNgramLM::bpc(std::string_view text) const {
    if (text.empty()) {
        throw DegenerateInputError("bpc of empty text");
    }
    auto chars = utf8_decode(text);
    for (auto& c : chars) {
        if (!vocab_.contains(c)) {
            c = kUnknown;
        }
    }
    const auto ctx_len = static_cast<std::size_t>(order_ - 1);
    std::u32string padded(ctx_len, kBeginOfText);
    padded.append(chars);
    double bits = 0.0;
    for (std::size_t i = 0; i < chars.size(); ++i) {
        bits -= std::log2(probability(std::u32string_view(padded).substr(i, ctx_len), chars[i]));
    }
    return {bits / static_cast<double>(chars.size())};
}

std::string CharNgramLM::to_json() const {
    json j;
    j["format"] = "preselect-charlm";
    j["version"] = kFormatVersion;
    j["order"] = order_;
    j["alpha"] = alpha_;
    std::vector<std::uint32_t> vocab(vocab_.begin(), vocab_.end());
    std::sort(vocab.begin(), vocab.end());
    j["vocab"] = vocab;

    std::vector<std::pair<std::u32string, const ContextCounts*>> ctxs;
    ctxs.reserve(contexts_.size());
    for (const auto& [k, v] : contexts_) {
        ctxs.emplace_back(k, &v);
    }
    std::sort(ctxs.begin(), ctxs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    json counts = json::array();
    for (const auto& [ctx, cc] : ctxs) {
        std::vector<std::pair<char32_t, std::uint64_t>> next(cc->next.begin(), cc->next.end());
        std::sort(next.begin(), next.end());
        std::vector<std::uint32_t> ctx_cps(ctx.begin(), ctx.end());
        for (const auto& [c, n] : next) {
            counts.push_back({{"ctx", ctx_cps}, {"next", static_cast<std::uint32_t>(c)}, {"count", n}});
        }
    }
    j["counts"] = std::move(counts);
    return j.dump();
}

CharNgramLM CharNgramLM::from_json(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("char n-gram model: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "preselect-charlm") {
            throw FormatError("not a char n-gram model file");
        }
        const int version = j.at("version").get<int>();
        if (version != kFormatVersion) {
            throw FormatError("char n-gram model version " + std::to_string(version) + ", expected " +
                              std::to_string(kFormatVersion));
        }
        CharNgramLM lm(j.at("order").get<int>(), j.at("alpha").get<double>());
        for (auto c : j.at("vocab").get<std::vector<std::uint32_t>>()) {
            lm.vocab_.insert(static_cast<char32_t>(c));
        }
        for (const auto& e : j.at("counts")) {
            const auto ctx_cps = e.at("ctx").get<std::vector<std::uint32_t>>();
            std::u32string ctx(ctx_cps.begin(), ctx_cps.end());
            const auto n = e.at("count").get<std::uint64_t>();
            auto& cc = lm.contexts_[ctx];
            cc.total += n;
            cc.next[static_cast<char32_t>(e.at("next").get<std::uint32_t>())] += n;
        }
        return lm;
    } catch (const json::exception& e) {
        throw CorruptionError(std::string("char n-gram model: ") + e.what());
    }
}

CharNgramLM ngram_lm_train(std::span<const std::string> texts, int order, double alpha) {
    return CharNgramLM::train(texts, order, alpha);
}

BpcValue ngram_lm_bpc(const CharNgramLM& lm, std::string_view text) { return lm.bpc(text); }

std::vector<CharNgramLM> train_ngram_ladder(std::span<const std::string> texts, std::span<const std::size_t> doc_counts,
                                            int order, double alpha) {
    if (doc_counts.empty()) {
        throw ConfigError("ladder needs at least one rung");
    }
    for (std::size_t k = 0; k < doc_counts.size(); ++k) {
        if (doc_counts[k] == 0 || doc_counts[k] > texts.size() || (k > 0 && doc_counts[k] <= doc_counts[k - 1])) {
            throw ConfigError("ladder sizes must be strictly increasing, >= 1 and <= the number of training texts");
        }
    }
    std::vector<CharNgramLM> out;
    CharNgramLM lm(order, alpha);
    std::size_t consumed = 0;
    for (std::size_t target : doc_counts) {
        for (; consumed < target; ++consumed) {
            if (!texts[consumed].empty()) {
                lm.observe(utf8_decode(texts[consumed]));
            }
        }
        if (lm.vocab_.empty()) {
            throw EmptyInputError("ladder rung trained on empty texts only");
        }
        out.push_back(lm);
    }
    return out;
}

}  // namespace preselect
