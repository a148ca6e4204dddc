#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

namespace preselect {

/// Compression efficiency of a model on a text, in bits per Unicode character.
struct BpcValue {
    double bits_per_char = 0.0;
};

/// Converts natural-log token probabilities into bits per character:
/// (sum of -logprob / ln 2) / char_count.
BpcValue bits_per_character(std::span<const double> token_logprobs, std::size_t char_count);

// ---- Loss tables -----------------------------------------------------------

struct LossRow {
    std::string doc_id;
    std::string model_id;
    double bpc = 0.0;
};

/// Rectangular (document x model) table of BPC values. Documents missing any
/// model are quarantined at construction and only counted.
class LossTable {
public:
    LossTable() = default;
    LossTable(std::vector<std::string> doc_ids, std::vector<std::string> model_ids, Eigen::MatrixXd bpc);

    /// Builds from loose rows: last row wins for duplicate (doc, model) pairs.
    /// Throws EmptyInputError when no document is complete.
    static LossTable from_rows(std::span<const LossRow> rows);

    const std::vector<std::string>& doc_ids() const noexcept { return doc_ids_; }
    const std::vector<std::string>& model_ids() const noexcept { return model_ids_; }
    /// Row per document, column per model (in model_ids() order).
    const Eigen::MatrixXd& bpc() const noexcept { return bpc_; }

    std::optional<Eigen::Index> model_index(std::string_view model_id) const;
    double at(std::size_t doc, std::size_t model) const { return bpc_(static_cast<Eigen::Index>(doc), static_cast<Eigen::Index>(model)); }

    std::size_t quarantined() const noexcept { return quarantined_; }
    std::size_t duplicates() const noexcept { return duplicates_; }

private:
    std::vector<std::string> doc_ids_;
    std::vector<std::string> model_ids_;
    Eigen::MatrixXd bpc_;
    std::size_t quarantined_ = 0;
    std::size_t duplicates_ = 0;
};

/// Reads loss-table JSONL rows {"doc_id", "model_id", "bpc"}.
LossTable load_loss_table(const std::filesystem::path& path);
void save_loss_table(const LossTable& table, const std::filesystem::path& path);

// ---- Character n-gram oracle LM ----------------------------------------------

/// Add-alpha smoothed character n-gram model. Contexts are the previous
/// order-1 characters, padded at the start of each text with a reserved
/// symbol outside the Unicode range. Smoothing is over the observed alphabet;
/// characters never seen in training score as one unseen alphabet slot.
class CharNgramLM {
public:
    static constexpr char32_t kBeginOfText = 0x110000;
    static constexpr char32_t kUnknown = 0x110001;
    static constexpr int kFormatVersion = 1;

    static CharNgramLM train(std::span<const std::string> texts, int order, double alpha);
    /// Model with no counts over a fixed alphabet: every in-alphabet character
    /// has probability 1/|alphabet|.
    static CharNgramLM uniform(std::u32string_view alphabet, double alpha = 1.0);

    int order() const noexcept { return order_; }
    double alpha() const noexcept { return alpha_; }
    std::size_t vocab_size() const noexcept { return vocab_.size(); }
    bool in_vocab(char32_t c) const { return vocab_.contains(c); }

    /// P(next | context) under add-alpha smoothing. `context` must hold
    /// order-1 symbols (use kBeginOfText for padding).
    double probability(std::u32string_view context, char32_t next) const;

    BpcValue bpc(std::string_view text) const;

    std::string to_json() const;
    static CharNgramLM from_json(std::string_view json_text);

    bool operator==(const CharNgramLM&) const = default;

private:
    struct ContextCounts {
        std::uint64_t total = 0;
        std::unordered_map<char32_t, std::uint64_t> next;
        bool operator==(const ContextCounts&) const = default;
    };

    CharNgramLM(int order, double alpha);
    void observe(std::u32string_view text);

    friend std::vector<CharNgramLM> train_ngram_ladder(std::span<const std::string>, std::span<const std::size_t>,
                                                       int, double);

    int order_ = 1;
    double alpha_ = 0.1;
    std::unordered_set<char32_t> vocab_;
    std::unordered_map<std::u32string, ContextCounts> contexts_;
};

CharNgramLM ngram_lm_train(std::span<const std::string> texts, int order, double alpha = 0.1);
BpcValue ngram_lm_bpc(const CharNgramLM& lm, std::string_view text);

/// Trains one model per entry of `doc_counts` (strictly increasing), each on
/// the first doc_counts[k] texts: nested, growing training sets.
std::vector<CharNgramLM> train_ngram_ladder(std::span<const std::string> texts, std::span<const std::size_t> doc_counts,
                                            int order, double alpha = 0.1);

}  // namespace preselect
