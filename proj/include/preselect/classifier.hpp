#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace preselect {

/// End-of-text token appended to every tokenized document.
inline constexpr std::string_view kEosToken = "</s>";

/// Multiplier combining the hashes of two adjacent tokens into a bigram hash.
inline constexpr std::uint64_t kBigramMultiplier = 116049371ULL;

struct Hyperparams {
    double lr = 0.1;
    int dim = 100;
    int epochs = 5;
    int word_ngrams = 2;
    int min_count = 1;
    std::uint64_t buckets = 2'000'000;
    int min_n = 0;
    int max_n = 0;
    std::uint64_t seed = 0;

    /// Throws ConfigError on any out-of-range field.
    void validate() const;
    bool operator==(const Hyperparams&) const = default;
};

class Vocabulary {
public:
    struct Entry {
        std::string token;
        std::uint64_t count = 0;
        bool operator==(const Entry&) const = default;
    };

    Vocabulary() = default;
    /// Ids are assigned in the given order.
    explicit Vocabulary(std::vector<Entry> entries);

    std::optional<std::uint32_t> find(std::string_view token) const;
    const std::vector<Entry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    bool operator==(const Vocabulary& o) const { return entries_ == o.entries_; }

private:
    struct Hash {
        using is_transparent = void;
        std::size_t operator()(std::string_view s) const noexcept { return std::hash<std::string_view>{}(s); }
    };
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::uint32_t, Hash, std::equal_to<>> index_;
};

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Linear bag-of-n-grams classifier. Feature ids [0, V) are unigrams, ids
/// [V, V + buckets) are hashed bigrams. Row 0 of `output` is the positive class.
struct ClassifierModel {
    Vocabulary vocab;
    RowMatrixXf input;   // (V + buckets) x dim
    RowMatrixXf output;  // 2 x dim
    Hyperparams hp;
    bool eos_zeroed = false;

    std::size_t vocab_size() const noexcept { return vocab.size(); }
    std::uint32_t eos_id() const;
};

struct Prediction {
    double p_pos = 0.5;
    double p_neg = 0.5;
};

/// Splits on runs of ASCII whitespace and appends the EOS token. Views point
/// into `text` (or at kEosToken).
std::vector<std::string_view> tokenize(std::string_view text);

/// Unigram ids of in-vocabulary tokens followed, when word_ngrams >= 2, by one
/// hashed bigram id per adjacent token pair. Duplicates are kept.
void featurize(std::span<const std::string_view> tokens, const Vocabulary& vocab, std::uint64_t buckets,
               int word_ngrams, std::vector<std::uint32_t>& out);
std::vector<std::uint32_t> featurize(std::span<const std::string_view> tokens, const Vocabulary& vocab,
                                     std::uint64_t buckets, int word_ngrams = 2);

/// Hashed id for the bigram (a, b) in a model with `vocab_size` unigrams.
std::uint32_t bigram_id(std::string_view a, std::string_view b, std::size_t vocab_size, std::uint64_t buckets);

// ---- Training ----------------------------------------------------------------

struct LabeledText {
    bool positive = false;
    std::string text;
};

/// Reads `__label__pos|neg <text>` lines. Throws LabelError on other labels.
std::vector<LabeledText> read_training_file(const std::filesystem::path& path);

struct TrainOptions {
    unsigned threads = 1;
    /// Called with (update index, learning rate) before every SGD update.
    /// Only honoured with threads == 1.
    std::function<void(std::uint64_t, double)> on_update;
};

struct TrainStats {
    std::size_t examples = 0;
    std::uint64_t updates = 0;
    double final_epoch_loss = 0.0;
};

/// SGD on softmax cross-entropy with a learning rate decaying linearly from
/// hp.lr towards 0 over epochs x examples updates. With one thread the result
/// is bit-deterministic; with more, workers update the shared parameters
/// without synchronization and the result depends on scheduling.
ClassifierModel train(std::span<const LabeledText> examples, const Hyperparams& hp, const TrainOptions& options = {},
                      TrainStats* stats = nullptr);
ClassifierModel train(const std::filesystem::path& training_file, const Hyperparams& hp,
                      const TrainOptions& options = {}, TrainStats* stats = nullptr);

// ---- Inference ---------------------------------------------------------------

/// Pre-softmax score difference y_pos - y_neg under mean pooling of the rows of `features`.
double logit_difference(const ClassifierModel& model, std::span<const std::uint32_t> features);

Prediction predict(const ClassifierModel& model, std::string_view text);
/// Same as predict but bigram features are left out.
Prediction predict_unigram_only(const ClassifierModel& model, std::string_view text);
Prediction softmax2(double y_pos, double y_neg);

/// Batch scorer. Pooling and the output layer are both linear, so the logit
/// difference equals the mean over features of each row's projection onto
/// B0 - B1. Those projections are computed once, making a prediction a sum of
/// table lookups. Agrees with predict() up to rounding.
class Scorer {
public:
    /// Keeps a reference to `model`, which must outlive the scorer.
    explicit Scorer(const ClassifierModel& model);
    Scorer(ClassifierModel&&) = delete;

    double logit_difference(std::string_view text) const;
    Prediction predict(std::string_view text) const;

private:
    const ClassifierModel* model_;
    std::vector<double> row_logit_;
};

/// Zeroes the EOS unigram row so EOS contributes nothing but the pooling
/// denominator. A second call is a no-op (with a warning).
ClassifierModel zero_eos(ClassifierModel model);

// ---- Serialization -------------------------------------------------------------

inline constexpr std::uint32_t kModelFormatVersion = 1;

std::string serialize_model(const ClassifierModel& model);
ClassifierModel deserialize_model(std::string_view bytes);
void save_model(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_model(const std::filesystem::path& path);

}  // namespace preselect
