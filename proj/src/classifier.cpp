#include "preselect/classifier.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <thread>

#include "preselect/corpus.hpp"
#include "preselect/errors.hpp"
#include "preselect/seedset.hpp"
#include "preselect/util.hpp"

namespace preselect {

void Hyperparams::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (word_ngrams != 1 && word_ngrams != 2) throw ConfigError("word_ngrams must be 1 or 2");
    if (min_count < 1) throw ConfigError("min_count must be >= 1");
    if (buckets < 1 || buckets > (1ULL << 31)) throw ConfigError("buckets must be in [1, 2^31]");
    if (min_n != 0 || max_n != 0) throw ConfigError("subword n-grams are not supported (min_n = max_n = 0)");
}

Vocabulary::Vocabulary(std::vector<Entry> entries) : entries_(std::move(entries)) {
    index_.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!index_.emplace(entries_[i].token, static_cast<std::uint32_t>(i)).second) {
            throw ValueError("duplicate vocabulary token: " + entries_[i].token);
        }
    }
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view token) const {
    auto it = index_.find(token);
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::uint32_t ClassifierModel::eos_id() const {
    auto id = vocab.find(kEosToken);
    if (!id) {
        throw ValueError("model vocabulary lacks the EOS token");
    }
    return *id;
}

// ---- Features ----------------------------------------------------------------

namespace {

constexpr bool is_ascii_space(char c) noexcept {
    return c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' || c == '\r';
}

}  // namespace

std::vector<std::string_view> tokenize(std::string_view text) {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && is_ascii_space(text[i])) ++i;
        const std::size_t start = i;
        while (i < n && !is_ascii_space(text[i])) ++i;
        if (i > start) {
            tokens.push_back(text.substr(start, i - start));
        }
    }
    tokens.push_back(kEosToken);
    return tokens;
}

std::uint32_t bigram_id(std::string_view a, std::string_view b, std::size_t vocab_size, std::uint64_t buckets) {
    const std::uint64_t h = fnv1a64(a) * kBigramMultiplier + fnv1a64(b);
    return static_cast<std::uint32_t>(vocab_size + h % buckets);
}

void featurize(std::span<const std::string_view> tokens, const Vocabulary& vocab, std::uint64_t buckets,
               int word_ngrams, std::vector<std::uint32_t>& out) {
    out.clear();
    for (auto t : tokens) {
        if (auto id = vocab.find(t)) {
            out.push_back(*id);
        }
    }
    if (word_ngrams >= 2) {
        std::uint64_t prev = tokens.empty() ? 0 : fnv1a64(tokens[0]);
        for (std::size_t i = 1; i < tokens.size(); ++i) {
            const std::uint64_t cur = fnv1a64(tokens[i]);
            out.push_back(static_cast<std::uint32_t>(vocab.size() + (prev * kBigramMultiplier + cur) % buckets));
            prev = cur;
        }
    }
}

std::vector<std::uint32_t> featurize(std::span<const std::string_view> tokens, const Vocabulary& vocab,
                                     std::uint64_t buckets, int word_ngrams) {
    std::vector<std::uint32_t> out;
    featurize(tokens, vocab, buckets, word_ngrams, out);
    return out;
}

// ---- Training ----------------------------------------------------------------

std::vector<LabeledText> read_training_file(const std::filesystem::path& path) {
    LineReader reader(path);
    std::vector<LabeledText> out;
    std::string line;
    while (reader.next(line)) {
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        const auto sp = line.find(' ');
        const std::string_view label = std::string_view(line).substr(0, sp);
        LabeledText ex;
        if (label == kPositiveLabel) {
            ex.positive = true;
        } else if (label != kNegativeLabel) {
            throw LabelError(path.string() + ":" + std::to_string(reader.line_number()) + ": unknown label '" +
                             std::string(label) + "'");
        }
        ex.text = sp == std::string::npos ? std::string() : line.substr(sp + 1);
        out.push_back(std::move(ex));
    }
    return out;
}

namespace {

struct PlainAccess {
    static float load(const float& x) noexcept { return x; }
    static void store(float& x, float v) noexcept { x = v; }
};

// Unsynchronized shared-parameter updates: relaxed atomics keep every access
// well defined while still allowing concurrent updates to overwrite each other.
struct RelaxedAccess {
    static float load(const float& x) noexcept {
        return std::atomic_ref<float>(const_cast<float&>(x)).load(std::memory_order_relaxed);
    }
    static void store(float& x, float v) noexcept {
        std::atomic_ref<float>(x).store(v, std::memory_order_relaxed);
    }
};

/// Flattened feature lists: example i owns feats[offsets[i], offsets[i+1]).
struct FeatureBank {
    std::vector<std::uint32_t> feats;
    std::vector<std::size_t> offsets{0};
    std::vector<std::uint8_t> labels;  // 0 = positive row, 1 = negative row

    std::span<const std::uint32_t> at(std::size_t i) const {
        return {feats.data() + offsets[i], offsets[i + 1] - offsets[i]};
    }
    std::size_t size() const { return labels.size(); }
};

/// One SGD step on one example. Returns the cross-entropy loss.
template <typename Access>
double sgd_step(float* input, float* output, int dim, std::span<const std::uint32_t> feats, int label, float lr,
                std::vector<float>& hidden, std::vector<float>& grad) {
    const auto d = static_cast<std::size_t>(dim);
    std::fill(hidden.begin(), hidden.end(), 0.0f);
    for (auto f : feats) {
        const float* row = input + static_cast<std::size_t>(f) * d;
        for (std::size_t k = 0; k < d; ++k) hidden[k] += Access::load(row[k]);
    }
    const float inv_n = 1.0f / static_cast<float>(feats.size());
    for (auto& h : hidden) h *= inv_n;

    float logits[2] = {0.0f, 0.0f};
    for (int c = 0; c < 2; ++c) {
        const float* row = output + static_cast<std::size_t>(c) * d;
        float acc = 0.0f;
        for (std::size_t k = 0; k < d; ++k) acc += Access::load(row[k]) * hidden[k];
        logits[c] = acc;
    }
    const float m = std::max(logits[0], logits[1]);
    const float e0 = std::exp(logits[0] - m);
    const float e1 = std::exp(logits[1] - m);
    const float probs[2] = {e0 / (e0 + e1), e1 / (e0 + e1)};

    std::fill(grad.begin(), grad.end(), 0.0f);
    for (int c = 0; c < 2; ++c) {
        const float alpha = lr * ((c == label ? 1.0f : 0.0f) - probs[c]);
        float* row = output + static_cast<std::size_t>(c) * d;
        for (std::size_t k = 0; k < d; ++k) {
            const float w = Access::load(row[k]);
            grad[k] += alpha * w;
            Access::store(row[k], w + alpha * hidden[k]);
        }
    }
    for (auto& g : grad) g *= inv_n;
    for (auto f : feats) {
        float* row = input + static_cast<std::size_t>(f) * d;
        for (std::size_t k = 0; k < d; ++k) Access::store(row[k], Access::load(row[k]) + grad[k]);
    }
    return -std::log(std::max(probs[label], 1e-12f));
}

}  // namespace

ClassifierModel train(std::span<const LabeledText> examples, const Hyperparams& hp, const TrainOptions& options,
                      TrainStats* stats) {
    hp.validate();
    if (examples.empty()) {
        throw EmptyInputError("training set is empty");
    }
    std::size_t n_pos = 0;
    for (const auto& ex : examples) n_pos += ex.positive;
    if (n_pos == 0 || n_pos == examples.size()) {
        throw LabelError("training set needs at least one example of each class");
    }

    // Vocabulary: unigrams with count >= min_count, most frequent first, EOS always present.
    std::unordered_map<std::string, std::uint64_t> counts;
    for (const auto& ex : examples) {
        for (auto t : tokenize(ex.text)) ++counts[std::string(t)];
    }
    std::vector<Vocabulary::Entry> entries;
    for (auto& [tok, n] : counts) {
        if (n >= static_cast<std::uint64_t>(hp.min_count) || tok == kEosToken) {
            entries.push_back({tok, n});
        }
    }
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.count != b.count ? a.count > b.count : a.token < b.token; });
    if (entries.size() + hp.buckets > (1ULL << 31)) {
        throw ConfigError("vocabulary plus buckets exceeds 2^31 rows");
    }

    ClassifierModel model;
    model.hp = hp;
    model.vocab = Vocabulary(std::move(entries));

    FeatureBank bank;
    {
        std::vector<std::uint32_t> f;
        for (const auto& ex : examples) {
            featurize(tokenize(ex.text), model.vocab, hp.buckets, hp.word_ngrams, f);
            bank.feats.insert(bank.feats.end(), f.begin(), f.end());
            bank.offsets.push_back(bank.feats.size());
            bank.labels.push_back(ex.positive ? 0 : 1);
        }
    }

    const auto rows = static_cast<Eigen::Index>(model.vocab.size() + hp.buckets);
    model.input.resize(rows, hp.dim);
    {
        Rng rng(hp.seed);
        const double bound = 1.0 / hp.dim;
        float* a = model.input.data();
        const auto total = static_cast<std::size_t>(model.input.size());
        for (std::size_t i = 0; i < total; ++i) {
            a[i] = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
        }
    }
    model.output = RowMatrixXf::Zero(2, hp.dim);

    const std::size_t n = bank.size();
    const std::uint64_t total_updates = static_cast<std::uint64_t>(hp.epochs) * n;
    const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(n)));
    float* input = model.input.data();
    float* output = model.output.data();
    const auto lr_at = [&](std::uint64_t u) {
        return hp.lr * (1.0 - static_cast<double>(u) / static_cast<double>(total_updates));
    };

    double last_epoch_loss = 0.0;
    if (threads == 1) {
        std::vector<float> hidden(static_cast<std::size_t>(hp.dim)), grad(hidden.size());
        std::uint64_t u = 0;
        for (int epoch = 0; epoch < hp.epochs; ++epoch) {
            double loss = 0.0;
            for (std::size_t i = 0; i < n; ++i, ++u) {
                const double lr = lr_at(u);
                if (options.on_update) options.on_update(u, lr);
                loss += sgd_step<PlainAccess>(input, output, hp.dim, bank.at(i), bank.labels[i],
                                              static_cast<float>(lr), hidden, grad);
            }
            last_epoch_loss = loss / static_cast<double>(n);
        }
    } else {
        std::atomic<std::uint64_t> progress{0};
        std::vector<double> losses(threads, 0.0);
        {
            std::vector<std::jthread> pool;
            for (unsigned t = 0; t < threads; ++t) {
                pool.emplace_back([&, t] {
                    const std::size_t begin = n * t / threads;
                    const std::size_t end = n * (t + 1) / threads;
                    std::vector<float> hidden(static_cast<std::size_t>(hp.dim)), grad(hidden.size());
                    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
                        double loss = 0.0;
                        for (std::size_t i = begin; i < end; ++i) {
                            const std::uint64_t u = progress.fetch_add(1, std::memory_order_relaxed);
                            loss += sgd_step<RelaxedAccess>(input, output, hp.dim, bank.at(i), bank.labels[i],
                                                            static_cast<float>(lr_at(u)), hidden, grad);
                        }
                        losses[t] = loss;
                    }
                });
            }
        }
        for (double l : losses) last_epoch_loss += l;
        last_epoch_loss /= static_cast<double>(n);
    }

    if (stats != nullptr) {
        stats->examples = n;
        stats->updates = total_updates;
        stats->final_epoch_loss = last_epoch_loss;
    }
    return model;
}

ClassifierModel train(const std::filesystem::path& training_file, const Hyperparams& hp, const TrainOptions& options,
                      TrainStats* stats) {
    const auto examples = read_training_file(training_file);
    return train(examples, hp, options, stats);
}

// ---- Inference ---------------------------------------------------------------

double logit_difference(const ClassifierModel& model, std::span<const std::uint32_t> features) {
    if (features.empty()) {
        throw ValueError("document has no features");
    }
    Eigen::VectorXd hidden = Eigen::VectorXd::Zero(model.input.cols());
    for (auto f : features) {
        hidden.noalias() += model.input.row(f).cast<double>().transpose();
    }
    hidden /= static_cast<double>(features.size());
    const Eigen::VectorXd diff = (model.output.row(0) - model.output.row(1)).cast<double>().transpose();
    return diff.dot(hidden);
}

Prediction softmax2(double y_pos, double y_neg) {
    const double m = std::max(y_pos, y_neg);
    const double e_pos = std::exp(y_pos - m);
    const double e_neg = std::exp(y_neg - m);
    return {e_pos / (e_pos + e_neg), e_neg / (e_pos + e_neg)};
}

namespace {

Prediction predict_with(const ClassifierModel& model, std::string_view text, int word_ngrams) {
    const auto tokens = tokenize(text);
    thread_local std::vector<std::uint32_t> feats;
    featurize(tokens, model.vocab, model.hp.buckets, word_ngrams, feats);
    // Only the logit difference matters for a two-way softmax.
    return softmax2(logit_difference(model, feats), 0.0);
}

}  // namespace

Prediction predict(const ClassifierModel& model, std::string_view text) {
    return predict_with(model, text, model.hp.word_ngrams);
}

Prediction predict_unigram_only(const ClassifierModel& model, std::string_view text) {
    return predict_with(model, text, 1);
}

Scorer::Scorer(const ClassifierModel& model) : model_(&model) {
    const Eigen::RowVectorXd diff = (model.output.row(0) - model.output.row(1)).cast<double>();
    row_logit_.resize(static_cast<std::size_t>(model.input.rows()));
    for (Eigen::Index r = 0; r < model.input.rows(); ++r) {
        row_logit_[static_cast<std::size_t>(r)] = model.input.row(r).cast<double>().dot(diff);
    }
}

double Scorer::logit_difference(std::string_view text) const {
    const auto tokens = tokenize(text);
    thread_local std::vector<std::uint32_t> feats;
    featurize(tokens, model_->vocab, model_->hp.buckets, model_->hp.word_ngrams, feats);
    if (feats.empty()) {
        throw ValueError("document has no features");
    }
    double sum = 0.0;
    for (auto f : feats) sum += row_logit_[f];
    return sum / static_cast<double>(feats.size());
}

Prediction Scorer::predict(std::string_view text) const { return softmax2(logit_difference(text), 0.0); }

ClassifierModel zero_eos(ClassifierModel model) {
    if (model.eos_zeroed) {
        log_warning("EOS row already zeroed; leaving model unchanged");
        return model;
    }
    model.input.row(model.eos_id()).setZero();
    model.eos_zeroed = true;
    return model;
}

// ---- Serialization -------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'S', 'F', 'T'};

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        v = to_little(v);
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(T));
    }
    void put_bytes(std::string_view s) { buf_.append(s); }
    void put_matrix(const RowMatrixXf& m) {
        put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
        put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
        if constexpr (std::endian::native == std::endian::little) {
            buf_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
        } else {
            for (Eigen::Index i = 0; i < m.size(); ++i) put<float>(m.data()[i]);
        }
    }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little(v);
    }
    std::string_view get_bytes(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    RowMatrixXf get_matrix() {
        const auto rows = get<std::uint64_t>();
        const auto cols = get<std::uint64_t>();
        if (cols != 0 && rows > (bytes_.size() - pos_) / sizeof(float) / cols) {
            throw CorruptionError("model file truncated inside a matrix block");
        }
        RowMatrixXf m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        const std::size_t n = rows * cols * sizeof(float);
        need(n);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(m.data(), bytes_.data() + pos_, n);
            pos_ += n;
        } else {
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get<float>();
        }
        return m;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (n > bytes_.size() - pos_) {
            throw CorruptionError("model file truncated");
        }
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const ClassifierModel& model) {
    ByteWriter w;
    w.put_bytes(std::string_view(kMagic, 4));
    w.put<std::uint32_t>(kModelFormatVersion);

    const auto& hp = model.hp;
    w.put<double>(hp.lr);
    w.put<std::int32_t>(hp.dim);
    w.put<std::int32_t>(hp.epochs);
    w.put<std::int32_t>(hp.word_ngrams);
    w.put<std::int32_t>(hp.min_count);
    w.put<std::uint64_t>(hp.buckets);
    w.put<std::int32_t>(hp.min_n);
    w.put<std::int32_t>(hp.max_n);
    w.put<std::uint64_t>(hp.seed);
    w.put<std::uint8_t>(model.eos_zeroed ? 1 : 0);

    w.put<std::uint64_t>(model.vocab.size());
    for (std::size_t i = 0; i < model.vocab.size(); ++i) {
        const auto& e = model.vocab.entries()[i];
        w.put<std::uint32_t>(static_cast<std::uint32_t>(e.token.size()));
        w.put_bytes(e.token);
        w.put<std::uint64_t>(e.count);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(i));
    }
    w.put_matrix(model.input);
    w.put_matrix(model.output);
    const std::uint64_t checksum = fnv1a64(w.buffer());
    w.put<std::uint64_t>(checksum);
    return std::move(w.buffer());
}

ClassifierModel deserialize_model(std::string_view bytes) {
    if (bytes.size() < 8) {
        throw CorruptionError("model file truncated (no header)");
    }
    if (bytes.substr(0, 4) != std::string_view(kMagic, 4)) {
        throw FormatError("not a classifier model file (bad magic)");
    }
    ByteReader header(bytes.substr(4, 4));
    const auto version = header.get<std::uint32_t>();
    if (version != kModelFormatVersion) {
        throw FormatError("model format version " + std::to_string(version) + " but this build reads version " +
                          std::to_string(kModelFormatVersion));
    }
    if (bytes.size() < 16) {
        throw CorruptionError("model file truncated");
    }
    const auto body = bytes.substr(0, bytes.size() - 8);
    ByteReader tail(bytes.substr(bytes.size() - 8));
    if (tail.get<std::uint64_t>() != fnv1a64(body)) {
        throw CorruptionError("model checksum mismatch (file truncated or modified)");
    }

    ByteReader r(body.substr(8));
    ClassifierModel m;
    m.hp.lr = r.get<double>();
    m.hp.dim = r.get<std::int32_t>();
    m.hp.epochs = r.get<std::int32_t>();
    m.hp.word_ngrams = r.get<std::int32_t>();
    m.hp.min_count = r.get<std::int32_t>();
    m.hp.buckets = r.get<std::uint64_t>();
    m.hp.min_n = r.get<std::int32_t>();
    m.hp.max_n = r.get<std::int32_t>();
    m.hp.seed = r.get<std::uint64_t>();
    m.eos_zeroed = r.get<std::uint8_t>() != 0;

    const auto v = r.get<std::uint64_t>();
    std::vector<Vocabulary::Entry> entries;
    for (std::uint64_t i = 0; i < v; ++i) {
        const auto len = r.get<std::uint32_t>();
        Vocabulary::Entry e;
        e.token = std::string(r.get_bytes(len));
        e.count = r.get<std::uint64_t>();
        if (r.get<std::uint32_t>() != i) {
            throw CorruptionError("vocabulary ids out of order");
        }
        entries.push_back(std::move(e));
    }
    m.vocab = Vocabulary(std::move(entries));
    m.input = r.get_matrix();
    m.output = r.get_matrix();
    if (r.remaining() != 0) {
        throw CorruptionError("trailing bytes in model file");
    }
    if (m.input.rows() != static_cast<Eigen::Index>(v + m.hp.buckets) || m.input.cols() != m.hp.dim ||
        m.output.rows() != 2 || m.output.cols() != m.hp.dim) {
        throw CorruptionError("matrix shapes disagree with hyperparameters");
    }
    if (!m.vocab.find(kEosToken)) {
        throw CorruptionError("vocabulary lacks the EOS token");
    }
    return m;
}

void save_model(const ClassifierModel& model, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_model(model));
}

ClassifierModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace preselect
