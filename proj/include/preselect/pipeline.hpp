#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "preselect/analysis.hpp"
#include "preselect/classifier.hpp"
#include "preselect/compression.hpp"
#include "preselect/corpus.hpp"
#include "preselect/strength.hpp"
#include "preselect/threshold.hpp"

namespace preselect {

// ---- Filtering ---------------------------------------------------------------

struct SelectionConfig {
    /// Exactly one of fraction / char_budget is set.
    std::optional<double> fraction;
    std::optional<std::uint64_t> char_budget;
    std::filesystem::path model_path;
    std::vector<std::filesystem::path> input_shards;
    std::filesystem::path output_dir;
    unsigned workers = 1;
    std::uint64_t rng_seed = 0;
    bool force = false;
    ReadOptions read;
    std::vector<std::uint64_t> length_edges = default_length_edges();
    /// Shards that fed the seed sample; filtering any of them is refused.
    std::vector<std::string> excluded_shards;

    void validate() const;
    nlohmann::json to_json() const;
};

struct ShardReport {
    std::string input;
    std::string output;
    std::uint64_t input_docs = 0;
    std::uint64_t selected_docs = 0;
    std::uint64_t bad_records = 0;
};

struct SelectionReport {
    double threshold = 0.0;
    double target_fraction = 0.0;
    std::uint64_t target_docs = 0;
    std::uint64_t input_docs = 0;
    std::uint64_t selected_docs = 0;
    std::uint64_t input_chars = 0;
    std::uint64_t selected_chars = 0;
    std::uint64_t bad_records = 0;
    std::uint64_t boundary_bin_docs = 0;
    int passes = 0;
    std::vector<DomainDensityRow> domain_density;        // selected documents
    std::vector<DomainDensityRow> input_domain_density;
    LengthHistogram length_histogram;                    // selected documents
    LengthHistogram input_length_histogram;
    std::vector<ShardReport> shards;
    std::string config_digest;
    std::string model_digest;
    double seconds = 0.0;

    nlohmann::json to_json() const;
    std::string to_text() const;
};

/// Scores every shard, fixes the admission threshold for the target count,
/// then writes admitted records (verbatim, in input order) to one output
/// shard per input shard. Emits report.json, report.txt and
/// length_histogram.svg into the output directory.
///
/// Throws SafetyError when the output directory is nonempty and !force.
SelectionReport filter_corpus(const SelectionConfig& config);
SelectionReport filter_corpus(const SelectionConfig& config, const ClassifierModel& model);

// ---- End-to-end pipeline -------------------------------------------------------

/// Character n-gram models trained on nested prefixes of a reference corpus,
/// standing in for a family of language models of increasing quality.
struct OracleLadderConfig {
    std::vector<std::filesystem::path> train_shards;
    std::vector<std::size_t> doc_counts;
    int order = 3;
    double alpha = 0.1;
};

/// Rung k is named "ngram-<doc_counts[k]>" and gets benchmark score k + 1.
struct OracleLadder {
    std::vector<CharNgramLM> models;
    std::vector<std::string> model_ids;

    ModelRoster roster() const;
    /// BPC of every nonempty document under every rung. Empty documents are
    /// skipped; EmptyInputError if none remain.
    LossTable score(std::span<const Document> docs) const;
};

OracleLadder build_oracle_ladder(const OracleLadderConfig& config, const ReadOptions& read = {});

struct PipelineConfig {
    std::filesystem::path workdir;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    bool force = false;
    ReadOptions read;

    // sample-seed
    std::vector<std::filesystem::path> seed_shards;
    std::size_t top_k_domains = 3000;
    std::size_t per_domain = 300;

    // score-strength: either a loss table + roster, or an oracle ladder
    std::optional<std::filesystem::path> loss_table;
    std::optional<std::filesystem::path> roster;
    std::optional<OracleLadderConfig> ladder;
    std::size_t histogram_bins = 20;

    // build-seedset
    std::size_t pos_target = 200'000;
    std::size_t neg_target = 200'000;

    // train
    Hyperparams hp;
    unsigned train_threads = 1;
    bool zero_eos = true;

    // filter
    std::vector<std::filesystem::path> filter_shards;
    std::optional<double> fraction = 0.10;
    std::optional<std::uint64_t> char_budget;

    /// Reads a JSON config; relative paths resolve against `base_dir`.
    static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

enum class Stage { SampleSeed, ScoreStrength, BuildSeedset, Train, Filter };

inline constexpr Stage kAllStages[] = {Stage::SampleSeed, Stage::ScoreStrength, Stage::BuildSeedset, Stage::Train,
                                       Stage::Filter};

const char* stage_name(Stage s) noexcept;
std::filesystem::path stage_dir(const PipelineConfig& config, Stage s);

struct StageOutcome {
    Stage stage;
    bool ran = false;
    double seconds = 0.0;
};

struct RunSummary {
    std::vector<StageOutcome> stages;
    std::optional<SelectionReport> selection;
};

/// Runs every stage, skipping those whose manifest, inputs and outputs are all
/// current. A stage whose outputs are missing reruns together with every stage
/// after it. A corrupt manifest, a manifest whose recorded inputs disagree with
/// the current ones, or a modified output throws StaleArtifactError before
/// anything is written, unless config.force is set.
RunSummary run_pipeline(const PipelineConfig& config);

}  // namespace preselect
