#include "preselect/pipeline.hpp"

#include <chrono>
#include <functional>
#include <map>
#include <unordered_map>

#include "preselect/compression.hpp"
#include "preselect/errors.hpp"
#include "preselect/seedset.hpp"
#include "preselect/strength.hpp"
#include "preselect/util.hpp"

namespace preselect {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kManifestVersion = 1;
constexpr const char* kStageManifest = "stage.json";

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

std::vector<fs::path> resolve_list(const fs::path& base, const json& j) {
    std::vector<fs::path> out;
    for (const auto& e : j) out.push_back(resolve(base, e.get<std::string>()));
    return out;
}

json fields_json(const FieldNames& f) { return {{"id", f.id}, {"text", f.text}, {"url", f.url}}; }

/// Cheap identity of a large input shard: path, size and modification time.
std::string shard_signature(const fs::path& p) {
    std::error_code ec;
    const auto size = fs::file_size(p, ec);
    if (ec) throw IoError("cannot stat " + p.string());
    const auto mtime = fs::last_write_time(p, ec).time_since_epoch().count();
    return "stat:" + std::to_string(size) + ":" + std::to_string(mtime);
}

json shard_signatures(const std::vector<fs::path>& shards) {
    json j = json::object();
    for (const auto& p : shards) j[p.string()] = shard_signature(p);
    return j;
}

json hp_json(const Hyperparams& hp) {
    return {{"lr", hp.lr},           {"dim", hp.dim},       {"epochs", hp.epochs}, {"word_ngrams", hp.word_ngrams},
            {"min_count", hp.min_count}, {"buckets", hp.buckets}, {"min_n", hp.min_n}, {"max_n", hp.max_n},
            {"seed", hp.seed}};
}

std::string manifest_digest(json m) {
    m.erase("digest");
    return content_digest(m.dump());
}

struct Manifest {
    json params;
    json inputs;
    json outputs;  // relative path -> digest
};

std::optional<Manifest> read_manifest(const fs::path& dir, Stage stage) {
    const auto path = dir / kStageManifest;
    if (!fs::exists(path)) return std::nullopt;
    json m;
    try {
        m = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw StaleArtifactError("corrupt manifest " + path.string() + ": " + e.what());
    }
    if (!m.is_object() || !m.contains("digest") || !m["digest"].is_string() ||
        m["digest"].get<std::string>() != manifest_digest(m)) {
        throw StaleArtifactError("manifest " + path.string() + " fails its digest check");
    }
    if (m.value("stage", "") != stage_name(stage) || m.value("version", 0) != kManifestVersion) {
        throw StaleArtifactError("manifest " + path.string() + " belongs to another stage or version");
    }
    return Manifest{m.at("params"), m.at("inputs"), m.at("outputs")};
}

void write_manifest(const fs::path& dir, Stage stage, const json& params, const json& inputs) {
    json outputs = json::object();
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), dir).generic_string();
        if (rel == kStageManifest) continue;
        outputs[rel] = file_digest(e.path());
    }
    json m;
    m["stage"] = stage_name(stage);
    m["version"] = kManifestVersion;
    m["params"] = params;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["digest"] = manifest_digest(m);
    write_file_atomic(dir / kStageManifest, m.dump(2) + "\n");
}

/// Digest of one recorded output of an upstream stage, read from its manifest.
std::string upstream_output(const PipelineConfig& c, Stage s, const std::string& rel) {
    const auto m = read_manifest(stage_dir(c, s), s);
    if (!m || !m->outputs.contains(rel)) {
        throw StaleArtifactError(std::string("stage ") + stage_name(s) + " has no recorded output " + rel);
    }
    return m->outputs[rel].get<std::string>();
}

// ---- Per-stage parameters, inputs and bodies ------------------------------------

json stage_params(const PipelineConfig& c, Stage s) {
    switch (s) {
        case Stage::SampleSeed:
            return {{"top_k_domains", c.top_k_domains}, {"per_domain", c.per_domain}, {"seed", c.seed},
                    {"fields", fields_json(c.read.fields)}, {"skip_bad_records", c.read.skip_bad_records}};
        case Stage::ScoreStrength: {
            json p = {{"histogram_bins", c.histogram_bins}};
            if (c.ladder) {
                p["ladder"] = {{"doc_counts", c.ladder->doc_counts}, {"order", c.ladder->order},
                               {"alpha", c.ladder->alpha}};
            }
            return p;
        }
        case Stage::BuildSeedset:
            return {{"pos_target", c.pos_target}, {"neg_target", c.neg_target}, {"seed", c.seed}};
        case Stage::Train:
            return {{"hyperparams", hp_json(c.hp)}, {"threads", c.train_threads}, {"zero_eos", c.zero_eos}};
        case Stage::Filter: {
            json p = {{"seed", c.seed}, {"fields", fields_json(c.read.fields)},
                      {"skip_bad_records", c.read.skip_bad_records}};
            if (c.fraction) p["fraction"] = *c.fraction;
            if (c.char_budget) p["char_budget"] = *c.char_budget;
            return p;
        }
    }
    return {};
}

json stage_inputs(const PipelineConfig& c, Stage s) {
    switch (s) {
        case Stage::SampleSeed:
            return {{"shards", shard_signatures(c.seed_shards)}};
        case Stage::ScoreStrength: {
            json in = {{"sample", upstream_output(c, Stage::SampleSeed, "sample.jsonl")}};
            if (c.ladder) {
                in["ladder_shards"] = shard_signatures(c.ladder->train_shards);
            } else {
                in["loss_table"] = file_digest(*c.loss_table);
                in["roster"] = file_digest(*c.roster);
            }
            return in;
        }
        case Stage::BuildSeedset:
            return {{"sample", upstream_output(c, Stage::SampleSeed, "sample.jsonl")},
                    {"strength", upstream_output(c, Stage::ScoreStrength, "strength.jsonl")}};
        case Stage::Train:
            return {{"training_file", upstream_output(c, Stage::BuildSeedset, "train.txt")}};
        case Stage::Filter:
            return {{"model", upstream_output(c, Stage::Train, "model.bin")},
                    {"shards", shard_signatures(c.filter_shards)}};
    }
    return {};
}

void run_sample_seed(const PipelineConfig& c, const fs::path& dir) {
    auto sample = sample_seed(c.seed_shards, c.read, c.top_k_domains, c.per_domain, c.seed);
    save_seed_sample(sample, dir);
}

void run_score_strength(const PipelineConfig& c, const fs::path& dir) {
    const auto docs = read_corpus({stage_dir(c, Stage::SampleSeed) / "sample.jsonl"});
    LossTable losses;
    std::optional<ModelRoster> roster;
    if (c.ladder) {
        const auto ladder = build_oracle_ladder(*c.ladder, c.read);
        for (std::size_t k = 0; k < ladder.models.size(); ++k) {
            write_file_atomic(dir / ("lm_" + ladder.model_ids[k] + ".json"), ladder.models[k].to_json());
        }
        losses = ladder.score(docs);
        roster.emplace(ladder.roster());
    } else {
        losses = load_loss_table(*c.loss_table);
        roster.emplace(load_roster(*c.roster));
    }
    save_loss_table(losses, dir / "losses.jsonl");
    write_file_atomic(dir / "roster.json", roster->to_json() + "\n");

    const auto table = score_corpus(losses, *roster, c.workers);
    save_strength_table(table, dir);

    const auto hist = strength_histogram(table, c.histogram_bins);
    std::map<std::string, std::size_t> levels;
    const auto z = pair_count(table.num_models);
    std::vector<std::size_t> level_counts(z + 1, 0);
    for (const auto& [id, s] : table.scores) {
        ++level_counts[static_cast<std::size_t>(std::llround(s * static_cast<double>(z)))];
    }
    json h = {{"edges", hist.edges}, {"counts", hist.counts}, {"Z", z}, {"level_counts", level_counts}};
    write_file_atomic(dir / "histogram.json", h.dump(2) + "\n");
}

void run_build_seedset(const PipelineConfig& c, const fs::path& dir) {
    const auto table = load_strength_table(stage_dir(c, Stage::ScoreStrength));
    const auto docs = read_corpus({stage_dir(c, Stage::SampleSeed) / "sample.jsonl"});
    std::unordered_map<std::string_view, std::string_view> texts;
    for (const auto& d : docs) texts.emplace(d.id, d.text);
    const auto seeds = select_seed_examples(table, c.pos_target, c.neg_target, c.seed);
    emit_training_file(
        seeds,
        [&](std::string_view id) -> std::optional<std::string_view> {
            auto it = texts.find(id);
            if (it == texts.end()) return std::nullopt;
            return it->second;
        },
        dir / "train.txt");
}

void run_train(const PipelineConfig& c, const fs::path& dir) {
    TrainStats stats;
    auto model = train(stage_dir(c, Stage::BuildSeedset) / "train.txt", c.hp, TrainOptions{c.train_threads, {}}, &stats);
    if (c.zero_eos) model = zero_eos(std::move(model));
    save_model(model, dir / "model.bin");
    json s = {{"examples", stats.examples},
              {"updates", stats.updates},
              {"final_epoch_loss", stats.final_epoch_loss},
              {"vocab_size", model.vocab_size()},
              {"eos_zeroed", model.eos_zeroed}};
    write_file_atomic(dir / "train_stats.json", s.dump(2) + "\n");
}

SelectionReport run_filter(const PipelineConfig& c, const fs::path& dir) {
    SelectionConfig sc;
    sc.fraction = c.fraction;
    sc.char_budget = c.char_budget;
    sc.model_path = stage_dir(c, Stage::Train) / "model.bin";
    sc.input_shards = c.filter_shards;
    sc.output_dir = dir / "selected";
    sc.workers = c.workers;
    sc.rng_seed = c.seed;
    sc.read = c.read;
    for (const auto& p : c.seed_shards) sc.excluded_shards.push_back(p.string());
    return filter_corpus(sc);
}

}  // namespace

OracleLadder build_oracle_ladder(const OracleLadderConfig& config, const ReadOptions& read) {
    std::vector<std::string> texts;
    for (auto& d : read_corpus(config.train_shards, read)) texts.push_back(std::move(d.text));
    OracleLadder ladder;
    ladder.models = train_ngram_ladder(texts, config.doc_counts, config.order, config.alpha);
    for (auto n : config.doc_counts) ladder.model_ids.push_back("ngram-" + std::to_string(n));
    return ladder;
}

ModelRoster OracleLadder::roster() const {
    std::vector<RosterEntry> entries;
    for (std::size_t k = 0; k < model_ids.size(); ++k) entries.push_back({model_ids[k], static_cast<double>(k + 1)});
    return ModelRoster(std::move(entries));
}

LossTable OracleLadder::score(std::span<const Document> docs) const {
    std::vector<const Document*> kept;
    for (const auto& d : docs) {
        if (d.char_count > 0) kept.push_back(&d);
    }
    if (kept.empty()) throw EmptyInputError("no nonempty documents to score");
    Eigen::MatrixXd bpc(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(models.size()));
    std::vector<std::string> ids;
    for (std::size_t r = 0; r < kept.size(); ++r) {
        ids.push_back(kept[r]->id);
        for (std::size_t k = 0; k < models.size(); ++k) {
            bpc(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = models[k].bpc(kept[r]->text).bits_per_char;
        }
    }
    return LossTable(std::move(ids), model_ids, std::move(bpc));
}

const char* stage_name(Stage s) noexcept {
    switch (s) {
        case Stage::SampleSeed: return "sample-seed";
        case Stage::ScoreStrength: return "score-strength";
        case Stage::BuildSeedset: return "build-seedset";
        case Stage::Train: return "train";
        case Stage::Filter: return "filter";
    }
    return "?";
}

fs::path stage_dir(const PipelineConfig& config, Stage s) {
    switch (s) {
        case Stage::SampleSeed: return config.workdir / "01_sample_seed";
        case Stage::ScoreStrength: return config.workdir / "02_strength";
        case Stage::BuildSeedset: return config.workdir / "03_seedset";
        case Stage::Train: return config.workdir / "04_model";
        case Stage::Filter: return config.workdir / "05_filter";
    }
    return config.workdir;
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
    PipelineConfig c;
    try {
        c.workdir = resolve(base_dir, j.at("workdir").get<std::string>());
        c.seed = j.value("seed", c.seed);
        c.workers = j.value("workers", c.workers);
        c.force = j.value("force", false);
        c.read.skip_bad_records = j.value("skip_bad_records", false);
        if (j.contains("fields")) {
            const auto& f = j["fields"];
            c.read.fields.id = f.value("id", c.read.fields.id);
            c.read.fields.text = f.value("text", c.read.fields.text);
            c.read.fields.url = f.value("url", c.read.fields.url);
        }

        const auto& ss = j.at("sample_seed");
        c.seed_shards = resolve_list(base_dir, ss.at("shards"));
        c.top_k_domains = ss.value("top_k_domains", c.top_k_domains);
        c.per_domain = ss.value("per_domain", c.per_domain);

        const auto& st = j.at("strength");
        c.histogram_bins = st.value("histogram_bins", c.histogram_bins);
        if (st.contains("oracle_ladder")) {
            const auto& l = st["oracle_ladder"];
            OracleLadderConfig lc;
            lc.train_shards = resolve_list(base_dir, l.at("train_shards"));
            lc.doc_counts = l.at("doc_counts").get<std::vector<std::size_t>>();
            lc.order = l.value("order", lc.order);
            lc.alpha = l.value("alpha", lc.alpha);
            c.ladder = std::move(lc);
        } else {
            c.loss_table = resolve(base_dir, st.at("loss_table").get<std::string>());
            c.roster = resolve(base_dir, st.at("roster").get<std::string>());
        }

        const auto& sd = j.at("seedset");
        c.pos_target = sd.value("pos_target", c.pos_target);
        c.neg_target = sd.value("neg_target", c.neg_target);

        if (j.contains("train")) {
            const auto& t = j["train"];
            c.hp.lr = t.value("lr", c.hp.lr);
            c.hp.dim = t.value("dim", c.hp.dim);
            c.hp.epochs = t.value("epochs", c.hp.epochs);
            c.hp.word_ngrams = t.value("word_ngrams", c.hp.word_ngrams);
            c.hp.min_count = t.value("min_count", c.hp.min_count);
            c.hp.buckets = t.value("buckets", c.hp.buckets);
            c.hp.min_n = t.value("min_n", c.hp.min_n);
            c.hp.max_n = t.value("max_n", c.hp.max_n);
            c.train_threads = t.value("threads", c.train_threads);
            c.zero_eos = t.value("zero_eos", c.zero_eos);
        }
        c.hp.seed = j.contains("train") ? j["train"].value("seed", c.seed) : c.seed;

        const auto& fl = j.at("filter");
        c.filter_shards = resolve_list(base_dir, fl.at("shards"));
        if (fl.contains("char_budget")) {
            c.char_budget = fl["char_budget"].get<std::uint64_t>();
            c.fraction.reset();
        } else {
            c.fraction = fl.value("fraction", 0.10);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("pipeline config: ") + e.what());
    }
    return c;
}

RunSummary run_pipeline(const PipelineConfig& config) {
    if (config.workdir.empty()) throw ConfigError("pipeline config needs a workdir");
    config.hp.validate();

    // Every existing manifest must parse and pass its digest check before any stage runs.
    for (Stage s : kAllStages) {
        if (!config.force) read_manifest(stage_dir(config, s), s);
    }

    RunSummary summary;
    bool upstream_ran = false;
    for (Stage s : kAllStages) {
        const auto dir = stage_dir(config, s);
        const json params = stage_params(config, s);
        bool run = config.force || upstream_ran;
        json inputs;
        if (!run) {
            const auto m = read_manifest(dir, s);
            inputs = stage_inputs(config, s);
            if (!m) {
                run = true;
            } else {
                if (m->params != params || m->inputs != inputs) {
                    throw StaleArtifactError(std::string("stage ") + stage_name(s) +
                                             ": recorded inputs or parameters differ from the current ones "
                                             "(rerun with --force)");
                }
                for (const auto& [rel, digest] : m->outputs.items()) {
                    const auto p = dir / rel;
                    if (!fs::exists(p)) {
                        run = true;
                    } else if (file_digest(p) != digest.get<std::string>()) {
                        throw StaleArtifactError(std::string("stage ") + stage_name(s) + ": output " + rel +
                                                 " was modified");
                    }
                }
            }
        }

        StageOutcome outcome{s, run, 0.0};
        if (run) {
            const auto t0 = std::chrono::steady_clock::now();
            fs::remove_all(dir);
            fs::create_directories(dir);
            if (inputs.is_null()) inputs = stage_inputs(config, s);
            switch (s) {
                case Stage::SampleSeed: run_sample_seed(config, dir); break;
                case Stage::ScoreStrength: run_score_strength(config, dir); break;
                case Stage::BuildSeedset: run_build_seedset(config, dir); break;
                case Stage::Train: run_train(config, dir); break;
                case Stage::Filter: summary.selection = run_filter(config, dir); break;
            }
            write_manifest(dir, s, params, inputs);
            outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            upstream_ran = true;
        }
        summary.stages.push_back(outcome);
    }
    return summary;
}

}  // namespace preselect
