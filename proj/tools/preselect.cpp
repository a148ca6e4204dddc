#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "preselect/analysis.hpp"
#include "preselect/classifier.hpp"
#include "preselect/compression.hpp"
#include "preselect/corpus.hpp"
#include "preselect/errors.hpp"
#include "preselect/pipeline.hpp"
#include "preselect/seedset.hpp"
#include "preselect/strength.hpp"
#include "preselect/synthetic.hpp"
#include "preselect/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace preselect;

namespace {

// Accepts a flat JSON object as well as CLI11's native TOML/INI. Top-level
// keys are scoped to whichever subcommand was invoked.
class JsonOrTomlConfig : public CLI::ConfigTOML {
public:
    explicit JsonOrTomlConfig(const CLI::App& app) : app_(app) {}

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        std::string text((std::istreambuf_iterator<char>(input)), std::istreambuf_iterator<char>());
        const auto first = text.find_first_not_of(" \t\r\n");
        std::vector<CLI::ConfigItem> items;
        if (first == std::string::npos || text[first] != '{') {
            std::istringstream in(text);
            items = CLI::ConfigTOML::from_config(in);
        } else {
            try {
                flatten(json::parse(text), {}, items);
            } catch (const json::exception& e) {
                throw CLI::ConversionError(std::string("config file: ") + e.what());
            }
        }
        const auto subs = app_.get_subcommands();
        if (!subs.empty()) {
            for (auto& item : items) {
                if (item.parents.empty()) item.parents.push_back(subs.front()->get_name());
            }
        }
        return items;
    }

private:
    const CLI::App& app_;

    static std::string scalar(const json& v) {
        if (v.is_string()) return v.get<std::string>();
        return v.dump();
    }

    static void flatten(const json& obj, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
        for (const auto& [key, value] : obj.items()) {
            if (value.is_object()) {
                auto p = parents;
                p.push_back(key);
                flatten(value, p, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& e : value) item.inputs.push_back(scalar(e));
            } else {
                item.inputs.push_back(scalar(value));
            }
            out.push_back(std::move(item));
        }
    }
};

struct Common {
    std::uint64_t seed = 0;
    unsigned workers = 1;
    bool skip_bad_records = false;
    bool force = false;
    bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--seed", c.seed, "Random seed");
    app->add_option("--workers", c.workers, "Worker threads")->check(CLI::PositiveNumber);
    app->add_flag("--skip-bad-records", c.skip_bad_records, "Count and skip malformed records");
    app->add_flag("--force", c.force, "Overwrite existing outputs");
    app->add_flag("-q,--quiet", c.quiet, "Suppress warnings");
}

std::vector<fs::path> to_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

void require_empty(const fs::path& p, bool force) {
    if (!force && fs::exists(p) && (!fs::is_directory(p) || directory_nonempty(p))) {
        throw SafetyError(p.string() + " already exists (pass --force to overwrite)");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Predictive data selection: score documents by how well their compression tracks model ability, "
                 "train a fast classifier on the extremes and filter a corpus with it."};
    app.require_subcommand(1);
    app.fallthrough();
    app.config_formatter(std::make_shared<JsonOrTomlConfig>(app));
    app.set_config("--config", "", "JSON or TOML file of subcommand option values; flags override it");
    app.set_version_flag("--version", "preselect 1.0.0");
    Common common;

    // sample-seed
    auto* sample = app.add_subcommand("sample-seed", "Stratified sample over the most frequent domains");
    std::vector<std::string> sample_inputs;
    std::string sample_out;
    std::size_t top_k = 3000, per_domain = 300;
    std::string id_field = "id", text_field = "text", url_field = "url";
    sample->add_option("--input", sample_inputs, "Input JSONL(.gz) shards")->required();
    sample->add_option("--output", sample_out, "Output directory")->required();
    sample->add_option("--top-k-domains", top_k)->check(CLI::PositiveNumber);
    sample->add_option("--per-domain", per_domain)->check(CLI::PositiveNumber);
    sample->add_option("--id-field", id_field);
    sample->add_option("--text-field", text_field);
    sample->add_option("--url-field", url_field);
    add_common(sample, common);

    // score-strength
    auto* strength = app.add_subcommand("score-strength", "Predictive strength from per-model BPC");
    std::string losses_path, roster_path, strength_out, ladder_sample;
    std::vector<std::string> ladder_train;
    std::vector<std::size_t> ladder_counts;
    int ladder_order = 3;
    double ladder_alpha = 0.1;
    std::size_t bins = 20;
    strength->add_option("--losses", losses_path, "Loss table JSONL {doc_id, model_id, bpc}");
    strength->add_option("--roster", roster_path, "Roster JSON [{model_id, benchmark_score}]");
    strength->add_option("--sample", ladder_sample, "Seed sample directory (oracle ladder mode)");
    strength->add_option("--ladder-train", ladder_train, "Reference shards for the n-gram ladder");
    strength->add_option("--ladder-docs", ladder_counts, "Nested training sizes, strictly increasing");
    strength->add_option("--ladder-order", ladder_order);
    strength->add_option("--ladder-alpha", ladder_alpha);
    strength->add_option("--bins", bins)->check(CLI::PositiveNumber);
    strength->add_option("--output", strength_out, "Output directory")->required();
    add_common(strength, common);

    // build-seedset
    auto* seedset = app.add_subcommand("build-seedset", "Select positives/negatives and emit a training file");
    std::string seed_strength, seed_sample, seed_out;
    std::size_t pos_target = 200'000, neg_target = 200'000;
    seedset->add_option("--strength", seed_strength, "Strength directory")->required();
    seedset->add_option("--sample", seed_sample, "Seed sample directory holding the texts")->required();
    seedset->add_option("--pos", pos_target)->check(CLI::PositiveNumber);
    seedset->add_option("--neg", neg_target)->check(CLI::PositiveNumber);
    seedset->add_option("--output", seed_out, "Training file")->required();
    add_common(seedset, common);

    // train
    auto* trainc = app.add_subcommand("train", "Train the bag-of-ngrams classifier");
    std::string train_in, train_out;
    Hyperparams hp;
    bool no_zero_eos = false;
    trainc->add_option("--input", train_in, "Labeled training file")->required();
    trainc->add_option("--output", train_out, "Model file")->required();
    trainc->add_option("--lr", hp.lr);
    trainc->add_option("--dim", hp.dim);
    trainc->add_option("--epoch", hp.epochs);
    trainc->add_option("--word-ngrams", hp.word_ngrams);
    trainc->add_option("--min-count", hp.min_count);
    trainc->add_option("--bucket", hp.buckets);
    trainc->add_option("--minn", hp.min_n);
    trainc->add_option("--maxn", hp.max_n);
    trainc->add_flag("--no-zero-eos", no_zero_eos, "Keep the end-of-sentence embedding");
    add_common(trainc, common);

    // inspect-features
    auto* inspect = app.add_subcommand("inspect-features", "Unigram influence scores of a model");
    std::string inspect_model;
    std::size_t top_n = 50;
    std::vector<std::string> inspect_texts;
    bool inspect_json = false;
    inspect->add_option("--model", inspect_model)->required();
    inspect->add_option("-k,--top", top_n)->check(CLI::PositiveNumber);
    inspect->add_option("--text", inspect_texts, "Also score and decompose these texts");
    inspect->add_flag("--json", inspect_json);
    add_common(inspect, common);

    // filter
    auto* filter = app.add_subcommand("filter", "Keep the top fraction of a corpus by classifier score");
    std::vector<std::string> filter_in;
    std::string filter_model, filter_out;
    std::optional<double> fraction;
    std::optional<std::uint64_t> char_budget;
    filter->add_option("--model", filter_model)->required();
    filter->add_option("--input", filter_in)->required();
    filter->add_option("--output", filter_out)->required();
    auto* frac_opt = filter->add_option("--fraction", fraction, "Share of documents kept, in (0, 1]");
    filter->add_option("--char-budget", char_budget, "Keep about this many characters instead")->excludes(frac_opt);
    filter->add_option("--id-field", id_field);
    filter->add_option("--text-field", text_field);
    filter->add_option("--url-field", url_field);
    add_common(filter, common);

    // stats
    auto* stats = app.add_subcommand("stats", "Domain density and length distribution of a corpus");
    std::vector<std::string> stats_in;
    std::size_t stats_rows = 30;
    bool stats_json = false;
    std::string stats_svg;
    stats->add_option("--input", stats_in)->required();
    stats->add_option("--rows", stats_rows);
    stats->add_flag("--json", stats_json);
    stats->add_option("--svg", stats_svg, "Write the length histogram as SVG");
    add_common(stats, common);

    // run
    auto* run = app.add_subcommand("run", "Run (or resume) every stage from a pipeline config");
    std::string run_config;
    run->add_option("--pipeline", run_config, "Pipeline JSON config")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", common.seed);
    run->add_option("--workers", common.workers)->check(CLI::PositiveNumber);
    run->add_flag("--skip-bad-records", common.skip_bad_records);
    run->add_flag("--force", common.force);
    run->add_flag("-q,--quiet", common.quiet);

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic web-like corpus");
    SyntheticOptions so;
    std::string synth_out;
    std::size_t reference_docs = 0;
    synth->add_option("--documents", so.documents);
    synth->add_option("--clean-fraction", so.clean_fraction)->check(CLI::Range(0.0, 1.0));
    synth->add_option("--id-prefix", so.id_prefix);
    synth->add_option("--reference", reference_docs, "Write clean reference texts instead");
    synth->add_option("--output", synth_out)->required();
    synth->add_option("--seed", so.seed);

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForVersion& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            app.exit(e);
            return static_cast<int>(ErrorKind::Config);
        }
        set_warnings_enabled(!common.quiet);
        ReadOptions read{{id_field, text_field, url_field}, common.skip_bad_records};

        if (*sample) {
            const fs::path out(sample_out);
            require_empty(out, common.force);
            auto s = sample_seed(to_paths(sample_inputs), read, top_k, per_domain, common.seed);
            save_seed_sample(s, out);
            print_json({{"documents", s.documents.size()}, {"domains", s.per_domain_counts.size()},
                        {"output", out.string()}});
        } else if (*strength) {
            const fs::path out(strength_out);
            require_empty(out, common.force);
            fs::create_directories(out);
            LossTable losses;
            std::optional<ModelRoster> roster;
            if (!ladder_train.empty()) {
                if (ladder_sample.empty()) throw ConfigError("--ladder-train needs --sample");
                OracleLadderConfig lc{to_paths(ladder_train), ladder_counts, ladder_order, ladder_alpha};
                const auto ladder = build_oracle_ladder(lc, read);
                losses = ladder.score(load_seed_sample(ladder_sample).documents);
                roster.emplace(ladder.roster());
            } else {
                if (losses_path.empty() || roster_path.empty()) {
                    throw ConfigError("need --losses and --roster, or --ladder-train with --sample");
                }
                losses = load_loss_table(losses_path);
                roster.emplace(load_roster(roster_path));
            }
            save_loss_table(losses, out / "losses.jsonl");
            write_file_atomic(out / "roster.json", roster->to_json() + "\n");
            const auto table = score_corpus(losses, *roster, common.workers);
            save_strength_table(table, out);
            const auto h = strength_histogram(table, bins);
            print_json({{"documents", table.scores.size()}, {"models", table.num_models},
                        {"quarantined", losses.quarantined()}, {"duplicates", losses.duplicates()},
                        {"histogram", {{"edges", h.edges}, {"counts", h.counts}}}});
        } else if (*seedset) {
            const fs::path out(seed_out);
            require_empty(out, common.force);
            const auto table = load_strength_table(seed_strength);
            const auto docs = load_seed_sample(seed_sample).documents;
            std::unordered_map<std::string_view, std::string_view> texts;
            for (const auto& d : docs) texts.emplace(d.id, d.text);
            const auto seeds = select_seed_examples(table, pos_target, neg_target, common.seed);
            emit_training_file(
                seeds,
                [&](std::string_view id) -> std::optional<std::string_view> {
                    auto it = texts.find(id);
                    if (it == texts.end()) return std::nullopt;
                    return it->second;
                },
                out);
            print_json({{"positives", seeds.positives.size()}, {"negatives", seeds.negatives.size()},
                        {"pos_cutoff", seeds.pos_cutoff}, {"neg_cutoff", seeds.neg_cutoff}});
        } else if (*trainc) {
            const fs::path out(train_out);
            require_empty(out, common.force);
            hp.seed = common.seed;
            TrainStats ts;
            auto model = train(fs::path(train_in), hp, TrainOptions{common.workers, {}}, &ts);
            if (!no_zero_eos) model = zero_eos(std::move(model));
            save_model(model, out);
            print_json({{"examples", ts.examples}, {"updates", ts.updates}, {"final_epoch_loss", ts.final_epoch_loss},
                        {"vocab", model.vocab_size()}, {"eos_zeroed", model.eos_zeroed}});
        } else if (*inspect) {
            const auto model = load_model(inspect_model);
            const auto pos = top_features(model, top_n, InfluenceSign::Positive);
            const auto neg = top_features(model, top_n, InfluenceSign::Negative);
            if (inspect_json) {
                auto rows = [](const std::vector<FeatureInfluence>& v) {
                    json a = json::array();
                    for (const auto& f : v) a.push_back({{"token", f.token}, {"influence", f.influence}});
                    return a;
                };
                json j = {{"positive", rows(pos)}, {"negative", rows(neg)}, {"texts", json::array()}};
                for (const auto& t : inspect_texts) {
                    const auto p = predict(model, t);
                    const auto d = influence_decomposition_check(model, t);
                    j["texts"].push_back({{"p_pos", p.p_pos},
                                          {"p_pos_unigram", predict_unigram_only(model, t).p_pos},
                                          {"logit_difference", d.logit_difference},
                                          {"mean_influence", d.mean_influence},
                                          {"relative_deviation", d.relative_deviation}});
                }
                print_json(j);
            } else {
                std::cout << "Most positive unigrams\n" << format_features(pos) << "\nMost negative unigrams\n"
                          << format_features(neg);
                for (const auto& t : inspect_texts) {
                    const auto d = influence_decomposition_check(model, t);
                    std::printf("\np_pos=%.6f  unigram-only p_pos=%.6f  logit diff=%.9g  mean influence=%.9g  "
                                "rel dev=%.3g\n",
                                predict(model, t).p_pos, predict_unigram_only(model, t).p_pos, d.logit_difference,
                                d.mean_influence, d.relative_deviation);
                }
            }
        } else if (*filter) {
            SelectionConfig sc;
            sc.fraction = fraction;
            sc.char_budget = char_budget;
            if (!sc.fraction && !sc.char_budget) sc.fraction = 0.10;
            sc.model_path = filter_model;
            sc.input_shards = to_paths(filter_in);
            sc.output_dir = filter_out;
            sc.workers = common.workers;
            sc.rng_seed = common.seed;
            sc.force = common.force;
            sc.read = read;
            const auto report = filter_corpus(sc);
            std::cout << report.to_text();
        } else if (*stats) {
            DomainDensityAccumulator density;
            LengthHistogramAccumulator lengths(default_length_edges());
            CorpusStream stream(to_paths(stats_in), read);
            while (auto d = stream.next()) {
                density.add(*d);
                lengths.add(d->char_count);
            }
            const auto rows = density.rows();
            const auto hist = lengths.result();
            std::size_t errors = 0;
            for (const auto& s : stream.stats()) errors += s.errors;
            if (!stats_svg.empty()) write_file_atomic(stats_svg, render_length_histogram_svg(hist, "Document length"));
            if (stats_json) {
                json d = json::array();
                for (const auto& r : rows) d.push_back({{"domain", r.domain}, {"chars", r.chars}, {"char_fraction", r.char_fraction}});
                print_json({{"documents", hist.documents}, {"chars", hist.total_chars}, {"bad_records", errors},
                            {"mean_chars", hist.mean_chars}, {"domain_density", d},
                            {"length_histogram", {{"edges", hist.bin_edges}, {"counts", hist.counts}}}});
            } else {
                std::cout << "documents " << hist.documents << "  characters " << hist.total_chars
                          << "  bad records " << errors << "\n\n"
                          << format_density_table(rows, stats_rows) << '\n'
                          << format_length_histogram(hist);
            }
        } else if (*run) {
            const fs::path cfg_path(run_config);
            auto cfg = PipelineConfig::from_json(json::parse(read_file(cfg_path)), cfg_path.parent_path());
            if (run->count("--seed")) {
                cfg.seed = common.seed;
                cfg.hp.seed = common.seed;
            }
            if (run->count("--workers")) cfg.workers = common.workers;
            if (common.force) cfg.force = true;
            if (common.skip_bad_records) cfg.read.skip_bad_records = true;
            const auto summary = run_pipeline(cfg);
            for (const auto& s : summary.stages) {
                std::printf("%-15s %s", stage_name(s.stage), s.ran ? "ran" : "up to date");
                if (s.ran) std::printf("  %.2fs", s.seconds);
                std::printf("\n");
            }
            if (summary.selection) std::cout << '\n' << summary.selection->to_text();
        } else if (*synth) {
            const fs::path out(synth_out);
            if (out.has_parent_path()) fs::create_directories(out.parent_path());
            if (reference_docs > 0) {
                std::vector<Document> docs;
                const auto texts = synthetic_reference_texts(reference_docs, so.seed);
                char id[64];
                for (std::size_t i = 0; i < texts.size(); ++i) {
                    std::snprintf(id, sizeof id, "ref-%07zu", i);
                    docs.push_back(Document::make(id, texts[i]));
                }
                write_corpus(out, docs);
            } else {
                write_corpus(out, synthetic_corpus(so));
            }
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const json::exception& e) {
        std::cerr << "error: malformed JSON: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::Config);
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::Internal);
    }
}
