#include <doctest.h>

#include <fstream>

#include <json.hpp>

#include "preselect/errors.hpp"
#include "preselect/pipeline.hpp"
#include "preselect/synthetic.hpp"
#include "preselect/util.hpp"
#include "test_support.hpp"

using namespace preselect;
namespace fs = std::filesystem;

namespace {

struct Demo {
    testing::TempDir dir{"pipeline"};
    PipelineConfig config;

    Demo() {
        SyntheticOptions o;
        o.documents = 600;
        o.seed = 3;
        o.id_prefix = "seed";
        write_corpus(dir / "seed.jsonl", synthetic_corpus(o));
        o.documents = 1000;
        o.seed = 4;
        o.id_prefix = "pool";
        write_corpus(dir / "pool.jsonl", synthetic_corpus(o));
        std::vector<Document> ref;
        const auto texts = synthetic_reference_texts(300, 5);
        for (std::size_t i = 0; i < texts.size(); ++i) ref.push_back(Document::make("ref" + std::to_string(i), texts[i]));
        write_corpus(dir / "ref.jsonl", ref);

        config.workdir = dir / "work";
        config.seed = 7;
        config.workers = 2;
        config.seed_shards = {dir / "seed.jsonl"};
        config.top_k_domains = 100;
        config.per_domain = 100;
        config.ladder = OracleLadderConfig{{dir / "ref.jsonl"}, {5, 30, 300}, 3, 0.1};
        config.pos_target = 100;
        config.neg_target = 100;
        config.hp.dim = 16;
        config.hp.buckets = 20000;
        config.hp.epochs = 3;
        config.filter_shards = {dir / "pool.jsonl"};
        config.fraction = 0.1;
    }
};

std::vector<bool> ran(const RunSummary& s) {
    std::vector<bool> out;
    for (const auto& o : s.stages) out.push_back(o.ran);
    return out;
}

const std::vector<bool> kAll(5, true);
const std::vector<bool> kNone(5, false);

}  // namespace

TEST_CASE("end to end run and resume") {
    Demo d;
    const auto first = run_pipeline(d.config);
    CHECK(ran(first) == kAll);
    REQUIRE(first.selection);
    CHECK(first.selection->selected_docs == 100);
    for (Stage s : kAllStages) CHECK(fs::exists(stage_dir(d.config, s) / "stage.json"));
    CHECK(fs::exists(stage_dir(d.config, Stage::Train) / "model.bin"));
    CHECK(fs::exists(stage_dir(d.config, Stage::Filter) / "selected/report.json"));

    const auto strength_dir = stage_dir(d.config, Stage::ScoreStrength);
    const auto roster = nlohmann::json::parse(read_file(strength_dir / "roster.json"));
    CHECK(roster.size() == 3);
    const auto hist = nlohmann::json::parse(read_file(strength_dir / "histogram.json"));
    CHECK(hist["counts"].size() == 20);

    const auto second = run_pipeline(d.config);
    CHECK(ran(second) == kNone);
    CHECK_FALSE(second.selection);

    const auto model_bytes = read_file(stage_dir(d.config, Stage::Train) / "model.bin");
    fs::remove(stage_dir(d.config, Stage::Train) / "model.bin");
    const auto third = run_pipeline(d.config);
    CHECK(ran(third) == std::vector<bool>{false, false, false, true, true});
    CHECK(read_file(stage_dir(d.config, Stage::Train) / "model.bin") == model_bytes);
    REQUIRE(third.selection);
    CHECK(third.selection->selected_docs == 100);

    auto forced = d.config;
    forced.force = true;
    CHECK(ran(run_pipeline(forced)) == kAll);
    CHECK(ran(run_pipeline(d.config)) == kNone);
}

TEST_CASE("corrupt manifest is refused before anything is touched") {
    Demo d;
    run_pipeline(d.config);
    const auto seedset_manifest = stage_dir(d.config, Stage::BuildSeedset) / "stage.json";
    const auto model = stage_dir(d.config, Stage::Train) / "model.bin";
    fs::remove(model);  // would normally trigger a rerun of train
    {
        std::ofstream out(seedset_manifest, std::ios::app);
        out << "garbage";
    }
    CHECK_THROWS_AS(run_pipeline(d.config), StaleArtifactError);
    CHECK_FALSE(fs::exists(model));

    // A manifest whose content no longer matches its digest.
    auto m = nlohmann::json::parse(read_file(stage_dir(d.config, Stage::SampleSeed) / "stage.json"));
    m["params"]["per_domain"] = 1;
    write_file_atomic(stage_dir(d.config, Stage::SampleSeed) / "stage.json", m.dump());
    CHECK_THROWS_AS(run_pipeline(d.config), StaleArtifactError);

    auto forced = d.config;
    forced.force = true;
    CHECK(ran(run_pipeline(forced)) == kAll);
}

TEST_CASE("changed parameters, inputs or outputs are stale") {
    Demo d;
    run_pipeline(d.config);

    auto changed = d.config;
    changed.pos_target = 90;
    CHECK_THROWS_AS(run_pipeline(changed), StaleArtifactError);

    changed = d.config;
    changed.hp.dim = 8;
    CHECK_THROWS_AS(run_pipeline(changed), StaleArtifactError);

    const auto strength = stage_dir(d.config, Stage::ScoreStrength) / "strength.jsonl";
    const auto original = read_file(strength);
    testing::write_text(strength, original + "\n");
    CHECK_THROWS_AS(run_pipeline(d.config), StaleArtifactError);
    testing::write_text(strength, original);
    CHECK(ran(run_pipeline(d.config)) == kNone);

    {
        std::ofstream out(d.dir / "pool.jsonl", std::ios::app);
        out << to_jsonl(Document::make("pool-extra", "one more document")) << '\n';
    }
    CHECK_THROWS_AS(run_pipeline(d.config), StaleArtifactError);
}

TEST_CASE("seed shards cannot be filtered") {
    Demo d;
    d.config.filter_shards.push_back(d.dir / "seed.jsonl");
    CHECK_THROWS_AS(run_pipeline(d.config), ConfigError);
}

TEST_CASE("config from json") {
    const auto j = nlohmann::json::parse(R"({
        "workdir": "w",
        "seed": 3,
        "workers": 4,
        "skip_bad_records": true,
        "fields": {"text": "content"},
        "sample_seed": {"shards": ["a.jsonl"], "top_k_domains": 10, "per_domain": 5},
        "strength": {"histogram_bins": 8, "oracle_ladder": {"train_shards": ["r.jsonl"], "doc_counts": [1, 2], "order": 2}},
        "seedset": {"pos_target": 11, "neg_target": 12},
        "train": {"dim": 32, "epochs": 2, "zero_eos": false},
        "filter": {"shards": ["/abs/p.jsonl"], "char_budget": 5000}
    })");
    const auto c = PipelineConfig::from_json(j, "/base");
    CHECK(c.workdir == fs::path("/base/w"));
    CHECK(c.seed == 3);
    CHECK(c.workers == 4);
    CHECK(c.read.skip_bad_records);
    CHECK(c.read.fields.text == "content");
    CHECK(c.read.fields.id == "id");
    CHECK(c.seed_shards == std::vector<fs::path>{"/base/a.jsonl"});
    CHECK(c.top_k_domains == 10);
    CHECK(c.histogram_bins == 8);
    REQUIRE(c.ladder);
    CHECK(c.ladder->doc_counts == std::vector<std::size_t>{1, 2});
    CHECK(c.ladder->order == 2);
    CHECK(c.pos_target == 11);
    CHECK(c.hp.dim == 32);
    CHECK(c.hp.seed == 3);
    CHECK_FALSE(c.zero_eos);
    CHECK(c.filter_shards == std::vector<fs::path>{"/abs/p.jsonl"});
    CHECK(c.char_budget == 5000u);
    CHECK_FALSE(c.fraction);

    CHECK_THROWS_AS(PipelineConfig::from_json(nlohmann::json::parse(R"({"seed": 1})")), ConfigError);
    auto bad = j;
    bad["seedset"]["pos_target"] = "many";
    CHECK_THROWS_AS(PipelineConfig::from_json(bad), ConfigError);
}
