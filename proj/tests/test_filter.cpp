#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "preselect/errors.hpp"
#include "preselect/pipeline.hpp"
#include "preselect/synthetic.hpp"
#include "preselect/util.hpp"
#include "test_support.hpp"

using namespace preselect;

namespace {

const ClassifierModel& small_model() {
    static const ClassifierModel model = [] {
        std::vector<LabeledText> ex;
        for (auto& t : synthetic_reference_texts(300, 4)) ex.push_back({true, t});
        SyntheticOptions o;
        o.documents = 300;
        o.clean_fraction = 0.0;
        o.seed = 8;
        for (auto& d : synthetic_corpus(o)) ex.push_back({false, d.text});
        Hyperparams hp;
        hp.dim = 16;
        hp.buckets = 20000;
        hp.epochs = 3;
        return train(ex, hp);
    }();
    return model;
}

std::vector<std::filesystem::path> write_shards(const testing::TempDir& dir, std::size_t docs, std::size_t shards,
                                                std::uint64_t seed) {
    SyntheticOptions o;
    o.documents = docs;
    o.seed = seed;
    const auto corpus = synthetic_corpus(o);
    std::vector<std::filesystem::path> paths;
    for (std::size_t s = 0; s < shards; ++s) {
        std::vector<Document> part;
        for (std::size_t i = s; i < corpus.size(); i += shards) part.push_back(corpus[i]);
        paths.push_back(dir / ("in" + std::to_string(s) + ".jsonl"));
        write_corpus(paths.back(), part);
    }
    return paths;
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::set<std::string> selected_ids(const SelectionReport& r) {
    std::set<std::string> ids;
    for (const auto& sh : r.shards) {
        for (const auto& d : read_corpus({sh.output})) ids.insert(d.id);
    }
    return ids;
}

// Ranks every document by a full sort and keeps the best round(f * n).
std::set<std::string> oracle_top(const std::vector<std::filesystem::path>& shards, double fraction) {
    struct Row {
        double p;
        std::uint64_t h;
        std::string id;
    };
    std::vector<Row> rows;
    for (const auto& d : read_corpus(shards)) rows.push_back({predict(small_model(), d.text).p_pos, fnv1a64(d.id), d.id});
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.p != b.p) return a.p > b.p;
        if (a.h != b.h) return a.h < b.h;
        return a.id < b.id;
    });
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
    std::set<std::string> out;
    for (std::size_t i = 0; i < k; ++i) out.insert(rows[i].id);
    return out;
}

}  // namespace

TEST_CASE("selects exactly the requested fraction, independent of workers") {
    testing::TempDir dir("filter_exact");
    const auto shards = write_shards(dir, 1000, 5, 31);

    SelectionConfig c;
    c.fraction = 0.10;
    c.input_shards = shards;
    c.output_dir = dir / "out1";
    c.workers = 1;
    const auto r1 = filter_corpus(c, small_model());
    CHECK(r1.selected_docs == 100);
    CHECK(r1.target_docs == 100);
    CHECK(r1.input_docs == 1000);

    c.output_dir = dir / "out8";
    c.workers = 8;
    const auto r8 = filter_corpus(c, small_model());
    const auto ids1 = selected_ids(r1);
    CHECK(ids1.size() == 100);
    CHECK(selected_ids(r8) == ids1);
    CHECK(ids1 == oracle_top(shards, 0.10));
    CHECK(r1.threshold == r8.threshold);
}

TEST_CASE("report agrees with an independent recount") {
    testing::TempDir dir("filter_recount");
    const auto shards = write_shards(dir, 800, 3, 12);
    SelectionConfig c;
    c.fraction = 0.25;
    c.input_shards = shards;
    c.output_dir = dir / "out";
    c.workers = 3;
    const auto r = filter_corpus(c, small_model());

    std::uint64_t in_docs = 0, in_chars = 0, out_docs = 0, out_chars = 0;
    std::map<std::string, std::uint64_t> by_domain;
    for (const auto& p : shards) {
        for (const auto& line : lines_of(p)) {
            const auto j = nlohmann::json::parse(line);
            ++in_docs;
            in_chars += utf8_length(j["text"].get<std::string>());
        }
    }
    for (const auto& sh : r.shards) {
        for (const auto& line : lines_of(sh.output)) {
            const auto j = nlohmann::json::parse(line);
            const auto text = j["text"].get<std::string>();
            ++out_docs;
            out_chars += utf8_length(text);
            std::string domain(kUnknownDomain);
            if (j.contains("url") && j["url"].is_string()) {
                try {
                    domain = extract_domain(j["url"].get<std::string>()).host;
                } catch (const DomainError&) {
                }
            }
            by_domain[domain] += utf8_length(text);
        }
    }
    CHECK(r.input_docs == in_docs);
    CHECK(r.input_chars == in_chars);
    CHECK(r.selected_docs == out_docs);
    CHECK(r.selected_chars == out_chars);
    CHECK(out_docs == 200);

    double total = 0;
    for (const auto& row : r.domain_density) {
        total += row.char_fraction;
        REQUIRE(by_domain.contains(row.domain));
        CHECK(row.chars == by_domain.at(row.domain));
        CHECK(std::abs(row.char_fraction - static_cast<double>(by_domain.at(row.domain)) / static_cast<double>(out_chars)) <= 1e-12);
    }
    CHECK(r.domain_density.size() == by_domain.size());
    CHECK(std::abs(total - 1.0) <= 1e-9);

    const auto saved = nlohmann::json::parse(read_file(c.output_dir / "report.json"));
    CHECK(saved["selected_docs"] == 200);
    CHECK(std::filesystem::exists(c.output_dir / "report.txt"));
    CHECK(read_file(c.output_dir / "length_histogram.svg").starts_with("<svg"));
}

TEST_CASE("admitted records are copied verbatim in input order") {
    testing::TempDir dir("filter_verbatim");
    const auto shards = write_shards(dir, 300, 2, 5);
    SelectionConfig c;
    c.fraction = 0.5;
    c.input_shards = shards;
    c.output_dir = dir / "out";
    const auto r = filter_corpus(c, small_model());
    for (std::size_t s = 0; s < shards.size(); ++s) {
        const auto in = lines_of(shards[s]);
        const auto out = lines_of(r.shards[s].output);
        CHECK(out.size() == r.shards[s].selected_docs);
        // out must be a subsequence of in.
        std::size_t i = 0;
        for (const auto& line : out) {
            while (i < in.size() && in[i] != line) ++i;
            REQUIRE(i < in.size());
            ++i;
        }
    }
}

TEST_CASE("nonempty output directory is refused unless forced") {
    testing::TempDir dir("filter_safety");
    const auto shards = write_shards(dir, 50, 1, 2);
    std::filesystem::create_directories(dir / "out");
    testing::write_text(dir / "out/keep.txt", "x");
    SelectionConfig c;
    c.fraction = 0.5;
    c.input_shards = shards;
    c.output_dir = dir / "out";
    CHECK_THROWS_AS(filter_corpus(c, small_model()), SafetyError);
    CHECK(read_file(dir / "out/keep.txt") == "x");
    c.force = true;
    CHECK(filter_corpus(c, small_model()).selected_docs == 25);
}

TEST_CASE("character budget") {
    testing::TempDir dir("filter_budget");
    const auto shards = write_shards(dir, 400, 2, 9);
    std::uint64_t chars = 0;
    for (const auto& d : read_corpus(shards)) chars += d.char_count;
    SelectionConfig c;
    c.char_budget = chars / 4;
    c.input_shards = shards;
    c.output_dir = dir / "out";
    const auto r = filter_corpus(c, small_model());
    CHECK(r.selected_docs == 100);
    CHECK(r.target_fraction == doctest::Approx(0.25).epsilon(1e-3));

    c.char_budget = chars * 10;
    c.output_dir = dir / "all";
    CHECK(filter_corpus(c, small_model()).selected_docs == 400);
}

TEST_CASE("configuration errors") {
    testing::TempDir dir("filter_config");
    const auto shards = write_shards(dir, 20, 1, 2);
    SelectionConfig c;
    c.input_shards = shards;
    c.output_dir = dir / "out";
    CHECK_THROWS_AS(filter_corpus(c, small_model()), ConfigError);  // neither set
    c.fraction = 0.5;
    c.char_budget = 10;
    CHECK_THROWS_AS(filter_corpus(c, small_model()), ConfigError);  // both set
    c.char_budget.reset();
    c.fraction = 0.0;
    CHECK_THROWS_AS(filter_corpus(c, small_model()), ConfigError);
    c.fraction = 0.5;
    c.excluded_shards = {shards[0].string()};
    CHECK_THROWS_AS(filter_corpus(c, small_model()), ConfigError);
    c.excluded_shards.clear();
    c.input_shards.clear();
    CHECK_THROWS_AS(filter_corpus(c, small_model()), ConfigError);

    testing::write_text(dir / "empty.jsonl", "");
    c.input_shards = {dir / "empty.jsonl"};
    CHECK_THROWS_AS(filter_corpus(c, small_model()), EmptyInputError);
}

TEST_CASE("bad records abort or are skipped") {
    testing::TempDir dir("filter_bad");
    const auto shards = write_shards(dir, 40, 1, 3);
    {
        std::ofstream out(shards[0], std::ios::app);
        out << "{not json\n";
    }
    SelectionConfig c;
    c.fraction = 0.5;
    c.input_shards = shards;
    c.output_dir = dir / "out";
    CHECK_THROWS_AS(filter_corpus(c, small_model()), RecordError);
    c.read.skip_bad_records = true;
    c.force = true;
    const auto r = filter_corpus(c, small_model());
    CHECK(r.bad_records == 1);
    CHECK(r.input_docs == 40);
    CHECK(r.selected_docs == 20);
}

TEST_CASE("loads the model from disk") {
    testing::TempDir dir("filter_disk");
    const auto shards = write_shards(dir, 100, 1, 4);
    save_model(small_model(), dir / "m.bin");
    SelectionConfig c;
    c.fraction = 0.3;
    c.model_path = dir / "m.bin";
    c.input_shards = shards;
    c.output_dir = dir / "out";
    const auto r = filter_corpus(c);
    CHECK(r.selected_docs == 30);
    CHECK(r.model_digest == file_digest(dir / "m.bin"));
}

TEST_CASE("boundary inside a run of identical scores") {
    testing::TempDir dir("filter_ties");
    std::vector<Document> docs;
    for (int i = 0; i < 300; ++i) {
        // Three distinct texts, so scores come in three large tied groups.
        docs.push_back(Document::make("tie" + std::to_string(i), synthetic_clean_text(static_cast<std::uint64_t>(i % 3), 300)));
    }
    std::vector<std::filesystem::path> shards{dir / "a.jsonl", dir / "b.jsonl"};
    write_corpus(shards[0], std::span<const Document>(docs).first(150));
    write_corpus(shards[1], std::span<const Document>(docs).subspan(150));
    for (double fraction : {0.05, 0.37, 0.5, 0.9}) {
        SelectionConfig c;
        c.fraction = fraction;
        c.input_shards = shards;
        c.output_dir = dir / ("out" + std::to_string(static_cast<int>(fraction * 100)));
        c.workers = 2;
        const auto r = filter_corpus(c, small_model());
        CHECK(selected_ids(r) == oracle_top(shards, fraction));
        CHECK(r.selected_docs == static_cast<std::uint64_t>(std::llround(fraction * 300)));
    }
}

TEST_CASE("repeated ids at the cutoff are counted exactly") {
    testing::TempDir dir("filter_dup_ids");
    std::vector<Document> docs;
    const auto text = synthetic_clean_text(1, 200);
    for (int i = 0; i < 40; ++i) docs.push_back(Document::make("same" + std::to_string(i % 4), text));
    write_corpus(dir / "d.jsonl", docs);
    SelectionConfig c;
    c.fraction = 0.5;
    c.input_shards = {dir / "d.jsonl"};
    c.output_dir = dir / "out";
    const auto r = filter_corpus(c, small_model());
    CHECK(r.target_docs == 20);
    // Copies sharing an id are indistinguishable, so whole id groups of 10 go in or out together.
    CHECK(r.selected_docs % 10 == 0);
    CHECK(r.passes == 3);
}
