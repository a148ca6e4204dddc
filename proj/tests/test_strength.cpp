#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "preselect/errors.hpp"
#include "preselect/strength.hpp"
#include "test_support.hpp"

using namespace preselect;

namespace {

// O(N^2) reference.
double brute_force(const std::vector<double>& c) {
    std::size_t inv = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (std::size_t j = i + 1; j < c.size(); ++j) inv += c[i] > c[j] ? 1 : 0;
    }
    const double n = static_cast<double>(c.size());
    return static_cast<double>(inv) / (n * (n - 1) / 2);
}

std::vector<RosterEntry> roster_entries(std::size_t n) {
    std::vector<RosterEntry> e;
    for (std::size_t i = 0; i < n; ++i) e.push_back({"m" + std::to_string(i), 10.0 * static_cast<double>(i) + 1});
    return e;
}

LossTable random_table(std::size_t docs, std::size_t models, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.5, 3.0);
    std::vector<std::string> ids;
    std::vector<std::string> mids;
    for (std::size_t m = 0; m < models; ++m) mids.push_back("m" + std::to_string(m));
    Eigen::MatrixXd bpc(static_cast<Eigen::Index>(docs), static_cast<Eigen::Index>(models));
    for (std::size_t d = 0; d < docs; ++d) {
        ids.push_back("d" + std::to_string(d));
        for (std::size_t m = 0; m < models; ++m) bpc(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(m)) = u(rng);
    }
    return LossTable(ids, mids, bpc);
}

}  // namespace

TEST_CASE("hand examples") {
    CHECK(pair_count(6) == 15);
    CHECK(predictive_strength(std::vector<double>{3, 1, 2}) == 2.0 / 3.0);
    CHECK(predictive_strength(std::vector<double>{6, 5, 4, 3, 2, 1}) == 1.0);
    CHECK(predictive_strength(std::vector<double>{1, 2, 3, 4, 5, 6}) == 0.0);
    CHECK(predictive_strength(std::vector<double>{2, 2, 2}) == 0.0);  // ties count nothing
    CHECK(predictive_strength(std::vector<double>{2, 1}) == 1.0);
}

TEST_CASE("errors") {
    CHECK_THROWS_AS(predictive_strength(std::vector<double>{1.0}), DegenerateInputError);
    CHECK_THROWS_AS(predictive_strength(std::vector<double>{}), DegenerateInputError);
    CHECK_THROWS_AS(predictive_strength(std::vector<double>{1.0, NAN}), ValueError);
    CHECK_THROWS_AS(predictive_strength(std::vector<double>{INFINITY, 1.0}), ValueError);
}

TEST_CASE("matches brute force, including ties") {
    std::mt19937_64 rng(5);
    for (std::size_t n = 2; n <= 12; ++n) {
        for (int trial = 0; trial < 500; ++trial) {
            std::vector<double> c(n);
            // Small integer range forces frequent ties.
            std::uniform_int_distribution<int> small(0, 4);
            std::uniform_real_distribution<double> real(0.0, 5.0);
            for (auto& x : c) x = trial % 2 ? small(rng) : real(rng);
            REQUIRE(predictive_strength(c) == brute_force(c));
        }
    }
}

TEST_CASE("works on Eigen expressions") {
    Eigen::MatrixXd m(2, 3);
    m << 3, 1, 2, 1, 2, 3;
    CHECK(predictive_strength(m.row(0)) == brute_force({3, 1, 2}));
    CHECK(predictive_strength(m.row(1)) == 0.0);
    CHECK(count_inverted_pairs(m.row(0).transpose()) == 2);
}

TEST_CASE("rank invariance and antisymmetry") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.1, 4.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> c(6);
        for (auto& x : c) x = u(rng);
        const double s = predictive_strength(c);
        std::vector<double> t(c.size());
        std::transform(c.begin(), c.end(), t.begin(), [](double x) { return std::exp(3 * x) + x * x * x; });
        CHECK(predictive_strength(t) == s);
        std::vector<double> r(c.rbegin(), c.rend());
        CHECK(predictive_strength(r) + s == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("roster validation") {
    CHECK_THROWS_AS(ModelRoster(roster_entries(1)), ConfigError);
    auto tied = roster_entries(3);
    tied[2].benchmark_score = tied[1].benchmark_score;
    CHECK_THROWS_AS(ModelRoster{tied}, ConfigError);
    auto dup = roster_entries(3);
    dup[2].model_id = dup[0].model_id;
    CHECK_THROWS_AS(ModelRoster{dup}, ConfigError);

    auto shuffled = roster_entries(4);
    std::swap(shuffled[0], shuffled[3]);
    const ModelRoster r(shuffled);
    CHECK(r.models()[0].model_id == "m0");
    CHECK(r.models()[3].model_id == "m3");
    CHECK(r.digest() == ModelRoster(roster_entries(4)).digest());

    const auto parsed = parse_roster(R"([{"model_id":"b","benchmark_score":2},{"model_id":"a","benchmark_score":1}])");
    CHECK(parsed.models()[0].model_id == "a");
    CHECK_THROWS_AS(parse_roster(R"({"model_id":"a"})"), ConfigError);
}

TEST_CASE("score_corpus agrees with the reference and is order independent") {
    const auto t = random_table(100, 6, 3);
    const ModelRoster roster(roster_entries(6));
    const auto s = score_corpus(t, roster, 1);
    REQUIRE(s.scores.size() == 100);
    CHECK(s.num_models == 6);
    for (const auto& [id, score] : s.scores) {
        const auto d = static_cast<Eigen::Index>(std::stoul(id.substr(1)));
        std::vector<double> c;
        for (Eigen::Index m = 0; m < 6; ++m) c.push_back(t.bpc()(d, m));
        CHECK(score == brute_force(c));
    }
    CHECK(score_corpus(t, roster, 4) == s);

    // Shuffled rows and columns.
    std::vector<std::string> ids = t.doc_ids();
    std::vector<std::string> mids = t.model_ids();
    Eigen::MatrixXd m = t.bpc();
    std::reverse(ids.begin(), ids.end());
    m = m.colwise().reverse().eval();
    std::reverse(mids.begin(), mids.end());
    m = m.rowwise().reverse().eval();
    CHECK(score_corpus(LossTable(ids, mids, m), roster, 2) == s);
}

TEST_CASE("score_corpus maps roster order onto columns") {
    Eigen::MatrixXd m(1, 3);
    m << 3.0, 2.0, 1.0;  // columns: weak, mid, strong
    const LossTable t({"doc"}, {"weak", "mid", "strong"}, m);
    const ModelRoster roster({{"strong", 3}, {"weak", 1}, {"mid", 2}});
    CHECK(score_corpus(t, roster).scores.at(0).second == 1.0);
    const ModelRoster missing({{"weak", 1}, {"huge", 9}});
    try {
        score_corpus(t, missing);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("huge") != std::string::npos);
    }
}

TEST_CASE("strength histogram") {
    StrengthTable t;
    t.scores = {{"a", 0.0}, {"b", 1.0}};
    CHECK(strength_histogram(t, 2).counts == std::vector<std::size_t>{1, 1});
    t.scores = {{"a", 0.4}, {"b", 0.4}, {"c", 0.4}};
    const auto h = strength_histogram(t, 10);
    CHECK(std::count_if(h.counts.begin(), h.counts.end(), [](auto c) { return c > 0; }) == 1);
    CHECK(h.edges.size() == 11);
    CHECK(strength_histogram(StrengthTable{}, 4).counts == std::vector<std::size_t>(4, 0));
}

TEST_CASE("random losses follow the Kendall null distribution") {
    // Exact distribution of inversions of a random permutation of 6 (Mahonian numbers).
    std::vector<double> mahonian{1};
    for (std::size_t n = 2; n <= 6; ++n) {
        std::vector<double> next(mahonian.size() + n - 1, 0.0);
        for (std::size_t k = 0; k < mahonian.size(); ++k) {
            for (std::size_t j = 0; j < n; ++j) next[k + j] += mahonian[k];
        }
        mahonian = next;
    }
    REQUIRE(mahonian.size() == 16);

    const auto s = score_corpus(random_table(1000, 6, 99), ModelRoster(roster_entries(6)));
    std::vector<double> observed(16, 0.0);
    for (const auto& [id, v] : s.scores) observed[static_cast<std::size_t>(std::lround(v * 15))] += 1;
    for (std::size_t k = 0; k < 16; ++k) {
        const double p = mahonian[k] / 720.0;
        const double sd = std::sqrt(1000 * p * (1 - p));
        CHECK(std::abs(observed[k] - 1000 * p) <= 5 * sd + 1);
    }

    const auto h = strength_histogram(s, 10);
    const auto mode = std::max_element(h.counts.begin(), h.counts.end()) - h.counts.begin();
    CHECK((mode == 4 || mode == 5));
    CHECK(h.counts.front() + h.counts.back() < h.counts[4] + h.counts[5]);
}

TEST_CASE("strength table persistence") {
    testing::TempDir dir("strength");
    const auto s = score_corpus(random_table(50, 4, 1), ModelRoster(roster_entries(4)));
    save_strength_table(s, dir.path());
    CHECK(load_strength_table(dir.path()) == s);
    const auto bytes = read_file(dir / "strength.jsonl");
    save_strength_table(score_corpus(random_table(50, 4, 1), ModelRoster(roster_entries(4))), dir / "again");
    CHECK(read_file(dir / "again/strength.jsonl") == bytes);
}
