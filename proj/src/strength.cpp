#include "preselect/strength.hpp"

#include <algorithm>
#include <set>
#include <thread>

#include <json.hpp>

#include "preselect/corpus.hpp"
#include "preselect/util.hpp"

namespace preselect {

using nlohmann::json;

ModelRoster::ModelRoster(std::vector<RosterEntry> entries) : models_(std::move(entries)) {
    if (models_.size() < 2) {
        throw ConfigError("model roster needs at least two models");
    }
    std::set<std::string> ids;
    for (const auto& m : models_) {
        if (!std::isfinite(m.benchmark_score)) {
            throw ConfigError("non-finite benchmark score for " + m.model_id);
        }
        if (m.model_id.empty() || !ids.insert(m.model_id).second) {
            throw ConfigError("empty or duplicate model id in roster: '" + m.model_id + "'");
        }
    }
    std::stable_sort(models_.begin(), models_.end(),
                     [](const auto& a, const auto& b) { return a.benchmark_score < b.benchmark_score; });
    for (std::size_t i = 1; i < models_.size(); ++i) {
        if (models_[i].benchmark_score == models_[i - 1].benchmark_score) {
            throw ConfigError("tied benchmark scores for " + models_[i - 1].model_id + " and " + models_[i].model_id);
        }
    }
}

std::string ModelRoster::to_json() const {
    json j = json::array();
    for (const auto& m : models_) {
        j.push_back({{"model_id", m.model_id}, {"benchmark_score", m.benchmark_score}});
    }
    return j.dump();
}

std::string ModelRoster::digest() const { return content_digest(to_json()); }

ModelRoster parse_roster(std::string_view json_text) {
    std::vector<RosterEntry> entries;
    try {
        const auto j = json::parse(json_text);
        if (!j.is_array()) {
            throw ConfigError("roster must be a JSON list");
        }
        for (const auto& e : j) {
            entries.push_back({e.at("model_id").get<std::string>(), e.at("benchmark_score").get<double>()});
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad roster: ") + e.what());
    }
    return ModelRoster(std::move(entries));
}

ModelRoster load_roster(const std::filesystem::path& path) { return parse_roster(read_file(path)); }

StrengthTable score_corpus(const LossTable& losses, const ModelRoster& roster, unsigned workers) {
    std::vector<Eigen::Index> cols;
    for (const auto& m : roster.models()) {
        auto idx = losses.model_index(m.model_id);
        if (!idx) {
            throw SchemaError("roster model missing from loss table: " + m.model_id);
        }
        cols.push_back(*idx);
    }

    const auto n_docs = losses.doc_ids().size();
    std::vector<double> scores(n_docs);
    auto work = [&](std::size_t begin, std::size_t end) {
        Eigen::VectorXd row(static_cast<Eigen::Index>(cols.size()));
        for (std::size_t d = begin; d < end; ++d) {
            for (std::size_t k = 0; k < cols.size(); ++k) {
                row(static_cast<Eigen::Index>(k)) = losses.bpc()(static_cast<Eigen::Index>(d), cols[k]);
            }
            scores[d] = predictive_strength(row);
        }
    };
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(1, n_docs / 1024))));
    if (workers == 1) {
        work(0, n_docs);
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (n_docs + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w) {
            const std::size_t b = std::min(n_docs, w * chunk);
            const std::size_t e = std::min(n_docs, b + chunk);
            pool.emplace_back(work, b, e);
        }
    }

    StrengthTable t;
    t.roster_hash = roster.digest();
    t.num_models = roster.size();
    t.scores.reserve(n_docs);
    for (std::size_t d = 0; d < n_docs; ++d) {
        t.scores.emplace_back(losses.doc_ids()[d], scores[d]);
    }
    std::sort(t.scores.begin(), t.scores.end());
    return t;
}

StrengthHistogram strength_histogram(const StrengthTable& table, std::size_t bins) {
    if (bins == 0) {
        throw ConfigError("histogram needs at least one bin");
    }
    StrengthHistogram h;
    h.counts.assign(bins, 0);
    for (std::size_t b = 0; b <= bins; ++b) {
        h.edges.push_back(static_cast<double>(b) / static_cast<double>(bins));
    }
    for (const auto& [id, s] : table.scores) {
        auto b = static_cast<std::size_t>(s * static_cast<double>(bins));
        ++h.counts[std::min(b, bins - 1)];
    }
    return h;
}

void save_strength_table(const StrengthTable& table, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::string out;
    for (const auto& [id, s] : table.scores) {
        out += json{{"doc_id", id}, {"strength", s}}.dump();
        out += '\n';
    }
    write_file_atomic(dir / "strength.jsonl", out);
    json m;
    m["roster_hash"] = table.roster_hash;
    m["N"] = table.num_models;
    m["Z"] = pair_count(table.num_models);
    m["documents"] = table.scores.size();
    m["strength_digest"] = content_digest(out);
    write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

StrengthTable load_strength_table(const std::filesystem::path& dir) {
    StrengthTable t;
    try {
        const auto m = json::parse(read_file(dir / "manifest.json"));
        t.roster_hash = m.at("roster_hash").get<std::string>();
        t.num_models = m.at("N").get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError("bad strength manifest in " + dir.string() + ": " + e.what());
    }
    LineReader reader(dir / "strength.jsonl");
    std::string line;
    while (reader.next(line)) {
        if (line.empty()) {
            continue;
        }
        try {
            const auto j = json::parse(line);
            const double s = j.at("strength").get<double>();
            if (!(s >= 0.0 && s <= 1.0)) {
                throw RecordError(reader.line_number(), "strength outside [0, 1]");
            }
            t.scores.emplace_back(j.at("doc_id").get<std::string>(), s);
        } catch (const json::exception& e) {
            throw RecordError(reader.line_number(), e.what());
        }
    }
    std::sort(t.scores.begin(), t.scores.end());
    return t;
}

}  // namespace preselect
