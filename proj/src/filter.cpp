#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

#include "preselect/errors.hpp"
#include "preselect/pipeline.hpp"
#include "preselect/util.hpp"

namespace preselect {

using nlohmann::json;

void SelectionConfig::validate() const {
    if (fraction.has_value() == char_budget.has_value()) {
        throw ConfigError("set exactly one of fraction or char_budget");
    }
    if (fraction && !(*fraction > 0.0 && *fraction <= 1.0)) {
        throw ConfigError("fraction must be in (0, 1]");
    }
    if (char_budget && *char_budget == 0) {
        throw ConfigError("char_budget must be positive");
    }
    if (workers < 1) {
        throw ConfigError("workers must be >= 1");
    }
    if (input_shards.empty()) {
        throw ConfigError("no input shards");
    }
    if (output_dir.empty()) {
        throw ConfigError("no output directory");
    }
    std::error_code ec;
    for (const auto& ex : excluded_shards) {
        const auto exc = std::filesystem::weakly_canonical(ex, ec);
        for (const auto& in : input_shards) {
            if (std::filesystem::weakly_canonical(in, ec) == exc) {
                throw ConfigError("input shard " + in.string() + " was consumed by the seed sample");
            }
        }
    }
}

json SelectionConfig::to_json() const {
    json j;
    if (fraction) j["fraction"] = *fraction;
    if (char_budget) j["char_budget"] = *char_budget;
    j["model_path"] = model_path.string();
    std::vector<std::string> shards;
    for (const auto& p : input_shards) shards.push_back(p.string());
    j["input_shards"] = shards;
    j["output_dir"] = output_dir.string();
    j["rng_seed"] = rng_seed;
    j["fields"] = {{"id", read.fields.id}, {"text", read.fields.text}, {"url", read.fields.url}};
    j["skip_bad_records"] = read.skip_bad_records;
    j["length_edges"] = length_edges;
    // workers deliberately omitted: the selection does not depend on it
    return j;
}

namespace {

json histogram_json(const LengthHistogram& h) {
    return {{"bin_edges", h.bin_edges},
            {"counts", h.counts},
            {"documents", h.documents},
            {"total_chars", h.total_chars},
            {"mean_chars", h.mean_chars}};
}

json density_json(const std::vector<DomainDensityRow>& rows) {
    json a = json::array();
    for (const auto& r : rows) {
        a.push_back({{"domain", r.domain}, {"chars", r.chars}, {"char_fraction", r.char_fraction}});
    }
    return a;
}

/// Calls fn(shard_index) for every shard on `workers` threads; rethrows the
/// first failure after all threads have stopped.
template <typename Fn>
void for_each_shard(std::size_t shards, unsigned workers, Fn&& fn) {
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(shards)));
    if (workers == 1) {
        for (std::size_t s = 0; s < shards; ++s) fn(0u, s);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mu;
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (;;) {
                    const std::size_t s = next.fetch_add(1);
                    if (s >= shards || failed.load()) return;
                    try {
                        fn(w, s);
                    } catch (...) {
                        std::lock_guard lock(error_mu);
                        if (!error) error = std::current_exception();
                        failed.store(true);
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

/// Calls fn(ordinal, raw_line) for every nonblank line. Ordinals index the
/// per-shard score vectors filled in pass 1.
template <typename Fn>
void scan_lines(const std::filesystem::path& path, Fn&& fn) {
    LineReader reader(path);
    std::string line;
    std::size_t ordinal = 0;
    while (reader.next(line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        fn(ordinal++, line);
    }
}

std::string output_name(std::size_t index, const std::filesystem::path& input) {
    std::string name = input.filename().string();
    if (name.ends_with(".gz")) name.resize(name.size() - 3);
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "%05zu_", index);
    return prefix + name;
}

}  // namespace

SelectionReport filter_corpus(const SelectionConfig& config) {
    config.validate();
    const auto model = load_model(config.model_path);
    return filter_corpus(config, model);
}

SelectionReport filter_corpus(const SelectionConfig& config, const ClassifierModel& model) {
    config.validate();
    if (directory_nonempty(config.output_dir) && !config.force) {
        throw SafetyError("output directory " + config.output_dir.string() + " is not empty (use --force)");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n_shards = config.input_shards.size();
    const unsigned workers = config.workers;

    SelectionReport report;
    report.config_digest = content_digest(config.to_json().dump());
    report.model_digest = config.model_path.empty() ? content_digest(serialize_model(model))
                                                    : file_digest(config.model_path);
    report.shards.resize(n_shards);

    const Scorer scorer(model);
    // Per nonblank line: score (NaN for a skipped bad record) and id hash.
    // Kept from pass 1 so later passes neither rescore nor parse records
    // whose fate is already known.
    struct Scored {
        double score;
        std::uint64_t hash;
    };
    std::vector<std::vector<Scored>> scored(n_shards);

    // Pass 1: score histogram and input analytics.
    struct WorkerState {
        ScoreHistogram hist;
        DomainDensityAccumulator density;
        LengthHistogramAccumulator lengths;
        std::uint64_t chars = 0;
    };
    std::vector<WorkerState> states;
    for (unsigned w = 0; w < workers; ++w) {
        states.push_back({ScoreHistogram{}, DomainDensityAccumulator{}, LengthHistogramAccumulator(config.length_edges), 0});
    }
    for_each_shard(n_shards, workers, [&](unsigned w, std::size_t s) {
        auto& st = states[w];
        auto& sc = scored[s];
        std::uint64_t docs = 0, bad = 0;
        LineReader reader(config.input_shards[s]);
        std::string line;
        while (reader.next(line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            Document d;
            try {
                d = parse_document(line, config.read.fields, reader.line_number());
            } catch (const RecordError& e) {
                if (!config.read.skip_bad_records) {
                    throw RecordError(e.line(), config.input_shards[s].string() + ": " + e.what());
                }
                ++bad;
                sc.push_back({std::numeric_limits<double>::quiet_NaN(), 0});
                continue;
            }
            const double p = scorer.predict(d.text).p_pos;
            sc.push_back({p, tie_break_hash(d.id)});
            st.hist.add(p);
            st.density.add(d);
            st.lengths.add(d.char_count);
            st.chars += d.char_count;
            ++docs;
        }
        report.shards[s].input = config.input_shards[s].string();
        report.shards[s].output = (config.output_dir / output_name(s, config.input_shards[s])).string();
        report.shards[s].input_docs = docs;
        report.shards[s].bad_records = bad;
    });
    ScoreHistogram hist;
    DomainDensityAccumulator input_density;
    LengthHistogramAccumulator input_lengths(config.length_edges);
    for (auto& st : states) {
        hist.merge(st.hist);
        input_density.merge(st.density);
        input_lengths.merge(st.lengths);
        report.input_chars += st.chars;
    }
    states.clear();
    for (const auto& sh : report.shards) {
        report.input_docs += sh.input_docs;
        report.bad_records += sh.bad_records;
    }
    if (report.input_docs == 0) {
        throw EmptyInputError("no documents in the input shards");
    }

    double fraction = config.fraction.value_or(0.0);
    if (config.char_budget) {
        fraction = std::min(1.0, static_cast<double>(*config.char_budget) / static_cast<double>(std::max<std::uint64_t>(1, report.input_chars)));
        fraction = std::max(fraction, 1.0 / static_cast<double>(report.input_docs));
    }
    Threshold threshold = plan_threshold(hist, fraction);
    report.passes = 1;

    auto scored_at = [&](std::size_t s, std::size_t ordinal) -> const Scored& {
        if (ordinal >= scored[s].size()) {
            throw IoError(config.input_shards[s].string() + " changed while it was being filtered");
        }
        return scored[s][ordinal];
    };

    // Rank the boundary bin from memory. Ids are only needed to order
    // documents whose (score, hash) pair equals the cutoff's, which takes an
    // extra pass over the shards.
    if (threshold.needs_boundary_pass()) {
        struct Slot {
            std::size_t shard, ordinal;
        };
        std::vector<BoundaryCandidate> candidates;
        std::vector<Slot> slots;
        for (std::size_t s = 0; s < n_shards; ++s) {
            for (std::size_t k = 0; k < scored[s].size(); ++k) {
                const auto& x = scored[s][k];
                if (!std::isnan(x.score) && threshold.in_boundary(x.score)) {
                    candidates.push_back({x.score, x.hash, {}});
                    slots.push_back({s, k});
                }
            }
        }
        auto key_order = [](const BoundaryCandidate& a, const BoundaryCandidate& b) {
            return a.score != b.score ? a.score > b.score : a.hash < b.hash;
        };
        if (candidates.size() >= threshold.boundary_need && threshold.boundary_need > 0) {
            auto keys = candidates;
            const auto nth = keys.begin() + static_cast<std::ptrdiff_t>(threshold.boundary_need - 1);
            std::nth_element(keys.begin(), nth, keys.end(), key_order);
            const auto key = *nth;
            std::vector<std::vector<std::pair<std::size_t, std::size_t>>> wanted(n_shards);  // ordinal, candidate
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                if (candidates[i].score == key.score && candidates[i].hash == key.hash) {
                    wanted[slots[i].shard].push_back({slots[i].ordinal, i});
                }
            }
            std::size_t group = 0;
            for (const auto& v : wanted) group += v.size();
            if (group > 1) {
                for_each_shard(n_shards, workers, [&](unsigned, std::size_t s) {
                    std::size_t next = 0;
                    const auto& want = wanted[s];
                    if (want.empty()) return;
                    scan_lines(config.input_shards[s], [&](std::size_t k, const std::string& line) {
                        if (next < want.size() && want[next].first == k) {
                            candidates[want[next].second].id = parse_document(line, config.read.fields).id;
                            ++next;
                        }
                    });
                });
                ++report.passes;
            }
        }
        threshold.resolve(std::move(candidates));
    }

    // Final pass: write admitted records.
    std::filesystem::create_directories(config.output_dir);
    std::vector<DomainDensityAccumulator> sel_density(workers);
    std::vector<LengthHistogramAccumulator> sel_lengths(workers, LengthHistogramAccumulator(config.length_edges));
    std::vector<std::uint64_t> sel_chars(workers, 0);
    for_each_shard(n_shards, workers, [&](unsigned w, std::size_t s) {
        const std::filesystem::path out_path = report.shards[s].output;
        auto tmp = out_path;
        tmp += ".tmp";
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        std::uint64_t kept = 0;
        scan_lines(config.input_shards[s], [&](std::size_t k, const std::string& line) {
            const auto& x = scored_at(s, k);
            if (std::isnan(x.score)) return;
            const auto decided = threshold.admits(x.score, x.hash);
            if (decided == false) return;
            const auto d = parse_document(line, config.read.fields);
            if (decided.has_value() || threshold.admits(x.score, std::string_view(d.id))) {
                out << line << '\n';
                sel_density[w].add(d);
                sel_lengths[w].add(d.char_count);
                sel_chars[w] += d.char_count;
                ++kept;
            }
        });
        out.close();
        if (!out) throw IoError("write failed: " + tmp.string());
        std::filesystem::rename(tmp, out_path);
        report.shards[s].selected_docs = kept;
        std::vector<Scored>().swap(scored[s]);
    });
    ++report.passes;

    DomainDensityAccumulator density;
    LengthHistogramAccumulator lengths(config.length_edges);
    for (unsigned w = 0; w < workers; ++w) {
        density.merge(sel_density[w]);
        lengths.merge(sel_lengths[w]);
        report.selected_chars += sel_chars[w];
    }
    for (const auto& sh : report.shards) report.selected_docs += sh.selected_docs;

    report.threshold = threshold.threshold;
    report.target_fraction = fraction;
    report.target_docs = threshold.target;
    report.boundary_bin_docs = threshold.boundary_total;
    report.input_domain_density = input_density.rows();
    if (report.selected_chars > 0) {
        report.domain_density = density.rows();
    }
    report.length_histogram = lengths.result();
    report.input_length_histogram = input_lengths.result();
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    write_file_atomic(config.output_dir / "report.json", report.to_json().dump(2) + "\n");
    write_file_atomic(config.output_dir / "report.txt", report.to_text());
    write_file_atomic(config.output_dir / "length_histogram.svg",
                      render_length_histogram_svg(report.length_histogram, "Selected document length"));
    return report;
}

json SelectionReport::to_json() const {
    json j;
    j["threshold"] = threshold;
    j["target_fraction"] = target_fraction;
    j["target_docs"] = target_docs;
    j["input_docs"] = input_docs;
    j["selected_docs"] = selected_docs;
    j["achieved_fraction"] = input_docs ? static_cast<double>(selected_docs) / static_cast<double>(input_docs) : 0.0;
    j["input_chars"] = input_chars;
    j["selected_chars"] = selected_chars;
    j["bad_records"] = bad_records;
    j["tolerance"] = {{"histogram_bins", kThresholdBins},
                      {"count_tolerance_docs", 1},
                      {"boundary_bin_docs", boundary_bin_docs},
                      {"tie_break", "score desc, fnv1a64(doc_id) asc, doc_id asc"}};
    j["passes"] = passes;
    j["domain_density"] = density_json(domain_density);
    j["input_domain_density"] = density_json(input_domain_density);
    j["length_histogram"] = histogram_json(length_histogram);
    j["input_length_histogram"] = histogram_json(input_length_histogram);
    json shards_j = json::array();
    for (const auto& s : shards) {
        shards_j.push_back({{"input", s.input},
                            {"output", s.output},
                            {"input_docs", s.input_docs},
                            {"selected_docs", s.selected_docs},
                            {"bad_records", s.bad_records}});
    }
    j["shards"] = shards_j;
    j["config_digest"] = config_digest;
    j["model_digest"] = model_digest;
    j["seconds"] = seconds;
    j["docs_per_second"] = seconds > 0 ? static_cast<double>(input_docs) / seconds : 0.0;
    return j;
}

std::string SelectionReport::to_text() const {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "threshold          %.8f\n"
                  "target fraction    %.6f (%llu docs)\n"
                  "selected           %llu / %llu docs\n"
                  "characters         %llu / %llu\n"
                  "bad records        %llu\n"
                  "passes             %d\n"
                  "elapsed            %.2f s\n",
                  threshold, target_fraction, static_cast<unsigned long long>(target_docs),
                  static_cast<unsigned long long>(selected_docs), static_cast<unsigned long long>(input_docs),
                  static_cast<unsigned long long>(selected_chars), static_cast<unsigned long long>(input_chars),
                  static_cast<unsigned long long>(bad_records), passes, seconds);
    out << buf << "\nselected domain density\n" << format_density_table(domain_density)
        << "\nselected length distribution\n" << format_length_histogram(length_histogram)
        << "\ninput length distribution\n" << format_length_histogram(input_length_histogram);
    return out.str();
}

}  // namespace preselect
