#include "preselect/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "preselect/errors.hpp"

namespace preselect {

FeatureInfluence feature_influence(const ClassifierModel& model, std::string_view token) {
    auto id = model.vocab.find(token);
    if (!id) {
        throw LookupError("token not in model vocabulary: " + std::string(token));
    }
    return {std::string(token), influence_of_row(model, model.input.row(*id))};
}

Eigen::VectorXd all_influences(const ClassifierModel& model) {
    const auto v = static_cast<Eigen::Index>(model.vocab_size());
    const Eigen::VectorXd diff = (model.output.row(0) - model.output.row(1)).cast<double>().transpose();
    return model.input.topRows(v).cast<double>() * diff;
}

std::vector<FeatureInfluence> top_features(const ClassifierModel& model, std::size_t k, InfluenceSign sign) {
    if (k == 0) {
        throw ConfigError("top_features: k must be >= 1");
    }
    const Eigen::VectorXd infl = all_influences(model);
    std::vector<std::uint32_t> order(model.vocab_size());
    std::iota(order.begin(), order.end(), 0u);
    const auto& entries = model.vocab.entries();
    const bool positive = sign == InfluenceSign::Positive;
    auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (infl(a) != infl(b)) {
            return positive ? infl(a) > infl(b) : infl(a) < infl(b);
        }
        return entries[a].token < entries[b].token;
    };
    k = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
    std::vector<FeatureInfluence> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back({entries[order[i]].token, infl(order[i])});
    }
    return out;
}

DecompositionReport influence_decomposition_check(const ClassifierModel& model, std::string_view text) {
    const auto tokens = tokenize(text);
    const auto feats = featurize(tokens, model.vocab, model.hp.buckets, 1);
    DecompositionReport r;
    r.features = feats.size();
    r.logit_difference = logit_difference(model, feats);

    double sum = 0.0;
    double abs_sum = 0.0;
    for (auto f : feats) {
        const double x = influence_of_row(model, model.input.row(f));
        sum += x;
        abs_sum += std::abs(x);
    }
    const auto n = static_cast<double>(feats.size());
    r.mean_influence = sum / n;
    r.abs_deviation = std::abs(r.logit_difference - r.mean_influence);
    const double scale = std::max(std::abs(r.logit_difference), abs_sum / n);
    r.relative_deviation = scale > 0.0 ? r.abs_deviation / scale : 0.0;
    return r;
}

// ---- Domain density ------------------------------------------------------------

void DomainDensityAccumulator::merge(const DomainDensityAccumulator& other) {
    for (const auto& [d, c] : other.chars_) {
        chars_[d] += c;
    }
}

std::uint64_t DomainDensityAccumulator::total_chars() const {
    std::uint64_t t = 0;
    for (const auto& [d, c] : chars_) t += c;
    return t;
}

std::vector<DomainDensityRow> DomainDensityAccumulator::rows() const {
    const std::uint64_t total = total_chars();
    if (total == 0) {
        throw EmptyInputError("domain density over zero characters");
    }
    std::vector<DomainDensityRow> out;
    out.reserve(chars_.size());
    for (const auto& [d, c] : chars_) {
        if (c > 0) {
            out.push_back({d, c, static_cast<double>(c) / static_cast<double>(total)});
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.chars > b.chars; });
    return out;
}

std::vector<DomainDensityRow> domain_density(std::span<const Document> docs) {
    DomainDensityAccumulator acc;
    for (const auto& d : docs) {
        acc.add(d);
    }
    return acc.rows();
}

// ---- Length histogram ------------------------------------------------------------

LengthHistogramAccumulator::LengthHistogramAccumulator(std::vector<std::uint64_t> edges) : edges_(std::move(edges)) {
    if (edges_.size() < 2) {
        throw ConfigError("length histogram needs at least two edges");
    }
    for (std::size_t i = 1; i < edges_.size(); ++i) {
        if (edges_[i] <= edges_[i - 1]) {
            throw ConfigError("length histogram edges must be strictly increasing");
        }
    }
    counts_.assign(edges_.size() - 1, 0);
}

void LengthHistogramAccumulator::add(std::uint64_t char_count) {
    auto it = std::upper_bound(edges_.begin(), edges_.end(), char_count);
    std::size_t bin = it == edges_.begin() ? 0 : static_cast<std::size_t>(it - edges_.begin()) - 1;
    bin = std::min(bin, counts_.size() - 1);
    ++counts_[bin];
    ++docs_;
    chars_ += char_count;
}

void LengthHistogramAccumulator::merge(const LengthHistogramAccumulator& other) {
    if (other.edges_ != edges_) {
        throw ConfigError("merging length histograms with different edges");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    docs_ += other.docs_;
    chars_ += other.chars_;
}

LengthHistogram LengthHistogramAccumulator::result() const {
    LengthHistogram h;
    h.bin_edges = edges_;
    h.counts = counts_;
    h.documents = docs_;
    h.total_chars = chars_;
    h.mean_chars = docs_ > 0 ? static_cast<double>(chars_) / static_cast<double>(docs_) : 0.0;
    return h;
}

LengthHistogram length_histogram(std::span<const Document> docs, std::vector<std::uint64_t> edges) {
    LengthHistogramAccumulator acc(std::move(edges));
    for (const auto& d : docs) {
        acc.add(d.char_count);
    }
    return acc.result();
}

std::vector<std::uint64_t> default_length_edges() {
    return {0, 250, 500, 1000, 1500, 2000, 3000, 4000, 6000, 8000, 12000, 16000, 32000, 64000};
}

// ---- Rendering -------------------------------------------------------------------

std::string format_density_table(std::span<const DomainDensityRow> rows, std::size_t max_rows) {
    std::size_t width = 6;
    const std::size_t shown = std::min(rows.size(), max_rows);
    for (std::size_t i = 0; i < shown; ++i) width = std::max(width, rows[i].domain.size());
    std::ostringstream out;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-*s %14s %9s\n", static_cast<int>(width), "domain", "chars", "density");
    out << buf;
    for (std::size_t i = 0; i < shown; ++i) {
        std::snprintf(buf, sizeof buf, " %14llu %8.4f%%\n", static_cast<unsigned long long>(rows[i].chars),
                      100.0 * rows[i].char_fraction);
        out << rows[i].domain << std::string(width - rows[i].domain.size(), ' ') << buf;
    }
    if (rows.size() > shown) {
        out << "... " << rows.size() - shown << " more domains\n";
    }
    return out.str();
}

std::string format_length_histogram(const LengthHistogram& hist) {
    std::ostringstream out;
    const std::uint64_t peak = hist.counts.empty() ? 0 : *std::max_element(hist.counts.begin(), hist.counts.end());
    char buf[96];
    for (std::size_t i = 0; i < hist.counts.size(); ++i) {
        const bool last = i + 1 == hist.counts.size();
        std::snprintf(buf, sizeof buf, "[%6llu, %6llu%c %9llu ", static_cast<unsigned long long>(hist.bin_edges[i]),
                      static_cast<unsigned long long>(hist.bin_edges[i + 1]), last ? '+' : ')',
                      static_cast<unsigned long long>(hist.counts[i]));
        out << buf;
        const auto bar = peak == 0 ? 0 : static_cast<std::size_t>(40 * hist.counts[i] / peak);
        out << std::string(bar, '#') << '\n';
    }
    std::snprintf(buf, sizeof buf, "documents %llu, mean %.1f chars\n",
                  static_cast<unsigned long long>(hist.documents), hist.mean_chars);
    out << buf;
    return out.str();
}

std::string format_features(std::span<const FeatureInfluence> features) {
    std::size_t width = 5;
    for (const auto& f : features) width = std::max(width, f.token.size());
    std::ostringstream out;
    char buf[64];
    for (const auto& f : features) {
        std::snprintf(buf, sizeof buf, " %14.6f\n", f.influence);
        out << f.token << std::string(width - f.token.size(), ' ') << buf;
    }
    return out.str();
}

std::string render_length_histogram_svg(const LengthHistogram& hist, std::string_view title) {
    constexpr int kWidth = 640, kHeight = 360, kMargin = 48;
    const std::size_t bins = hist.counts.size();
    const std::uint64_t peak = std::max<std::uint64_t>(
        1, hist.counts.empty() ? 1 : *std::max_element(hist.counts.begin(), hist.counts.end()));
    const double bar_w = static_cast<double>(kWidth - 2 * kMargin) / static_cast<double>(std::max<std::size_t>(bins, 1));
    const double plot_h = kHeight - 2 * kMargin;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">";
    for (char c : title) {
        switch (c) {
            case '<': svg << "&lt;"; break;
            case '>': svg << "&gt;"; break;
            case '&': svg << "&amp;"; break;
            default: svg << c;
        }
    }
    svg << "</text>\n";
    for (std::size_t i = 0; i < bins; ++i) {
        const double h = plot_h * static_cast<double>(hist.counts[i]) / static_cast<double>(peak);
        const double x = kMargin + bar_w * static_cast<double>(i);
        svg << "<rect x=\"" << x + 1 << "\" y=\"" << kHeight - kMargin - h << "\" width=\"" << bar_w - 2
            << "\" height=\"" << h << "\" fill=\"#4c72b0\"/>\n";
        svg << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << kHeight - kMargin + 14
            << "\" text-anchor=\"middle\">" << hist.bin_edges[i] << "</text>\n";
    }
    svg << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin << "\" y2=\""
        << kHeight - kMargin << "\" stroke=\"black\"/>\n";
    svg << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">characters (mean "
        << static_cast<long long>(std::llround(hist.mean_chars)) << ")</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace preselect
