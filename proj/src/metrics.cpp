#include "actrec/metrics.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "actrec/errors.hpp"

namespace actrec {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts)
        for (const auto v : row) t += v;
    return t;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t t = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) t += counts[c][c];
    return t;
}

std::uint64_t ConfusionMatrix::row_sum(int c) const {
    std::uint64_t t = 0;
    for (const auto v : counts[static_cast<std::size_t>(c)]) t += v;
    return t;
}

std::uint64_t ConfusionMatrix::column_sum(int c) const {
    std::uint64_t t = 0;
    for (const auto& row : counts) t += row[static_cast<std::size_t>(c)];
    return t;
}

MetricsReport evaluate(std::span<const int> true_labels, std::span<const int> predicted_labels,
                       MacroAverage averaging) {
    if (true_labels.size() != predicted_labels.size())
        throw DataError(fmt::format("evaluate: {} true labels vs {} predictions", true_labels.size(),
                                    predicted_labels.size()));
    if (true_labels.empty()) throw DataError("evaluate: no labels");

    MetricsReport r;
    r.averaging = averaging;
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        const int t = true_labels[i];
        const int p = predicted_labels[i];
        if (t < 0 || t >= kNumCategories || p < 0 || p >= kNumCategories)
            throw DataError(fmt::format("evaluate: label out of range at position {}", i));
        ++r.confusion.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
    }
    const auto& cm = r.confusion;
    r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());

    int averaged = 0;
    for (int c = 0; c < kNumCategories; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        const double tp = static_cast<double>(cm.counts[cu][cu]);
        const double predicted = static_cast<double>(cm.column_sum(c));
        const double actual = static_cast<double>(cm.row_sum(c));
        const double precision = predicted > 0 ? tp / predicted : 0.0;
        const double recall = actual > 0 ? tp / actual : 0.0;
        const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        r.per_class_precision[cu] = precision;
        r.per_class_recall[cu] = recall;
        r.per_class_f1[cu] = f1;
        if (averaging == MacroAverage::ActiveOnly && actual == 0) continue;
        r.macro_precision += precision;
        r.macro_recall += recall;
        r.macro_f1 += f1;
        ++averaged;
    }
    r.macro_precision /= averaged;
    r.macro_recall /= averaged;
    r.macro_f1 /= averaged;
    return r;
}

std::array<double, kNumCategories> class_weights(std::span<const std::uint64_t> label_counts) {
    if (label_counts.size() > static_cast<std::size_t>(kNumCategories))
        throw DataError("class_weights: too many categories");
    std::uint64_t total = 0;
    int present = 0;
    for (const auto n : label_counts) {
        total += n;
        if (n > 0) ++present;
    }
    if (total == 0) throw DataError("class_weights: all counts are zero");
    std::array<double, kNumCategories> w{};
    for (std::size_t c = 0; c < label_counts.size(); ++c)
        if (label_counts[c] > 0)
            w[c] = static_cast<double>(total) / (present * static_cast<double>(label_counts[c]));
    return w;
}

NormalizedConfusion normalize_confusion(const ConfusionMatrix& cm) {
    NormalizedConfusion out;
    for (int c = 0; c < kNumCategories; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        const auto sum = cm.row_sum(c);
        if (sum == 0) {
            out.zero_row[cu] = true;
            continue;
        }
        for (std::size_t p = 0; p < cm.counts[cu].size(); ++p)
            out.values[cu][p] = static_cast<double>(cm.counts[cu][p]) / static_cast<double>(sum);
    }
    return out;
}

void write_report(std::ostream& out, const MetricsReport& r) {
    out << "[config]\n";
    for (const auto& [k, v] : r.config) out << k << '=' << v << '\n';
    out << "\n[metrics]\n";
    out << fmt::format("frames={}\n", r.confusion.total());
    out << fmt::format("accuracy={:.6f}\n", r.accuracy);
    out << fmt::format("macro_averaging={}\n",
                       r.averaging == MacroAverage::AllClasses ? "all" : "active-only");
    out << fmt::format("macro_precision={:.6f}\n", r.macro_precision);
    out << fmt::format("macro_recall={:.6f}\n", r.macro_recall);
    out << fmt::format("macro_f1={:.6f}\n", r.macro_f1);
    out << "\n[per_class]\n";
    out << "category\tsupport\tprecision\trecall\tf1\n";
    for (int c = 0; c < kNumCategories; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        out << fmt::format("{}\t{}\t{:.6f}\t{:.6f}\t{:.6f}\n", activity_name(c), r.confusion.row_sum(c),
                           r.per_class_precision[cu], r.per_class_recall[cu], r.per_class_f1[cu]);
    }
    out << "\n[confusion]\n";
    out << "true\\predicted";
    for (int c = 0; c < kNumCategories; ++c) out << '\t' << activity_name(c);
    out << '\n';
    for (int t = 0; t < kNumCategories; ++t) {
        out << activity_name(t);
        for (const auto v : r.confusion.counts[static_cast<std::size_t>(t)]) out << '\t' << v;
        out << '\n';
    }
}

void save_report(const std::filesystem::path& path, const MetricsReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write report '{}'", path.string()));
    write_report(out, report);
}

void write_confusion_pgm(std::ostream& out, const ConfusionMatrix& cm, int cell_pixels) {
    if (cell_pixels < 1) throw ConfigError("cell size must be >= 1 pixel");
    const auto norm = normalize_confusion(cm);
    const int side = kNumCategories * cell_pixels;
    out << "P5\n" << side << ' ' << side << "\n255\n";
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double v = norm.values[static_cast<std::size_t>(y / cell_pixels)]
                                        [static_cast<std::size_t>(x / cell_pixels)];
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (1.0 - v)))));
        }
}

}  // namespace actrec
