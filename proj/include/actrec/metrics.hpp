#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "actrec/domain.hpp"

namespace actrec {

/// counts[true][predicted].
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, kNumCategories>, kNumCategories> counts{};

    std::uint64_t total() const;
    std::uint64_t trace() const;
    std::uint64_t row_sum(int c) const;
    std::uint64_t column_sum(int c) const;
};

enum class MacroAverage {
    AllClasses,  // unweighted mean over all 21 categories
    ActiveOnly,  // only categories present in the ground truth
};

struct MetricsReport {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::array<double, kNumCategories> per_class_precision{};
    std::array<double, kNumCategories> per_class_recall{};
    std::array<double, kNumCategories> per_class_f1{};
    ConfusionMatrix confusion;
    MacroAverage averaging = MacroAverage::AllClasses;
    /// Ordered key/value echo of the configuration that produced the report.
    std::vector<std::pair<std::string, std::string>> config;
};

/// Per-class precision/recall/F1 with zero-denominator classes counted as
/// 0, macro-averaged per `averaging`.
MetricsReport evaluate(std::span<const int> true_labels, std::span<const int> predicted_labels,
                       MacroAverage averaging = MacroAverage::AllClasses);

/// Inverse-frequency weights w_c = N / (K_present * n_c); 0 for absent classes.
std::array<double, kNumCategories> class_weights(std::span<const std::uint64_t> label_counts);

struct NormalizedConfusion {
    std::array<std::array<double, kNumCategories>, kNumCategories> values{};
    std::array<bool, kNumCategories> zero_row{};
};

/// Row-normalized confusion; all-zero rows stay zero and are flagged.
NormalizedConfusion normalize_confusion(const ConfusionMatrix& cm);

void write_report(std::ostream& out, const MetricsReport& report);
void save_report(const std::filesystem::path& path, const MetricsReport& report);

/// Binary (P5) graymap of the normalized confusion; darker cells are larger.
void write_confusion_pgm(std::ostream& out, const ConfusionMatrix& cm, int cell_pixels = 8);

}  // namespace actrec
