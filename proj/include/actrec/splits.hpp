#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "actrec/domain.hpp"

namespace actrec {

/// Bhattacharyya distance -ln sum sqrt(p_c q_c); +infinity for disjoint
/// supports, exactly 0 for identical inputs.
double bhattacharyya(std::span<const double> p, std::span<const double> q);

struct Fold {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
};

struct FoldPlan {
    int k = 0;
    double validation_fraction = 0.0;
    std::uint64_t rng_seed = 0;
    std::vector<Fold> folds;
};

/// Per-category seeded shuffle and round-robin assignment to k test folds;
/// each fold's validation set is a stratified share of its training part.
FoldPlan stratified_folds(const DatasetManifest& manifest, int k, double validation_fraction,
                          std::uint64_t rng_seed);

enum class SearchMode { Exhaustive, Beam };

struct DaySplitOptions {
    double target_test_fraction = 0.3;
    double tolerance = 0.05;  // absolute, on the test frame fraction
    SearchMode mode = SearchMode::Exhaustive;
    int beam_width = 16;
};

inline constexpr int kMaxExhaustiveDays = 24;

struct DaySplitPlan {
    std::vector<DayKey> train_days;
    std::vector<DayKey> test_days;
    double objective = 0.0;
    double target_test_fraction = 0.0;
    double tolerance = 0.0;
    SearchMode mode = SearchMode::Exhaustive;
    int beam_width = 0;
    std::size_t candidates_evaluated = 0;
};

/// D(global, train) + D(global, test) for the given set of test days.
double split_objective(const DatasetManifest& manifest, std::span<const DayKey> test_days);

/// Chooses the test days minimizing split_objective among day subsets whose
/// frame fraction lies within tolerance of the target; ties go to the
/// lexicographically smallest sorted test-day list.
DaySplitPlan optimize_day_split(const DatasetManifest& manifest, const DaySplitOptions& options);

void write_day_split(std::ostream& out, const DaySplitPlan& plan, const DatasetManifest& manifest);
DaySplitPlan read_day_split(std::istream& in, std::string_view source = "<stream>");
void save_day_split(const std::filesystem::path& path, const DaySplitPlan& plan,
                    const DatasetManifest& manifest);
DaySplitPlan load_day_split(const std::filesystem::path& path);

void write_fold_plan(std::ostream& out, const FoldPlan& plan);
FoldPlan read_fold_plan(std::istream& in, std::string_view source = "<stream>");
void save_fold_plan(const std::filesystem::path& path, const FoldPlan& plan);
FoldPlan load_fold_plan(const std::filesystem::path& path);

std::string_view search_mode_name(SearchMode m);
SearchMode parse_search_mode(std::string_view text);

}  // namespace actrec
