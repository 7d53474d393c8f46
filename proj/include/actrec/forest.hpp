#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "actrec/domain.hpp"
#include "actrec/features.hpp"

namespace actrec {

/// Gini impurity 1 - sum (n_c / N)^2. Throws DataError on all-zero counts.
double gini(std::span<const std::uint64_t> class_counts);

struct Split {
    int feature = 0;
    double threshold = 0.0;  // rows with value <= threshold go left
    double impurity_decrease = 0.0;

    bool operator==(const Split&) const = default;
};

/// Row-major sample matrix with one class label (0..20) per row.
struct SampleSet {
    std::vector<double> values;
    std::vector<int> labels;
    int dim = 0;

    std::size_t size() const { return labels.size(); }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(values).subspan(i * static_cast<std::size_t>(dim),
                                                       static_cast<std::size_t>(dim));
    }
    void add(std::span<const double> row, int label);
};

/// Gains within this margin are treated as equal (tie) or as no decrease.
inline constexpr double kGainEpsilon = 1e-12;

/// CART search over midpoints of consecutive distinct values for the
/// features in `feature_subset`. Ties go to the lowest feature index, then
/// the lowest threshold. Returns nullopt when no split lowers impurity.
std::optional<Split> best_split(const SampleSet& samples, std::span<const int> feature_subset);

struct MaxFeatures {
    enum class Kind : std::uint8_t { Sqrt, All, Count };
    Kind kind = Kind::Sqrt;
    int count = 0;

    static MaxFeatures sqrt() { return {Kind::Sqrt, 0}; }
    static MaxFeatures all() { return {Kind::All, 0}; }
    static MaxFeatures fixed(int n) { return {Kind::Count, n}; }
    static MaxFeatures parse(std::string_view text);
    std::string to_string() const;
    int resolve(int feature_dim) const;
};

struct ForestConfig {
    int n_estimators = 100;
    std::optional<int> max_depth;
    MaxFeatures max_features = MaxFeatures::sqrt();
    bool bootstrap = true;
    std::uint64_t rng_seed = 0;
    int n_threads = 0;  // 0 = hardware concurrency; never affects results

    void validate() const;
};

/// One tree, nodes in pre-order; node 0 is the root.
struct DecisionTree {
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        std::int32_t left = -1;
        std::int32_t right = -1;
        std::int32_t leaf = -1;  // index into leaf_counts for leaves

        bool operator==(const Node&) const = default;
    };

    std::vector<Node> nodes;
    std::vector<ClassCounts> leaf_counts;

    const ClassCounts& leaf_for(std::span<const double> row) const;
    int depth() const;
    bool operator==(const DecisionTree&) const = default;
};

class ForestModel {
public:
    ForestConfig config;
    int feature_dim = 0;
    FusionSignature fusion_signature;
    std::vector<DecisionTree> trees;

    /// Mean over trees of normalized leaf class counts.
    ClassDistribution predict_proba(std::span<const double> row) const;
    int predict(std::span<const double> row) const;
    int max_depth() const;

    bool operator==(const ForestModel&) const;
};

/// Training output; oob_proba holds, per training row, the mean distribution
/// over trees that did not draw that row (full-forest prediction for rows
/// drawn by every tree, or when bootstrap is off).
struct ForestTraining {
    ForestModel model;
    std::vector<ClassDistribution> oob_proba;
};

ForestModel train_forest(const SampleSet& samples, const ForestConfig& config,
                         FusionSignature signature = {});
ForestTraining train_forest_with_oob(const SampleSet& samples, const ForestConfig& config,
                                     FusionSignature signature = {});

/// Lowest-index argmax.
int argmax(std::span<const double> probs);

void write_forest(std::ostream& out, const ForestModel& model);
ForestModel read_forest(std::istream& in);
void save_forest(const std::filesystem::path& path, const ForestModel& model);
ForestModel load_forest(const std::filesystem::path& path);
std::string forest_to_json(const ForestModel& model, bool include_trees = true);

}  // namespace actrec
