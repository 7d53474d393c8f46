#pragma once

// End-to-end commands shared by the CLI and the integration tests. Every
// command is deterministic in its options and writes its artifacts, plus an
// effective-config.ini echo, into out_dir.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "actrec/domain.hpp"
#include "actrec/features.hpp"
#include "actrec/forest.hpp"
#include "actrec/metrics.hpp"
#include "actrec/recurrent.hpp"
#include "actrec/splits.hpp"
#include "actrec/synth.hpp"
#include "actrec/temporal.hpp"

namespace actrec {

namespace fs = std::filesystem;

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// A feature file with its role and, optionally, the dimension the caller
/// expects it to have. Text form: role[/dim]:path.
struct FeatureSource {
    FeatureRole role = FeatureRole::Embedding;
    fs::path path;
    std::optional<int> expected_dim;

    static FeatureSource parse(std::string_view text);
    std::string to_string() const;
};

/// Loads and fuses the sources (in order) over all manifest frames.
FeatureMatrix load_fused_features(const DatasetManifest& manifest, const std::vector<FeatureSource>& sources);

void write_effective_config(const fs::path& path, const std::string& command, const KeyValues& values);

struct GenerateOptions {
    StreamSpec spec;
    fs::path out_dir = ".";
    bool binary_features = false;

    KeyValues to_config() const;
};

struct GenerateResult {
    fs::path manifest;
    fs::path embedding;
    fs::path scores;
};

GenerateResult run_generate(const GenerateOptions& options, std::ostream& log);

enum class SplitKind { Day, Folds };

struct SplitOptions {
    fs::path manifest;
    SplitKind kind = SplitKind::Day;
    DaySplitOptions day;
    int k = 10;
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;
    fs::path out_dir = ".";

    KeyValues to_config() const;
};

struct SplitResult {
    fs::path plan;
    std::optional<DaySplitPlan> day_plan;
    std::optional<FoldPlan> fold_plan;
};

SplitResult run_split(const SplitOptions& options, std::ostream& log);

/// Exactly one split source: a day-split plan, or a fold plan plus fold index.
struct SplitSource {
    std::optional<fs::path> day_split;
    std::optional<fs::path> folds;
    int fold = 0;

    void validate() const;
    KeyValues to_config() const;
};

struct TrainTestFrames {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
};

/// Resolves a split source to frame id lists in canonical manifest order.
TrainTestFrames resolve_split(const DatasetManifest& manifest, const SplitSource& source);

struct EnsembleOptions {
    fs::path manifest;
    std::vector<FeatureSource> features;
    SplitSource split;
    ForestConfig forest;
    MacroAverage averaging = MacroAverage::AllClasses;
    fs::path out_dir = ".";
    bool binary_scores = false;

    KeyValues to_config() const;
};

struct FramePrediction {
    std::string frame_id;
    int predicted = 0;
    int truth = 0;
};

struct EnsembleResult {
    ForestModel model;
    MetricsReport report;
    std::vector<FramePrediction> predictions;
    fs::path model_path;
    fs::path scores_path;
};

/// Phase one: fuses features, trains the forest on the training frames,
/// evaluates per frame on the test frames, and caches class scores for
/// every frame (out-of-bag scores for training frames).
EnsembleResult run_train_ensemble(const EnsembleOptions& options, std::ostream& log);

enum class TemporalMode { ManyToOneForest, Recurrent };
TemporalMode parse_temporal_mode(std::string_view text);
std::string_view temporal_mode_name(TemporalMode m);

struct TemporalOptions {
    fs::path manifest;
    SplitSource split;
    TemporalMode mode = TemporalMode::Recurrent;
    int timestep = 10;
    int stride = 1;
    Aggregation aggregation = Aggregation::Mean;
    bool pad_short_days = true;
    // many-to-one forest
    std::vector<FeatureSource> features;
    ForestConfig forest;
    // recurrent: cached phase-one scores, or an ensemble model applied to `features`
    std::optional<fs::path> scores;
    std::optional<fs::path> ensemble_model;
    TrainConfig recurrent;
    bool class_weighting = false;
    MacroAverage averaging = MacroAverage::AllClasses;
    fs::path out_dir = ".";

    KeyValues to_config() const;
};

struct TemporalResult {
    MetricsReport report;
    std::vector<FramePrediction> predictions;
    std::size_t training_windows = 0;
    std::optional<ForestModel> forest;
    std::optional<RecurrentModel> recurrent;
    std::vector<EpochLog> log;
    fs::path model_path;
};

TemporalResult run_train_temporal(const TemporalOptions& options, std::ostream& log);

struct SweepOptions {
    fs::path manifest;
    std::vector<FeatureSource> features;
    fs::path folds;
    std::vector<int> tree_counts;
    ForestConfig forest;
    fs::path out_dir = ".";

    KeyValues to_config() const;
};

struct SweepRow {
    int n_estimators = 0;
    double mean_validation_accuracy = 0.0;
    std::vector<double> per_fold;
};

std::vector<SweepRow> run_sweep_trees(const SweepOptions& options, std::ostream& log);

struct EvaluateOptions {
    fs::path manifest;
    fs::path predictions;
    MacroAverage averaging = MacroAverage::AllClasses;
    fs::path out_dir = ".";
    int heatmap_cell = 8;

    KeyValues to_config() const;
};

MetricsReport run_evaluate(const EvaluateOptions& options, std::ostream& log);

void write_predictions(const fs::path& path, const std::vector<FramePrediction>& predictions);
std::vector<std::pair<std::string, int>> read_predictions(const fs::path& path);

/// JSON rendering of a TFRF or TFRC model file.
std::string dump_model_json(const fs::path& path, bool include_trees);

}  // namespace actrec
