#include <CLI11.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <iostream>
#include <sstream>

#include "actrec/errors.hpp"
#include "actrec/pipeline.hpp"

using namespace actrec;

namespace {

struct ForestFlags {
    int n_estimators = 100;
    int max_depth = 0;
    std::string max_features = "sqrt";
    bool no_bootstrap = false;
    int threads = 0;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--n-estimators", n_estimators, "number of trees")->capture_default_str();
        cmd->add_option("--max-depth", max_depth, "depth limit, 0 for none (grow until pure)")->capture_default_str();
        cmd->add_option("--max-features", max_features, "sqrt, all, or a count")->capture_default_str();
        cmd->add_flag("--no-bootstrap", no_bootstrap, "train every tree on the full training set");
        cmd->add_option("--threads", threads, "worker threads, 0 for one per core")->capture_default_str();
    }

    ForestConfig build(std::uint64_t seed) const {
        ForestConfig c;
        c.n_estimators = n_estimators;
        if (max_depth < 0) throw ConfigError("--max-depth must be >= 0");
        if (max_depth > 0) c.max_depth = max_depth;
        c.max_features = MaxFeatures::parse(max_features);
        c.bootstrap = !no_bootstrap;
        c.rng_seed = seed;
        c.n_threads = threads;
        c.validate();
        return c;
    }
};

struct SplitFlags {
    std::string day_split;
    std::string folds;
    int fold = 0;

    void add_to(CLI::App* cmd) {
        auto* d = cmd->add_option("--day-split", day_split, "day-split plan file")->check(CLI::ExistingFile);
        auto* f = cmd->add_option("--folds", folds, "fold plan file")->check(CLI::ExistingFile);
        d->excludes(f);
        cmd->add_option("--fold", fold, "fold index within the fold plan")->capture_default_str();
    }

    SplitSource build() const {
        SplitSource s;
        if (!day_split.empty()) s.day_split = day_split;
        if (!folds.empty()) s.folds = folds;
        s.fold = fold;
        s.validate();
        return s;
    }
};

MacroAverage averaging_of(bool active_only) {
    return active_only ? MacroAverage::ActiveOnly : MacroAverage::AllClasses;
}

std::vector<FeatureSource> parse_sources(const std::vector<std::string>& items) {
    std::vector<FeatureSource> out;
    for (const auto& s : items) out.push_back(FeatureSource::parse(s));
    return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, std::string_view what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !(is >> std::ws).eof())
            throw ConfigError(fmt::format("bad {} entry '{}'", what, item));
        out.push_back(v);
    }
    return out;
}

// Reads effective-config echoes back: their keys follow the report vocabulary, not the flag names.
class EchoConfig : public CLI::ConfigBase {
public:
    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        static const std::set<std::string> global = {"seed", "aggregate", "timestep", "stride"};
        static const std::set<std::string> informational = {"score_source", "dropout_placement"};
        static const std::map<std::string, std::string> renamed = {
            {"batch_windows", "batch"}, {"hidden_units", "hidden"}, {"heatmap_cell", "cell"}};
        std::vector<CLI::ConfigItem> out;
        for (auto item : CLI::ConfigBase::from_config(input)) {
            auto& name = item.name;
            const auto value = item.inputs.size() == 1 ? item.inputs[0] : std::string();
            if (informational.contains(name)) continue;
            if (global.contains(name)) item.parents.clear();
            if (const auto it = renamed.find(name); it != renamed.end()) name = it->second;
            if (name == "bootstrap") {
                name = "no-bootstrap";
                item.inputs = {value == "false" ? "true" : "false"};
            } else if (name == "pad_short_days") {
                name = "no-pad";
                item.inputs = {value == "false" ? "true" : "false"};
            } else if (name == "averaging") {
                name = "active-only";
                item.inputs = {value == "active-only" ? "true" : "false"};
            } else if (name == "class_weighting") {
                item.inputs = {value == "none" ? "false" : "true"};
            } else if (name == "max_depth" && value == "none") {
                item.inputs = {"0"};
            } else if (name == "features") {
                std::vector<std::string> parts;
                for (const auto& in : item.inputs)
                    for (auto& p : CLI::detail::split(in, ',')) parts.push_back(p);
                item.inputs = parts;
            } else if (item.inputs.size() > 1) {
                item.inputs = {CLI::detail::join(item.inputs, ",")};
            }
            std::replace(name.begin(), name.end(), '_', '-');
            out.push_back(std::move(item));
        }
        return out;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"actrec: activity recognition from egocentric photo-streams"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI file with option values, e.g. an effective-config.ini echo");
    app.config_formatter(std::make_shared<EchoConfig>());

    std::uint64_t seed = 42;
    std::string out_dir = ".";
    std::string aggregate = "mean";
    int timestep = 10;
    int stride = 1;
    app.add_option("--seed", seed, "base random seed")->capture_default_str();
    app.add_option("--out-dir", out_dir, "output directory")->capture_default_str();
    app.add_option("--aggregate", aggregate, "per-frame aggregation of window outputs: mean or last")
        ->capture_default_str();
    app.add_option("--timestep", timestep, "window length T")->capture_default_str();
    app.add_option("--stride", stride, "training window stride")->capture_default_str();

    // generate
    GenerateOptions gen;
    std::string label_bias;
    auto* generate_cmd = app.add_subcommand("generate", "write a synthetic manifest and feature files");
    generate_cmd->add_option("--users", gen.spec.n_users)->capture_default_str();
    generate_cmd->add_option("--days-per-user", gen.spec.days_per_user)->capture_default_str();
    generate_cmd->add_option("--frames-per-day", gen.spec.frames_per_day)->capture_default_str();
    generate_cmd->add_option("--persistence", gen.spec.persistence, "self-transition probability")
        ->capture_default_str();
    generate_cmd->add_option("--dim", gen.spec.dim, "embedding dimension")->capture_default_str();
    generate_cmd->add_option("--separation", gen.spec.separation)->capture_default_str();
    generate_cmd->add_option("--noise", gen.spec.emission_noise, "embedding noise sigma")->capture_default_str();
    generate_cmd->add_option("--score-noise", gen.spec.score_noise)->capture_default_str();
    generate_cmd->add_option("--temperature", gen.spec.temperature)->capture_default_str();
    generate_cmd->add_option("--label-bias", label_bias, "21 comma-separated category weights");
    generate_cmd->add_flag("--binary", gen.binary_features, "write binary feature files");

    // split
    SplitOptions split;
    std::string split_mode = "day";
    std::string search = "exhaustive";
    std::string manifest;
    auto* split_cmd = app.add_subcommand("split", "build a day-level split or stratified folds");
    split_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    split_cmd->add_option("--mode", split_mode, "day or folds")->capture_default_str();
    split_cmd->add_option("--test-fraction", split.day.target_test_fraction)->capture_default_str();
    split_cmd->add_option("--tolerance", split.day.tolerance)->capture_default_str();
    split_cmd->add_option("--search", search, "exhaustive or beam")->capture_default_str();
    split_cmd->add_option("--beam-width", split.day.beam_width)->capture_default_str();
    split_cmd->add_option("--k", split.k)->capture_default_str();
    split_cmd->add_option("--validation-fraction", split.validation_fraction)->capture_default_str();

    // train-ensemble
    EnsembleOptions ens;
    std::vector<std::string> features;
    bool active_only = false;
    ForestFlags ens_forest;
    SplitFlags ens_split;
    auto* ens_cmd = app.add_subcommand("train-ensemble", "phase one: per-frame random forest on fused features");
    ens_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    ens_cmd->add_option("--features", features, "role[/dim]:path, in fusion order")->required();
    ens_split.add_to(ens_cmd);
    ens_forest.add_to(ens_cmd);
    ens_cmd->add_flag("--active-only", active_only, "macro averages over categories present in the ground truth only");
    ens_cmd->add_flag("--binary-scores", ens.binary_scores);

    // train-temporal
    TemporalOptions tmp;
    std::string tmp_mode = "recurrent";
    std::string scores, ensemble;
    bool no_pad = false;
    ForestFlags tmp_forest;
    SplitFlags tmp_split;
    auto* tmp_cmd = app.add_subcommand("train-temporal", "phase two: windowed forest or recurrent model");
    tmp_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    tmp_split.add_to(tmp_cmd);
    tmp_cmd->add_option("--mode", tmp_mode, "recurrent or many-to-one")->capture_default_str();
    tmp_cmd->add_option("--features", features, "role[/dim]:path, in fusion order");
    tmp_cmd->add_option("--scores", scores, "cached phase-one score file")->check(CLI::ExistingFile);
    tmp_cmd->add_option("--ensemble", ensemble, "phase-one model applied to --features")->check(CLI::ExistingFile);
    tmp_cmd->add_flag("--no-pad", no_pad, "skip days shorter than T instead of padding them");
    tmp_forest.add_to(tmp_cmd);
    tmp_cmd->add_option("--learning-rate", tmp.recurrent.learning_rate)->capture_default_str();
    tmp_cmd->add_option("--momentum", tmp.recurrent.momentum)->capture_default_str();
    tmp_cmd->add_option("--weight-decay", tmp.recurrent.weight_decay)->capture_default_str();
    tmp_cmd->add_option("--epochs", tmp.recurrent.epochs)->capture_default_str();
    tmp_cmd->add_option("--batch", tmp.recurrent.batch_windows, "windows per batch")->capture_default_str();
    tmp_cmd->add_option("--hidden", tmp.recurrent.hidden_units)->capture_default_str();
    tmp_cmd->add_option("--dropout", tmp.recurrent.dropout_rate)->capture_default_str();
    tmp_cmd->add_flag("--class-weighting", tmp.class_weighting, "inverse-frequency class weights in the loss");
    tmp_cmd->add_flag("--active-only", active_only, "macro averages over categories present in the ground truth only");

    // sweep-trees
    SweepOptions sweep;
    std::string counts;
    std::string sweep_folds;
    ForestFlags sweep_forest;
    auto* sweep_cmd = app.add_subcommand("sweep-trees", "mean validation accuracy per tree count");
    sweep_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    sweep_cmd->add_option("--features", features, "role[/dim]:path, in fusion order")->required();
    sweep_cmd->add_option("--folds", sweep_folds, "fold plan file")->required()->check(CLI::ExistingFile);
    sweep_cmd->add_option("--counts", counts, "comma-separated tree counts")->required();
    sweep_forest.add_to(sweep_cmd);

    // evaluate
    EvaluateOptions eval;
    std::string predictions;
    auto* eval_cmd = app.add_subcommand("evaluate", "metrics report and confusion heatmap for a prediction file");
    eval_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--predictions", predictions)->required()->check(CLI::ExistingFile);
    eval_cmd->add_flag("--active-only", active_only, "macro averages over categories present in the ground truth only");
    eval_cmd->add_option("--cell", eval.heatmap_cell, "heatmap pixels per confusion cell")->capture_default_str();

    // dump-model
    std::string model_path, json_out;
    bool with_trees = false;
    auto* dump_cmd = app.add_subcommand("dump-model", "render a model file as JSON");
    dump_cmd->add_option("model", model_path)->required()->check(CLI::ExistingFile);
    dump_cmd->add_option("--dump-json", json_out, "write the JSON here instead of stdout");
    dump_cmd->add_flag("--trees", with_trees, "include every tree node");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (timestep < 1) throw ConfigError("--timestep must be >= 1");
        if (stride < 1) throw ConfigError("--stride must be >= 1");
        const auto aggregation = parse_aggregation(aggregate);

        if (*generate_cmd) {
            if (!label_bias.empty()) {
                const auto w = parse_list<double>(label_bias, "--label-bias");
                if (w.size() != kNumCategories)
                    throw ConfigError(fmt::format("--label-bias needs {} weights, got {}", kNumCategories, w.size()));
                std::array<double, kNumCategories> a{};
                std::copy(w.begin(), w.end(), a.begin());
                gen.spec.label_bias = a;
            }
            gen.spec.rng_seed = seed;
            gen.spec.validate();
            gen.out_dir = out_dir;
            run_generate(gen, std::cerr);
        } else if (*split_cmd) {
            split.manifest = manifest;
            if (split_mode == "day")
                split.kind = SplitKind::Day;
            else if (split_mode == "folds")
                split.kind = SplitKind::Folds;
            else
                throw ConfigError(fmt::format("--mode must be 'day' or 'folds', got '{}'", split_mode));
            split.day.mode = parse_search_mode(search);
            split.seed = seed;
            split.out_dir = out_dir;
            run_split(split, std::cerr);
        } else if (*ens_cmd) {
            ens.manifest = manifest;
            ens.features = parse_sources(features);
            ens.split = ens_split.build();
            ens.forest = ens_forest.build(seed);
            ens.averaging = averaging_of(active_only);
            ens.out_dir = out_dir;
            run_train_ensemble(ens, std::cerr);
        } else if (*tmp_cmd) {
            tmp.manifest = manifest;
            tmp.split = tmp_split.build();
            tmp.mode = parse_temporal_mode(tmp_mode);
            tmp.timestep = timestep;
            tmp.stride = stride;
            tmp.aggregation = aggregation;
            tmp.pad_short_days = !no_pad;
            tmp.features = parse_sources(features);
            tmp.forest = tmp_forest.build(seed);
            if (!scores.empty()) tmp.scores = scores;
            if (!ensemble.empty()) tmp.ensemble_model = ensemble;
            tmp.recurrent.rng_seed = seed;
            tmp.recurrent.validate();
            tmp.averaging = averaging_of(active_only);
            tmp.out_dir = out_dir;
            if (tmp.mode == TemporalMode::ManyToOneForest && tmp.features.empty())
                throw ConfigError("many-to-one mode needs --features");
            run_train_temporal(tmp, std::cerr);
        } else if (*sweep_cmd) {
            sweep.manifest = manifest;
            sweep.features = parse_sources(features);
            sweep.folds = sweep_folds;
            sweep.tree_counts = parse_list<int>(counts, "--counts");
            sweep.forest = sweep_forest.build(seed);
            sweep.out_dir = out_dir;
            run_sweep_trees(sweep, std::cerr);
        } else if (*eval_cmd) {
            eval.manifest = manifest;
            eval.predictions = predictions;
            eval.averaging = averaging_of(active_only);
            eval.out_dir = out_dir;
            if (eval.heatmap_cell < 1) throw ConfigError("--cell must be >= 1");
            run_evaluate(eval, std::cerr);
        } else if (*dump_cmd) {
            const auto json = dump_model_json(model_path, with_trees);
            if (json_out.empty()) {
                std::cout << json << '\n';
            } else {
                std::ofstream out(json_out, std::ios::binary);
                if (!out) throw DataError(fmt::format("cannot write '{}'", json_out));
                out << json << '\n';
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
