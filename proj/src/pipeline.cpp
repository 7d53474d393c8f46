#include "actrec/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "actrec/errors.hpp"

namespace actrec {

namespace {

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
}

std::string join_sources(const std::vector<FeatureSource>& sources) {
    std::string out;
    for (const auto& s : sources) {
        if (!out.empty()) out += ",";
        out += s.to_string();
    }
    return out;
}

KeyValues forest_config(const ForestConfig& f, std::string_view prefix) {
    const std::string p(prefix);
    return {{p + "n_estimators", std::to_string(f.n_estimators)},
            {p + "max_depth", f.max_depth ? std::to_string(*f.max_depth) : "none"},
            {p + "max_features", f.max_features.to_string()},
            {p + "bootstrap", f.bootstrap ? "true" : "false"},
            {p + "seed", std::to_string(f.rng_seed)}};
}

void append(KeyValues& into, const KeyValues& more) { into.insert(into.end(), more.begin(), more.end()); }

std::string averaging_name(MacroAverage a) { return a == MacroAverage::AllClasses ? "all" : "active-only"; }

void warn(std::ostream& log, std::string_view msg) { log << "warning: " << msg << '\n'; }

SampleSet build_samples(const FeatureMatrix& fused, const DatasetManifest& manifest,
                        const std::vector<std::string>& frame_ids) {
    SampleSet s;
    s.dim = fused.dim();
    s.values.reserve(frame_ids.size() * static_cast<std::size_t>(fused.dim()));
    for (const auto& id : frame_ids) s.add(fused.row(id), to_index(manifest.frame(id).label));
    return s;
}

MetricsReport report_for(const std::vector<FramePrediction>& preds, MacroAverage averaging,
                         KeyValues config) {
    std::vector<int> truth, predicted;
    for (const auto& p : preds) {
        truth.push_back(p.truth);
        predicted.push_back(p.predicted);
    }
    auto report = evaluate(truth, predicted, averaging);
    report.config = std::move(config);
    return report;
}

void write_artifacts(const fs::path& out_dir, const std::string& command, const KeyValues& config,
                     const MetricsReport& report, const std::vector<FramePrediction>& preds) {
    write_effective_config(out_dir / "effective-config.ini", command, config);
    save_report(out_dir / "report.txt", report);
    write_predictions(out_dir / "predictions.tsv", preds);
    std::ofstream pgm(out_dir / "confusion.pgm", std::ios::binary);
    write_confusion_pgm(pgm, report.confusion);
}

void warn_if_degenerate(const SampleSet& samples, std::ostream& log) {
    std::set<int> classes(samples.labels.begin(), samples.labels.end());
    if (classes.size() == 1)
        warn(log, fmt::format("all training frames share the category '{}'; the model will predict it everywhere",
                              activity_name(*classes.begin())));
}

}  // namespace

FeatureSource FeatureSource::parse(std::string_view text) {
    const auto colon = text.find(':');
    if (colon == std::string_view::npos || colon + 1 >= text.size())
        throw ConfigError(fmt::format("feature source must look like role[/dim]:path, got '{}'", text));
    FeatureSource s;
    auto head = text.substr(0, colon);
    s.path = std::string(text.substr(colon + 1));
    const auto slash = head.find('/');
    if (slash != std::string_view::npos) {
        const auto dim_text = std::string(head.substr(slash + 1));
        int dim = 0;
        try {
            std::size_t used = 0;
            dim = std::stoi(dim_text, &used);
            if (used != dim_text.size()) dim = 0;
        } catch (const std::exception&) {
            dim = 0;
        }
        if (dim <= 0) throw ConfigError(fmt::format("bad feature dimension in '{}'", text));
        s.expected_dim = dim;
        head = head.substr(0, slash);
    }
    try {
        s.role = parse_role(head);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return s;
}

std::string FeatureSource::to_string() const {
    std::string head(role_name(role));
    if (expected_dim) head += "/" + std::to_string(*expected_dim);
    return head + ":" + path.string();
}

FeatureMatrix load_fused_features(const DatasetManifest& manifest, const std::vector<FeatureSource>& sources) {
    if (sources.empty()) throw ConfigError("no feature sources given");
    std::vector<FeatureMatrix> parts;
    for (const auto& s : sources) {
        auto m = s.role == FeatureRole::DateTime && s.path == "manifest" ? datetime_matrix(manifest)
                                                                        : load_features(s.path, s.role);
        if (s.expected_dim && *s.expected_dim != m.dim())
            throw DataError(fmt::format("feature file '{}' has dim {}, but the configuration expects dim {}",
                                        s.path.string(), m.dim(), *s.expected_dim));
        parts.push_back(std::move(m));
    }
    std::vector<std::string> ids;
    ids.reserve(manifest.frame_count());
    for (const auto& d : manifest.days())
        for (const auto& f : d.frames) ids.push_back(f.frame_id);
    return fuse(parts, ids);
}

void write_effective_config(const fs::path& path, const std::string& command, const KeyValues& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
    out << '[' << command << "]\n";
    for (const auto& [k, v] : values) out << k << " = " << v << '\n';
}

// ---------------------------------------------------------------- generate

KeyValues GenerateOptions::to_config() const {
    KeyValues kv = {{"users", std::to_string(spec.n_users)},
                    {"days_per_user", std::to_string(spec.days_per_user)},
                    {"frames_per_day", std::to_string(spec.frames_per_day)},
                    {"persistence", fmt::format("{}", spec.persistence)},
                    {"dim", std::to_string(spec.dim)},
                    {"separation", fmt::format("{}", spec.separation)},
                    {"noise", fmt::format("{}", spec.emission_noise)},
                    {"score_noise", fmt::format("{}", spec.score_noise)},
                    {"temperature", fmt::format("{}", spec.temperature)},
                    {"seed", std::to_string(spec.rng_seed)},
                    {"binary", binary_features ? "true" : "false"}};
    if (spec.label_bias) {
        std::string w;
        for (const double v : *spec.label_bias) w += (w.empty() ? "" : ",") + fmt::format("{}", v);
        kv.emplace_back("label_bias", w);
    }
    return kv;
}

GenerateResult run_generate(const GenerateOptions& options, std::ostream& log) {
    const auto stream = generate(options.spec);
    ensure_dir(options.out_dir);
    const std::string ext = options.binary_features ? ".bin" : ".tff";
    GenerateResult r{options.out_dir / "manifest.tsv", options.out_dir / ("embedding" + ext),
                     options.out_dir / ("scores" + ext)};
    save_manifest(r.manifest, stream.manifest);
    save_features(r.embedding, stream.embedding, options.binary_features);
    save_features(r.scores, stream.scores, options.binary_features);
    write_effective_config(options.out_dir / "effective-config.ini", "generate", options.to_config());
    log << fmt::format("generated {} frames over {} days\n", stream.manifest.frame_count(),
                       stream.manifest.days().size());
    return r;
}

// ------------------------------------------------------------------- split

KeyValues SplitOptions::to_config() const {
    KeyValues kv = {{"manifest", manifest.string()}, {"mode", kind == SplitKind::Day ? "day" : "folds"}};
    if (kind == SplitKind::Day) {
        append(kv, {{"test_fraction", fmt::format("{}", day.target_test_fraction)},
                    {"tolerance", fmt::format("{}", day.tolerance)},
                    {"search", std::string(search_mode_name(day.mode))},
                    {"beam_width", std::to_string(day.beam_width)}});
    } else {
        append(kv, {{"k", std::to_string(k)},
                    {"validation_fraction", fmt::format("{}", validation_fraction)},
                    {"seed", std::to_string(seed)}});
    }
    return kv;
}

SplitResult run_split(const SplitOptions& options, std::ostream& log) {
    const auto manifest = load_manifest(options.manifest);
    ensure_dir(options.out_dir);
    SplitResult r;
    if (options.kind == SplitKind::Day) {
        auto plan = optimize_day_split(manifest, options.day);
        r.plan = options.out_dir / "day_split.txt";
        save_day_split(r.plan, plan, manifest);
        log << fmt::format("day split: {} train days, {} test days, objective {} ({} candidates)\n",
                           plan.train_days.size(), plan.test_days.size(), plan.objective,
                           plan.candidates_evaluated);
        r.day_plan = std::move(plan);
    } else {
        auto plan = stratified_folds(manifest, options.k, options.validation_fraction, options.seed);
        r.plan = options.out_dir / "folds.txt";
        save_fold_plan(r.plan, plan);
        for (std::size_t f = 0; f < plan.folds.size(); ++f)
            log << fmt::format("fold {}: train {} val {} test {}\n", f, plan.folds[f].train.size(),
                               plan.folds[f].validation.size(), plan.folds[f].test.size());
        r.fold_plan = std::move(plan);
    }
    write_effective_config(options.out_dir / "effective-config.ini", "split", options.to_config());
    return r;
}

// -------------------------------------------------------------- split source

void SplitSource::validate() const {
    if (day_split.has_value() == folds.has_value())
        throw ConfigError("exactly one split source is required: a day-split plan or a fold plan");
    if (fold < 0) throw ConfigError("fold index must be >= 0");
}

KeyValues SplitSource::to_config() const {
    if (day_split) return {{"day_split", day_split->string()}};
    return {{"folds", folds->string()}, {"fold", std::to_string(fold)}};
}

TrainTestFrames resolve_split(const DatasetManifest& manifest, const SplitSource& source) {
    source.validate();
    TrainTestFrames out;
    if (source.day_split) {
        const auto plan = load_day_split(*source.day_split);
        const std::set<DayKey> train(plan.train_days.begin(), plan.train_days.end());
        const std::set<DayKey> test(plan.test_days.begin(), plan.test_days.end());
        for (const auto& k : test)
            if (train.contains(k))
                throw DataError(fmt::format("day '{}/{}' is in both train and test", k.user_id, k.day_id));
        std::size_t matched = 0;
        for (const auto& day : manifest.days()) {
            const bool in_train = train.contains(day.key());
            const bool in_test = test.contains(day.key());
            if (!in_train && !in_test) continue;
            ++matched;
            for (const auto& f : day.frames) (in_train ? out.train : out.test).push_back(f.frame_id);
        }
        if (matched != train.size() + test.size())
            throw DataError("day split references days that are not in the manifest");
        return out;
    }
    const auto plan = load_fold_plan(*source.folds);
    if (static_cast<std::size_t>(source.fold) >= plan.folds.size())
        throw ConfigError(fmt::format("fold {} requested, plan has {}", source.fold, plan.folds.size()));
    const auto& fold = plan.folds[static_cast<std::size_t>(source.fold)];
    std::map<std::string, int> role;
    for (const auto& id : fold.train) role[id] = 0;
    for (const auto& id : fold.validation) role[id] = 1;
    for (const auto& id : fold.test) role[id] = 2;
    for (const auto& [id, r] : role)
        if (!manifest.contains(id)) throw DataError(fmt::format("fold plan references unknown frame '{}'", id));
    for (const auto& day : manifest.days())
        for (const auto& f : day.frames) {
            const auto it = role.find(f.frame_id);
            if (it == role.end()) continue;
            (it->second == 0 ? out.train : it->second == 1 ? out.validation : out.test).push_back(f.frame_id);
        }
    return out;
}

// ---------------------------------------------------------------- ensemble

KeyValues EnsembleOptions::to_config() const {
    KeyValues kv = {{"manifest", manifest.string()}, {"features", join_sources(features)}};
    append(kv, split.to_config());
    append(kv, forest_config(forest, ""));
    append(kv, {{"averaging", averaging_name(averaging)}, {"score_source", "oob-for-train"}});
    return kv;
}

EnsembleResult run_train_ensemble(const EnsembleOptions& options, std::ostream& log) {
    const auto manifest = load_manifest(options.manifest);
    const auto split = resolve_split(manifest, options.split);
    if (split.train.size() < 2) throw DataError("training split has fewer than 2 frames");
    if (split.test.empty()) throw DataError("test split is empty");
    const auto fused = load_fused_features(manifest, options.features);

    const auto samples = build_samples(fused, manifest, split.train);
    warn_if_degenerate(samples, log);
    auto training = train_forest_with_oob(samples, options.forest, fused.signature());
    ensure_dir(options.out_dir);

    EnsembleResult r;
    r.model = std::move(training.model);
    for (const auto& id : split.test)
        r.predictions.push_back({id, r.model.predict(fused.row(id)), to_index(manifest.frame(id).label)});

    // Cached phase-one scores for every frame.
    std::map<std::string, std::size_t> train_pos;
    for (std::size_t i = 0; i < split.train.size(); ++i) train_pos.emplace(split.train[i], i);
    FeatureMatrix scores(FeatureRole::Score, kNumCategories);
    for (const auto& id : fused.ids()) {
        const auto it = train_pos.find(id);
        scores.add_row(id, it != train_pos.end() ? training.oob_proba[it->second] : r.model.predict_proba(fused.row(id)));
    }

    const auto config = options.to_config();
    r.report = report_for(r.predictions, options.averaging, config);
    r.model_path = options.out_dir / "ensemble.tfrf";
    r.scores_path = options.out_dir / (options.binary_scores ? "ensemble_scores.bin" : "ensemble_scores.tff");
    save_forest(r.model_path, r.model);
    save_features(r.scores_path, scores, options.binary_scores);
    write_artifacts(options.out_dir, "train-ensemble", config, r.report, r.predictions);
    log << fmt::format("ensemble: {} trees, realized max depth {}, test accuracy {:.4f}\n",
                       r.model.trees.size(), r.model.max_depth(), r.report.accuracy);
    return r;
}

// ---------------------------------------------------------------- temporal

TemporalMode parse_temporal_mode(std::string_view text) {
    if (text == "recurrent") return TemporalMode::Recurrent;
    if (text == "many-to-one" || text == "many_to_one_forest") return TemporalMode::ManyToOneForest;
    throw ConfigError(fmt::format("temporal mode must be 'recurrent' or 'many-to-one', got '{}'", text));
}

std::string_view temporal_mode_name(TemporalMode m) {
    return m == TemporalMode::Recurrent ? "recurrent" : "many-to-one";
}

KeyValues TemporalOptions::to_config() const {
    KeyValues kv = {{"manifest", manifest.string()}};
    append(kv, split.to_config());
    append(kv, {{"mode", std::string(temporal_mode_name(mode))},
                {"timestep", std::to_string(timestep)},
                {"stride", std::to_string(stride)},
                {"aggregate", std::string(aggregation_name(aggregation))},
                {"pad_short_days", pad_short_days ? "true" : "false"},
                {"averaging", averaging_name(averaging)}});
    if (!features.empty()) kv.emplace_back("features", join_sources(features));
    if (mode == TemporalMode::ManyToOneForest) {
        append(kv, forest_config(forest, ""));
    } else {
        if (scores) kv.emplace_back("scores", scores->string());
        if (ensemble_model) kv.emplace_back("ensemble", ensemble_model->string());
        append(kv, {{"learning_rate", fmt::format("{}", recurrent.learning_rate)},
                    {"momentum", fmt::format("{}", recurrent.momentum)},
                    {"weight_decay", fmt::format("{}", recurrent.weight_decay)},
                    {"epochs", std::to_string(recurrent.epochs)},
                    {"batch_windows", std::to_string(recurrent.batch_windows)},
                    {"hidden_units", std::to_string(recurrent.hidden_units)},
                    {"dropout", fmt::format("{}", recurrent.dropout_rate)},
                    {"dropout_placement", "input+output"},
                    {"class_weighting", class_weighting ? "inverse-frequency" : "none"},
                    {"seed", std::to_string(recurrent.rng_seed)}});
    }
    return kv;
}

namespace {

std::vector<const DaySegment*> days_of(const DatasetManifest& manifest, const std::vector<std::string>& frames) {
    std::set<DayKey> keys;
    for (const auto& id : frames) {
        const auto& f = manifest.frame(id);
        keys.insert({f.user_id, f.day_id});
    }
    std::vector<const DaySegment*> out;
    for (const auto& d : manifest.days())
        if (keys.contains(d.key())) out.push_back(&d);
    return out;
}

std::vector<Window> training_windows(const std::vector<const DaySegment*>& days, const TemporalOptions& o) {
    std::vector<Window> out;
    for (const auto* d : days) {
        if (!o.pad_short_days && static_cast<int>(d->size()) < o.timestep) continue;
        auto w = sliding_windows(*d, o.timestep, o.stride);
        out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    return out;
}

FeatureMatrix phase_one_scores(const DatasetManifest& manifest, const TemporalOptions& o) {
    if (o.scores && o.ensemble_model) throw ConfigError("give either cached scores or an ensemble model, not both");
    if (o.scores) return load_features(*o.scores, FeatureRole::Score);
    if (!o.ensemble_model) throw ConfigError("recurrent mode needs ensemble scores (--scores) or an ensemble model");
    const auto model = load_forest(*o.ensemble_model);
    const auto fused = load_fused_features(manifest, o.features);
    if (fused.dim() != model.feature_dim)
        throw DataError(fmt::format("ensemble expects features of dim {}, fused features have dim {}",
                                    model.feature_dim, fused.dim()));
    FeatureMatrix scores(FeatureRole::Score, kNumCategories);
    for (std::size_t i = 0; i < fused.rows(); ++i) scores.add_row(fused.ids()[i], model.predict_proba(fused.row_at(i)));
    return scores;
}

}  // namespace

TemporalResult run_train_temporal(const TemporalOptions& o, std::ostream& log) {
    if (o.timestep < 1) throw ConfigError(fmt::format("timestep must be >= 1, got {}", o.timestep));
    if (o.stride < 1) throw ConfigError(fmt::format("stride must be >= 1, got {}", o.stride));
    const auto manifest = load_manifest(o.manifest);
    const auto split = resolve_split(manifest, o.split);
    const auto train_days = days_of(manifest, split.train);
    const auto test_days = days_of(manifest, split.test);
    if (split.test.empty()) throw DataError("test split is empty");
    if (!o.pad_short_days) {
        std::size_t longest = 0;
        for (const auto& d : manifest.days()) longest = std::max(longest, d.size());
        if (static_cast<std::size_t>(o.timestep) > longest)
            throw DataError(fmt::format("timestep {} exceeds the longest day ({} frames) and padding is disabled",
                                        o.timestep, longest));
    }

    const auto windows = training_windows(train_days, o);
    if (windows.empty()) throw DataError("no training windows");
    TemporalResult r;
    r.training_windows = windows.size();
    ensure_dir(o.out_dir);
    const auto config = o.to_config();
    const std::set<std::string> test_set(split.test.begin(), split.test.end());

    if (o.mode == TemporalMode::ManyToOneForest) {
        const auto fused = load_fused_features(manifest, o.features);
        SampleSet samples;
        samples.dim = fused.dim() * o.timestep;
        for (const auto& w : windows)
            samples.add(concat_window_features(w, fused), to_index(many_to_one_label(w, manifest)));
        warn_if_degenerate(samples, log);
        FusionSignature sig;
        for (int t = 0; t < o.timestep; ++t) sig.insert(sig.end(), fused.signature().begin(), fused.signature().end());
        r.forest = train_forest(samples, o.forest, sig);
        // Each test frame is scored by the (padded) window ending at it.
        for (const auto* d : test_days)
            for (const auto& w : trailing_windows(*d, o.timestep)) {
                const auto& last = w.frame_ids.back();
                r.predictions.push_back({last, r.forest->predict(concat_window_features(w, fused)),
                                         to_index(manifest.frame(last).label)});
            }
        r.model_path = o.out_dir / "temporal.tfrf";
        save_forest(r.model_path, *r.forest);
    } else {
        const auto scores = phase_one_scores(manifest, o);
        auto to_inputs = [&](const Window& w) {
            Sequence seq;
            for (const auto& id : w.frame_ids) {
                const auto row = scores.row(id);
                seq.emplace_back(row.begin(), row.end());
            }
            return seq;
        };
        std::vector<TrainingWindow> train;
        train.reserve(windows.size());
        std::vector<Activity> train_labels;
        for (const auto& w : windows) {
            TrainingWindow tw{to_inputs(w), {}};
            for (const auto& id : w.frame_ids) tw.targets.push_back(to_index(manifest.frame(id).label));
            train.push_back(std::move(tw));
        }
        for (const auto& id : split.train) train_labels.push_back(manifest.frame(id).label);
        TrainConfig tc = o.recurrent;
        if (o.class_weighting) {
            const auto counts = label_counts(train_labels);
            const auto w = class_weights(counts);
            tc.class_weights.assign(w.begin(), w.end());
        }
        auto trained = train_recurrent(train, tc);
        for (const auto& e : trained.log)
            log << fmt::format("epoch {} loss {:.6f} train_acc {:.4f}\n", e.epoch, e.mean_loss, e.train_accuracy);

        std::vector<WindowPrediction> window_preds;
        for (const auto* d : test_days) {
            const auto eval_windows =
                o.aggregation == Aggregation::Mean ? sliding_windows(*d, o.timestep, 1) : trailing_windows(*d, o.timestep);
            std::vector<Sequence> inputs;
            for (const auto& w : eval_windows) inputs.push_back(to_inputs(w));
            auto outputs = forward_batch(trained.model, inputs);
            for (std::size_t k = 0; k < eval_windows.size(); ++k)
                window_preds.emplace_back(eval_windows[k], std::move(outputs[k]));
        }
        const auto per_frame = o.aggregation == Aggregation::Mean ? aggregate_per_frame(window_preds, split.test)
                                                                  : aggregate_last(window_preds, split.test);
        for (const auto* d : test_days)
            for (const auto& f : d->frames)
                r.predictions.push_back({f.frame_id, argmax(per_frame.at(f.frame_id)), to_index(f.label)});

        r.log = trained.log;
        r.model_path = o.out_dir / "recurrent.tfrc";
        save_recurrent(r.model_path, trained.model);
        std::ofstream tl(o.out_dir / "train-log.tsv", std::ios::binary);
        tl << "epoch\tmean_loss\ttrain_acc\n";
        for (const auto& e : trained.log) tl << fmt::format("{}\t{}\t{}\n", e.epoch, e.mean_loss, e.train_accuracy);
        r.recurrent = std::move(trained.model);
    }

    r.report = report_for(r.predictions, o.averaging, config);
    write_artifacts(o.out_dir, "train-temporal", config, r.report, r.predictions);
    log << fmt::format("{} T={}: {} training windows, test accuracy {:.4f}\n", temporal_mode_name(o.mode),
                       o.timestep, r.training_windows, r.report.accuracy);
    return r;
}

// ------------------------------------------------------------------- sweep

KeyValues SweepOptions::to_config() const {
    std::string counts;
    for (const int c : tree_counts) counts += (counts.empty() ? "" : ",") + std::to_string(c);
    KeyValues kv = {{"manifest", manifest.string()},
                    {"features", join_sources(features)},
                    {"folds", folds.string()},
                    {"counts", counts}};
    append(kv, forest_config(forest, ""));
    return kv;
}

std::vector<SweepRow> run_sweep_trees(const SweepOptions& options, std::ostream& log) {
    if (options.tree_counts.empty()) throw ConfigError("tree count list is empty");
    std::vector<int> counts;
    for (const int c : options.tree_counts) {
        if (c <= 0) throw ConfigError(fmt::format("tree counts must be positive, got {}", c));
        if (std::find(counts.begin(), counts.end(), c) != counts.end()) {
            warn(log, fmt::format("duplicate tree count {} ignored", c));
            continue;
        }
        counts.push_back(c);
    }
    const auto manifest = load_manifest(options.manifest);
    const auto plan = load_fold_plan(options.folds);
    const auto fused = load_fused_features(manifest, options.features);

    std::vector<SweepRow> rows;
    for (const int n : counts) {
        SweepRow row{n, 0.0, {}};
        for (std::size_t f = 0; f < plan.folds.size(); ++f) {
            SplitSource src{std::nullopt, options.folds, static_cast<int>(f)};
            const auto split = resolve_split(manifest, src);
            if (split.validation.empty()) throw DataError(fmt::format("fold {} has no validation frames", f));
            auto cfg = options.forest;
            cfg.n_estimators = n;
            const auto model = train_forest(build_samples(fused, manifest, split.train), cfg, fused.signature());
            std::size_t correct = 0;
            for (const auto& id : split.validation)
                if (model.predict(fused.row(id)) == to_index(manifest.frame(id).label)) ++correct;
            row.per_fold.push_back(static_cast<double>(correct) / static_cast<double>(split.validation.size()));
        }
        for (const double a : row.per_fold) row.mean_validation_accuracy += a;
        row.mean_validation_accuracy /= static_cast<double>(row.per_fold.size());
        log << fmt::format("trees {}: mean validation accuracy {:.4f}\n", n, row.mean_validation_accuracy);
        rows.push_back(std::move(row));
    }

    ensure_dir(options.out_dir);
    std::ofstream out(options.out_dir / "sweep.tsv", std::ios::binary);
    out << "n_estimators\tmean_validation_accuracy";
    for (std::size_t f = 0; f < plan.folds.size(); ++f) out << "\tfold" << f;
    out << '\n';
    for (const auto& row : rows) {
        out << row.n_estimators << '\t' << fmt::format("{:.6f}", row.mean_validation_accuracy);
        for (const double a : row.per_fold) out << '\t' << fmt::format("{:.6f}", a);
        out << '\n';
    }
    write_effective_config(options.out_dir / "effective-config.ini", "sweep-trees", options.to_config());
    return rows;
}

// ---------------------------------------------------------------- evaluate

KeyValues EvaluateOptions::to_config() const {
    return {{"manifest", manifest.string()},
            {"predictions", predictions.string()},
            {"averaging", averaging_name(averaging)},
            {"heatmap_cell", std::to_string(heatmap_cell)}};
}

MetricsReport run_evaluate(const EvaluateOptions& options, std::ostream& log) {
    const auto manifest = load_manifest(options.manifest);
    std::vector<int> truth, predicted;
    for (const auto& [id, label] : read_predictions(options.predictions)) {
        truth.push_back(to_index(manifest.frame(id).label));
        predicted.push_back(label);
    }
    auto report = evaluate(truth, predicted, options.averaging);
    report.config = options.to_config();
    ensure_dir(options.out_dir);
    save_report(options.out_dir / "report.txt", report);
    std::ofstream pgm(options.out_dir / "confusion.pgm", std::ios::binary);
    write_confusion_pgm(pgm, report.confusion, options.heatmap_cell);
    write_effective_config(options.out_dir / "effective-config.ini", "evaluate", options.to_config());
    log << fmt::format("evaluated {} frames, accuracy {:.4f}, macro F1 {:.4f}\n", truth.size(), report.accuracy,
                       report.macro_f1);
    return report;
}

void write_predictions(const fs::path& path, const std::vector<FramePrediction>& predictions) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
    out << "frame_id\tpredicted\ttrue\n";
    for (const auto& p : predictions)
        out << p.frame_id << '\t' << activity_name(p.predicted) << '\t' << activity_name(p.truth) << '\n';
}

std::vector<std::pair<std::string, int>> read_predictions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open predictions '{}'", path.string()));
    std::vector<std::pair<std::string, int>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#' || line.rfind("frame_id\t", 0) == 0) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError(fmt::format("{}:{}: expected frame_id<TAB>predicted", path.string(), line_no));
        const auto end = line.find('\t', tab + 1);
        const auto name = line.substr(tab + 1, end == std::string::npos ? std::string::npos : end - tab - 1);
        const auto label = parse_activity(name);
        if (!label) throw DataError(fmt::format("{}:{}: unknown label '{}'", path.string(), line_no, name));
        out.emplace_back(line.substr(0, tab), to_index(*label));
    }
    if (out.empty()) throw DataError(fmt::format("{}: no predictions", path.string()));
    return out;
}

std::string dump_model_json(const fs::path& path, bool include_trees) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open model '{}'", path.string()));
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    in.seekg(0);
    const std::string_view m(magic.data(), 4);
    if (m == "TFRF") return forest_to_json(read_forest(in), include_trees);
    if (m == "TFRC") return recurrent_to_json(read_recurrent(in));
    throw DataError(fmt::format("'{}' is not a forest (TFRF) or recurrent (TFRC) model", path.string()));
}

}  // namespace actrec
