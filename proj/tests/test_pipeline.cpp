#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include <json.hpp>

#include "actrec/errors.hpp"
#include "actrec/pipeline.hpp"
#include "helpers.hpp"

using namespace actrec;
using testutil::scratch;
using testutil::slurp;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
    const auto cmd = fmt::format("\"{}\" {} > \"{}\" 2>&1", ACTREC_CLI_PATH, args, log.string());
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

GenerateResult small_stream(const fs::path& dir, StreamSpec spec) {
    GenerateOptions g;
    g.spec = spec;
    g.out_dir = dir;
    std::ostringstream log;
    return run_generate(g, log);
}

fs::path day_split_of(const fs::path& manifest, const fs::path& dir, double target = 0.3) {
    SplitOptions s;
    s.manifest = manifest;
    s.day.target_test_fraction = target;
    s.out_dir = dir;
    std::ostringstream log;
    return run_split(s, log).plan;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("feature source syntax") {
    const auto a = FeatureSource::parse("score/21:run/scores.tff");
    CHECK(a.role == FeatureRole::Score);
    CHECK(a.expected_dim == 21);
    CHECK(a.path == "run/scores.tff");
    CHECK(a.to_string() == "score/21:run/scores.tff");
    CHECK(FeatureSource::parse("embedding:x").expected_dim == std::nullopt);
    CHECK_THROWS_AS(FeatureSource::parse("embedding"), ConfigError);
    CHECK_THROWS_AS(FeatureSource::parse("pixels:x"), ConfigError);
    CHECK_THROWS_AS(FeatureSource::parse("score/zero:x"), ConfigError);
}

TEST_CASE("day split plan matches its recomputed objective") {
    const auto dir = scratch("split_day");
    StreamSpec spec;
    spec.n_users = 2;
    spec.frames_per_day = 60;
    const auto g = small_stream(dir, spec);
    REQUIRE(run_cli(fmt::format("split --manifest {} --mode day --test-fraction 0.3 --out-dir {}", g.manifest.string(),
                                (dir / "plan").string()),
                    dir / "log.txt") == 0);
    const auto plan = load_day_split(dir / "plan" / "day_split.txt");
    const auto manifest = load_manifest(g.manifest);
    CHECK(plan.train_days.size() + plan.test_days.size() == 10);
    CHECK(std::abs(split_objective(manifest, plan.test_days) - plan.objective) <= 1e-12);
    CHECK(fs::exists(dir / "plan" / "effective-config.ini"));
}

TEST_CASE("fold split gives ten valid folds") {
    const auto dir = scratch("split_folds");
    StreamSpec spec;
    spec.label_bias = std::array<double, 21>{};
    spec.label_bias->fill(0.0);
    for (const int c : {0, 5, 11}) (*spec.label_bias)[static_cast<std::size_t>(c)] = 1.0;
    const auto g = small_stream(dir, spec);
    REQUIRE(run_cli(fmt::format("--seed 3 split --manifest {} --mode folds --k 10 --out-dir {}", g.manifest.string(),
                                dir.string()),
                    dir / "log.txt") == 0);
    const auto plan = load_fold_plan(dir / "folds.txt");
    REQUIRE(plan.folds.size() == 10);
    const auto manifest = load_manifest(g.manifest);
    for (const auto& f : plan.folds) {
        CHECK(f.train.size() + f.validation.size() + f.test.size() == manifest.frame_count());
        CHECK_FALSE(f.validation.empty());
    }
}

TEST_CASE("usage errors exit with 1") {
    const auto dir = scratch("usage");
    CHECK(run_cli(fmt::format("split --manifest {}", (dir / "missing.tsv").string()), dir / "a.txt") == 1);
    CHECK(run_cli("split", dir / "b.txt") == 1);
    CHECK(run_cli(fmt::format("generate --persistence 1.2 --out-dir {}", dir.string()), dir / "c.txt") == 1);
    CHECK(slurp(dir / "c.txt").find("persistence") != std::string::npos);
    CHECK(run_cli(fmt::format("generate --frames-per-day 0 --out-dir {}", dir.string()), dir / "d.txt") == 1);
    CHECK(run_cli("", dir / "e.txt") == 1);
    CHECK(run_cli("--help", dir / "f.txt") == 0);
    CHECK_FALSE(fs::exists(dir / "manifest.tsv"));
}

TEST_CASE("data errors exit with 2") {
    const auto dir = scratch("data_error");
    std::ofstream(dir / "bad.tsv") << "frame_id\tuser_id\tday_id\tseq_index\ttimestamp\tweekday\tlabel\n"
                                      "a\tu\td\t0\t1\t0\tTV\nb\tu\td\t2\t2\t0\tTV\n";
    CHECK(run_cli(fmt::format("split --manifest {} --out-dir {}", (dir / "bad.tsv").string(), dir.string()),
                  dir / "log.txt") == 2);
    CHECK(slurp(dir / "log.txt").find("gap in seq_index at index 1") != std::string::npos);
}

TEST_CASE("generate is byte-stable across runs") {
    const auto dir = scratch("generate_twice");
    for (const char* run : {"a", "b"})
        REQUIRE(run_cli(fmt::format("--seed 42 generate --frames-per-day 40 --out-dir {}", (dir / run).string()),
                        dir / "log.txt") == 0);
    for (const char* file : {"manifest.tsv", "embedding.tff", "scores.tff", "effective-config.ini"})
        CHECK(slurp(dir / "a" / file) == slurp(dir / "b" / file));
    CHECK_FALSE(slurp(dir / "a" / "manifest.tsv").empty());
}

TEST_CASE("effective-config echoes replay through --config") {
    const auto dir = scratch("config_replay");
    const auto d = dir.string();
    REQUIRE(run_cli(fmt::format("--seed 9 generate --frames-per-day 30 --days-per-user 3 --out-dir {}/data", d),
                    dir / "log.txt") == 0);
    REQUIRE(run_cli(fmt::format("split --manifest {0}/data/manifest.tsv --test-fraction 0.4 --tolerance 0.2 "
                                "--out-dir {0}/split", d),
                    dir / "log.txt") == 0);
    const auto ensemble = fmt::format(
        "--seed 4 train-ensemble --manifest {0}/data/manifest.tsv --features embedding:{0}/data/embedding.tff "
        "--features datetime:manifest --day-split {0}/split/day_split.txt --n-estimators 7 --max-depth 6 "
        "--no-bootstrap --active-only --out-dir {0}/ens",
        d);
    REQUIRE(run_cli(ensemble, dir / "log.txt") == 0);
    const auto temporal = fmt::format(
        "--seed 4 --timestep 4 --aggregate last train-temporal --manifest {0}/data/manifest.tsv "
        "--day-split {0}/split/day_split.txt --scores {0}/ens/ensemble_scores.tff --epochs 2 --hidden 3 "
        "--batch 5 --class-weighting --no-pad --out-dir {0}/rec",
        d);
    REQUIRE(run_cli(temporal, dir / "log.txt") == 0);
    for (const char* sub : {"ens", "rec"}) {
        const std::string cmd = sub == std::string("ens") ? "train-ensemble" : "train-temporal";
        REQUIRE(run_cli(fmt::format("--config {0}/{1}/effective-config.ini --out-dir {0}/{1}_replay {2}", d, sub, cmd),
                        dir / "log.txt") == 0);
        CHECK(slurp(dir / sub / "report.txt") == slurp(dir / (std::string(sub) + "_replay") / "report.txt"));
        CHECK(slurp(dir / sub / "effective-config.ini") ==
              slurp(dir / (std::string(sub) + "_replay") / "effective-config.ini"));
    }
    CHECK(slurp(dir / "rec" / "recurrent.tfrc") == slurp(dir / "rec_replay" / "recurrent.tfrc"));
}

TEST_CASE("low-noise ensemble is accurate and writes its artifacts") {
    const auto dir = scratch("ensemble");
    StreamSpec spec;
    spec.frames_per_day = 80;
    spec.emission_noise = 0.1;
    const auto g = small_stream(dir, spec);
    EnsembleOptions o;
    o.manifest = g.manifest;
    o.features = {FeatureSource::parse("embedding/8:" + g.embedding.string())};
    o.split.day_split = day_split_of(g.manifest, dir);
    o.forest.n_estimators = 30;
    o.out_dir = dir / "ens";
    std::ostringstream log;
    const auto r = run_train_ensemble(o, log);
    CHECK(r.report.accuracy >= 0.9);
    for (const char* f : {"ensemble.tfrf", "ensemble_scores.tff", "report.txt", "predictions.tsv", "confusion.pgm",
                          "effective-config.ini"})
        CHECK(fs::exists(o.out_dir / f));
    const auto report = slurp(o.out_dir / "report.txt");
    CHECK(report.find("n_estimators=30") != std::string::npos);
    CHECK(report.find("bootstrap=true") != std::string::npos);
    CHECK(load_forest(r.model_path) == r.model);

    const auto scores = load_features(r.scores_path, FeatureRole::Score);
    CHECK(scores.rows() == load_manifest(g.manifest).frame_count());

    // evaluate reproduces the report's metrics from predictions.tsv
    EvaluateOptions e;
    e.manifest = g.manifest;
    e.predictions = o.out_dir / "predictions.tsv";
    e.out_dir = dir / "eval";
    const auto again = run_evaluate(e, log);
    CHECK(again.accuracy == r.report.accuracy);
    CHECK(again.macro_f1 == r.report.macro_f1);
    CHECK(fs::exists(e.out_dir / "confusion.pgm"));

    const auto j = nlohmann::json::parse(dump_model_json(r.model_path, false));
    CHECK(j["n_estimators"] == 30);
    REQUIRE(run_cli(fmt::format("dump-model {} --dump-json {}", r.model_path.string(), (dir / "m.json").string()),
                    dir / "log.txt") == 0);
    CHECK(nlohmann::json::parse(slurp(dir / "m.json"))["feature_dim"] == 8);
}

TEST_CASE("single-category training warns and predicts that category") {
    const auto dir = scratch("degenerate");
    StreamSpec spec;
    spec.frames_per_day = 30;
    spec.label_bias = std::array<double, 21>{};
    (*spec.label_bias)[static_cast<std::size_t>(to_index(Activity::Cooking))] = 1.0;
    const auto g = small_stream(dir, spec);
    EnsembleOptions o;
    o.manifest = g.manifest;
    o.features = {FeatureSource::parse("embedding:" + g.embedding.string())};
    o.split.day_split = day_split_of(g.manifest, dir);
    o.forest.n_estimators = 5;
    o.out_dir = dir / "ens";
    std::ostringstream log;
    const auto r = run_train_ensemble(o, log);
    CHECK(log.str().find("warning") != std::string::npos);
    CHECK(log.str().find("Cooking") != std::string::npos);
    for (const auto& p : r.predictions) CHECK(p.predicted == to_index(Activity::Cooking));
}

TEST_CASE("feature dimension mismatch names both dims") {
    const auto dir = scratch("dim_mismatch");
    StreamSpec spec;
    spec.frames_per_day = 20;
    const auto g = small_stream(dir, spec);
    EnsembleOptions o;
    o.manifest = g.manifest;
    o.features = {FeatureSource::parse("embedding/16:" + g.embedding.string())};
    o.split.day_split = day_split_of(g.manifest, dir);
    o.out_dir = dir;
    std::ostringstream log;
    CHECK_THROWS_WITH_AS(run_train_ensemble(o, log), doctest::Contains("dim 8"), DataError);
    CHECK_THROWS_WITH_AS(run_train_ensemble(o, log), doctest::Contains("dim 16"), DataError);
}

TEST_CASE("split source must be unique") {
    SplitSource s;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.day_split = "a";
    s.folds = "b";
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("temporal runs") {
    const auto dir = scratch("temporal");
    StreamSpec spec;
    spec.n_users = 1;
    spec.days_per_user = 2;
    spec.frames_per_day = 100;
    const auto g = small_stream(dir, spec);
    const auto plan = day_split_of(g.manifest, dir, 0.5);

    TemporalOptions t;
    t.manifest = g.manifest;
    t.split.day_split = plan;
    t.mode = TemporalMode::ManyToOneForest;
    t.timestep = 10;
    t.features = {FeatureSource::parse("embedding:" + g.embedding.string())};
    t.forest.n_estimators = 5;
    t.out_dir = dir / "m2o";
    std::ostringstream log;
    const auto m2o = run_train_temporal(t, log);
    CHECK(m2o.training_windows == 91);
    CHECK(m2o.predictions.size() == 100);
    CHECK(m2o.forest->feature_dim == 80);
    CHECK(fs::exists(t.out_dir / "temporal.tfrf"));

    SUBCASE("recurrent needs phase-one scores") {
        TemporalOptions r = t;
        r.mode = TemporalMode::Recurrent;
        CHECK_THROWS_AS(run_train_temporal(r, log), ConfigError);
    }
    SUBCASE("recurrent with cached scores writes a log and report") {
        TemporalOptions r = t;
        r.mode = TemporalMode::Recurrent;
        r.scores = g.scores;
        r.recurrent.epochs = 2;
        r.recurrent.hidden_units = 4;
        r.class_weighting = true;
        r.out_dir = dir / "rec";
        const auto res = run_train_temporal(r, log);
        CHECK(res.predictions.size() == 100);
        const auto tl = slurp(r.out_dir / "train-log.tsv");
        CHECK(tl.rfind("epoch\tmean_loss\ttrain_acc\n1\t", 0) == 0);
        CHECK(load_recurrent(r.out_dir / "recurrent.tfrc") == *res.recurrent);
        CHECK(slurp(r.out_dir / "report.txt").find("dropout_placement=input+output") != std::string::npos);
        CHECK(nlohmann::json::parse(dump_model_json(r.out_dir / "recurrent.tfrc", false))["hidden_units"] == 4);

        TemporalOptions last = r;
        last.aggregation = Aggregation::Last;
        last.out_dir = dir / "rec_last";
        CHECK(run_train_temporal(last, log).predictions.size() == 100);
    }
    SUBCASE("T longer than every day without padding") {
        TemporalOptions r = t;
        r.timestep = 101;
        r.pad_short_days = false;
        CHECK_THROWS_WITH_AS(run_train_temporal(r, log), doctest::Contains("longest day"), DataError);
        r.pad_short_days = true;
        r.mode = TemporalMode::Recurrent;
        r.scores = g.scores;
        r.recurrent.epochs = 1;
        r.recurrent.hidden_units = 2;
        r.out_dir = dir / "padded";
        const auto padded = run_train_temporal(r, log);
        CHECK(padded.training_windows == 1);
        CHECK(padded.predictions.size() == 100);
    }
}

TEST_CASE("tree-count sweep") {
    const auto dir = scratch("sweep");
    StreamSpec spec;
    spec.frames_per_day = 40;
    spec.label_bias = std::array<double, 21>{};
    for (const int c : {1, 2, 3}) (*spec.label_bias)[static_cast<std::size_t>(c)] = 1.0;
    const auto g = small_stream(dir, spec);
    SplitOptions s;
    s.manifest = g.manifest;
    s.kind = SplitKind::Folds;
    s.k = 3;
    s.out_dir = dir;
    std::ostringstream log;
    const auto folds = run_split(s, log).plan;

    SweepOptions o;
    o.manifest = g.manifest;
    o.features = {FeatureSource::parse("embedding:" + g.embedding.string())};
    o.folds = folds;
    o.out_dir = dir / "sweep";
    o.tree_counts = {1};
    CHECK(run_sweep_trees(o, log).size() == 1);
    o.tree_counts = {10, 50};
    const auto rows = run_sweep_trees(o, log);
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) {
        CHECK(r.mean_validation_accuracy >= 0.0);
        CHECK(r.mean_validation_accuracy <= 1.0);
        CHECK(r.per_fold.size() == 3);
    }
    std::ostringstream warn;
    o.tree_counts = {10, 10, 1};
    CHECK(run_sweep_trees(o, warn).size() == 2);
    CHECK(warn.str().find("duplicate tree count 10") != std::string::npos);
    CHECK(slurp(o.out_dir / "sweep.tsv").rfind("n_estimators\tmean_validation_accuracy\tfold0\tfold1\tfold2\n10\t", 0) == 0);
    o.tree_counts = {};
    CHECK_THROWS_AS(run_sweep_trees(o, log), ConfigError);
    CHECK(run_cli(fmt::format("sweep-trees --manifest {} --features embedding:{} --folds {} --counts 3,x --out-dir {}",
                              g.manifest.string(), g.embedding.string(), folds.string(), dir.string()),
                  dir / "log.txt") == 1);
}

}  // TEST_SUITE
