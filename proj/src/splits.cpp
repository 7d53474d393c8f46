#include "actrec/splits.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <optional>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "actrec/errors.hpp"
#include "actrec/random.hpp"

namespace actrec {

namespace {

constexpr double kDistributionTolerance = 1e-9;

void check_distribution(std::span<const double> p, std::string_view name) {
    double sum = 0.0;
    for (const double v : p) {
        if (!(v >= 0.0)) throw DataError(fmt::format("bhattacharyya: {} has a negative or NaN entry", name));
        sum += v;
    }
    if (std::abs(sum - 1.0) > kDistributionTolerance)
        throw DataError(fmt::format("bhattacharyya: {} sums to {}, not 1", name, sum));
}

ClassDistribution normalize(const ClassCounts& counts, std::uint64_t total) {
    ClassDistribution d{};
    const double n = static_cast<double>(total);
    for (std::size_t c = 0; c < d.size(); ++c) d[c] = static_cast<double>(counts[c]) / n;
    return d;
}

ClassCounts day_counts(const DaySegment& day) {
    ClassCounts counts{};
    for (const auto& f : day.frames) ++counts[static_cast<std::size_t>(to_index(f.label))];
    return counts;
}

// Objective as a function of the integer test histogram only, so every
// route that reaches the same counts produces the same bits.
double objective_from_counts(const ClassCounts& global, std::uint64_t total, const ClassCounts& test,
                             std::uint64_t test_total) {
    ClassCounts train{};
    for (std::size_t c = 0; c < train.size(); ++c) train[c] = global[c] - test[c];
    const auto g = normalize(global, total);
    const auto te = normalize(test, test_total);
    const auto tr = normalize(train, total - test_total);
    return bhattacharyya(g, tr) + bhattacharyya(g, te);
}

// Lexicographic comparison of two ascending day-index lists, which is the
// key-list order because days are sorted by key.
bool index_list_less(std::span<const int> a, std::span<const int> b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

bool has_whitespace(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](unsigned char ch) { return std::isspace(ch) != 0; });
}

struct Candidate {
    std::vector<int> days;  // ascending
    ClassCounts counts{};
    std::uint64_t frames = 0;
    double objective = 0.0;
};

bool candidate_better(const Candidate& a, const Candidate& b) {
    if (a.objective < b.objective) return true;
    if (a.objective == b.objective) return index_list_less(a.days, b.days);
    return false;
}

}  // namespace

double bhattacharyya(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw DataError(fmt::format("bhattacharyya: length mismatch ({} vs {})", p.size(), q.size()));
    if (p.empty()) throw DataError("bhattacharyya: empty distributions");
    check_distribution(p, "p");
    check_distribution(q, "q");
    if (std::equal(p.begin(), p.end(), q.begin())) return 0.0;
    double coefficient = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) coefficient += std::sqrt(p[c] * q[c]);
    if (coefficient <= 0.0) return std::numeric_limits<double>::infinity();
    if (coefficient >= 1.0) return 0.0;
    return -std::log(coefficient);
}

FoldPlan stratified_folds(const DatasetManifest& manifest, int k, double validation_fraction,
                          std::uint64_t rng_seed) {
    if (k < 2) throw ConfigError(fmt::format("k must be >= 2, got {}", k));
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
        throw ConfigError(fmt::format("validation fraction must be in [0, 1), got {}", validation_fraction));

    const auto frames = manifest.frames();
    std::array<std::vector<std::size_t>, kNumCategories> by_class;
    for (std::size_t i = 0; i < frames.size(); ++i)
        by_class[static_cast<std::size_t>(to_index(frames[i].label))].push_back(i);
    for (int c = 0; c < kNumCategories; ++c) {
        const auto n = by_class[static_cast<std::size_t>(c)].size();
        if (n > 0 && n < static_cast<std::size_t>(k))
            throw DataError(fmt::format("category '{}' has {} frames, fewer than k={}", activity_name(c), n, k));
    }

    const auto ku = static_cast<std::size_t>(k);
    std::vector<int> fold_of(frames.size(), -1);
    std::size_t offset = 0;
    for (int c = 0; c < kNumCategories; ++c) {
        auto& members = by_class[static_cast<std::size_t>(c)];
        Rng rng(derive_seed(rng_seed, static_cast<std::uint64_t>(c)));
        rng.shuffle(std::span<std::size_t>(members));
        for (std::size_t j = 0; j < members.size(); ++j)
            fold_of[members[j]] = static_cast<int>((offset + j) % ku);
        offset = (offset + members.size()) % ku;
    }

    FoldPlan plan{k, validation_fraction, rng_seed, std::vector<Fold>(ku)};
    for (std::size_t f = 0; f < ku; ++f) {
        // Largest-remainder apportionment of the validation quota.
        std::array<std::vector<std::size_t>, kNumCategories> train_by_class;
        std::size_t n_train = 0;
        for (int c = 0; c < kNumCategories; ++c)
            for (const auto i : by_class[static_cast<std::size_t>(c)])
                if (fold_of[i] != static_cast<int>(f)) {
                    train_by_class[static_cast<std::size_t>(c)].push_back(i);
                    ++n_train;
                }
        const auto total_val =
            static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(n_train) + 0.5));
        std::array<std::size_t, kNumCategories> quota{};
        std::vector<std::pair<double, int>> remainders;
        std::size_t assigned = 0;
        for (int c = 0; c < kNumCategories; ++c) {
            const double exact =
                validation_fraction * static_cast<double>(train_by_class[static_cast<std::size_t>(c)].size());
            quota[static_cast<std::size_t>(c)] = static_cast<std::size_t>(std::floor(exact));
            assigned += quota[static_cast<std::size_t>(c)];
            remainders.emplace_back(exact - std::floor(exact), c);
        }
        std::stable_sort(remainders.begin(), remainders.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t r = 0; assigned < total_val && r < remainders.size(); ++r) {
            const auto c = static_cast<std::size_t>(remainders[r].second);
            if (quota[c] < train_by_class[c].size()) {
                ++quota[c];
                ++assigned;
            }
        }

        std::vector<int> role(frames.size(), 0);  // 0 train, 1 validation, 2 test
        for (std::size_t i = 0; i < frames.size(); ++i)
            if (fold_of[i] == static_cast<int>(f)) role[i] = 2;
        for (int c = 0; c < kNumCategories; ++c) {
            auto members = train_by_class[static_cast<std::size_t>(c)];
            Rng rng(derive_seed(rng_seed, 1000 + f * kNumCategories + static_cast<std::size_t>(c)));
            rng.shuffle(std::span<std::size_t>(members));
            for (std::size_t j = 0; j < quota[static_cast<std::size_t>(c)]; ++j) role[members[j]] = 1;
        }
        auto& fold = plan.folds[f];
        for (std::size_t i = 0; i < frames.size(); ++i) {
            auto& dest = role[i] == 0 ? fold.train : role[i] == 1 ? fold.validation : fold.test;
            dest.push_back(frames[i].frame_id);
        }
    }
    return plan;
}

double split_objective(const DatasetManifest& manifest, std::span<const DayKey> test_days) {
    ClassCounts global{};
    ClassCounts test{};
    std::uint64_t total = 0;
    std::uint64_t test_total = 0;
    const std::set<DayKey> wanted(test_days.begin(), test_days.end());
    std::size_t matched = 0;
    for (const auto& day : manifest.days()) {
        const auto counts = day_counts(day);
        for (std::size_t c = 0; c < counts.size(); ++c) global[c] += counts[c];
        total += day.size();
        if (wanted.contains(day.key())) {
            for (std::size_t c = 0; c < counts.size(); ++c) test[c] += counts[c];
            test_total += day.size();
            ++matched;
        }
    }
    if (matched != wanted.size()) throw DataError("split references a day that is not in the manifest");
    if (test_total == 0 || test_total == total) throw DataError("split must leave both sides non-empty");
    return objective_from_counts(global, total, test, test_total);
}

DaySplitPlan optimize_day_split(const DatasetManifest& manifest, const DaySplitOptions& options) {
    const auto& days = manifest.days();
    const int n_days = static_cast<int>(days.size());
    if (n_days < 2) throw DataError("day split needs at least 2 days");
    if (!(options.target_test_fraction > 0.0 && options.target_test_fraction < 1.0))
        throw ConfigError(fmt::format("target test fraction must be in (0, 1), got {}", options.target_test_fraction));
    if (!(options.tolerance >= 0.0)) throw ConfigError("split tolerance must be >= 0");

    std::vector<ClassCounts> counts;
    ClassCounts global{};
    std::uint64_t total = 0;
    for (const auto& d : days) {
        counts.push_back(day_counts(d));
        for (std::size_t c = 0; c < global.size(); ++c) global[c] += counts.back()[c];
        total += d.size();
    }
    const double lo = options.target_test_fraction - options.tolerance - 1e-12;
    const double hi = options.target_test_fraction + options.tolerance + 1e-12;
    auto in_window = [&](std::uint64_t test_frames) {
        const double frac = static_cast<double>(test_frames) / static_cast<double>(total);
        return test_frames > 0 && test_frames < total && frac >= lo && frac <= hi;
    };

    std::optional<Candidate> best;
    std::size_t evaluated = 0;
    auto consider = [&](Candidate cand) {
        cand.objective = objective_from_counts(global, total, cand.counts, cand.frames);
        ++evaluated;
        if (!best || candidate_better(cand, *best)) best = std::move(cand);
    };

    if (options.mode == SearchMode::Exhaustive) {
        if (n_days > kMaxExhaustiveDays)
            throw ConfigError(fmt::format("{} days exceed the exhaustive limit of {}; use beam search", n_days,
                                          kMaxExhaustiveDays));
        // Gray-code walk: each step toggles one day in or out of the test set.
        const std::uint64_t n_masks = std::uint64_t{1} << n_days;
        ClassCounts test{};
        std::uint64_t test_frames = 0;
        std::uint64_t mask = 0;
        for (std::uint64_t step = 1; step < n_masks; ++step) {
            const int bit = std::countr_zero(step);
            const auto b = static_cast<std::size_t>(bit);
            mask ^= std::uint64_t{1} << bit;
            const bool added = (mask >> bit) & 1u;
            for (std::size_t c = 0; c < test.size(); ++c)
                test[c] = added ? test[c] + counts[b][c] : test[c] - counts[b][c];
            test_frames = added ? test_frames + days[b].size() : test_frames - days[b].size();
            if (!in_window(test_frames)) continue;
            Candidate cand;
            for (int d = 0; d < n_days; ++d)
                if ((mask >> d) & 1u) cand.days.push_back(d);
            cand.counts = test;
            cand.frames = test_frames;
            consider(std::move(cand));
        }
    } else {
        if (options.beam_width < 1) throw ConfigError("beam width must be >= 1");
        std::vector<Candidate> beam{Candidate{}};
        while (!beam.empty()) {
            std::vector<Candidate> next;
            std::set<std::vector<int>> seen;
            for (const auto& state : beam)
                for (int d = 0; d < n_days; ++d) {
                    if (std::binary_search(state.days.begin(), state.days.end(), d)) continue;
                    Candidate cand = state;
                    cand.days.insert(std::upper_bound(cand.days.begin(), cand.days.end(), d), d);
                    if (!seen.insert(cand.days).second) continue;
                    for (std::size_t c = 0; c < cand.counts.size(); ++c)
                        cand.counts[c] += counts[static_cast<std::size_t>(d)][c];
                    cand.frames += days[static_cast<std::size_t>(d)].size();
                    const double frac = static_cast<double>(cand.frames) / static_cast<double>(total);
                    if (frac > hi || cand.frames >= total) continue;
                    cand.objective = objective_from_counts(global, total, cand.counts, cand.frames);
                    if (in_window(cand.frames)) consider(cand);
                    next.push_back(std::move(cand));
                }
            std::sort(next.begin(), next.end(), candidate_better);
            if (next.size() > static_cast<std::size_t>(options.beam_width))
                next.resize(static_cast<std::size_t>(options.beam_width));
            beam = std::move(next);
        }
    }
    if (!best)
        throw DataError(fmt::format("no day subset has a test fraction within {} of {}", options.tolerance,
                                    options.target_test_fraction));

    DaySplitPlan plan;
    plan.objective = best->objective;
    plan.target_test_fraction = options.target_test_fraction;
    plan.tolerance = options.tolerance;
    plan.mode = options.mode;
    plan.beam_width = options.mode == SearchMode::Beam ? options.beam_width : 0;
    plan.candidates_evaluated = evaluated;
    for (int d = 0; d < n_days; ++d) {
        const bool is_test = std::binary_search(best->days.begin(), best->days.end(), d);
        (is_test ? plan.test_days : plan.train_days).push_back(days[static_cast<std::size_t>(d)].key());
    }
    return plan;
}

std::string_view search_mode_name(SearchMode m) { return m == SearchMode::Exhaustive ? "exhaustive" : "beam"; }

SearchMode parse_search_mode(std::string_view text) {
    if (text == "exhaustive") return SearchMode::Exhaustive;
    if (text == "beam") return SearchMode::Beam;
    throw ConfigError(fmt::format("search mode must be 'exhaustive' or 'beam', got '{}'", text));
}

void write_day_split(std::ostream& out, const DaySplitPlan& plan, const DatasetManifest& manifest) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_user;
    const std::set<DayKey> test(plan.test_days.begin(), plan.test_days.end());
    std::size_t test_frames = 0;
    for (const auto& d : manifest.days()) {
        auto& [tr, te] = per_user[d.user_id];
        (test.contains(d.key()) ? te : tr) += d.size();
        if (test.contains(d.key())) test_frames += d.size();
    }
    out << "# day-split\n";
    out << fmt::format("# objective={}\n", plan.objective);
    out << fmt::format("# target_test_fraction={}\n", plan.target_test_fraction);
    out << fmt::format("# tolerance={}\n", plan.tolerance);
    out << fmt::format("# mode={}\n", search_mode_name(plan.mode));
    out << fmt::format("# beam_width={}\n", plan.beam_width);
    out << fmt::format("# candidates_evaluated={}\n", plan.candidates_evaluated);
    out << fmt::format("# test_frame_fraction={}\n",
                       static_cast<double>(test_frames) / static_cast<double>(manifest.frame_count()));
    for (const auto& [user, c] : per_user)
        out << fmt::format("# user={} train_frames={} test_frames={}\n", user, c.first, c.second);
    auto emit = [&](std::string_view side, const std::vector<DayKey>& keys) {
        for (const auto& k : keys) {
            if (has_whitespace(k.user_id) || has_whitespace(k.day_id))
                throw DataError(fmt::format("day key '{}/{}' contains whitespace and cannot be written",
                                            k.user_id, k.day_id));
            out << fmt::format("SPLIT {} {} {}\n", side, k.user_id, k.day_id);
        }
    };
    emit("train", plan.train_days);
    emit("test", plan.test_days);
}

DaySplitPlan read_day_split(std::istream& in, std::string_view source) {
    DaySplitPlan plan;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const auto key = line.substr(2, eq - 2);
            const auto value = line.substr(eq + 1);
            try {
                if (key == "objective") plan.objective = std::stod(value);
                else if (key == "target_test_fraction") plan.target_test_fraction = std::stod(value);
                else if (key == "tolerance") plan.tolerance = std::stod(value);
                else if (key == "mode") plan.mode = parse_search_mode(value);
                else if (key == "beam_width") plan.beam_width = std::stoi(value);
                else if (key == "candidates_evaluated") plan.candidates_evaluated = std::stoull(value);
            } catch (const std::invalid_argument&) {
                throw DataError(fmt::format("{}:{}: bad header value '{}'", source, line_no, value));
            } catch (const std::out_of_range&) {
                // inf objective
                if (key == "objective") plan.objective = std::numeric_limits<double>::infinity();
            }
            continue;
        }
        std::istringstream fields(line);
        std::string tag, side, user, day, extra;
        fields >> tag >> side >> user >> day;
        if (tag != "SPLIT" || user.empty() || day.empty() || (fields >> extra))
            throw DataError(fmt::format("{}:{}: expected 'SPLIT train|test <user_id> <day_id>'", source, line_no));
        if (side == "train") plan.train_days.push_back({user, day});
        else if (side == "test") plan.test_days.push_back({user, day});
        else throw DataError(fmt::format("{}:{}: split side must be train or test, got '{}'", source, line_no, side));
    }
    if (plan.train_days.empty() || plan.test_days.empty())
        throw DataError(fmt::format("{}: day split needs both train and test days", source));
    return plan;
}

void save_day_split(const std::filesystem::path& path, const DaySplitPlan& plan, const DatasetManifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write split plan '{}'", path.string()));
    write_day_split(out, plan, manifest);
}

DaySplitPlan load_day_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open split plan '{}'", path.string()));
    return read_day_split(in, path.string());
}

void write_fold_plan(std::ostream& out, const FoldPlan& plan) {
    out << "# folds\n";
    out << fmt::format("# k={}\n", plan.k);
    out << fmt::format("# validation_fraction={}\n", plan.validation_fraction);
    out << fmt::format("# seed={}\n", plan.rng_seed);
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
        const auto& fold = plan.folds[f];
        for (const auto& id : fold.train) out << fmt::format("FOLD {} train {}\n", f, id);
        for (const auto& id : fold.validation) out << fmt::format("FOLD {} val {}\n", f, id);
        for (const auto& id : fold.test) out << fmt::format("FOLD {} test {}\n", f, id);
    }
}

FoldPlan read_fold_plan(std::istream& in, std::string_view source) {
    FoldPlan plan;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const auto key = line.substr(2, eq - 2);
            const auto value = line.substr(eq + 1);
            if (key == "k") plan.k = std::stoi(value);
            else if (key == "validation_fraction") plan.validation_fraction = std::stod(value);
            else if (key == "seed") plan.rng_seed = std::stoull(value);
            continue;
        }
        std::istringstream fields(line);
        std::string tag, side, id;
        long fold = -1;
        fields >> tag >> fold >> side;
        std::getline(fields >> std::ws, id);
        if (tag != "FOLD" || fold < 0 || id.empty())
            throw DataError(fmt::format("{}:{}: expected 'FOLD <k> train|val|test <frame_id>'", source, line_no));
        if (static_cast<std::size_t>(fold) >= plan.folds.size()) plan.folds.resize(static_cast<std::size_t>(fold) + 1);
        auto& f = plan.folds[static_cast<std::size_t>(fold)];
        if (side == "train") f.train.push_back(id);
        else if (side == "val") f.validation.push_back(id);
        else if (side == "test") f.test.push_back(id);
        else throw DataError(fmt::format("{}:{}: unknown fold side '{}'", source, line_no, side));
    }
    if (plan.folds.empty()) throw DataError(fmt::format("{}: empty fold plan", source));
    if (plan.k == 0) plan.k = static_cast<int>(plan.folds.size());
    return plan;
}

void save_fold_plan(const std::filesystem::path& path, const FoldPlan& plan) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write fold plan '{}'", path.string()));
    write_fold_plan(out, plan);
}

FoldPlan load_fold_plan(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open fold plan '{}'", path.string()));
    return read_fold_plan(in, path.string());
}

}  // namespace actrec
