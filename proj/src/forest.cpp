#include "actrec/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "actrec/binio.hpp"
#include "actrec/errors.hpp"
#include "actrec/random.hpp"

namespace actrec {

namespace {

constexpr std::string_view kForestMagic = "TFRF";
constexpr std::uint32_t kForestVersion = 1;

// Gini from a class histogram summarized by its size and sum of squared counts.
double gini_from_sumsq(std::uint64_t sumsq, std::uint64_t n) {
    const double nn = static_cast<double>(n);
    return 1.0 - static_cast<double>(sumsq) / (nn * nn);
}

struct SplitSearch {
    const SampleSet& samples;
    std::vector<std::pair<double, int>> scratch;

    // Evaluates one feature over `indices`; updates `best` under the tie rule.
    void scan_feature(std::span<const std::uint32_t> indices, int feature, const ClassCounts& parent,
                      double parent_gini, std::optional<Split>& best) {
        const auto n = indices.size();
        scratch.clear();
        for (const auto i : indices)
            scratch.emplace_back(samples.values[i * static_cast<std::size_t>(samples.dim) +
                                                static_cast<std::size_t>(feature)],
                                 samples.labels[i]);
        std::sort(scratch.begin(), scratch.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        if (scratch.front().first == scratch.back().first) return;

        ClassCounts left{};
        std::uint64_t left_sumsq = 0;
        std::uint64_t right_sumsq = 0;
        for (const auto c : parent) right_sumsq += c * c;
        ClassCounts right = parent;
        const double nd = static_cast<double>(n);
        for (std::size_t k = 0; k + 1 < n; ++k) {
            const auto c = static_cast<std::size_t>(scratch[k].second);
            left_sumsq += 2 * left[c] + 1;
            ++left[c];
            right_sumsq -= 2 * right[c] - 1;
            --right[c];
            const double a = scratch[k].first;
            const double b = scratch[k + 1].first;
            if (!(a < b)) continue;
            const auto nl = k + 1;
            const auto nr = n - nl;
            const double gain = parent_gini -
                                (static_cast<double>(nl) / nd) * gini_from_sumsq(left_sumsq, nl) -
                                (static_cast<double>(nr) / nd) * gini_from_sumsq(right_sumsq, nr);
            if (gain <= kGainEpsilon) continue;
            double threshold = a + (b - a) / 2.0;
            if (!(threshold < b)) threshold = a;
            const bool better =
                !best || gain > best->impurity_decrease + kGainEpsilon ||
                (std::abs(gain - best->impurity_decrease) <= kGainEpsilon &&
                 (feature < best->feature ||
                  (feature == best->feature && threshold < best->threshold)));
            if (better) best = Split{feature, threshold, gain};
        }
    }

    std::optional<Split> search(std::span<const std::uint32_t> indices, std::span<const int> features,
                                const ClassCounts& parent) {
        std::uint64_t sumsq = 0;
        for (const auto c : parent) sumsq += c * c;
        const double parent_gini = gini_from_sumsq(sumsq, indices.size());
        std::optional<Split> best;
        for (const int f : features) scan_feature(indices, f, parent, parent_gini, best);
        return best;
    }
};

ClassCounts count_classes(const SampleSet& samples, std::span<const std::uint32_t> indices) {
    ClassCounts counts{};
    for (const auto i : indices) ++counts[static_cast<std::size_t>(samples.labels[i])];
    return counts;
}

bool is_pure(const ClassCounts& counts) {
    return std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
}

class TreeBuilder {
public:
    TreeBuilder(const SampleSet& samples, const ForestConfig& config, std::uint64_t seed)
        : samples_(samples),
          config_(config),
          rng_(seed),
          search_{samples, {}},
          subset_size_(config.max_features.resolve(samples.dim)),
          features_(static_cast<std::size_t>(samples.dim)) {
        std::iota(features_.begin(), features_.end(), 0);
    }

    DecisionTree build(std::vector<std::uint32_t> indices) {
        DecisionTree tree;
        grow(tree, indices, 0);
        return tree;
    }

    Rng& rng() { return rng_; }

private:
    std::int32_t make_leaf(DecisionTree& tree, const ClassCounts& counts) {
        DecisionTree::Node leaf;
        leaf.leaf = static_cast<std::int32_t>(tree.leaf_counts.size());
        tree.leaf_counts.push_back(counts);
        tree.nodes.push_back(leaf);
        return static_cast<std::int32_t>(tree.nodes.size() - 1);
    }

    std::optional<Split> choose_split(std::span<const std::uint32_t> indices, const ClassCounts& counts) {
        const auto dim = static_cast<std::size_t>(samples_.dim);
        if (static_cast<std::size_t>(subset_size_) >= dim)
            return search_.search(indices, features_, counts);

        // Partial Fisher-Yates: the first subset_size_ entries form the
        // candidate subset; the rest are consulted one at a time only when
        // the subset holds no usable split (all constant on this node).
        std::vector<int> order = features_;
        for (std::size_t i = 0; i < dim; ++i) {
            const auto j = i + static_cast<std::size_t>(rng_.uniform_index(dim - i));
            std::swap(order[i], order[j]);
            if (i + 1 == static_cast<std::size_t>(subset_size_)) {
                std::vector<int> subset(order.begin(), order.begin() + subset_size_);
                std::sort(subset.begin(), subset.end());
                if (auto s = search_.search(indices, subset, counts)) return s;
            } else if (i + 1 > static_cast<std::size_t>(subset_size_)) {
                const int extra[] = {order[i]};
                if (auto s = search_.search(indices, extra, counts)) return s;
            }
        }
        return std::nullopt;
    }

    std::int32_t grow(DecisionTree& tree, std::span<std::uint32_t> indices, int depth) {
        const auto counts = count_classes(samples_, indices);
        const bool depth_capped = config_.max_depth && depth >= *config_.max_depth;
        if (indices.size() < 2 || is_pure(counts) || depth_capped) return make_leaf(tree, counts);
        const auto split = choose_split(indices, counts);
        if (!split) return make_leaf(tree, counts);

        const auto dim = static_cast<std::size_t>(samples_.dim);
        const auto f = static_cast<std::size_t>(split->feature);
        const auto mid = std::partition(indices.begin(), indices.end(), [&](std::uint32_t i) {
            return samples_.values[i * dim + f] <= split->threshold;
        });
        const auto n_left = static_cast<std::size_t>(mid - indices.begin());

        const auto self = static_cast<std::int32_t>(tree.nodes.size());
        DecisionTree::Node node;
        node.feature = split->feature;
        node.threshold = split->threshold;
        tree.nodes.push_back(node);
        const auto left = grow(tree, indices.first(n_left), depth + 1);
        const auto right = grow(tree, indices.subspan(n_left), depth + 1);
        tree.nodes[static_cast<std::size_t>(self)].left = left;
        tree.nodes[static_cast<std::size_t>(self)].right = right;
        return self;
    }

    const SampleSet& samples_;
    const ForestConfig& config_;
    Rng rng_;
    SplitSearch search_;
    int subset_size_;
    std::vector<int> features_;
};

void add_normalized(ClassDistribution& acc, const ClassCounts& counts) {
    std::uint64_t total = 0;
    for (const auto c : counts) total += c;
    const double inv = 1.0 / static_cast<double>(total);
    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += static_cast<double>(counts[c]) * inv;
}

void validate_samples(const SampleSet& samples) {
    if (samples.size() == 0) throw DataError("empty training set");
    if (samples.dim <= 0) throw DataError("training features have dimension 0");
    if (samples.size() < 2) throw DataError("training needs at least 2 samples");
    if (samples.values.size() != samples.size() * static_cast<std::size_t>(samples.dim))
        throw DataError("sample matrix size does not match labels x dim");
    for (const int l : samples.labels)
        if (l < 0 || l >= kNumCategories) throw DataError(fmt::format("label {} out of range", l));
}

int tree_depth(const DecisionTree& tree, std::int32_t node) {
    const auto& n = tree.nodes[static_cast<std::size_t>(node)];
    if (n.feature < 0) return 0;
    return 1 + std::max(tree_depth(tree, n.left), tree_depth(tree, n.right));
}

void write_tree_node(std::ostream& out, const DecisionTree& tree, std::int32_t node) {
    const auto& n = tree.nodes[static_cast<std::size_t>(node)];
    if (n.feature < 0) {
        binio::write_pod<std::uint8_t>(out, 0);
        const auto& counts = tree.leaf_counts[static_cast<std::size_t>(n.leaf)];
        const auto nnz = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; });
        binio::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(nnz));
        for (std::size_t c = 0; c < counts.size(); ++c)
            if (counts[c] > 0) {
                binio::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(c));
                binio::write_u32(out, static_cast<std::uint32_t>(counts[c]));
            }
        return;
    }
    binio::write_pod<std::uint8_t>(out, 1);
    binio::write_u32(out, static_cast<std::uint32_t>(n.feature));
    binio::write_f64(out, n.threshold);
    write_tree_node(out, tree, n.left);
    write_tree_node(out, tree, n.right);
}

std::int32_t read_tree_node(std::istream& in, DecisionTree& tree, int feature_dim, int depth) {
    if (depth > 100000) throw DataError("forest model: tree too deep");
    const auto tag = binio::read_pod<std::uint8_t>(in, "node tag");
    const auto self = static_cast<std::int32_t>(tree.nodes.size());
    if (tag == 0) {
        ClassCounts counts{};
        const auto nnz = binio::read_pod<std::uint8_t>(in, "leaf size");
        std::uint64_t total = 0;
        for (int k = 0; k < nnz; ++k) {
            const auto c = binio::read_pod<std::uint8_t>(in, "leaf class");
            if (c >= kNumCategories) throw DataError("forest model: leaf class out of range");
            counts[c] = binio::read_u32(in, "leaf count");
            total += counts[c];
        }
        if (total == 0) throw DataError("forest model: empty leaf");
        DecisionTree::Node leaf;
        leaf.leaf = static_cast<std::int32_t>(tree.leaf_counts.size());
        tree.leaf_counts.push_back(counts);
        tree.nodes.push_back(leaf);
        return self;
    }
    if (tag != 1) throw DataError("forest model: bad node tag");
    DecisionTree::Node node;
    node.feature = static_cast<int>(binio::read_u32(in, "split feature"));
    if (node.feature >= feature_dim) throw DataError("forest model: split feature out of range");
    node.threshold = binio::read_f64(in, "split threshold");
    tree.nodes.push_back(node);
    const auto left = read_tree_node(in, tree, feature_dim, depth + 1);
    const auto right = read_tree_node(in, tree, feature_dim, depth + 1);
    tree.nodes[static_cast<std::size_t>(self)].left = left;
    tree.nodes[static_cast<std::size_t>(self)].right = right;
    return self;
}

nlohmann::ordered_json node_to_json(const DecisionTree& tree, std::int32_t node) {
    const auto& n = tree.nodes[static_cast<std::size_t>(node)];
    if (n.feature < 0) {
        nlohmann::ordered_json counts = nlohmann::ordered_json::object();
        const auto& lc = tree.leaf_counts[static_cast<std::size_t>(n.leaf)];
        for (std::size_t c = 0; c < lc.size(); ++c)
            if (lc[c] > 0) counts[std::string(activity_name(static_cast<int>(c)))] = lc[c];
        return {{"leaf", counts}};
    }
    return {{"feature", n.feature},
            {"threshold", n.threshold},
            {"left", node_to_json(tree, n.left)},
            {"right", node_to_json(tree, n.right)}};
}

}  // namespace

double gini(std::span<const std::uint64_t> class_counts) {
    std::uint64_t total = 0;
    for (const auto c : class_counts) total += c;
    if (total == 0) throw DataError("gini of an all-zero count vector");
    const double n = static_cast<double>(total);
    double sum = 0.0;
    for (const auto c : class_counts) {
        const double p = static_cast<double>(c) / n;
        sum += p * p;
    }
    return 1.0 - sum;
}

void SampleSet::add(std::span<const double> row, int label) {
    if (dim == 0 && labels.empty()) dim = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != dim)
        throw DataError(fmt::format("sample has dim {}, expected {}", row.size(), dim));
    values.insert(values.end(), row.begin(), row.end());
    labels.push_back(label);
}

std::optional<Split> best_split(const SampleSet& samples, std::span<const int> feature_subset) {
    if (samples.size() < 2) return std::nullopt;
    std::vector<std::uint32_t> indices(samples.size());
    std::iota(indices.begin(), indices.end(), 0u);
    std::vector<int> features(feature_subset.begin(), feature_subset.end());
    std::sort(features.begin(), features.end());
    for (const int f : features)
        if (f < 0 || f >= samples.dim) throw DataError(fmt::format("feature index {} out of range", f));
    SplitSearch search{samples, {}};
    return search.search(indices, features, count_classes(samples, indices));
}

MaxFeatures MaxFeatures::parse(std::string_view text) {
    if (text == "sqrt") return sqrt();
    if (text == "all") return all();
    int n = 0;
    try {
        std::size_t used = 0;
        n = std::stoi(std::string(text), &used);
        if (used != text.size()) n = 0;
    } catch (const std::exception&) {
        n = 0;
    }
    if (n <= 0) throw ConfigError(fmt::format("max_features must be sqrt, all, or a positive integer, got '{}'", text));
    return fixed(n);
}

std::string MaxFeatures::to_string() const {
    switch (kind) {
        case Kind::Sqrt: return "sqrt";
        case Kind::All: return "all";
        case Kind::Count: return std::to_string(count);
    }
    return "?";
}

int MaxFeatures::resolve(int feature_dim) const {
    switch (kind) {
        case Kind::Sqrt:
            return std::max(1, static_cast<int>(std::sqrt(static_cast<double>(feature_dim))));
        case Kind::All: return feature_dim;
        case Kind::Count: return std::min(count, feature_dim);
    }
    return feature_dim;
}

void ForestConfig::validate() const {
    if (n_estimators <= 0)
        throw ConfigError(fmt::format("n_estimators must be positive, got {}", n_estimators));
    if (max_depth && *max_depth <= 0)
        throw ConfigError(fmt::format("max_depth must be positive, got {}", *max_depth));
    if (max_features.kind == MaxFeatures::Kind::Count && max_features.count <= 0)
        throw ConfigError("max_features must be positive");
}

const ClassCounts& DecisionTree::leaf_for(std::span<const double> row) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) {
        const auto& n = nodes[i];
        i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                            : n.right);
    }
    return leaf_counts[static_cast<std::size_t>(nodes[i].leaf)];
}

int DecisionTree::depth() const { return nodes.empty() ? 0 : tree_depth(*this, 0); }

ClassDistribution ForestModel::predict_proba(std::span<const double> row) const {
    if (static_cast<int>(row.size()) != feature_dim)
        throw DataError(fmt::format("forest expects rows of dim {}, got {}", feature_dim, row.size()));
    ClassDistribution acc{};
    for (const auto& t : trees) add_normalized(acc, t.leaf_for(row));
    const double inv = 1.0 / static_cast<double>(trees.size());
    for (auto& p : acc) p *= inv;
    return acc;
}

int ForestModel::predict(std::span<const double> row) const { return argmax(predict_proba(row)); }

int ForestModel::max_depth() const {
    int d = 0;
    for (const auto& t : trees) d = std::max(d, t.depth());
    return d;
}

bool ForestModel::operator==(const ForestModel& o) const {
    return config.n_estimators == o.config.n_estimators && config.max_depth == o.config.max_depth &&
           config.max_features.kind == o.config.max_features.kind &&
           config.max_features.count == o.config.max_features.count &&
           config.bootstrap == o.config.bootstrap && config.rng_seed == o.config.rng_seed &&
           feature_dim == o.feature_dim && fusion_signature == o.fusion_signature && trees == o.trees;
}

int argmax(std::span<const double> probs) {
    int best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

ForestTraining train_forest_with_oob(const SampleSet& samples, const ForestConfig& config,
                                     FusionSignature signature) {
    config.validate();
    validate_samples(samples);

    const auto n = samples.size();
    const auto n_trees = static_cast<std::size_t>(config.n_estimators);
    ForestTraining result;
    result.model.config = config;
    result.model.feature_dim = samples.dim;
    result.model.fusion_signature = signature.empty() ? FusionSignature{{FeatureRole::Embedding, samples.dim}}
                                                      : std::move(signature);
    result.model.trees.resize(n_trees);
    std::vector<std::vector<std::uint8_t>> in_bag(n_trees);

    auto grow_one = [&](std::size_t t) {
        TreeBuilder builder(samples, config, derive_seed(config.rng_seed, t));
        std::vector<std::uint32_t> indices(n);
        auto& bag = in_bag[t];
        bag.assign(n, config.bootstrap ? 0 : 1);
        if (config.bootstrap) {
            for (auto& i : indices) {
                i = static_cast<std::uint32_t>(builder.rng().uniform_index(n));
                bag[i] = 1;
            }
        } else {
            std::iota(indices.begin(), indices.end(), 0u);
        }
        result.model.trees[t] = builder.build(std::move(indices));
    };

    unsigned threads = config.n_threads > 0 ? static_cast<unsigned>(config.n_threads)
                                            : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(n_trees));
    if (threads <= 1) {
        for (std::size_t t = 0; t < n_trees; ++t) grow_one(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < threads; ++w)
            pool.emplace_back([&] {
                for (auto t = next++; t < n_trees; t = next++) grow_one(t);
            });
    }

    result.oob_proba.assign(n, ClassDistribution{});
    std::vector<std::uint32_t> oob_trees(n, 0);
    for (std::size_t t = 0; t < n_trees; ++t)
        for (std::size_t i = 0; i < n; ++i)
            if (!in_bag[t][i]) {
                add_normalized(result.oob_proba[i], result.model.trees[t].leaf_for(samples.row(i)));
                ++oob_trees[i];
            }
    for (std::size_t i = 0; i < n; ++i) {
        if (oob_trees[i] == 0) {
            result.oob_proba[i] = result.model.predict_proba(samples.row(i));
            continue;
        }
        const double inv = 1.0 / oob_trees[i];
        for (auto& p : result.oob_proba[i]) p *= inv;
    }
    return result;
}

ForestModel train_forest(const SampleSet& samples, const ForestConfig& config, FusionSignature signature) {
    return train_forest_with_oob(samples, config, std::move(signature)).model;
}

void write_forest(std::ostream& out, const ForestModel& model) {
    binio::write_magic(out, kForestMagic);
    binio::write_u32(out, kForestVersion);
    const auto& c = model.config;
    binio::write_u32(out, static_cast<std::uint32_t>(c.n_estimators));
    binio::write_pod<std::uint8_t>(out, c.max_depth ? 1 : 0);
    binio::write_u32(out, static_cast<std::uint32_t>(c.max_depth.value_or(0)));
    binio::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(c.max_features.kind));
    binio::write_u32(out, static_cast<std::uint32_t>(c.max_features.count));
    binio::write_pod<std::uint8_t>(out, c.bootstrap ? 1 : 0);
    binio::write_u64(out, c.rng_seed);
    binio::write_u32(out, static_cast<std::uint32_t>(model.feature_dim));
    binio::write_u32(out, static_cast<std::uint32_t>(kNumCategories));
    binio::write_u32(out, static_cast<std::uint32_t>(model.fusion_signature.size()));
    for (const auto& [role, dim] : model.fusion_signature) {
        binio::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(role));
        binio::write_u32(out, static_cast<std::uint32_t>(dim));
    }
    binio::write_u32(out, static_cast<std::uint32_t>(model.trees.size()));
    for (const auto& t : model.trees) {
        binio::write_u32(out, static_cast<std::uint32_t>(t.nodes.size()));
        write_tree_node(out, t, 0);
    }
}

ForestModel read_forest(std::istream& in) {
    binio::expect_magic(in, kForestMagic, "forest model");
    if (binio::read_u32(in, "version") != kForestVersion)
        throw DataError("forest model: unsupported version");
    ForestModel m;
    auto& c = m.config;
    c.n_estimators = static_cast<int>(binio::read_u32(in, "n_estimators"));
    const bool has_depth = binio::read_pod<std::uint8_t>(in, "max_depth flag") != 0;
    const auto depth = binio::read_u32(in, "max_depth");
    if (has_depth) c.max_depth = static_cast<int>(depth);
    const auto kind = binio::read_pod<std::uint8_t>(in, "max_features kind");
    if (kind > 2) throw DataError("forest model: bad max_features kind");
    c.max_features.kind = static_cast<MaxFeatures::Kind>(kind);
    c.max_features.count = static_cast<int>(binio::read_u32(in, "max_features"));
    c.bootstrap = binio::read_pod<std::uint8_t>(in, "bootstrap") != 0;
    c.rng_seed = binio::read_u64(in, "rng_seed");
    m.feature_dim = static_cast<int>(binio::read_u32(in, "feature_dim"));
    if (binio::read_u32(in, "class count") != kNumCategories)
        throw DataError("forest model: unexpected class count");
    const auto sig_len = binio::read_u32(in, "signature length");
    for (std::uint32_t i = 0; i < sig_len; ++i) {
        const auto role = binio::read_pod<std::uint8_t>(in, "signature role");
        if (role > 3) throw DataError("forest model: bad feature role");
        const auto dim = static_cast<int>(binio::read_u32(in, "signature dim"));
        m.fusion_signature.emplace_back(static_cast<FeatureRole>(role), dim);
    }
    const auto n_trees = binio::read_u32(in, "tree count");
    if (static_cast<int>(n_trees) != c.n_estimators)
        throw DataError("forest model: tree count does not match n_estimators");
    m.trees.resize(n_trees);
    for (auto& t : m.trees) {
        const auto n_nodes = binio::read_u32(in, "node count");
        t.nodes.reserve(n_nodes);
        read_tree_node(in, t, m.feature_dim, 0);
        if (t.nodes.size() != n_nodes) throw DataError("forest model: node count mismatch");
    }
    return m;
}

void save_forest(const std::filesystem::path& path, const ForestModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write model '{}'", path.string()));
    write_forest(out, model);
}

ForestModel load_forest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open model '{}'", path.string()));
    return read_forest(in);
}

std::string forest_to_json(const ForestModel& model, bool include_trees) {
    nlohmann::ordered_json j;
    j["type"] = "random_forest";
    j["n_estimators"] = model.config.n_estimators;
    j["max_depth"] = model.config.max_depth ? nlohmann::ordered_json(*model.config.max_depth)
                                            : nlohmann::ordered_json(nullptr);
    j["max_features"] = model.config.max_features.to_string();
    j["bootstrap"] = model.config.bootstrap;
    j["rng_seed"] = model.config.rng_seed;
    j["feature_dim"] = model.feature_dim;
    j["realized_max_depth"] = model.max_depth();
    auto sig = nlohmann::ordered_json::array();
    for (const auto& [role, dim] : model.fusion_signature)
        sig.push_back({{"role", role_name(role)}, {"dim", dim}});
    j["fusion_signature"] = sig;
    if (include_trees) {
        auto trees = nlohmann::ordered_json::array();
        for (const auto& t : model.trees) trees.push_back(node_to_json(t, 0));
        j["trees"] = trees;
    }
    return j.dump(2);
}

}  // namespace actrec
