#include "actrec/synth.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "actrec/errors.hpp"
#include "actrec/random.hpp"

namespace actrec {

namespace {

constexpr std::uint64_t kMeansStream = 0xC0FFEE;

std::array<double, kNumCategories> stationary_weights(const StreamSpec& spec) {
    std::array<double, kNumCategories> w{};
    if (spec.label_bias) {
        w = *spec.label_bias;
    } else {
        w.fill(1.0);
    }
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& v : w) v /= sum;
    return w;
}

int draw_categorical(Rng& rng, std::span<const double> probs) {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        acc += probs[c];
        if (u < acc) return static_cast<int>(c);
    }
    // Rounding left u above the running sum; take the last positive entry.
    for (std::size_t c = probs.size(); c-- > 0;)
        if (probs[c] > 0.0) return static_cast<int>(c);
    return 0;
}

}  // namespace

void StreamSpec::validate() const {
    if (n_users < 1) throw ConfigError(fmt::format("n_users must be >= 1, got {}", n_users));
    if (days_per_user < 1) throw ConfigError(fmt::format("days_per_user must be >= 1, got {}", days_per_user));
    if (frames_per_day < 1 || frames_per_day > 1440)
        throw ConfigError(fmt::format("frames_per_day must be in [1, 1440], got {}", frames_per_day));
    if (!(persistence > 0.0 && persistence <= 1.0))
        throw ConfigError(fmt::format("persistence must be in (0, 1], got {}", persistence));
    if (dim < 2) throw ConfigError(fmt::format("embedding dim must be >= 2, got {}", dim));
    if (!(separation >= 0.0) || !(emission_noise >= 0.0) || !(score_noise >= 0.0))
        throw ConfigError("separation and noise scales must be >= 0");
    if (!(temperature > 0.0)) throw ConfigError(fmt::format("temperature must be > 0, got {}", temperature));
    if (label_bias) {
        double sum = 0.0;
        for (const double w : *label_bias) {
            if (!(w >= 0.0)) throw ConfigError("label bias weights must be >= 0");
            sum += w;
        }
        if (!(sum > 0.0)) throw ConfigError("label bias weights must not all be zero");
    }
}

std::array<std::array<double, kNumCategories>, kNumCategories> StreamSpec::transition_matrix() const {
    // Off-diagonal mass is spread in proportion to the stationary weights,
    // which is uniform unless a label bias is given.
    const auto w = stationary_weights(*this);
    std::array<std::array<double, kNumCategories>, kNumCategories> m{};
    for (std::size_t from = 0; from < m.size(); ++from) {
        const double others = 1.0 - w[from];
        for (std::size_t to = 0; to < m.size(); ++to) {
            if (to == from) {
                m[from][to] = persistence;
            } else if (others > 0.0) {
                m[from][to] = (1.0 - persistence) * w[to] / others;
            }
        }
        if (others <= 0.0) m[from][from] = 1.0;
    }
    return m;
}

SyntheticStream generate(const StreamSpec& spec) {
    spec.validate();
    const auto dim = static_cast<std::size_t>(spec.dim);
    const auto transitions = spec.transition_matrix();
    const auto initial = stationary_weights(spec);

    std::vector<std::vector<double>> means(kNumCategories, std::vector<double>(dim));
    {
        Rng rng(derive_seed(spec.rng_seed, kMeansStream));
        for (auto& m : means)
            for (auto& v : m) v = spec.separation * rng.normal();
    }

    SyntheticStream out{{}, FeatureMatrix(FeatureRole::Embedding, spec.dim),
                        FeatureMatrix(FeatureRole::Score, kNumCategories)};
    std::vector<FrameRecord> frames;
    frames.reserve(static_cast<std::size_t>(spec.n_users * spec.days_per_user * spec.frames_per_day));
    const int first_minute = std::max(0, std::min(480, 1440 - spec.frames_per_day));
    std::vector<double> row(dim);
    std::array<double, kNumCategories> logits{};
    std::array<double, kNumCategories> probs{};

    for (int u = 0; u < spec.n_users; ++u)
        for (int d = 0; d < spec.days_per_user; ++d) {
            const auto day_index = static_cast<std::uint64_t>(u * spec.days_per_user + d);
            Rng rng(derive_seed(spec.rng_seed, day_index));
            int label = draw_categorical(rng, initial);
            for (int s = 0; s < spec.frames_per_day; ++s) {
                if (s > 0) label = draw_categorical(rng, transitions[static_cast<std::size_t>(label)]);
                FrameRecord f;
                f.frame_id = fmt::format("u{}_d{:02}_{:04}", u, d, s);
                f.user_id = fmt::format("u{}", u);
                f.day_id = fmt::format("d{:02}", d);
                f.seq_index = s;
                f.timestamp = first_minute + s;
                f.weekday = d % 7;
                f.label = activity_from_index(label);

                const auto& mean = means[static_cast<std::size_t>(label)];
                for (std::size_t k = 0; k < dim; ++k) row[k] = mean[k] + spec.emission_noise * rng.normal();
                out.embedding.add_row(f.frame_id, row);

                for (std::size_t c = 0; c < logits.size(); ++c)
                    logits[c] = ((static_cast<int>(c) == label ? 1.0 : 0.0) + spec.score_noise * rng.normal()) /
                                spec.temperature;
                const double mx = *std::max_element(logits.begin(), logits.end());
                double sum = 0.0;
                for (std::size_t c = 0; c < logits.size(); ++c) sum += probs[c] = std::exp(logits[c] - mx);
                for (auto& p : probs) p /= sum;
                out.scores.add_row(f.frame_id, probs);

                frames.push_back(std::move(f));
            }
        }
    out.manifest = DatasetManifest::from_frames(std::move(frames));
    return out;
}

TransitionEstimate empirical_transition_matrix(const DatasetManifest& manifest) {
    TransitionEstimate est;
    std::array<std::array<std::uint64_t, kNumCategories>, kNumCategories> counts{};
    for (const auto& day : manifest.days())
        for (std::size_t i = 1; i < day.frames.size(); ++i) {
            ++counts[static_cast<std::size_t>(to_index(day.frames[i - 1].label))]
                    [static_cast<std::size_t>(to_index(day.frames[i].label))];
            ++est.pairs;
        }
    if (est.pairs == 0) throw DataError("no consecutive frame pairs to estimate transitions from");
    for (std::size_t from = 0; from < counts.size(); ++from) {
        const auto total = std::accumulate(counts[from].begin(), counts[from].end(), std::uint64_t{0});
        if (total == 0) {
            est.no_outgoing[from] = true;
            continue;
        }
        for (std::size_t to = 0; to < counts.size(); ++to)
            est.matrix[from][to] = static_cast<double>(counts[from][to]) / static_cast<double>(total);
    }
    return est;
}

}  // namespace actrec
