#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "actrec/domain.hpp"
#include "actrec/features.hpp"

namespace actrec {

/// Parameters of a synthetic photo-stream: a per-day Markov chain over the
/// categories with Gaussian feature emission and noisy soft scores.
struct StreamSpec {
    int n_users = 3;
    int days_per_user = 5;
    int frames_per_day = 300;
    double persistence = 0.95;  // self-transition probability
    int dim = 8;                // embedding dimension
    double separation = 1.0;    // scale of the per-category mean vectors
    double emission_noise = 1.0;
    double score_noise = 1.0;   // std-dev added to the one-hot score logit
    double temperature = 1.0;
    std::optional<std::array<double, kNumCategories>> label_bias;
    std::uint64_t rng_seed = 42;

    void validate() const;
    /// Row-stochastic transition matrix implied by the spec.
    std::array<std::array<double, kNumCategories>, kNumCategories> transition_matrix() const;
};

struct SyntheticStream {
    DatasetManifest manifest;
    FeatureMatrix embedding{FeatureRole::Embedding, 1};
    FeatureMatrix scores{FeatureRole::Score, kNumCategories};
};

SyntheticStream generate(const StreamSpec& spec);

struct TransitionEstimate {
    std::array<std::array<double, kNumCategories>, kNumCategories> matrix{};
    std::array<bool, kNumCategories> no_outgoing{};
    std::uint64_t pairs = 0;
};

/// Maximum-likelihood transition matrix from consecutive within-day pairs.
TransitionEstimate empirical_transition_matrix(const DatasetManifest& manifest);

}  // namespace actrec
