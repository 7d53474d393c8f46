#include "actrec/temporal.hpp"

#include <fmt/format.h>

#include "actrec/errors.hpp"

namespace actrec {

namespace {

Window padded_window(const DaySegment& segment, int end, int timestep) {
    Window w{segment.user_id, segment.day_id, end - timestep + 1, timestep, {}};
    w.frame_ids.reserve(static_cast<std::size_t>(timestep));
    for (int k = end - timestep + 1; k <= end; ++k)
        w.frame_ids.push_back(segment.frames[static_cast<std::size_t>(std::max(k, 0))].frame_id);
    w.start = std::max(w.start, 0);
    return w;
}

void check_coverage(const std::map<std::string, std::vector<double>>& covered,
                    std::span<const std::string> required) {
    for (const auto& id : required)
        if (!covered.contains(id))
            throw DataError(fmt::format("frame '{}' is not covered by any window", id));
}

}  // namespace

std::vector<Window> sliding_windows(const DaySegment& segment, int timestep, int stride) {
    if (timestep < 1) throw ConfigError(fmt::format("timestep must be >= 1, got {}", timestep));
    if (stride < 1) throw ConfigError(fmt::format("stride must be >= 1, got {}", stride));
    const int n = static_cast<int>(segment.frames.size());
    std::vector<Window> out;
    if (n == 0) return out;
    if (n < timestep) {
        out.push_back(padded_window(segment, n - 1, timestep));
        return out;
    }
    for (int start = 0; start + timestep <= n; start += stride)
        out.push_back(padded_window(segment, start + timestep - 1, timestep));
    return out;
}

std::vector<Window> trailing_windows(const DaySegment& segment, int timestep) {
    if (timestep < 1) throw ConfigError(fmt::format("timestep must be >= 1, got {}", timestep));
    std::vector<Window> out;
    out.reserve(segment.frames.size());
    for (int end = 0; end < static_cast<int>(segment.frames.size()); ++end)
        out.push_back(padded_window(segment, end, timestep));
    return out;
}

std::vector<double> concat_window_features(const Window& window, const FeatureMatrix& features) {
    std::vector<double> out;
    out.reserve(window.frame_ids.size() * static_cast<std::size_t>(features.dim()));
    for (const auto& id : window.frame_ids) {
        if (!features.contains(id))
            throw DataError(fmt::format("window feature concatenation: frame '{}' has no {} features", id,
                                        role_name(features.role())));
        const auto row = features.row(id);
        out.insert(out.end(), row.begin(), row.end());
    }
    return out;
}

Activity many_to_one_label(const Window& window, const DatasetManifest& manifest) {
    if (window.frame_ids.empty()) throw DataError("empty window");
    return manifest.frame(window.frame_ids.back()).label;
}

std::map<std::string, std::vector<double>> aggregate_per_frame(
    std::span<const WindowPrediction> window_predictions, std::span<const std::string> required) {
    std::map<std::string, std::vector<double>> sums;
    std::map<std::string, std::size_t> hits;
    for (const auto& [window, probs] : window_predictions) {
        if (probs.size() != window.frame_ids.size())
            throw DataError(fmt::format("window of {} frames has {} predictions", window.frame_ids.size(),
                                        probs.size()));
        for (std::size_t k = 0; k < probs.size(); ++k) {
            auto& acc = sums[window.frame_ids[k]];
            if (acc.empty()) acc.assign(probs[k].size(), 0.0);
            if (acc.size() != probs[k].size()) throw DataError("inconsistent prediction lengths");
            for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += probs[k][c];
            ++hits[window.frame_ids[k]];
        }
    }
    for (auto& [id, acc] : sums) {
        const double inv = 1.0 / static_cast<double>(hits[id]);
        for (auto& v : acc) v *= inv;
    }
    check_coverage(sums, required);
    return sums;
}

std::map<std::string, std::vector<double>> aggregate_last(
    std::span<const WindowPrediction> window_predictions, std::span<const std::string> required) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [window, probs] : window_predictions) {
        if (probs.empty() || probs.size() != window.frame_ids.size())
            throw DataError("window predictions do not match window length");
        out[window.frame_ids.back()] = probs.back();
    }
    check_coverage(out, required);
    return out;
}

Aggregation parse_aggregation(std::string_view text) {
    if (text == "mean") return Aggregation::Mean;
    if (text == "last") return Aggregation::Last;
    throw ConfigError(fmt::format("aggregation must be 'mean' or 'last', got '{}'", text));
}

std::string_view aggregation_name(Aggregation a) { return a == Aggregation::Mean ? "mean" : "last"; }

}  // namespace actrec
