#pragma once

#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "actrec/domain.hpp"
#include "actrec/features.hpp"

namespace actrec {

/// T consecutive frames of one day. Windows on days shorter than T are
/// prefix-padded by repeating the day's first frame.
struct Window {
    std::string user_id;
    std::string day_id;
    int start = 0;
    int timestep = 0;
    std::vector<std::string> frame_ids;

    bool operator==(const Window&) const = default;
};

/// Windows starting at 0, stride, 2*stride, ... with start + T <= N; a
/// single padded window when N < T.
std::vector<Window> sliding_windows(const DaySegment& segment, int timestep, int stride = 1);

/// One window per frame, ending at that frame; the first T-1 are padded.
std::vector<Window> trailing_windows(const DaySegment& segment, int timestep);

std::vector<double> concat_window_features(const Window& window, const FeatureMatrix& features);

/// Training target of a many-to-one window: the label of its last frame.
Activity many_to_one_label(const Window& window, const DatasetManifest& manifest);

using WindowPrediction = std::pair<Window, std::vector<std::vector<double>>>;

/// Mean of all distributions emitted for each frame across the windows.
/// Throws DataError if a frame in `required` is covered by no window.
std::map<std::string, std::vector<double>> aggregate_per_frame(
    std::span<const WindowPrediction> window_predictions, std::span<const std::string> required = {});

/// Distribution emitted at the last position of each window, keyed by that
/// window's last frame.
std::map<std::string, std::vector<double>> aggregate_last(
    std::span<const WindowPrediction> window_predictions, std::span<const std::string> required = {});

enum class Aggregation { Mean, Last };
Aggregation parse_aggregation(std::string_view text);
std::string_view aggregation_name(Aggregation a);

}  // namespace actrec
