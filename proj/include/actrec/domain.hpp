#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace actrec {

inline constexpr int kNumCategories = 21;

/// The 21 daily-activity categories, in canonical report order.
enum class Activity : std::uint8_t {
    PublicTransport,
    Driving,
    WalkingOutdoor,
    WalkingIndoor,
    Biking,
    DrinkingTogether,
    DrinkingEatingAlone,
    EatingTogether,
    Socializing,
    AttendingSeminar,
    Meeting,
    Reading,
    TV,
    CleaningChores,
    Working,
    Cooking,
    Shopping,
    Talking,
    Resting,
    Mobile,
    Plane,
};

using ClassDistribution = std::array<double, kNumCategories>;
using ClassCounts = std::array<std::uint64_t, kNumCategories>;

constexpr int to_index(Activity a) { return static_cast<int>(a); }
Activity activity_from_index(int index);
std::string_view activity_name(Activity a);
std::string_view activity_name(int index);
std::optional<Activity> parse_activity(std::string_view name);

struct FrameRecord {
    std::string frame_id;
    std::string user_id;
    std::string day_id;
    int seq_index = 0;
    int timestamp = 0;  // minutes since midnight, 0..1439
    int weekday = 0;    // 0..6
    Activity label = Activity::PublicTransport;

    bool operator==(const FrameRecord&) const = default;
};

struct DayKey {
    std::string user_id;
    std::string day_id;

    auto operator<=>(const DayKey&) const = default;
    bool operator==(const DayKey&) const = default;
};

struct DaySegment {
    std::string user_id;
    std::string day_id;
    std::vector<FrameRecord> frames;  // ordered by seq_index

    DayKey key() const { return {user_id, day_id}; }
    std::size_t size() const { return frames.size(); }
    bool operator==(const DaySegment&) const = default;
};

/// A validated dataset: frames grouped into day segments sorted by
/// (user_id, day_id), each segment ordered by seq_index.
class DatasetManifest {
public:
    DatasetManifest() = default;

    /// Validates the records and groups them per day. Throws DataError.
    static DatasetManifest from_frames(std::vector<FrameRecord> frames);

    const std::vector<DaySegment>& days() const { return days_; }
    std::size_t frame_count() const { return frame_count_; }

    /// All frames in canonical (day, seq_index) order.
    std::vector<FrameRecord> frames() const;
    std::vector<Activity> labels() const;

    const FrameRecord& frame(std::string_view frame_id) const;
    bool contains(std::string_view frame_id) const;

    bool operator==(const DatasetManifest& other) const { return days_ == other.days_; }

private:
    struct Location {
        std::size_t day = 0;
        std::size_t pos = 0;
    };

    std::vector<DaySegment> days_;
    std::size_t frame_count_ = 0;
    std::unordered_map<std::string, Location> index_;
};

DatasetManifest parse_manifest(std::istream& in, std::string_view source = "<stream>");
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& out, const DatasetManifest& manifest);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

ClassDistribution label_distribution(std::span<const FrameRecord> frames);
ClassDistribution label_distribution(std::span<const Activity> labels);
ClassCounts label_counts(std::span<const Activity> labels);

}  // namespace actrec
