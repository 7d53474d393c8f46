#include "actrec/domain.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "actrec/errors.hpp"

namespace actrec {

namespace {

constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {
    "Public Transport",
    "Driving",
    "Walking outdoor",
    "Walking indoor",
    "Biking",
    "Drinking together",
    "Drinking/eating alone",
    "Eating together",
    "Socializing",
    "Attending a seminar",
    "Meeting",
    "Reading",
    "TV",
    "Cleaning and chores",
    "Working",
    "Cooking",
    "Shopping",
    "Talking",
    "Resting",
    "Mobile",
    "Plane",
};

constexpr std::string_view kManifestHeader =
    "frame_id\tuser_id\tday_id\tseq_index\ttimestamp\tweekday\tlabel";

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab - start));
        if (tab == std::string_view::npos) break;
        start = tab + 1;
    }
    return fields;
}

int parse_int_field(std::string_view text, std::string_view field, std::string_view source,
                    std::size_t line_no) {
    int value = 0;
    std::size_t consumed = 0;
    try {
        value = std::stoi(std::string(text), &consumed);
    } catch (const std::exception&) {
        consumed = 0;
    }
    if (text.empty() || consumed != text.size())
        throw DataError(fmt::format("{}:{}: field {} is not an integer: '{}'", source, line_no, field,
                                    text));
    return value;
}

}  // namespace

Activity activity_from_index(int index) {
    if (index < 0 || index >= kNumCategories)
        throw DataError(fmt::format("category index {} out of range [0, {})", index, kNumCategories));
    return static_cast<Activity>(index);
}

std::string_view activity_name(Activity a) { return kCategoryNames[static_cast<std::size_t>(a)]; }

std::string_view activity_name(int index) { return activity_name(activity_from_index(index)); }

std::optional<Activity> parse_activity(std::string_view name) {
    const auto it = std::find(kCategoryNames.begin(), kCategoryNames.end(), name);
    if (it == kCategoryNames.end()) return std::nullopt;
    return static_cast<Activity>(it - kCategoryNames.begin());
}

DatasetManifest DatasetManifest::from_frames(std::vector<FrameRecord> frames) {
    if (frames.empty()) throw DataError("empty manifest");

    std::map<DayKey, std::vector<FrameRecord>> grouped;
    std::unordered_map<std::string, bool> seen;
    for (auto& f : frames) {
        if (f.frame_id.empty()) throw DataError("frame with empty frame_id");
        if (!seen.emplace(f.frame_id, true).second)
            throw DataError(fmt::format("duplicate frame_id '{}'", f.frame_id));
        if (f.timestamp < 0 || f.timestamp > 1439)
            throw DataError(fmt::format("frame '{}': timestamp {} outside 0..1439", f.frame_id,
                                        f.timestamp));
        if (f.weekday < 0 || f.weekday > 6)
            throw DataError(
                fmt::format("frame '{}': weekday {} outside 0..6", f.frame_id, f.weekday));
        if (to_index(f.label) < 0 || to_index(f.label) >= kNumCategories)
            throw DataError(fmt::format("frame '{}': unknown label", f.frame_id));
        grouped[DayKey{f.user_id, f.day_id}].push_back(std::move(f));
    }

    DatasetManifest m;
    for (auto& [key, day_frames] : grouped) {
        std::sort(day_frames.begin(), day_frames.end(),
                  [](const FrameRecord& a, const FrameRecord& b) { return a.seq_index < b.seq_index; });
        for (std::size_t i = 0; i < day_frames.size(); ++i) {
            const auto& f = day_frames[i];
            if (f.seq_index != static_cast<int>(i)) {
                if (f.seq_index == static_cast<int>(i) - 1)
                    throw DataError(fmt::format("user '{}' day '{}': duplicate seq_index {} (frame '{}')",
                                                key.user_id, key.day_id, f.seq_index, f.frame_id));
                throw DataError(fmt::format("user '{}' day '{}': gap in seq_index at index {} (next is "
                                            "frame '{}' with seq_index {})",
                                            key.user_id, key.day_id, i, f.frame_id, f.seq_index));
            }
            if (i > 0 && f.timestamp <= day_frames[i - 1].timestamp)
                throw DataError(fmt::format(
                    "user '{}' day '{}': timestamps not strictly increasing at frame '{}'",
                    key.user_id, key.day_id, f.frame_id));
        }
        m.frame_count_ += day_frames.size();
        m.days_.push_back(DaySegment{key.user_id, key.day_id, std::move(day_frames)});
    }
    for (std::size_t d = 0; d < m.days_.size(); ++d)
        for (std::size_t p = 0; p < m.days_[d].frames.size(); ++p)
            m.index_.emplace(m.days_[d].frames[p].frame_id, Location{d, p});
    return m;
}

std::vector<FrameRecord> DatasetManifest::frames() const {
    std::vector<FrameRecord> out;
    out.reserve(frame_count_);
    for (const auto& d : days_) out.insert(out.end(), d.frames.begin(), d.frames.end());
    return out;
}

std::vector<Activity> DatasetManifest::labels() const {
    std::vector<Activity> out;
    out.reserve(frame_count_);
    for (const auto& d : days_)
        for (const auto& f : d.frames) out.push_back(f.label);
    return out;
}

const FrameRecord& DatasetManifest::frame(std::string_view frame_id) const {
    const auto it = index_.find(std::string(frame_id));
    if (it == index_.end()) throw DataError(fmt::format("unknown frame_id '{}'", frame_id));
    return days_[it->second.day].frames[it->second.pos];
}

bool DatasetManifest::contains(std::string_view frame_id) const {
    return index_.contains(std::string(frame_id));
}

DatasetManifest parse_manifest(std::istream& in, std::string_view source) {
    std::vector<FrameRecord> frames;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        if (!have_header) {
            if (line != kManifestHeader)
                throw DataError(fmt::format("{}:{}: missing manifest header", source, line_no));
            have_header = true;
            continue;
        }
        const auto fields = split_tabs(line);
        if (fields.size() != 7)
            throw DataError(fmt::format("{}:{}: expected 7 tab-separated fields, found {}", source,
                                        line_no, fields.size()));
        FrameRecord f;
        f.frame_id = std::string(fields[0]);
        f.user_id = std::string(fields[1]);
        f.day_id = std::string(fields[2]);
        f.seq_index = parse_int_field(fields[3], "seq_index", source, line_no);
        f.timestamp = parse_int_field(fields[4], "timestamp", source, line_no);
        f.weekday = parse_int_field(fields[5], "weekday", source, line_no);
        const auto label = parse_activity(fields[6]);
        if (!label)
            throw DataError(fmt::format("{}:{}: frame '{}' has unknown label '{}'", source, line_no,
                                        f.frame_id, fields[6]));
        if (f.seq_index < 0)
            throw DataError(fmt::format("{}:{}: frame '{}' has negative seq_index", source, line_no,
                                        f.frame_id));
        f.label = *label;
        frames.push_back(std::move(f));
    }
    if (!have_header && frames.empty()) throw DataError(fmt::format("{}: empty manifest", source));
    return DatasetManifest::from_frames(std::move(frames));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot open manifest '{}'", path.string()));
    return parse_manifest(in, path.string());
}

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
    out << kManifestHeader << '\n';
    for (const auto& day : manifest.days())
        for (const auto& f : day.frames)
            out << fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\n", f.frame_id, f.user_id, f.day_id,
                               f.seq_index, f.timestamp, f.weekday, activity_name(f.label));
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write manifest '{}'", path.string()));
    write_manifest(out, manifest);
}

ClassCounts label_counts(std::span<const Activity> labels) {
    ClassCounts counts{};
    for (const auto l : labels) ++counts[static_cast<std::size_t>(to_index(l))];
    return counts;
}

ClassDistribution label_distribution(std::span<const Activity> labels) {
    if (labels.empty()) throw DataError("label_distribution of an empty frame list");
    const auto counts = label_counts(labels);
    ClassDistribution dist{};
    const auto n = static_cast<double>(labels.size());
    for (std::size_t c = 0; c < dist.size(); ++c) dist[c] = static_cast<double>(counts[c]) / n;
    return dist;
}

ClassDistribution label_distribution(std::span<const FrameRecord> frames) {
    std::vector<Activity> labels;
    labels.reserve(frames.size());
    for (const auto& f : frames) labels.push_back(f.label);
    return label_distribution(labels);
}

}  // namespace actrec
