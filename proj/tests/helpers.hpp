#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "actrec/domain.hpp"

namespace testutil {

using actrec::Activity;

inline actrec::FrameRecord frame(std::string user, std::string day, int seq, Activity label) {
    return {fmt::format("{}_{}_{:04}", user, day, seq), user, day, seq, 480 + seq, 0, label};
}

/// One day per entry of `days`, all for user "u0" unless `user` is given.
inline actrec::DatasetManifest manifest_of(const std::vector<std::vector<Activity>>& days,
                                           const std::string& user = "u0") {
    std::vector<actrec::FrameRecord> frames;
    for (std::size_t d = 0; d < days.size(); ++d)
        for (std::size_t i = 0; i < days[d].size(); ++i)
            frames.push_back(frame(user, fmt::format("d{:02}", d), static_cast<int>(i), days[d][i]));
    return actrec::DatasetManifest::from_frames(std::move(frames));
}

inline std::vector<Activity> repeat(Activity a, std::size_t n) { return std::vector<Activity>(n, a); }

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Fresh empty directory under the working directory.
inline std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::current_path() / "scratch" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testutil
