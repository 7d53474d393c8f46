#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "actrec/domain.hpp"

namespace actrec {

enum class FeatureRole : std::uint8_t {
    Embedding,       // backbone layer activations (FC1/FC2/GAP/AP)
    Score,           // per-frame class probabilities
    ColorHistogram,  // 10 bins per RGB channel
    DateTime,        // weekday one-hot + cyclic time of day
};

inline constexpr int kHistogramBins = 10;
inline constexpr int kColorHistogramDim = 3 * kHistogramBins;
inline constexpr int kDateTimeDim = 9;

std::string_view role_name(FeatureRole role);
FeatureRole parse_role(std::string_view name);

/// Ordered (role, dim) list describing how a fused vector was assembled.
using FusionSignature = std::vector<std::pair<FeatureRole, int>>;

/// Per-frame feature vectors of one role, stored row-contiguously in
/// insertion order.
class FeatureMatrix {
public:
    FeatureMatrix(FeatureRole role, int dim);

    FeatureRole role() const { return role_; }
    int dim() const { return dim_; }
    std::size_t rows() const { return ids_.size(); }

    /// Adds a row after checking the role invariants. Throws DataError.
    void add_row(std::string frame_id, std::span<const double> values);

    bool contains(std::string_view frame_id) const;
    std::span<const double> row(std::string_view frame_id) const;
    std::span<const double> row_at(std::size_t i) const;
    const std::vector<std::string>& ids() const { return ids_; }

    const FusionSignature& signature() const { return signature_; }
    void set_signature(FusionSignature sig) { signature_ = std::move(sig); }

private:
    FeatureRole role_;
    int dim_;
    std::vector<std::string> ids_;
    std::vector<double> data_;
    std::unordered_map<std::string, std::size_t> index_;
    FusionSignature signature_;
};

/// Reads a text or binary (magic "TFFM") feature file.
FeatureMatrix load_features(const std::filesystem::path& path, FeatureRole role);
FeatureMatrix read_features(std::istream& in, FeatureRole role, std::string_view source = "<stream>");
void write_features_text(std::ostream& out, const FeatureMatrix& m);
void write_features_binary(std::ostream& out, const FeatureMatrix& m);
void save_features(const std::filesystem::path& path, const FeatureMatrix& m, bool binary = false);

/// Weekday one-hot (7) followed by sin and cos of the time-of-day angle.
std::vector<double> datetime_features(const FrameRecord& frame);
FeatureMatrix datetime_matrix(const DatasetManifest& manifest);

/// 10-bin histogram per channel of interleaved 8-bit RGB pixels, each
/// channel block normalized to sum 1.
std::vector<double> color_histogram(std::span<const std::uint8_t> rgb);

/// Concatenates the rows of `parts`, in order, for each requested frame.
FeatureMatrix fuse(std::span<const FeatureMatrix> parts, std::span<const std::string> frame_ids);

}  // namespace actrec
