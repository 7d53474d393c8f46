#include "actrec/features.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "actrec/binio.hpp"
#include "actrec/errors.hpp"

namespace actrec {

namespace {

constexpr double kNormTolerance = 1e-6;
constexpr std::string_view kFeatureMagic = "TFFM";

double parse_real(std::string_view text, std::string_view source, std::size_t line_no) {
    std::size_t consumed = 0;
    double v = 0.0;
    try {
        v = std::stod(std::string(text), &consumed);
    } catch (const std::exception&) {
        consumed = 0;
    }
    if (text.empty() || consumed != text.size() || !std::isfinite(v))
        throw DataError(fmt::format("{}:{}: invalid real value '{}'", source, line_no, text));
    return v;
}

}  // namespace

std::string_view role_name(FeatureRole role) {
    switch (role) {
        case FeatureRole::Embedding: return "embedding";
        case FeatureRole::Score: return "score";
        case FeatureRole::ColorHistogram: return "color_histogram";
        case FeatureRole::DateTime: return "datetime";
    }
    return "unknown";
}

FeatureRole parse_role(std::string_view name) {
    for (auto r : {FeatureRole::Embedding, FeatureRole::Score, FeatureRole::ColorHistogram,
                   FeatureRole::DateTime})
        if (role_name(r) == name) return r;
    throw DataError(fmt::format("unknown feature role '{}'", name));
}

FeatureMatrix::FeatureMatrix(FeatureRole role, int dim) : role_(role), dim_(dim) {
    if (dim <= 0) throw DataError(fmt::format("feature dim must be positive, got {}", dim));
    if (role == FeatureRole::ColorHistogram && dim != kColorHistogramDim)
        throw DataError(fmt::format("color histogram features must have dim {}, got {}",
                                    kColorHistogramDim, dim));
    if (role == FeatureRole::DateTime && dim != kDateTimeDim)
        throw DataError(
            fmt::format("datetime features must have dim {}, got {}", kDateTimeDim, dim));
    signature_ = {{role, dim}};
}

void FeatureMatrix::add_row(std::string frame_id, std::span<const double> values) {
    if (static_cast<int>(values.size()) != dim_)
        throw DataError(fmt::format("frame '{}': row has dim {}, expected {}", frame_id,
                                    values.size(), dim_));
    for (const double v : values)
        if (!std::isfinite(v)) throw DataError(fmt::format("frame '{}': non-finite value", frame_id));
    if (role_ == FeatureRole::Score) {
        double sum = 0.0;
        for (const double v : values) {
            if (v < 0.0) throw DataError(fmt::format("frame '{}': negative score {}", frame_id, v));
            sum += v;
        }
        if (std::abs(sum - 1.0) > kNormTolerance)
            throw DataError(
                fmt::format("frame '{}': score row sums to {:.6g} (not normalized)", frame_id, sum));
    } else if (role_ == FeatureRole::ColorHistogram) {
        for (int ch = 0; ch < 3; ++ch) {
            double sum = 0.0;
            for (int b = 0; b < kHistogramBins; ++b) {
                const double v = values[static_cast<std::size_t>(ch * kHistogramBins + b)];
                if (v < 0.0) throw DataError(fmt::format("frame '{}': negative histogram bin", frame_id));
                sum += v;
            }
            if (std::abs(sum - 1.0) > kNormTolerance)
                throw DataError(fmt::format("frame '{}': histogram channel {} sums to {}", frame_id,
                                            ch, sum));
        }
    }
    if (index_.contains(frame_id))
        throw DataError(fmt::format("duplicate feature row for frame '{}'", frame_id));
    index_.emplace(frame_id, ids_.size());
    ids_.push_back(std::move(frame_id));
    data_.insert(data_.end(), values.begin(), values.end());
}

bool FeatureMatrix::contains(std::string_view frame_id) const {
    return index_.contains(std::string(frame_id));
}

std::span<const double> FeatureMatrix::row(std::string_view frame_id) const {
    const auto it = index_.find(std::string(frame_id));
    if (it == index_.end())
        throw DataError(fmt::format("no {} features for frame '{}'", role_name(role_), frame_id));
    return row_at(it->second);
}

std::span<const double> FeatureMatrix::row_at(std::size_t i) const {
    const auto d = static_cast<std::size_t>(dim_);
    return std::span<const double>(data_).subspan(i * d, d);
}

FeatureMatrix read_features(std::istream& in, FeatureRole role, std::string_view source) {
    const int first = in.peek();
    if (first == 'T') {
        std::array<char, 4> magic{};
        in.read(magic.data(), 4);
        if (in && std::string_view(magic.data(), 4) == kFeatureMagic) {
            const auto dim = binio::read_u32(in, "feature dim");
            const auto count = binio::read_u32(in, "feature row count");
            FeatureMatrix m(role, static_cast<int>(dim));
            std::vector<double> row(dim);
            for (std::uint32_t r = 0; r < count; ++r) {
                auto id = binio::read_string(in, "frame_id");
                for (auto& v : row) v = binio::read_f64(in, "feature value");
                m.add_row(std::move(id), row);
            }
            return m;
        }
        throw DataError(fmt::format("{}: unrecognized feature file", source));
    }

    std::string line;
    std::size_t line_no = 0;
    std::optional<FeatureMatrix> m;
    std::vector<double> row;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        if (!m) {
            std::istringstream header(line);
            std::string dim_tok, role_tok;
            header >> dim_tok >> role_tok;
            if (dim_tok.rfind("dim=", 0) != 0 || role_tok.rfind("role=", 0) != 0)
                throw DataError(fmt::format("{}:{}: expected header 'dim=<D> role=<ROLE>'", source,
                                            line_no));
            const int dim = static_cast<int>(parse_real(dim_tok.substr(4), source, line_no));
            const auto file_role = parse_role(role_tok.substr(5));
            if (file_role != role)
                throw DataError(fmt::format("{}: file declares role {}, expected {}", source,
                                            role_name(file_role), role_name(role)));
            m.emplace(role, dim);
            continue;
        }
        std::string_view rest(line);
        auto tab = rest.find('\t');
        std::string id(rest.substr(0, tab));
        row.clear();
        while (tab != std::string_view::npos) {
            rest = rest.substr(tab + 1);
            tab = rest.find('\t');
            row.push_back(parse_real(rest.substr(0, tab), source, line_no));
        }
        if (static_cast<int>(row.size()) != m->dim())
            throw DataError(fmt::format("{}:{}: frame '{}' has dim {}, file declares dim={}", source,
                                        line_no, id, row.size(), m->dim()));
        m->add_row(std::move(id), row);
    }
    if (!m) throw DataError(fmt::format("{}: empty feature file", source));
    return std::move(*m);
}

FeatureMatrix load_features(const std::filesystem::path& path, FeatureRole role) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open feature file '{}'", path.string()));
    return read_features(in, role, path.string());
}

void write_features_text(std::ostream& out, const FeatureMatrix& m) {
    out << fmt::format("dim={} role={}\n", m.dim(), role_name(m.role()));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        out << m.ids()[i];
        for (const double v : m.row_at(i)) out << fmt::format("\t{}", v);
        out << '\n';
    }
}

void write_features_binary(std::ostream& out, const FeatureMatrix& m) {
    binio::write_magic(out, kFeatureMagic);
    binio::write_u32(out, static_cast<std::uint32_t>(m.dim()));
    binio::write_u32(out, static_cast<std::uint32_t>(m.rows()));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        binio::write_string(out, m.ids()[i]);
        for (const double v : m.row_at(i)) binio::write_f64(out, v);
    }
}

void save_features(const std::filesystem::path& path, const FeatureMatrix& m, bool binary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write feature file '{}'", path.string()));
    if (binary)
        write_features_binary(out, m);
    else
        write_features_text(out, m);
}

std::vector<double> datetime_features(const FrameRecord& frame) {
    std::vector<double> v(kDateTimeDim, 0.0);
    v[static_cast<std::size_t>(frame.weekday)] = 1.0;
    const double angle = 2.0 * std::numbers::pi * frame.timestamp / 1440.0;
    v[7] = std::sin(angle);
    v[8] = std::cos(angle);
    return v;
}

FeatureMatrix datetime_matrix(const DatasetManifest& manifest) {
    FeatureMatrix m(FeatureRole::DateTime, kDateTimeDim);
    for (const auto& day : manifest.days())
        for (const auto& f : day.frames) m.add_row(f.frame_id, datetime_features(f));
    return m;
}

std::vector<double> color_histogram(std::span<const std::uint8_t> rgb) {
    if (rgb.empty() || rgb.size() % 3 != 0)
        throw DataError("color_histogram expects a non-empty interleaved RGB buffer");
    std::vector<double> hist(kColorHistogramDim, 0.0);
    const std::size_t pixels = rgb.size() / 3;
    for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t ch = 0; ch < 3; ++ch) {
            const int bin = rgb[3 * p + ch] * kHistogramBins / 256;
            hist[ch * kHistogramBins + static_cast<std::size_t>(bin)] += 1.0;
        }
    for (auto& h : hist) h /= static_cast<double>(pixels);
    return hist;
}

FeatureMatrix fuse(std::span<const FeatureMatrix> parts, std::span<const std::string> frame_ids) {
    if (parts.empty()) throw DataError("fuse needs at least one feature part");
    int dim = 0;
    FusionSignature sig;
    for (const auto& p : parts) {
        dim += p.dim();
        sig.insert(sig.end(), p.signature().begin(), p.signature().end());
    }
    FeatureMatrix out(FeatureRole::Embedding, dim);
    out.set_signature(std::move(sig));
    std::vector<double> row;
    row.reserve(static_cast<std::size_t>(dim));
    for (const auto& id : frame_ids) {
        row.clear();
        for (const auto& p : parts) {
            if (!p.contains(id))
                throw DataError(
                    fmt::format("fuse: frame '{}' missing from {} part", id, role_name(p.role())));
            const auto r = p.row(id);
            row.insert(row.end(), r.begin(), r.end());
        }
        out.add_row(id, row);
    }
    return out;
}

}  // namespace actrec
