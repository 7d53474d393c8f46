#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "actrec/errors.hpp"
#include "actrec/features.hpp"
#include "helpers.hpp"

using namespace actrec;

namespace {

std::string error_of(const std::string& text, FeatureRole role) {
    std::istringstream in(text);
    try {
        read_features(in, role);
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

FeatureMatrix random_matrix(FeatureRole role, int dim, int rows, unsigned seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> n;
    FeatureMatrix m(role, dim);
    for (int r = 0; r < rows; ++r) {
        std::vector<double> v(static_cast<std::size_t>(dim));
        for (auto& x : v) x = n(gen);
        m.add_row("f" + std::to_string(r), v);
    }
    return m;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("text file with two rows of dim 4") {
    std::istringstream in("dim=4 role=embedding\nf1\t1\t2\t3\t4\nf2\t0.5\t-1e-3\t0\t7\n");
    const auto m = read_features(in, FeatureRole::Embedding);
    CHECK(m.rows() == 2);
    CHECK(m.dim() == 4);
    CHECK(m.row("f2")[1] == -1e-3);
}

TEST_CASE("score row that does not sum to one names the frame") {
    std::string text = "dim=21 role=score\nbad";
    const double row[21] = {0.7, 0.2, 0.2};
    for (const double v : row) text += "\t" + std::to_string(v);
    const auto msg = error_of(text + "\n", FeatureRole::Score);
    CHECK(msg.find("'bad'") != std::string::npos);
    CHECK(msg.find("1.1") != std::string::npos);
}

TEST_CASE("row of the wrong dimension is rejected") {
    const auto msg = error_of("dim=4 role=embedding\nf1\t1\t2\t3\n", FeatureRole::Embedding);
    CHECK(msg.find("dim 3") != std::string::npos);
    CHECK(msg.find("dim=4") != std::string::npos);
}

TEST_CASE("declared role must match the requested one") {
    CHECK_FALSE(error_of("dim=2 role=embedding\nf\t1\t2\n", FeatureRole::Score).empty());
    CHECK_FALSE(error_of("dim=2\nf\t1\t2\n", FeatureRole::Embedding).empty());
}

TEST_CASE("text and binary round trips are exact") {
    const auto m = random_matrix(FeatureRole::Embedding, 5, 9, 4);
    for (const bool binary : {false, true}) {
        std::stringstream buf;
        if (binary)
            write_features_binary(buf, m);
        else
            write_features_text(buf, m);
        const auto back = read_features(buf, FeatureRole::Embedding);
        REQUIRE(back.rows() == m.rows());
        for (std::size_t i = 0; i < m.rows(); ++i) {
            CHECK(back.ids()[i] == m.ids()[i]);
            for (int j = 0; j < 5; ++j) CHECK(back.row_at(i)[static_cast<std::size_t>(j)] == m.row_at(i)[static_cast<std::size_t>(j)]);
        }
    }
}

TEST_CASE("binary header is TFFM, dim, rows") {
    FeatureMatrix m(FeatureRole::Embedding, 2);
    m.add_row("ab", std::vector<double>{1.0, -2.0});
    std::ostringstream out;
    write_features_binary(out, m);
    const auto s = out.str();
    REQUIRE(s.size() == 4 + 4 + 4 + 4 + 2 + 16);
    CHECK(s.substr(0, 4) == "TFFM");
    CHECK(s[4] == 2);
    CHECK(s[8] == 1);
    CHECK(s[12] == 2);
    CHECK(s.substr(16, 2) == "ab");
}

TEST_CASE("histogram rows must have normalized channel blocks") {
    std::vector<std::uint8_t> rgb = {0, 128, 255, 25, 26, 250};
    const auto h = color_histogram(rgb);
    REQUIRE(h.size() == 30);
    for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int b = 0; b < 10; ++b) s += h[static_cast<std::size_t>(c * 10 + b)];
        CHECK(s == doctest::Approx(1.0));
    }
    CHECK(h[0] == 1.0);       // R: 0 and 25 both land in bin 0
    CHECK(h[10 + 5] == 0.5);  // G: 128 -> bin 5
    CHECK(h[10 + 1] == 0.5);  // G: 26 -> bin 1
    CHECK(h[20 + 9] == 1.0);  // B: 255 and 250 -> bin 9
    FeatureMatrix m(FeatureRole::ColorHistogram, kColorHistogramDim);
    CHECK_NOTHROW(m.add_row("ok", h));
    auto broken = h;
    broken[0] = 0.9;
    CHECK_THROWS_AS(m.add_row("bad", broken), DataError);
    CHECK_THROWS_AS(FeatureMatrix(FeatureRole::ColorHistogram, 29), DataError);
}

TEST_CASE("datetime_features examples") {
    FrameRecord f{"f", "u", "d", 0, 0, 0, Activity::TV};
    auto v = datetime_features(f);
    REQUIRE(v.size() == 9);
    const std::vector<double> midnight = {1, 0, 0, 0, 0, 0, 0, 0.0, 1.0};
    CHECK(v == midnight);

    f.weekday = 3;
    f.timestamp = 720;
    v = datetime_features(f);
    CHECK(v[3] == 1.0);
    CHECK(v[0] == 0.0);
    CHECK(std::abs(v[7]) < 1e-15);
    CHECK(v[8] == -1.0);

    f.timestamp = 360;
    v = datetime_features(f);
    CHECK(v[7] == 1.0);
    CHECK(std::abs(v[8]) < 1e-15);
}

TEST_CASE("datetime sin^2 + cos^2 = 1 for every minute") {
    FrameRecord f{"f", "u", "d", 0, 0, 0, Activity::TV};
    for (int t = 0; t < 1440; ++t) {
        f.timestamp = t;
        const auto v = datetime_features(f);
        CHECK(std::abs(v[7] * v[7] + v[8] * v[8] - 1.0) <= 1e-12);
    }
}

TEST_CASE("fuse dimensions and order") {
    const auto a = random_matrix(FeatureRole::Embedding, 4, 3, 1);
    FeatureMatrix s(FeatureRole::Score, 21);
    for (const auto& id : a.ids()) {
        std::vector<double> p(21, 0.0);
        p[2] = 1.0;
        s.add_row(id, p);
    }
    const std::vector<FeatureMatrix> parts = {a, s};
    const auto fused = fuse(parts, a.ids());
    CHECK(fused.dim() == 25);
    CHECK(fused.role() == FeatureRole::Embedding);
    const FusionSignature sig = {{FeatureRole::Embedding, 4}, {FeatureRole::Score, 21}};
    CHECK(fused.signature() == sig);
    CHECK(fused.row("f1")[3] == a.row("f1")[3]);
    CHECK(fused.row("f1")[6] == 1.0);

    const std::vector<FeatureMatrix> single = {a};
    const auto same = fuse(single, a.ids());
    for (std::size_t i = 0; i < a.rows(); ++i)
        CHECK(std::equal(same.row_at(i).begin(), same.row_at(i).end(), a.row_at(i).begin()));

    const std::vector<std::string> missing = {"f0", "nope"};
    CHECK_THROWS_AS(fuse(parts, missing), DataError);
}

TEST_CASE("score + datetime + histogram fusion has dim 60") {
    const auto m = testutil::manifest_of({{Activity::TV, Activity::TV}});
    FeatureMatrix s(FeatureRole::Score, 21), h(FeatureRole::ColorHistogram, 30);
    std::vector<double> p(21, 1.0 / 21.0);
    const std::vector<std::uint8_t> rgb = {1, 2, 3};
    std::vector<std::string> ids;
    for (const auto& f : m.frames()) {
        s.add_row(f.frame_id, p);
        h.add_row(f.frame_id, color_histogram(rgb));
        ids.push_back(f.frame_id);
    }
    const std::vector<FeatureMatrix> parts = {s, datetime_matrix(m), h};
    CHECK(fuse(parts, ids).dim() == 60);
}

TEST_CASE("fuse is associative") {
    const auto a = random_matrix(FeatureRole::Embedding, 2, 6, 7);
    const auto b = random_matrix(FeatureRole::Embedding, 3, 6, 8);
    const auto c = random_matrix(FeatureRole::Embedding, 4, 6, 9);
    const std::vector<FeatureMatrix> bc = {b, c};
    const std::vector<FeatureMatrix> nested = {a, fuse(bc, a.ids())};
    const std::vector<FeatureMatrix> flat = {a, b, c};
    const auto x = fuse(nested, a.ids());
    const auto y = fuse(flat, a.ids());
    for (std::size_t i = 0; i < x.rows(); ++i)
        CHECK(std::equal(x.row_at(i).begin(), x.row_at(i).end(), y.row_at(i).begin(), y.row_at(i).end()));
}

}  // TEST_SUITE
