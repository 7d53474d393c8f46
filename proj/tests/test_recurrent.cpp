#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "actrec/errors.hpp"
#include "actrec/random.hpp"
#include "actrec/recurrent.hpp"
#include "oracles.hpp"

using namespace actrec;

namespace {

Sequence random_sequence(Rng& rng, int T, int dim) {
    Sequence s(static_cast<std::size_t>(T), std::vector<double>(static_cast<std::size_t>(dim)));
    for (auto& v : s)
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return s;
}

std::vector<int> random_targets(Rng& rng, int T) {
    std::vector<int> t(static_cast<std::size_t>(T));
    for (auto& y : t) y = static_cast<int>(rng.uniform_index(kNumCategories));
    return t;
}

void check_distribution(const std::vector<double>& p) {
    REQUIRE(p.size() == static_cast<std::size_t>(kNumCategories));
    double s = 0;
    for (const double v : p) {
        CHECK(v >= 0.0);
        s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
}

// Outputs of lstm_reference on the seed-0 model (input 3, hidden 2) and the
// fixed input below, frozen from the scalar oracle.
constexpr double kTraceStep0Class0 = 0.043877668805882744;
constexpr double kTraceStep2Class7 = 0.035822850097620103;
constexpr double kTraceStep2Class20 = 0.037508467333441479;

}  // namespace

TEST_SUITE("recurrent") {

TEST_CASE("parameter layout follows the serialization order") {
    const RecurrentModel m(5, 4);
    CHECK(m.param_count() == RecurrentModel::param_count(5, 4));
    CHECK(m.param_count() == static_cast<std::size_t>(4 * 5 * 4 + 4 * 4 * 4 + 4 * 4 + 4 * 21 + 21));
    CHECK(m.offset_W(Gate::Input) == 0);
    CHECK(m.offset_W(Gate::Forget) == 20);
    CHECK(m.offset_W(Gate::Candidate) == 60);
    CHECK(m.offset_U(Gate::Input) == 80);
    CHECK(m.offset_b(Gate::Input) == 144);
    CHECK(m.offset_W_out() == 160);
    CHECK(m.offset_b_out() == 160 + 84);
    RecurrentModel w(5, 4);
    w.W(Gate::Forget)(1, 2) = 7.0;  // row-major: offset 20 + 1*4 + 2
    CHECK(w.params()[26] == 7.0);
    w.W_out()(3, 20) = -1.0;
    CHECK(w.params()[static_cast<Eigen::Index>(160 + 3 * 21 + 20)] == -1.0);
}

TEST_CASE("zero model outputs the uniform distribution") {
    const RecurrentModel m(21, 8);
    Rng rng(1);
    const auto out = forward(m, random_sequence(rng, 6, 21));
    REQUIRE(out.size() == 6);
    for (const auto& p : out)
        for (const double v : p) CHECK(v == doctest::Approx(1.0 / 21.0).epsilon(1e-15));
}

TEST_CASE("T=1 gives one well-formed distribution") {
    RecurrentModel m(4, 3);
    m.initialize(3);
    Rng rng(2);
    const auto out = forward(m, random_sequence(rng, 1, 4));
    REQUIRE(out.size() == 1);
    check_distribution(out[0]);
}

TEST_CASE("forward matches the hand-unrolled reference") {
    RecurrentModel m(3, 2);
    m.initialize(0);
    const Sequence x = {{0.5, -1.0, 0.25}, {1.0, 0.0, -0.5}, {-0.75, 0.5, 2.0}};
    const auto got = forward(m, x);
    const auto want = oracle::lstm_reference(m, x);
    REQUIRE(got.size() == 3);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t k = 0; k < 21; ++k) CHECK(std::abs(got[t][k] - want[t][k]) <= 1e-14);
    CHECK(got[0][0] == doctest::Approx(kTraceStep0Class0).epsilon(1e-12));
    CHECK(got[2][7] == doctest::Approx(kTraceStep2Class7).epsilon(1e-12));
    CHECK(got[2][20] == doctest::Approx(kTraceStep2Class20).epsilon(1e-12));
}

TEST_CASE("random models agree with the reference at several sizes") {
    Rng rng(17);
    for (const int H : {1, 2, 5}) {
        RecurrentModel m(4, H);
        m.initialize(static_cast<std::uint64_t>(H));
        m.params() *= 3.0;
        const auto x = random_sequence(rng, 7, 4);
        const auto got = forward(m, x);
        const auto want = oracle::lstm_reference(m, x);
        for (std::size_t t = 0; t < 7; ++t) {
            check_distribution(got[t]);
            for (std::size_t k = 0; k < 21; ++k) CHECK(std::abs(got[t][k] - want[t][k]) <= 1e-13);
        }
    }
}

TEST_CASE("forward errors") {
    RecurrentModel m(3, 2);
    CHECK_THROWS_AS(forward(m, Sequence{}), DataError);
    CHECK_THROWS_AS(forward(m, Sequence{{1.0, 2.0}}), DataError);
}

TEST_CASE("eval mode ignores the dropout rate; train mode applies it") {
    RecurrentModel m(5, 4, 0.0);
    m.initialize(8);
    Rng rng(4);
    const auto x = random_sequence(rng, 5, 5);
    const auto plain = forward(m, x);
    m.set_dropout_rate(0.5);
    CHECK(forward(m, x) == plain);
    CHECK(forward(m, x, Mode::Eval, 1) == plain);
    const auto dropped = forward(m, x, Mode::Train, 1);
    CHECK(dropped != plain);
    CHECK(forward(m, x, Mode::Train, 1) == dropped);
    for (const auto& p : dropped) check_distribution(p);
}

TEST_CASE("forward_batch equals one-by-one forward") {
    RecurrentModel m(3, 4);
    m.initialize(12);
    Rng rng(9);
    std::vector<Sequence> xs;
    for (int i = 0; i < 300; ++i) xs.push_back(random_sequence(rng, 4, 3));
    const auto batch = forward_batch(m, xs);
    REQUIRE(batch.size() == xs.size());
    for (std::size_t i = 0; i < xs.size(); i += 37) {
        const auto one = forward(m, xs[i]);
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t k = 0; k < 21; ++k) CHECK(std::abs(batch[i][t][k] - one[t][k]) <= 1e-15);
    }
}

TEST_CASE("loss examples") {
    std::vector<std::vector<double>> onehot(3, std::vector<double>(21, 0.0));
    std::vector<int> y = {0, 4, 20};
    for (std::size_t t = 0; t < 3; ++t) onehot[t][static_cast<std::size_t>(y[t])] = 1.0;
    CHECK(sequence_loss(onehot, y) <= 1e-10);

    const std::vector<std::vector<double>> uniform(4, std::vector<double>(21, 1.0 / 21.0));
    const std::vector<int> y4 = {1, 2, 3, 4};
    CHECK(sequence_loss(uniform, y4) == doctest::Approx(std::log(21.0)).epsilon(1e-14));
    CHECK(sequence_loss(uniform, y4) == doctest::Approx(3.0445).epsilon(1e-4));

    std::vector<std::vector<double>> two(2, std::vector<double>(21, 0.0));
    two[0][0] = 0.5;
    two[0][1] = 0.5;
    two[1][0] = 0.75;
    two[1][1] = 0.25;
    const std::vector<int> y2 = {0, 1};
    CHECK(sequence_loss(two, y2) == doctest::Approx((std::log(2.0) + std::log(4.0)) / 2).epsilon(1e-14));
    CHECK(sequence_loss(two, y2) == doctest::Approx(1.0397).epsilon(1e-4));

    std::vector<double> w(21, 1.0);
    w[1] = 3.0;
    CHECK(sequence_loss(two, y2, w) == doctest::Approx((std::log(2.0) + 3 * std::log(4.0)) / 2).epsilon(1e-14));

    // a zero probability is clamped rather than producing infinity
    std::vector<std::vector<double>> zero(1, std::vector<double>(21, 0.0));
    zero[0][0] = 1.0;
    const std::vector<int> y1 = {1};
    CHECK(sequence_loss(zero, y1) == doctest::Approx(-std::log(1e-12)));
    const std::vector<int> too_many = {1, 2};
    CHECK_THROWS_AS(sequence_loss(zero, too_many), DataError);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.momentum = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.learning_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.weight_decay = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.dropout_rate = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.momentum = 1.0;
    const std::vector<TrainingWindow> w = {{{{1.0}}, {0}}};
    CHECK_THROWS_AS(train_recurrent(w, c), ConfigError);
    CHECK_THROWS_AS(train_recurrent({}, TrainConfig{}), DataError);
    const std::vector<TrainingWindow> ragged = {{{{1.0}, {1.0}}, {0, 0}}, {{{1.0}}, {0}}};
    CHECK_THROWS_AS(train_recurrent(ragged, TrainConfig{}), DataError);
}

TEST_CASE("one-hot window is learned") {
    TrainingWindow w;
    w.targets = {3, 3, 7, 7, 12};
    for (const int y : w.targets) {
        std::vector<double> x(21, 0.0);
        x[static_cast<std::size_t>(y)] = 1.0;
        w.inputs.push_back(x);
    }
    TrainConfig c;
    c.epochs = 200;
    c.learning_rate = 0.05;  // one update per epoch; the default rate is far too slow here
    c.dropout_rate = 0.0;
    c.rng_seed = 5;
    const std::vector<TrainingWindow> ws = {w};
    const auto t = train_recurrent(ws, c);
    REQUIRE(t.log.size() == 200);
    const double first = t.log.front().mean_loss;
    const double last = t.log.back().mean_loss;
    CHECK(last < first / 4);
    // decreasing on average: each block of 20 epochs below the previous one
    double prev = 1e300;
    for (int b = 0; b < 10; ++b) {
        double mean = 0;
        for (int e = 0; e < 20; ++e) mean += t.log[static_cast<std::size_t>(b * 20 + e)].mean_loss;
        CHECK(mean < prev);
        prev = mean;
    }
}

TEST_CASE("duplicating a window leaves the mean gradient unchanged") {
    RecurrentModel m(6, 3, 0.5);
    m.initialize(4);
    Rng rng(6);
    const TrainingWindow w{random_sequence(rng, 4, 6), random_targets(rng, 4)};
    const std::vector<TrainingWindow> one = {w}, two = {w, w};
    Eigen::VectorXd g1, g2;
    const double l1 = loss_and_gradient(m, one, Mode::Eval, 0, {}, g1);
    const double l2 = loss_and_gradient(m, two, Mode::Eval, 0, {}, g2);
    CHECK(std::abs(l1 - l2) <= 1e-12);
    CHECK((g1 - g2).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gradient check examples") {
    SUBCASE("hidden 4, input 5, T=3, seed 0") {
        RecurrentModel m(5, 4);
        m.initialize(0);
        Rng rng(0);
        CHECK(gradient_check(m, random_sequence(rng, 3, 5), random_targets(rng, 3), 1e-5) < 1e-4);
    }
    SUBCASE("zero model") {
        const RecurrentModel m(5, 4);
        Rng rng(1);
        CHECK(gradient_check(m, random_sequence(rng, 3, 5), random_targets(rng, 3), 1e-5) < 1e-6);
    }
    SUBCASE("T=1") {
        RecurrentModel m(5, 4);
        m.initialize(2);
        Rng rng(2);
        CHECK(gradient_check(m, random_sequence(rng, 1, 5), random_targets(rng, 1), 1e-5) < 1e-4);
    }
}

TEST_CASE("class weights enter the gradient") {
    RecurrentModel m(3, 2);
    m.initialize(1);
    Rng rng(3);
    const TrainingWindow w{random_sequence(rng, 3, 3), {1, 1, 1}};
    const std::vector<TrainingWindow> ws = {w};
    std::vector<double> weights(21, 1.0);
    weights[1] = 2.0;
    Eigen::VectorXd g1, g2;
    const double l1 = loss_and_gradient(m, ws, Mode::Eval, 0, {}, g1);
    const double l2 = loss_and_gradient(m, ws, Mode::Eval, 0, weights, g2);
    CHECK(l2 == doctest::Approx(2 * l1).epsilon(1e-14));
    CHECK((g2 - 2 * g1).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("training is deterministic per seed") {
    Rng rng(10);
    std::vector<TrainingWindow> ws;
    for (int i = 0; i < 40; ++i) ws.push_back({random_sequence(rng, 5, 21), random_targets(rng, 5)});
    TrainConfig c;
    c.epochs = 3;
    c.hidden_units = 6;
    c.batch_windows = 8;
    c.rng_seed = 77;
    const auto a = train_recurrent(ws, c);
    const auto b = train_recurrent(ws, c);
    CHECK(a.model == b.model);
    c.rng_seed = 78;
    CHECK_FALSE(train_recurrent(ws, c).model == a.model);
}

TEST_CASE("serialization round trip") {
    RecurrentModel m(21, 5, 0.25);
    m.initialize(42);
    std::stringstream buf;
    write_recurrent(buf, m);
    const auto bytes = buf.str();
    CHECK(bytes.substr(0, 4) == "TFRC");
    // magic, version, input_dim, hidden, output_dim, dropout, then the doubles
    CHECK(bytes.size() == 4 + 4 + 4 + 4 + 4 + 8 + 8 * m.param_count());
    double first = 0;
    std::memcpy(&first, bytes.data() + 28, 8);
    CHECK(first == m.params()[0]);
    const auto back = read_recurrent(buf);
    CHECK(back == m);
    CHECK(back.dropout_rate() == 0.25);
    std::istringstream cut(bytes.substr(0, 40));
    CHECK_THROWS_AS(read_recurrent(cut), DataError);

    const auto j = nlohmann::json::parse(recurrent_to_json(m));
    CHECK(j["hidden_units"] == 5);
    CHECK(j["parameters"]["W_i"].size() == 21);
}

}  // TEST_SUITE
