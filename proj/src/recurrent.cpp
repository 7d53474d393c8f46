#include "actrec/recurrent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "actrec/binio.hpp"
#include "actrec/errors.hpp"
#include "actrec/random.hpp"

namespace actrec {

namespace {

constexpr std::string_view kRecurrentMagic = "TFRC";
constexpr std::uint32_t kRecurrentVersion = 1;
constexpr double kLogClamp = 1e-12;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

Matrix sigmoid(const Matrix& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

// Column-wise softmax.
Matrix softmax_columns(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index b = 0; b < logits.cols(); ++b) {
        const auto col = logits.col(b);
        const Vector e = (col.array() - col.maxCoeff()).exp();
        out.col(b) = e / e.sum();
    }
    return out;
}

double class_weight(std::span<const double> weights, int y) {
    return weights.empty() ? 1.0 : weights[static_cast<std::size_t>(y)];
}

struct StepCache {
    Matrix x;  // input after dropout, I x B
    Matrix i, f, o, g;
    Matrix c, tanh_c, h;  // h before output dropout
    Matrix h_out;         // h after output dropout
    Matrix mask_out;
    Matrix p;
};

struct PassResult {
    double loss = 0.0;
    std::size_t correct = 0;
    std::size_t steps = 0;
};

// Runs the batch forward and, when `gradient` is non-null, backward
// through time. Windows must share T and input_dim.
class BatchPass {
public:
    BatchPass(const RecurrentModel& model, std::span<const TrainingWindow* const> windows, Mode mode,
              std::uint64_t seed)
        : model_(model), windows_(windows), mode_(mode), seed_(seed) {}

    PassResult run(std::span<const double> class_weights, Eigen::VectorXd* gradient) {
        const auto B = static_cast<Eigen::Index>(windows_.size());
        const auto T = windows_.front()->inputs.size();
        const int I = model_.input_dim();
        const int H = model_.hidden_units();
        const int K = model_.output_dim();
        const bool dropout = mode_ == Mode::Train && model_.dropout_rate() > 0.0;
        const double keep_scale = dropout ? 1.0 / (1.0 - model_.dropout_rate()) : 1.0;
        Rng rng(seed_);
        auto draw_mask = [&](Eigen::Index rows) {
            Matrix m(rows, B);
            for (Eigen::Index b = 0; b < B; ++b)
                for (Eigen::Index r = 0; r < rows; ++r)
                    m(r, b) = rng.uniform01() < model_.dropout_rate() ? 0.0 : keep_scale;
            return m;
        };

        steps_.assign(T, StepCache{});
        auto& steps = steps_;
        Matrix h = Matrix::Zero(H, B);
        Matrix c = Matrix::Zero(H, B);
        PassResult result;
        const double norm = 1.0 / (static_cast<double>(B) * static_cast<double>(T));
        std::vector<Matrix> dlogits(T);

        for (std::size_t t = 0; t < T; ++t) {
            auto& s = steps[t];
            s.x.resize(I, B);
            for (Eigen::Index b = 0; b < B; ++b) {
                const auto& v = windows_[static_cast<std::size_t>(b)]->inputs[t];
                s.x.col(b) = Eigen::Map<const Vector>(v.data(), I);
            }
            if (dropout) s.x.array() *= draw_mask(I).array();

            auto pre = [&](Gate gate) {
                Matrix z = model_.W(gate).transpose() * s.x + model_.U(gate).transpose() * h;
                z.colwise() += Vector(model_.b(gate).transpose());
                return z;
            };
            s.i = sigmoid(pre(Gate::Input));
            s.f = sigmoid(pre(Gate::Forget));
            s.o = sigmoid(pre(Gate::Output));
            s.g = pre(Gate::Candidate).array().tanh().matrix();
            s.c = (s.f.array() * c.array() + s.i.array() * s.g.array()).matrix();
            s.tanh_c = s.c.array().tanh().matrix();
            s.h = (s.o.array() * s.tanh_c.array()).matrix();
            s.h_out = s.h;
            if (dropout) {
                s.mask_out = draw_mask(H);
                s.h_out.array() *= s.mask_out.array();
            }
            Matrix logits = model_.W_out().transpose() * s.h_out;
            logits.colwise() += Vector(model_.b_out().transpose());
            s.p = softmax_columns(logits);

            dlogits[t] = s.p;
            for (Eigen::Index b = 0; b < B; ++b) {
                const int y = windows_[static_cast<std::size_t>(b)]->targets[t];
                const double w = class_weight(class_weights, y);
                const double py = s.p(y, b);
                result.loss -= w * std::log(std::max(py, kLogClamp)) * norm;
                Eigen::Index best = 0;
                s.p.col(b).maxCoeff(&best);
                if (best == y) ++result.correct;
                ++result.steps;
                if (py < kLogClamp) {
                    dlogits[t].col(b).setZero();
                } else {
                    dlogits[t](y, b) -= 1.0;
                    dlogits[t].col(b) *= w * norm;
                }
            }
            h = s.h;
            c = s.c;
        }
        if (!gradient) return result;

        gradient->setZero(static_cast<Eigen::Index>(model_.param_count()));
        auto block = [&](std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
            return ParamMap(gradient->data() + offset, rows, cols);
        };
        auto gW_out = block(model_.offset_W_out(), H, K);
        auto gb_out = block(model_.offset_b_out(), 1, K);

        Matrix dh_next = Matrix::Zero(H, B);
        Matrix dc_next = Matrix::Zero(H, B);
        const Matrix zeros = Matrix::Zero(H, B);
        for (std::size_t t = T; t-- > 0;) {
            const auto& s = steps[t];
            const Matrix& h_prev = t > 0 ? steps[t - 1].h : zeros;
            const Matrix& c_prev = t > 0 ? steps[t - 1].c : zeros;

            gW_out.noalias() += s.h_out * dlogits[t].transpose();
            gb_out += dlogits[t].rowwise().sum().transpose();
            Matrix dh = model_.W_out() * dlogits[t];
            if (dropout) dh.array() *= s.mask_out.array();
            dh += dh_next;

            const Matrix d_o = (dh.array() * s.tanh_c.array()).matrix();
            const Matrix dc = (dh.array() * s.o.array() * (1.0 - s.tanh_c.array().square())).matrix() + dc_next;
            const Matrix dz_i = (dc.array() * s.g.array() * s.i.array() * (1.0 - s.i.array())).matrix();
            const Matrix dz_f = (dc.array() * c_prev.array() * s.f.array() * (1.0 - s.f.array())).matrix();
            const Matrix dz_o = (d_o.array() * s.o.array() * (1.0 - s.o.array())).matrix();
            const Matrix dz_g = (dc.array() * s.i.array() * (1.0 - s.g.array().square())).matrix();
            dc_next = (dc.array() * s.f.array()).matrix();

            dh_next.setZero();
            const std::pair<Gate, const Matrix*> gates[] = {
                {Gate::Input, &dz_i}, {Gate::Forget, &dz_f}, {Gate::Output, &dz_o}, {Gate::Candidate, &dz_g}};
            for (const auto& [gate, dz] : gates) {
                block(model_.offset_W(gate), I, H).noalias() += s.x * dz->transpose();
                block(model_.offset_U(gate), H, H).noalias() += h_prev * dz->transpose();
                block(model_.offset_b(gate), 1, H) += dz->rowwise().sum().transpose();
                dh_next.noalias() += model_.U(gate) * (*dz);
            }
        }
        return result;
    }

    /// Per-step distributions of window `b` from the last run().
    Sequence outputs(Eigen::Index b) const {
        Sequence out;
        for (const auto& s : steps_) out.emplace_back(s.p.col(b).data(), s.p.col(b).data() + s.p.rows());
        return out;
    }

private:
    const RecurrentModel& model_;
    std::span<const TrainingWindow* const> windows_;
    std::vector<StepCache> steps_;
    Mode mode_;
    std::uint64_t seed_;
};

void check_windows(const RecurrentModel& model, std::span<const TrainingWindow* const> windows) {
    if (windows.empty()) throw DataError("no training windows");
    const auto T = windows.front()->inputs.size();
    if (T == 0) throw DataError("window length must be at least 1");
    for (const auto* w : windows) {
        if (w->inputs.size() != T || w->targets.size() != T)
            throw DataError(fmt::format("inconsistent window shapes: expected length {}", T));
        for (const auto& v : w->inputs)
            if (static_cast<int>(v.size()) != model.input_dim())
                throw DataError(fmt::format("window input has dim {}, model expects {}", v.size(),
                                            model.input_dim()));
        for (const int y : w->targets)
            if (y < 0 || y >= kNumCategories) throw DataError(fmt::format("target {} out of range", y));
    }
}

}  // namespace

RecurrentModel::RecurrentModel(int input_dim, int hidden_units, double dropout_rate)
    : input_dim_(input_dim), hidden_(hidden_units) {
    if (input_dim <= 0 || hidden_units <= 0)
        throw ConfigError(fmt::format("invalid recurrent shape: input_dim={} hidden={}", input_dim,
                                      hidden_units));
    set_dropout_rate(dropout_rate);
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count(input_dim, hidden_units)));
}

void RecurrentModel::set_dropout_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw ConfigError(fmt::format("dropout rate must be in [0, 1), got {}", rate));
    dropout_rate_ = rate;
}

std::size_t RecurrentModel::param_count(int input_dim, int hidden_units) {
    const auto I = static_cast<std::size_t>(input_dim);
    const auto H = static_cast<std::size_t>(hidden_units);
    const auto K = static_cast<std::size_t>(kNumCategories);
    return 4 * I * H + 4 * H * H + 4 * H + H * K + K;
}

std::size_t RecurrentModel::offset_W(Gate g) const {
    return static_cast<std::size_t>(g) * static_cast<std::size_t>(input_dim_ * hidden_);
}
std::size_t RecurrentModel::offset_U(Gate g) const {
    return offset_W(Gate::Input) + 4 * static_cast<std::size_t>(input_dim_ * hidden_) +
           static_cast<std::size_t>(g) * static_cast<std::size_t>(hidden_ * hidden_);
}
std::size_t RecurrentModel::offset_b(Gate g) const {
    return offset_U(Gate::Input) + 4 * static_cast<std::size_t>(hidden_ * hidden_) +
           static_cast<std::size_t>(g) * static_cast<std::size_t>(hidden_);
}
std::size_t RecurrentModel::offset_W_out() const {
    return offset_b(Gate::Input) + 4 * static_cast<std::size_t>(hidden_);
}
std::size_t RecurrentModel::offset_b_out() const {
    return offset_W_out() + static_cast<std::size_t>(hidden_ * kNumCategories);
}

ConstParamMap RecurrentModel::W(Gate g) const { return {params_.data() + offset_W(g), input_dim_, hidden_}; }
ConstParamMap RecurrentModel::U(Gate g) const { return {params_.data() + offset_U(g), hidden_, hidden_}; }
ConstParamMap RecurrentModel::b(Gate g) const { return {params_.data() + offset_b(g), 1, hidden_}; }
ConstParamMap RecurrentModel::W_out() const { return {params_.data() + offset_W_out(), hidden_, kNumCategories}; }
ConstParamMap RecurrentModel::b_out() const { return {params_.data() + offset_b_out(), 1, kNumCategories}; }
ParamMap RecurrentModel::W(Gate g) { return {params_.data() + offset_W(g), input_dim_, hidden_}; }
ParamMap RecurrentModel::U(Gate g) { return {params_.data() + offset_U(g), hidden_, hidden_}; }
ParamMap RecurrentModel::b(Gate g) { return {params_.data() + offset_b(g), 1, hidden_}; }
ParamMap RecurrentModel::W_out() { return {params_.data() + offset_W_out(), hidden_, kNumCategories}; }
ParamMap RecurrentModel::b_out() { return {params_.data() + offset_b_out(), 1, kNumCategories}; }

void RecurrentModel::initialize(std::uint64_t seed) {
    Rng rng(seed);
    const double k = 1.0 / std::sqrt(static_cast<double>(hidden_));
    for (Eigen::Index i = 0; i < params_.size(); ++i) params_[i] = rng.uniform(-k, k);
}

bool RecurrentModel::operator==(const RecurrentModel& o) const {
    return input_dim_ == o.input_dim_ && hidden_ == o.hidden_ && dropout_rate_ == o.dropout_rate_ &&
           params_.size() == o.params_.size() && params_ == o.params_;
}

Sequence forward(const RecurrentModel& model, const Sequence& window, Mode mode, std::uint64_t seed) {
    if (window.empty()) throw DataError("forward needs at least one timestep");
    const TrainingWindow w{window, std::vector<int>(window.size(), 0)};
    const TrainingWindow* ptr = &w;
    const std::span<const TrainingWindow* const> batch(&ptr, 1);
    check_windows(model, batch);
    BatchPass pass(model, batch, mode, seed);
    pass.run({}, nullptr);
    return pass.outputs(0);
}

std::vector<Sequence> forward_batch(const RecurrentModel& model, std::span<const Sequence> windows) {
    std::vector<Sequence> out;
    if (windows.empty()) return out;
    constexpr std::size_t kChunk = 256;
    std::vector<TrainingWindow> chunk;
    std::vector<const TrainingWindow*> ptrs;
    for (std::size_t start = 0; start < windows.size(); start += kChunk) {
        chunk.clear();
        ptrs.clear();
        for (std::size_t k = start; k < std::min(windows.size(), start + kChunk); ++k)
            chunk.push_back({windows[k], std::vector<int>(windows[k].size(), 0)});
        for (const auto& w : chunk) ptrs.push_back(&w);
        check_windows(model, ptrs);
        BatchPass pass(model, ptrs, Mode::Eval, 0);
        pass.run({}, nullptr);
        for (std::size_t b = 0; b < chunk.size(); ++b) out.push_back(pass.outputs(static_cast<Eigen::Index>(b)));
    }
    return out;
}

Sequence forward(const RecurrentModel& model, const Sequence& window) {
    return forward(model, window, Mode::Eval, 0);
}

double sequence_loss(std::span<const std::vector<double>> predictions, std::span<const int> targets,
                     std::span<const double> class_weights) {
    if (predictions.size() != targets.size())
        throw DataError(fmt::format("loss: {} predictions vs {} targets", predictions.size(),
                                    targets.size()));
    if (predictions.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t t = 0; t < predictions.size(); ++t) {
        const int y = targets[t];
        const double p = predictions[t][static_cast<std::size_t>(y)];
        total -= class_weight(class_weights, y) * std::log(std::max(p, kLogClamp));
    }
    return total / static_cast<double>(predictions.size());
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError(fmt::format("learning_rate must be > 0, got {}", learning_rate));
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw ConfigError(fmt::format("momentum must be in [0, 1), got {}", momentum));
    if (!(weight_decay >= 0.0)) throw ConfigError(fmt::format("weight_decay must be >= 0, got {}", weight_decay));
    if (epochs <= 0) throw ConfigError(fmt::format("epochs must be positive, got {}", epochs));
    if (batch_windows <= 0) throw ConfigError(fmt::format("batch_windows must be positive, got {}", batch_windows));
    if (hidden_units <= 0) throw ConfigError(fmt::format("hidden_units must be positive, got {}", hidden_units));
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw ConfigError(fmt::format("dropout rate must be in [0, 1), got {}", dropout_rate));
    if (!class_weights.empty() && class_weights.size() != static_cast<std::size_t>(kNumCategories))
        throw ConfigError("class_weights must have 21 entries");
}

double loss_and_gradient(const RecurrentModel& model, std::span<const TrainingWindow> windows, Mode mode,
                         std::uint64_t seed, std::span<const double> class_weights,
                         Eigen::VectorXd& gradient) {
    std::vector<const TrainingWindow*> ptrs;
    for (const auto& w : windows) ptrs.push_back(&w);
    check_windows(model, ptrs);
    BatchPass pass(model, ptrs, mode, seed);
    return pass.run(class_weights, &gradient).loss;
}

RecurrentTraining train_recurrent(std::span<const TrainingWindow> windows, const TrainConfig& config) {
    config.validate();
    if (windows.empty()) throw DataError("no training windows");
    const int input_dim = windows.front().inputs.empty() ? 0 : static_cast<int>(windows.front().inputs.front().size());
    if (input_dim <= 0) throw DataError("training windows have empty inputs");

    RecurrentTraining result{RecurrentModel(input_dim, config.hidden_units, config.dropout_rate), {}};
    auto& model = result.model;
    {
        std::vector<const TrainingWindow*> all;
        for (const auto& w : windows) all.push_back(&w);
        check_windows(model, all);
    }
    model.initialize(derive_seed(config.rng_seed, 0));

    Eigen::VectorXd velocity = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.param_count()));
    Eigen::VectorXd grad;
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.rng_seed, 1));
    std::uint64_t batch_counter = 0;
    const auto batch = static_cast<std::size_t>(config.batch_windows);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle_rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t steps = 0;
        std::vector<const TrainingWindow*> ptrs;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            ptrs.clear();
            for (std::size_t k = start; k < std::min(order.size(), start + batch); ++k)
                ptrs.push_back(&windows[order[k]]);
            BatchPass pass(model, ptrs, Mode::Train, derive_seed(config.rng_seed, 1000 + batch_counter++));
            const auto r = pass.run(config.class_weights, &grad);
            loss_sum += r.loss * static_cast<double>(ptrs.size());
            correct += r.correct;
            steps += r.steps;
            velocity = config.momentum * velocity - config.learning_rate * (grad + config.weight_decay * model.params());
            model.params() += velocity;
        }
        if (!model.params().allFinite())
            throw DataError(fmt::format("recurrent training diverged at epoch {}", epoch));
        result.log.push_back({epoch, loss_sum / static_cast<double>(windows.size()),
                              static_cast<double>(correct) / static_cast<double>(steps)});
    }
    return result;
}

double gradient_check(const RecurrentModel& model, const Sequence& window, std::span<const int> targets,
                      double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3))
        throw ConfigError(fmt::format("gradient_check epsilon must be in [1e-7, 1e-3], got {}", epsilon));
    RecurrentModel probe = model;
    probe.set_dropout_rate(0.0);
    const TrainingWindow w{window, std::vector<int>(targets.begin(), targets.end())};
    const std::span<const TrainingWindow> one(&w, 1);
    Eigen::VectorXd analytic;
    loss_and_gradient(probe, one, Mode::Eval, 0, {}, analytic);

    Eigen::VectorXd scratch;
    double worst = 0.0;
    for (Eigen::Index k = 0; k < probe.params().size(); ++k) {
        const double saved = probe.params()[k];
        probe.params()[k] = saved + epsilon;
        const double up = loss_and_gradient(probe, one, Mode::Eval, 0, {}, scratch);
        probe.params()[k] = saved - epsilon;
        const double down = loss_and_gradient(probe, one, Mode::Eval, 0, {}, scratch);
        probe.params()[k] = saved;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double a = analytic[k];
        // central differences carry ~1e-10 of roundoff, so components near zero get an absolute floor
        const double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

void write_recurrent(std::ostream& out, const RecurrentModel& model) {
    binio::write_magic(out, kRecurrentMagic);
    binio::write_u32(out, kRecurrentVersion);
    binio::write_u32(out, static_cast<std::uint32_t>(model.input_dim()));
    binio::write_u32(out, static_cast<std::uint32_t>(model.hidden_units()));
    binio::write_u32(out, static_cast<std::uint32_t>(model.output_dim()));
    binio::write_f64(out, model.dropout_rate());
    for (Eigen::Index i = 0; i < model.params().size(); ++i) binio::write_f64(out, model.params()[i]);
}

RecurrentModel read_recurrent(std::istream& in) {
    binio::expect_magic(in, kRecurrentMagic, "recurrent model");
    if (binio::read_u32(in, "version") != kRecurrentVersion)
        throw DataError("recurrent model: unsupported version");
    const auto input_dim = static_cast<int>(binio::read_u32(in, "input_dim"));
    const auto hidden = static_cast<int>(binio::read_u32(in, "hidden_units"));
    if (binio::read_u32(in, "output_dim") != kNumCategories)
        throw DataError("recurrent model: unexpected output dimension");
    const double dropout = binio::read_f64(in, "dropout_rate");
    if (input_dim <= 0 || hidden <= 0 || input_dim > 1 << 20 || hidden > 1 << 16)
        throw DataError("recurrent model: invalid shape header");
    RecurrentModel m(input_dim, hidden, dropout);
    for (Eigen::Index i = 0; i < m.params().size(); ++i) {
        m.params()[i] = binio::read_f64(in, "parameter");
        if (!std::isfinite(m.params()[i])) throw DataError("recurrent model: non-finite parameter");
    }
    return m;
}

void save_recurrent(const std::filesystem::path& path, const RecurrentModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(fmt::format("cannot write model '{}'", path.string()));
    write_recurrent(out, model);
}

RecurrentModel load_recurrent(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open model '{}'", path.string()));
    return read_recurrent(in);
}

std::string recurrent_to_json(const RecurrentModel& model) {
    nlohmann::ordered_json j;
    j["type"] = "lstm";
    j["input_dim"] = model.input_dim();
    j["hidden_units"] = model.hidden_units();
    j["output_dim"] = model.output_dim();
    j["dropout_rate"] = model.dropout_rate();
    auto blocks = nlohmann::ordered_json::object();
    const char* gate_names[] = {"i", "f", "o", "g"};
    auto dump = [](const ConstParamMap& m) {
        auto rows = nlohmann::ordered_json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            auto row = nlohmann::ordered_json::array();
            for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
            rows.push_back(row);
        }
        return rows;
    };
    for (int g = 0; g < 4; ++g) blocks[std::string("W_") + gate_names[g]] = dump(model.W(static_cast<Gate>(g)));
    for (int g = 0; g < 4; ++g) blocks[std::string("U_") + gate_names[g]] = dump(model.U(static_cast<Gate>(g)));
    for (int g = 0; g < 4; ++g) blocks[std::string("b_") + gate_names[g]] = dump(model.b(static_cast<Gate>(g)));
    blocks["W_out"] = dump(model.W_out());
    blocks["b_out"] = dump(model.b_out());
    j["parameters"] = blocks;
    return j.dump(2);
}

}  // namespace actrec
