#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "actrec/domain.hpp"

namespace actrec {

/// Gate order used for every per-gate parameter block.
enum class Gate : int { Input = 0, Forget = 1, Output = 2, Candidate = 3 };

/// Row-major matrix view into the flat parameter vector.
using ParamMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstParamMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Single-layer LSTM with a dense softmax head over the 21 categories.
///
/// All parameters live in one flat vector laid out in serialization order:
/// W_i, W_f, W_o, W_g (input x hidden), U_i, U_f, U_o, U_g (hidden x hidden),
/// b_i, b_f, b_o, b_g (hidden), W_out (hidden x 21), b_out (21). Gate
/// pre-activations are W^T x + U^T h + b.
class RecurrentModel {
public:
    RecurrentModel() = default;
    RecurrentModel(int input_dim, int hidden_units, double dropout_rate = 0.0);

    int input_dim() const { return input_dim_; }
    int hidden_units() const { return hidden_; }
    int output_dim() const { return kNumCategories; }
    double dropout_rate() const { return dropout_rate_; }
    void set_dropout_rate(double rate);

    static std::size_t param_count(int input_dim, int hidden_units);
    std::size_t param_count() const { return params_.size(); }

    Eigen::VectorXd& params() { return params_; }
    const Eigen::VectorXd& params() const { return params_; }

    ConstParamMap W(Gate g) const;
    ConstParamMap U(Gate g) const;
    ConstParamMap b(Gate g) const;  // 1 x hidden
    ConstParamMap W_out() const;
    ConstParamMap b_out() const;  // 1 x 21
    ParamMap W(Gate g);
    ParamMap U(Gate g);
    ParamMap b(Gate g);
    ParamMap W_out();
    ParamMap b_out();

    /// Uniform initialization in [-k, k], k = 1/sqrt(hidden_units).
    void initialize(std::uint64_t seed);

    bool operator==(const RecurrentModel& o) const;

    // Offsets of each block into params(), in serialization order.
    std::size_t offset_W(Gate g) const;
    std::size_t offset_U(Gate g) const;
    std::size_t offset_b(Gate g) const;
    std::size_t offset_W_out() const;
    std::size_t offset_b_out() const;

private:
    int input_dim_ = 0;
    int hidden_ = 0;
    double dropout_rate_ = 0.0;
    Eigen::VectorXd params_;
};

using Sequence = std::vector<std::vector<double>>;

enum class Mode { Train, Eval };

/// Eval-mode forward pass from zero state; returns T distributions.
Sequence forward(const RecurrentModel& model, const Sequence& window);
/// Train-mode forward pass; dropout masks are drawn from `seed`.
Sequence forward(const RecurrentModel& model, const Sequence& window, Mode mode, std::uint64_t seed);

/// Eval-mode forward over many equal-length windows at once.
std::vector<Sequence> forward_batch(const RecurrentModel& model, std::span<const Sequence> windows);

/// Timestep-averaged (optionally class-weighted) cross entropy.
double sequence_loss(std::span<const std::vector<double>> predictions, std::span<const int> targets,
                     std::span<const double> class_weights = {});

struct TrainConfig {
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-6;
    int epochs = 50;
    int batch_windows = 32;
    int hidden_units = 32;
    double dropout_rate = 0.5;
    std::uint64_t rng_seed = 0;
    std::vector<double> class_weights;  // empty = unweighted

    void validate() const;
};

struct TrainingWindow {
    Sequence inputs;
    std::vector<int> targets;
};

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
};

struct RecurrentTraining {
    RecurrentModel model;
    std::vector<EpochLog> log;
};

RecurrentTraining train_recurrent(std::span<const TrainingWindow> windows, const TrainConfig& config);

/// Mean loss over `windows` and its gradient with respect to every
/// parameter (same layout as params()). Dropout masks come from `seed` when
/// mode is Train; weight decay is not included.
double loss_and_gradient(const RecurrentModel& model, std::span<const TrainingWindow> windows,
                         Mode mode, std::uint64_t seed, std::span<const double> class_weights,
                         Eigen::VectorXd& gradient);

/// Max over parameters of |g_a - g_n| / max(1e-8, |g_a| + |g_n|) between the
/// analytic gradient and central differences with step `epsilon`.
double gradient_check(const RecurrentModel& model, const Sequence& window, std::span<const int> targets,
                      double epsilon);

void write_recurrent(std::ostream& out, const RecurrentModel& model);
RecurrentModel read_recurrent(std::istream& in);
void save_recurrent(const std::filesystem::path& path, const RecurrentModel& model);
RecurrentModel load_recurrent(const std::filesystem::path& path);
std::string recurrent_to_json(const RecurrentModel& model);

}  // namespace actrec
