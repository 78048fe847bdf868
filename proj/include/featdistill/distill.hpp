#pragma once

#include "featdistill/common.hpp"
#include "featdistill/embedstore.hpp"
#include "featdistill/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace featdistill {

// ---------------------------------------------------------------------------
// Log-sum alignment loss
// ---------------------------------------------------------------------------

/// log(max(sum_ij |E_ij|^alpha, eps_loss)) over every element of the residual
/// E = projected student - teacher. Accumulated row-major with compensation.
/// Throws NumericalError naming the first non-finite entry.
double logsum_loss(const Matrix& residual, double alpha, double eps_loss);

/// dLoss/dE = alpha * |E|^(alpha-1) * sign(E) / S, with S the floored sum.
Matrix logsum_loss_grad(const Matrix& residual, double alpha, double eps_loss);

// ---------------------------------------------------------------------------
// Projection head: batch norm on student features, then bias-free W_p
// ---------------------------------------------------------------------------

enum class Mode { train, eval };

struct DistillHead {
    RowVector gamma;
    RowVector beta;
    RowVector running_mean;
    RowVector running_var;
    double momentum = 0.1;
    double bn_eps = 1e-5;
    Matrix projection;  // d_s x d_t

    /// gamma = 1, beta = 0, running stats (0, 1), projection uniform in
    /// +-sqrt(6 / (d_s + d_t)).
    static DistillHead init(std::size_t d_s, std::size_t d_t, Rng& rng);

    [[nodiscard]] std::size_t input_dim() const { return static_cast<std::size_t>(projection.rows()); }
    [[nodiscard]] std::size_t output_dim() const { return static_cast<std::size_t>(projection.cols()); }
};

struct HeadCache {
    Mode mode = Mode::eval;
    Matrix normalized;  // x_hat
    RowVector inv_std;
    Matrix bn_out;      // gamma * x_hat + beta
    RowVector gamma;
    Matrix projection;
};

struct HeadForward {
    Matrix output;
    HeadCache cache;
};

/// Train mode normalizes by batch statistics (1/b variance) and updates the
/// running statistics (unbiased variance); eval mode uses running statistics.
HeadForward head_forward(DistillHead& head, const Matrix& features, Mode mode);

/// Eval-mode projection without touching the head.
Matrix head_project(const DistillHead& head, const Matrix& features);

struct HeadGradients {
    Matrix projection;
    RowVector gamma;
    RowVector beta;
    Matrix input;
};

/// Exact gradients including the dependence of batch statistics on the input.
/// Throws std::logic_error for an eval-mode cache.
HeadGradients head_backward(const HeadCache& cache, const Matrix& d_output);

// ---------------------------------------------------------------------------
// Student: identity or a small GELU MLP standing in for a backbone
// ---------------------------------------------------------------------------

struct DenseLayer {
    Matrix weight;  // in x out
    RowVector bias;
    bool gelu = true;
};

struct StudentArch {
    std::vector<std::size_t> hidden;  // empty with use_mlp=false -> identity
    bool use_mlp = false;

    /// "identity" or "mlp:h1,h2,..." (hidden widths; output width equals input width).
    static StudentArch parse(const std::string& text);
    [[nodiscard]] std::string to_string() const;
};

class StudentModel {
public:
    static StudentModel identity() { return {}; }
    /// GELU hidden layers followed by a linear output layer of width d_out.
    static StudentModel mlp(std::size_t d_in, std::span<const std::size_t> hidden, std::size_t d_out, Rng& rng);
    static StudentModel from_layers(std::vector<DenseLayer> layers);

    [[nodiscard]] bool is_identity() const { return layers_.empty(); }
    [[nodiscard]] std::size_t output_dim(std::size_t input_dim) const;
    [[nodiscard]] const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }

private:
    std::vector<DenseLayer> layers_;
};

struct StudentCache {
    std::vector<Matrix> inputs;           // input to each layer
    std::vector<Matrix> pre_activations;  // affine output of each layer
};

double gelu(double x);
double gelu_derivative(double x);

Matrix student_forward(const StudentModel& model, const Matrix& x, StudentCache* cache = nullptr);

struct StudentGradients {
    std::vector<Matrix> weight;
    std::vector<RowVector> bias;
    Matrix input;
};

StudentGradients student_backward(const StudentModel& model, const StudentCache& cache, const Matrix& d_output);

// ---------------------------------------------------------------------------
// Optimizer, schedules, early stopping
// ---------------------------------------------------------------------------

/// v_end + (v_start - v_end) * (1 + cos(pi * t / T)) / 2, exact at t = 0 and
/// t = T, clamped to v_end past T. Increasing schedules are allowed.
double cosine_schedule(std::size_t t, std::size_t total, double v_start, double v_end);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct ParamBlock {
    std::span<double> values;
    std::span<const double> grads;
    bool decay = true;
};

struct AdamWState {
    std::size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// One decoupled-weight-decay Adam update:
/// theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
/// Moments are allocated on first use. Throws NumericalError on a
/// non-finite gradient, leaving parameters untouched.
void adamw_step(std::span<const ParamBlock> blocks, AdamWState& state, double lr, double wd,
                const AdamWConfig& config = {});

enum class ViolationCount { cumulative, consecutive };

/// Stops when the loss has exceeded the trailing-window mean more than
/// `max_violations` times. Comparison happens before the new loss enters the
/// window, and only once the window is full.
class EarlyStopper {
public:
    EarlyStopper(std::size_t window, std::size_t max_violations,
                 ViolationCount counting = ViolationCount::cumulative);

    /// Returns true when training should stop.
    bool update(double loss);

    [[nodiscard]] std::size_t violations() const { return violations_; }
    [[nodiscard]] std::size_t window_size() const { return values_.size(); }
    [[nodiscard]] double window_mean() const;

private:
    std::size_t window_;
    std::size_t max_violations_;
    ViolationCount counting_;
    std::deque<double> values_;
    std::size_t violations_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct DistillConfig {
    double alpha = 4.0;
    double eps_loss = 1e-12;
    std::size_t batch_size = 32;
    double lr_start = 1e-4;
    double lr_end = 1e-6;
    double wd_start = 0.05;
    double wd_end = 0.5;
    std::size_t total_steps = 0;  // 0 -> ten epochs over the aligned pairs
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::size_t window = 100;
    std::size_t max_violations = 10;
    ViolationCount violation_count = ViolationCount::cumulative;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    std::uint64_t seed = 0;
    StudentArch student_arch;

    /// Throws ConfigError on the first violated constraint.
    void validate() const;
};

struct DistillModel {
    StudentModel student;
    DistillHead head;
};

/// Student followed by the head in eval mode.
Matrix project(const DistillModel& model, const Matrix& student_features);

struct TrainState {
    std::size_t step = 0;
    AdamWState adam;
    EarlyStopper early_stop;
    Rng rng;
};

struct TraceRecord {
    std::size_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wd = 0.0;
    std::size_t violations = 0;
};

struct DistillResult {
    DistillModel model;
    std::vector<TraceRecord> trace;
    std::size_t steps_run = 0;
    std::size_t total_steps = 0;
    bool early_stopped = false;
};

/// Trains on row-aligned feature matrices. `init` replaces the seeded
/// initialization when given (its dimensions must match).
DistillResult distill_fit(const Matrix& student_features, const Matrix& teacher_features,
                          const DistillConfig& config, const DistillModel* init = nullptr);

/// Aligns by sample_id, then trains on the matched rows.
DistillResult distill_fit(const EmbeddingSet& student, const EmbeddingSet& teacher, const DistillConfig& config);

std::size_t steps_per_epoch(std::size_t n_pairs, std::size_t batch_size);

void save_model(const DistillModel& model, const std::filesystem::path& path);
DistillModel load_model(const std::filesystem::path& path);

}  // namespace featdistill
