#include "featdistill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace featdistill {

double cosine_schedule(std::size_t t, std::size_t total, double v_start, double v_end) {
    if (total == 0) throw ConfigError("cosine_schedule: total steps must be >= 1");
    if (t == 0) return v_start;
    if (t >= total) return v_end;
    const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(total);
    return v_end + 0.5 * (v_start - v_end) * (1.0 + std::cos(phase));
}

void adamw_step(std::span<const ParamBlock> blocks, AdamWState& state, double lr, double wd,
                const AdamWConfig& config) {
    if (lr < 0.0 || wd < 0.0) throw ConfigError("adamw_step: lr and wd must be non-negative");
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].values.size() != blocks[b].grads.size()) {
            throw DataError("adamw_step: parameter block " + std::to_string(b) + " has mismatched gradient size");
        }
        for (std::size_t i = 0; i < blocks[b].grads.size(); ++i) {
            if (!std::isfinite(blocks[b].grads[i])) {
                throw NumericalError("non-finite gradient in parameter block " + std::to_string(b) + ", entry " +
                                     std::to_string(i) + " at step " + std::to_string(state.step + 1));
            }
        }
    }
    if (state.m.empty()) {
        for (const ParamBlock& block : blocks) {
            state.m.emplace_back(block.values.size(), 0.0);
            state.v.emplace_back(block.values.size(), 0.0);
        }
    }
    if (state.m.size() != blocks.size()) throw DataError("adamw_step: optimizer state has a different block layout");

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(config.beta1, t);
    const double correction2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const ParamBlock& block = blocks[b];
        auto& m = state.m[b];
        auto& v = state.v[b];
        const double decay = block.decay ? wd : 0.0;
        for (std::size_t i = 0; i < block.values.size(); ++i) {
            const double g = block.grads[i];
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            double& theta = block.values[i];
            theta -= lr * (m_hat / (std::sqrt(v_hat) + config.eps) + decay * theta);
        }
    }
}

EarlyStopper::EarlyStopper(std::size_t window, std::size_t max_violations, ViolationCount counting)
    : window_(window), max_violations_(max_violations), counting_(counting) {
    if (window_ < 1) throw ConfigError("early stopping window must be >= 1");
}

double EarlyStopper::window_mean() const {
    if (values_.empty()) return 0.0;
    CompensatedSum sum;
    for (const double v : values_) sum.add(v);
    return sum.value() / static_cast<double>(values_.size());
}

bool EarlyStopper::update(double loss) {
    if (!std::isfinite(loss)) throw NumericalError("early stopping received a non-finite loss");
    if (values_.size() >= window_) {
        if (loss > window_mean()) {
            ++violations_;
        } else if (counting_ == ViolationCount::consecutive) {
            violations_ = 0;
        }
        values_.pop_front();
    }
    values_.push_back(loss);
    return violations_ > max_violations_;
}

void DistillConfig::validate() const {
    if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
    if (!(eps_loss > 0.0)) throw ConfigError("eps_loss must be > 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch norm needs two rows)");
    if (!(lr_end > 0.0 && lr_end <= lr_start)) throw ConfigError("learning rates must satisfy 0 < lr_end <= lr_start");
    if (!(wd_start >= 0.0 && wd_start <= wd_end)) throw ConfigError("weight decay must satisfy 0 <= wd_start <= wd_end");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps_adam > 0.0)) throw ConfigError("eps_adam must be > 0");
    if (window < 1) throw ConfigError("window must be >= 1");
    if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw ConfigError("bn_momentum must lie in [0, 1]");
    if (!(bn_eps >= 0.0)) throw ConfigError("bn_eps must be >= 0");
}

std::size_t steps_per_epoch(std::size_t n_pairs, std::size_t batch_size) {
    return n_pairs / batch_size + (n_pairs % batch_size >= 2 ? 1 : 0);
}

namespace {

std::span<double> as_span(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> as_span(RowVector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Matrix gather_rows(const Matrix& source, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), source.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = source.row(static_cast<Eigen::Index>(rows[r]));
    return out;
}

}  // namespace

DistillResult distill_fit(const Matrix& student_features, const Matrix& teacher_features, const DistillConfig& config,
                          const DistillModel* init) {
    config.validate();
    const auto n = static_cast<std::size_t>(student_features.rows());
    if (n != static_cast<std::size_t>(teacher_features.rows())) {
        throw DataError("distill_fit: student and teacher row counts differ");
    }
    if (n < 2) throw DataError("distill_fit: need at least 2 aligned pairs");
    const auto d_in = static_cast<std::size_t>(student_features.cols());
    const auto d_t = static_cast<std::size_t>(teacher_features.cols());

    TrainState state{0, {}, EarlyStopper(config.window, config.max_violations, config.violation_count),
                     Rng(config.seed)};

    DistillResult result;
    DistillModel& model = result.model;
    if (init) {
        model = *init;
        const std::size_t d_s = model.student.output_dim(d_in);
        if (model.head.input_dim() != d_s || model.head.output_dim() != d_t) {
            throw DataError("distill_fit: initial head is " + std::to_string(model.head.input_dim()) + "x" +
                            std::to_string(model.head.output_dim()) + ", data needs " + std::to_string(d_s) + "x" +
                            std::to_string(d_t));
        }
    } else {
        if (config.student_arch.use_mlp) {
            model.student = StudentModel::mlp(d_in, config.student_arch.hidden, d_in, state.rng);
        }
        model.head = DistillHead::init(model.student.output_dim(d_in), d_t, state.rng);
        model.head.momentum = config.bn_momentum;
        model.head.bn_eps = config.bn_eps;
    }

    const std::size_t batch = std::min(config.batch_size, n);
    const std::size_t per_epoch = steps_per_epoch(n, batch);
    const std::size_t total = config.total_steps > 0 ? config.total_steps : 10 * per_epoch;
    result.total_steps = total;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t batch_in_epoch = per_epoch;

    const AdamWConfig adam{config.beta1, config.beta2, config.eps_adam};
    StudentCache student_cache;

    for (std::size_t t = 0; t < total; ++t) {
        if (batch_in_epoch == per_epoch) {
            shuffle(std::span(order), state.rng);
            batch_in_epoch = 0;
        }
        const std::size_t start = batch_in_epoch * batch;
        const std::size_t stop = std::min(start + batch, n);
        ++batch_in_epoch;
        const std::span<const std::size_t> rows(order.data() + start, stop - start);

        const Matrix x = gather_rows(student_features, rows);
        const Matrix target = gather_rows(teacher_features, rows);

        const Matrix features = student_forward(model.student, x, &student_cache);
        HeadForward fwd = head_forward(model.head, features, Mode::train);
        const Matrix residual = fwd.output - target;
        const double loss = logsum_loss(residual, config.alpha, config.eps_loss);

        const Matrix d_residual = logsum_loss_grad(residual, config.alpha, config.eps_loss);
        HeadGradients head_grads = head_backward(fwd.cache, d_residual);
        StudentGradients student_grads = student_backward(model.student, student_cache, head_grads.input);

        std::vector<ParamBlock> blocks;
        auto& layers = model.student.layers();
        for (std::size_t l = 0; l < layers.size(); ++l) {
            blocks.push_back({as_span(layers[l].weight), as_span(student_grads.weight[l]), true});
            blocks.push_back({as_span(layers[l].bias), as_span(student_grads.bias[l]), false});
        }
        blocks.push_back({as_span(model.head.projection), as_span(head_grads.projection), true});
        blocks.push_back({as_span(model.head.gamma), as_span(head_grads.gamma), true});
        blocks.push_back({as_span(model.head.beta), as_span(head_grads.beta), true});

        const double lr = cosine_schedule(t, total, config.lr_start, config.lr_end);
        const double wd = cosine_schedule(t, total, config.wd_start, config.wd_end);
        adamw_step(blocks, state.adam, lr, wd, adam);
        state.step = t + 1;

        const bool stop_now = state.early_stop.update(loss);
        result.trace.push_back({t, loss, lr, wd, state.early_stop.violations()});
        result.steps_run = t + 1;
        if (stop_now) {
            result.early_stopped = true;
            break;
        }
    }
    return result;
}

DistillResult distill_fit(const EmbeddingSet& student, const EmbeddingSet& teacher, const DistillConfig& config) {
    const PairAlignment alignment = align_pairs(student, teacher);
    std::vector<std::size_t> s_rows;
    std::vector<std::size_t> t_rows;
    for (const auto& [s, t] : alignment.pairs) {
        s_rows.push_back(s);
        t_rows.push_back(t);
    }
    return distill_fit(student.to_matrix(s_rows), teacher.to_matrix(t_rows), config);
}

}  // namespace featdistill
