#include "featdistill/distill.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace featdistill {

namespace {

void require_finite(const Matrix& m, const char* what) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (!std::isfinite(m(i, j))) {
                throw NumericalError(std::string("non-finite ") + what + " entry at (" + std::to_string(i) + ", " +
                                     std::to_string(j) + ")");
            }
        }
    }
}

double floored_power_sum(const Matrix& residual, double alpha, double eps_loss) {
    require_finite(residual, "residual");
    CompensatedSum sum;
    for (Eigen::Index i = 0; i < residual.rows(); ++i) {
        for (Eigen::Index j = 0; j < residual.cols(); ++j) sum.add(std::pow(std::abs(residual(i, j)), alpha));
    }
    return std::max(sum.value(), eps_loss);
}

}  // namespace

double logsum_loss(const Matrix& residual, double alpha, double eps_loss) {
    if (residual.size() == 0) throw DataError("logsum_loss: empty residual");
    return std::log(floored_power_sum(residual, alpha, eps_loss));
}

Matrix logsum_loss_grad(const Matrix& residual, double alpha, double eps_loss) {
    if (residual.size() == 0) throw DataError("logsum_loss_grad: empty residual");
    const double s = floored_power_sum(residual, alpha, eps_loss);
    Matrix grad(residual.rows(), residual.cols());
    for (Eigen::Index i = 0; i < residual.rows(); ++i) {
        for (Eigen::Index j = 0; j < residual.cols(); ++j) {
            const double e = residual(i, j);
            if (e == 0.0) {
                grad(i, j) = 0.0;
            } else {
                const double sign = e > 0.0 ? 1.0 : -1.0;
                grad(i, j) = alpha * std::pow(std::abs(e), alpha - 1.0) * sign / s;
            }
        }
    }
    return grad;
}

// --- head ------------------------------------------------------------------

DistillHead DistillHead::init(std::size_t d_s, std::size_t d_t, Rng& rng) {
    const auto rows = static_cast<Eigen::Index>(d_s);
    const auto cols = static_cast<Eigen::Index>(d_t);
    DistillHead head;
    head.gamma = RowVector::Ones(rows);
    head.beta = RowVector::Zero(rows);
    head.running_mean = RowVector::Zero(rows);
    head.running_var = RowVector::Ones(rows);
    head.projection.resize(rows, cols);
    const double limit = std::sqrt(6.0 / static_cast<double>(d_s + d_t));
    for (Eigen::Index i = 0; i < head.projection.size(); ++i) head.projection.data()[i] = rng.uniform(-limit, limit);
    return head;
}

HeadForward head_forward(DistillHead& head, const Matrix& features, Mode mode) {
    const Eigen::Index b = features.rows();
    const Eigen::Index d = features.cols();
    if (d != head.projection.rows()) {
        throw DataError("head_forward: feature width " + std::to_string(d) + " does not match head input width " +
                        std::to_string(head.projection.rows()));
    }
    if (mode == Mode::train && b < 2) {
        throw DataError("head_forward: train mode needs at least 2 rows, got " + std::to_string(b));
    }
    require_finite(features, "head input");

    HeadForward out;
    HeadCache& cache = out.cache;
    cache.mode = mode;
    cache.gamma = head.gamma;
    cache.projection = head.projection;

    RowVector mean;
    RowVector var;
    if (mode == Mode::train) {
        mean = features.colwise().mean();
        var = (features.rowwise() - mean).array().square().colwise().mean();
        const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
        head.running_mean = (1.0 - head.momentum) * head.running_mean + head.momentum * mean;
        head.running_var = (1.0 - head.momentum) * head.running_var + head.momentum * unbias * var;
    } else {
        mean = head.running_mean;
        var = head.running_var;
    }
    cache.inv_std = (var.array() + head.bn_eps).rsqrt().matrix();
    cache.normalized = (features.rowwise() - mean).array().rowwise() * cache.inv_std.array();
    cache.bn_out = (cache.normalized.array().rowwise() * head.gamma.array()).rowwise() + head.beta.array();
    out.output = cache.bn_out * head.projection;
    return out;
}

Matrix head_project(const DistillHead& head, const Matrix& features) {
    DistillHead copy = head;
    return head_forward(copy, features, Mode::eval).output;
}

HeadGradients head_backward(const HeadCache& cache, const Matrix& d_output) {
    if (cache.mode != Mode::train) {
        throw std::logic_error("head_backward: cache comes from an eval-mode forward pass");
    }
    if (d_output.rows() != cache.bn_out.rows() || d_output.cols() != cache.projection.cols()) {
        throw DataError("head_backward: gradient shape does not match the forward output");
    }
    const auto b = static_cast<double>(cache.normalized.rows());

    HeadGradients g;
    g.projection = cache.bn_out.transpose() * d_output;
    const Matrix d_bn = d_output * cache.projection.transpose();
    g.beta = d_bn.colwise().sum();
    g.gamma = d_bn.cwiseProduct(cache.normalized).colwise().sum();

    const Matrix d_norm = d_bn.array().rowwise() * cache.gamma.array();
    const RowVector sum_d = d_norm.colwise().sum();
    const RowVector sum_dx = d_norm.cwiseProduct(cache.normalized).colwise().sum();
    // dx = inv_std / b * (b * d_norm - sum(d_norm) - x_hat * sum(d_norm * x_hat))
    Matrix centered = (b * d_norm).rowwise() - sum_d;
    centered -= (cache.normalized.array().rowwise() * sum_dx.array()).matrix();
    g.input = (centered.array().rowwise() * (cache.inv_std.array() / b)).matrix();
    return g;
}

// --- student ---------------------------------------------------------------

StudentArch StudentArch::parse(const std::string& text) {
    StudentArch arch;
    if (text == "identity") return arch;
    if (text.rfind("mlp", 0) != 0) throw ConfigError("unknown student architecture '" + text + "'");
    arch.use_mlp = true;
    if (text == "mlp") return arch;
    if (text.size() < 5 || text[3] != ':') throw ConfigError("expected mlp:h1,h2,... got '" + text + "'");
    std::stringstream ss(text.substr(4));
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t pos = 0;
        long long width = 0;
        try {
            width = std::stoll(item, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != item.size() || width < 1) throw ConfigError("bad hidden width '" + item + "' in '" + text + "'");
        arch.hidden.push_back(static_cast<std::size_t>(width));
    }
    return arch;
}

std::string StudentArch::to_string() const {
    if (!use_mlp) return "identity";
    std::string s = "mlp";
    for (std::size_t i = 0; i < hidden.size(); ++i) s += (i == 0 ? ":" : ",") + std::to_string(hidden[i]);
    return s;
}

StudentModel StudentModel::mlp(std::size_t d_in, std::span<const std::size_t> hidden, std::size_t d_out, Rng& rng) {
    std::vector<std::size_t> widths{d_in};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(d_out);
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        DenseLayer layer;
        const double limit = std::sqrt(6.0 / static_cast<double>(widths[l] + widths[l + 1]));
        layer.weight.resize(static_cast<Eigen::Index>(widths[l]), static_cast<Eigen::Index>(widths[l + 1]));
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = rng.uniform(-limit, limit);
        layer.bias = RowVector::Zero(static_cast<Eigen::Index>(widths[l + 1]));
        layer.gelu = l + 2 < widths.size();
        layers.push_back(std::move(layer));
    }
    return from_layers(std::move(layers));
}

StudentModel StudentModel::from_layers(std::vector<DenseLayer> layers) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].bias.size() != layers[l].weight.cols()) {
            throw DataError("student layer " + std::to_string(l) + ": bias width does not match weight columns");
        }
        if (l > 0 && layers[l].weight.rows() != layers[l - 1].weight.cols()) {
            throw DataError("student layer " + std::to_string(l) + ": input width " +
                            std::to_string(layers[l].weight.rows()) + " does not chain from " +
                            std::to_string(layers[l - 1].weight.cols()));
        }
    }
    StudentModel model;
    model.layers_ = std::move(layers);
    return model;
}

std::size_t StudentModel::output_dim(std::size_t input_dim) const {
    return layers_.empty() ? input_dim : static_cast<std::size_t>(layers_.back().weight.cols());
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
}

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Matrix student_forward(const StudentModel& model, const Matrix& x, StudentCache* cache) {
    if (cache) {
        cache->inputs.clear();
        cache->pre_activations.clear();
    }
    if (model.is_identity()) return x;
    if (x.cols() != model.layers().front().weight.rows()) {
        throw DataError("student_forward: input width " + std::to_string(x.cols()) + " does not match model input " +
                        std::to_string(model.layers().front().weight.rows()));
    }
    Matrix h = x;
    for (const DenseLayer& layer : model.layers()) {
        Matrix z = (h * layer.weight).rowwise() + layer.bias;
        if (cache) {
            cache->inputs.push_back(h);
            cache->pre_activations.push_back(z);
        }
        h = layer.gelu ? z.unaryExpr(&gelu).eval() : std::move(z);
    }
    return h;
}

StudentGradients student_backward(const StudentModel& model, const StudentCache& cache, const Matrix& d_output) {
    StudentGradients g;
    const auto& layers = model.layers();
    if (layers.empty()) {
        g.input = d_output;
        return g;
    }
    if (cache.inputs.size() != layers.size()) throw std::logic_error("student_backward: cache does not match model");
    g.weight.resize(layers.size());
    g.bias.resize(layers.size());
    Matrix d = d_output;
    for (std::size_t l = layers.size(); l-- > 0;) {
        if (layers[l].gelu) d = d.cwiseProduct(cache.pre_activations[l].unaryExpr(&gelu_derivative));
        g.weight[l] = cache.inputs[l].transpose() * d;
        g.bias[l] = d.colwise().sum();
        d = d * layers[l].weight.transpose();
    }
    g.input = std::move(d);
    return g;
}

Matrix project(const DistillModel& model, const Matrix& student_features) {
    return head_project(model.head, student_forward(model.student, student_features));
}

}  // namespace featdistill
