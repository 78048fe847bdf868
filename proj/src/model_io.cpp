#include "featdistill/distill.hpp"
#include "featdistill/fileio.hpp"

#include <json.hpp>

namespace featdistill {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json matrix_json(const Matrix& m) {
    ordered_json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["data"] = std::vector<double>(m.data(), m.data() + m.size());
    return j;
}

Matrix matrix_from_json(const ordered_json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
        throw DataError("matrix shape does not match its data length");
    }
    Matrix m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
}

RowVector vector_from_json(const ordered_json& j) {
    const auto data = j.get<std::vector<double>>();
    RowVector v(static_cast<Eigen::Index>(data.size()));
    std::copy(data.begin(), data.end(), v.data());
    return v;
}

std::vector<double> to_vec(const RowVector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

void save_model(const DistillModel& model, const std::filesystem::path& path) {
    ordered_json j;
    j["format"] = "featdistill.distill_model";
    j["version"] = 1;
    ordered_json layers = ordered_json::array();
    for (const DenseLayer& layer : model.student.layers()) {
        ordered_json l;
        l["weight"] = matrix_json(layer.weight);
        l["bias"] = to_vec(layer.bias);
        l["gelu"] = layer.gelu;
        layers.push_back(std::move(l));
    }
    j["student"] = {{"kind", model.student.is_identity() ? "identity" : "mlp"}, {"layers", layers}};
    const DistillHead& h = model.head;
    j["head"] = {{"bn_gamma", to_vec(h.gamma)},       {"bn_beta", to_vec(h.beta)},
                 {"bn_run_mean", to_vec(h.running_mean)}, {"bn_run_var", to_vec(h.running_var)},
                 {"bn_momentum", h.momentum},         {"bn_eps", h.bn_eps},
                 {"projection", matrix_json(h.projection)}};
    write_file_atomic(path, j.dump(1) + "\n");
}

DistillModel load_model(const std::filesystem::path& path) {
    try {
        const auto j = ordered_json::parse(read_file(path));
        DistillModel model;
        std::vector<DenseLayer> layers;
        for (const auto& l : j.at("student").at("layers")) {
            layers.push_back({matrix_from_json(l.at("weight")), vector_from_json(l.at("bias")), l.at("gelu").get<bool>()});
        }
        model.student = StudentModel::from_layers(std::move(layers));
        const auto& h = j.at("head");
        model.head.gamma = vector_from_json(h.at("bn_gamma"));
        model.head.beta = vector_from_json(h.at("bn_beta"));
        model.head.running_mean = vector_from_json(h.at("bn_run_mean"));
        model.head.running_var = vector_from_json(h.at("bn_run_var"));
        model.head.momentum = h.at("bn_momentum").get<double>();
        model.head.bn_eps = h.at("bn_eps").get<double>();
        model.head.projection = matrix_from_json(h.at("projection"));
        const auto d_s = model.head.projection.rows();
        if (model.head.gamma.size() != d_s || model.head.beta.size() != d_s || model.head.running_mean.size() != d_s ||
            model.head.running_var.size() != d_s) {
            throw DataError("batch-norm parameter widths do not match the projection input width");
        }
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace featdistill
