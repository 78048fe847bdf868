#include "gradcheck.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

using namespace featdistill;

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
    return m;
}

RowVector random_row(Rng& rng, std::size_t cols, double lo, double hi) {
    RowVector v(static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(lo, hi);
    return v;
}

struct Instance {
    StudentModel student;
    DistillHead head;
    Matrix x;
    Matrix target;
    double alpha = 4.0;
};

double loss_of(const Instance& inst) {
    DistillHead head = inst.head;  // train mode updates running statistics
    const Matrix features = student_forward(inst.student, inst.x);
    const HeadForward fwd = head_forward(head, features, Mode::train);
    return logsum_loss(fwd.output - inst.target, inst.alpha, 1e-12);
}

struct Comparison {
    std::string group;
    Matrix analytic;
    Matrix numeric;
};

}  // namespace

GradCheckReport full_chain_gradcheck(std::uint64_t seed, bool with_mlp, double h) {
    Rng rng(seed, 0x6772616463686bULL);
    GradCheckReport report;
    report.b = 2 + rng.below(7);
    report.d_s = 1 + rng.below(16);
    report.d_t = 1 + rng.below(16);
    const double alphas[] = {2.5, 3.0, 4.0};

    Instance inst;
    inst.alpha = alphas[rng.below(3)];
    std::size_t d_in = report.d_s;
    if (with_mlp) {
        d_in = 1 + rng.below(16);
        const std::size_t hidden = 1 + rng.below(16);
        DenseLayer l1{random_matrix(rng, d_in, hidden, 1.0), random_row(rng, hidden, -0.5, 0.5), true};
        DenseLayer l2{random_matrix(rng, hidden, report.d_s, 1.0), random_row(rng, report.d_s, -0.5, 0.5), false};
        inst.student = StudentModel::from_layers({l1, l2});
    }
    inst.head = DistillHead::init(report.d_s, report.d_t, rng);
    inst.head.gamma = random_row(rng, report.d_s, 0.5, 1.5);
    inst.head.beta = random_row(rng, report.d_s, -0.5, 0.5);
    inst.x = random_matrix(rng, report.b, d_in, 2.0);
    inst.target = random_matrix(rng, report.b, report.d_t, 1.0);

    // Analytic.
    DistillHead head = inst.head;
    StudentCache cache;
    const Matrix features = student_forward(inst.student, inst.x, &cache);
    const HeadForward fwd = head_forward(head, features, Mode::train);
    const Matrix d_res = logsum_loss_grad(fwd.output - inst.target, inst.alpha, 1e-12);
    const HeadGradients hg = head_backward(fwd.cache, d_res);
    const StudentGradients sg = student_backward(inst.student, cache, hg.input);

    // Numeric, one parameter group at a time.
    std::vector<Comparison> checks;
    auto wrt = [&](auto&& set) {
        return [&, set](const Matrix& value) {
            Instance probe = inst;
            set(probe, value);
            return loss_of(probe);
        };
    };
    checks.push_back({"projection",
          hg.projection,
          numeric_gradient(wrt([](Instance& p, const Matrix& v) { p.head.projection = v; }), inst.head.projection, h)});
    checks.push_back({"gamma", hg.gamma,
          numeric_gradient(wrt([](Instance& p, const Matrix& v) { p.head.gamma = v; }), inst.head.gamma, h)});
    checks.push_back({"beta", hg.beta,
          numeric_gradient(wrt([](Instance& p, const Matrix& v) { p.head.beta = v; }), inst.head.beta, h)});
    checks.push_back({"input", sg.input,
          numeric_gradient(wrt([](Instance& p, const Matrix& v) { p.x = v; }), inst.x, h)});
    for (std::size_t l = 0; l < inst.student.layers().size(); ++l) {
        checks.push_back({"weight" + std::to_string(l), sg.weight[l],
              numeric_gradient(wrt([l](Instance& p, const Matrix& v) { p.student.layers()[l].weight = v; }),
                               inst.student.layers()[l].weight, h)});
        checks.push_back({"bias" + std::to_string(l), sg.bias[l],
              numeric_gradient(wrt([l](Instance& p, const Matrix& v) { p.student.layers()[l].bias = v; }),
                               inst.student.layers()[l].bias, h)});
    }
    // Groups the batch norm makes (nearly) constant, such as the last bias
    // before it, have true gradient ~0; they are compared against a floor
    // tied to the largest gradient of the whole instance.
    double scale = 0.0;
    for (const auto& c : checks) scale = std::max({scale, c.analytic.cwiseAbs().maxCoeff(), c.numeric.cwiseAbs().maxCoeff()});
    const double floor = std::max(scale * kGradFloorFraction, 1e-12);
    for (const auto& c : checks) {
        const double err = max_relative_error(c.analytic, c.numeric, floor);
        if (err > report.worst) {
            report.worst = err;
            report.worst_group = c.group;
        }
    }
    return report;
}

}  // namespace oracle
