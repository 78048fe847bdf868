#include "featdistill/evalbench.hpp"

#include "featdistill/parallel.hpp"
#include "featdistill/rng.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace featdistill {

PcaModel pca_fit(const Matrix& x, std::size_t n_components) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    if (n < 2) throw DataError("pca_fit: need at least 2 rows, got " + std::to_string(n));
    if (d < 1) throw DataError("pca_fit: zero-width input");
    if (n_components < 1) throw ConfigError("pca_fit: n_components must be >= 1");
    if (!x.allFinite()) throw NumericalError("pca_fit: non-finite input");

    PcaModel model;
    model.mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - model.mean;
    const Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);

    const Eigen::Index r = std::min({n - 1, d, static_cast<Eigen::Index>(n_components)});
    model.components = svd.matrixV().leftCols(r).transpose();
    model.explained_variance = svd.singularValues().head(r).array().square() / static_cast<double>(n - 1);

    for (Eigen::Index i = 0; i < r; ++i) {
        Eigen::Index arg = 0;
        for (Eigen::Index j = 1; j < d; ++j) {
            if (std::abs(model.components(i, j)) > std::abs(model.components(i, arg))) arg = j;
        }
        if (model.components(i, arg) < 0.0) model.components.row(i) *= -1.0;
    }
    return model;
}

Matrix pca_transform(const PcaModel& model, const Matrix& x) {
    if (static_cast<std::size_t>(x.cols()) != model.dim()) {
        throw DataError("pca_transform: input width " + std::to_string(x.cols()) + " does not match model width " +
                        std::to_string(model.dim()));
    }
    return (x.rowwise() - model.mean) * model.components.transpose();
}

namespace {

int knn_vote(const Matrix& train_x, std::span<const int> train_y, const double* query, std::size_t k,
             std::vector<std::pair<double, std::size_t>>& scratch) {
    const auto n = static_cast<std::size_t>(train_x.rows());
    const auto d = train_x.cols();
    scratch.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = train_x.data() + static_cast<Eigen::Index>(i) * d;
        double dist = 0.0;
        for (Eigen::Index c = 0; c < d; ++c) {
            const double diff = row[c] - query[c];
            dist += diff * diff;
        }
        scratch[i] = {dist, i};
    }
    k = std::min(k, n);
    std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k), scratch.end());

    std::map<int, std::size_t> votes;
    for (std::size_t i = 0; i < k; ++i) ++votes[train_y[scratch[i].second]];
    int best = votes.begin()->first;
    std::size_t best_count = 0;
    for (const auto& [label, count] : votes) {
        if (count > best_count) {
            best = label;
            best_count = count;
        }
    }
    return best;
}

void check_knn_inputs(const Matrix& train_x, std::span<const int> train_y, Eigen::Index query_cols, std::size_t k) {
    if (train_x.rows() == 0) throw DataError("knn_predict: empty training set");
    if (static_cast<std::size_t>(train_x.rows()) != train_y.size()) {
        throw DataError("knn_predict: " + std::to_string(train_y.size()) + " labels for " +
                        std::to_string(train_x.rows()) + " training rows");
    }
    if (query_cols != train_x.cols()) throw DataError("knn_predict: query width does not match training width");
    if (k < 1) throw ConfigError("knn_predict: k must be >= 1");
}

}  // namespace

int knn_predict(const Matrix& train_x, std::span<const int> train_y, const RowVector& query, std::size_t k) {
    check_knn_inputs(train_x, train_y, query.size(), k);
    std::vector<std::pair<double, std::size_t>> scratch;
    return knn_vote(train_x, train_y, query.data(), k, scratch);
}

std::vector<int> knn_predict_all(const Matrix& train_x, std::span<const int> train_y, const Matrix& queries,
                                 std::size_t k) {
    check_knn_inputs(train_x, train_y, queries.cols(), k);
    std::vector<int> out(static_cast<std::size_t>(queries.rows()));
    std::vector<std::pair<double, std::size_t>> scratch;
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
        out[static_cast<std::size_t>(q)] = knn_vote(train_x, train_y, queries.data() + q * queries.cols(), k, scratch);
    }
    return out;
}

RowVector mean_pool(const EmbeddingSet& set, std::span<const std::size_t> rows) {
    if (rows.empty()) throw DataError("mean_pool: empty bag");
    RowVector sum = RowVector::Zero(static_cast<Eigen::Index>(set.d));
    for (const std::size_t r : rows) {
        if (r >= set.n) throw DataError("mean_pool: row " + std::to_string(r) + " out of range");
        const auto values = set.row(r);
        for (std::size_t c = 0; c < set.d; ++c) sum[static_cast<Eigen::Index>(c)] += values[c];
    }
    return sum / static_cast<double>(rows.size());
}

void BenchConfig::validate() const {
    if (k < 1) throw ConfigError("k must be >= 1");
    if (n_components < 1) throw ConfigError("n_components must be >= 1");
    if (n_repeats < 1) throw ConfigError("n_repeats must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
}

BenchUnits prepare_units(const EmbeddingSet& set, BenchLevel level) {
    struct Unit {
        std::string id;
        RowVector features;
        int label;
    };
    std::vector<Unit> units;
    if (level == BenchLevel::patch) {
        for (std::size_t i = 0; i < set.n; ++i) {
            const SampleMeta& m = set.meta[i];
            if (!m.label) throw DataError("sample '" + m.sample_id + "' has no label");
            RowVector v(static_cast<Eigen::Index>(set.d));
            const auto row = set.row(i);
            for (std::size_t c = 0; c < set.d; ++c) v[static_cast<Eigen::Index>(c)] = row[c];
            units.push_back({m.sample_id, std::move(v), *m.label});
        }
    } else {
        for (const BagGroup& bag : group_by_bag(set)) {
            std::optional<int> label;
            for (const std::size_t r : bag.rows) {
                const SampleMeta& m = set.meta[r];
                if (!m.label) throw DataError("sample '" + m.sample_id + "' has no label");
                if (label && *label != *m.label) {
                    throw DataError("bag '" + bag.bag_id + "' mixes labels " + std::to_string(*label) + " and " +
                                    std::to_string(*m.label));
                }
                label = m.label;
            }
            units.push_back({bag.bag_id, mean_pool(set, bag.rows), *label});
        }
    }
    std::sort(units.begin(), units.end(), [](const Unit& a, const Unit& b) { return a.id < b.id; });

    BenchUnits out;
    out.features.resize(static_cast<Eigen::Index>(units.size()), static_cast<Eigen::Index>(set.d));
    for (std::size_t i = 0; i < units.size(); ++i) {
        out.ids.push_back(units[i].id);
        out.features.row(static_cast<Eigen::Index>(i)) = units[i].features;
        out.labels.push_back(units[i].label);
    }
    return out;
}

std::size_t train_split_size(std::size_t n_units, double train_fraction) {
    if (n_units < 2) return n_units == 0 ? 0 : 1;
    auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n_units) * train_fraction));
    return std::clamp<std::size_t>(n_train, 1, n_units - 1);
}

std::vector<std::size_t> repeat_permutation(std::size_t n_units, std::uint64_t seed, std::size_t repeat) {
    std::vector<std::size_t> perm(n_units);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed ^ static_cast<std::uint64_t>(repeat));
    shuffle(std::span(perm), rng);
    return perm;
}

BenchmarkResult run_benchmark(const BenchUnits& units, const BenchConfig& config) {
    config.validate();
    const std::size_t n = units.labels.size();
    const std::size_t n_train = train_split_size(n, config.train_fraction);
    if (n_train < 2 || n_train >= n) {
        throw DataError("run_benchmark: " + std::to_string(n) + " units leave " + std::to_string(n_train) +
                        " for training; need at least 2 training and 1 test unit");
    }

    BenchmarkResult result;
    result.config = config;
    result.n_units = n;
    result.repeats.resize(config.n_repeats);

    parallel_for(config.n_repeats, config.threads, [&](std::size_t r) {
        const auto perm = repeat_permutation(n, config.seed, r);
        const std::span<const std::size_t> train_idx(perm.data(), n_train);
        const std::span<const std::size_t> test_idx(perm.data() + n_train, n - n_train);

        Matrix train_x(static_cast<Eigen::Index>(n_train), units.features.cols());
        std::vector<int> train_y;
        for (std::size_t i = 0; i < n_train; ++i) {
            train_x.row(static_cast<Eigen::Index>(i)) = units.features.row(static_cast<Eigen::Index>(train_idx[i]));
            train_y.push_back(units.labels[train_idx[i]]);
        }
        Matrix test_x(static_cast<Eigen::Index>(test_idx.size()), units.features.cols());
        for (std::size_t i = 0; i < test_idx.size(); ++i) {
            test_x.row(static_cast<Eigen::Index>(i)) = units.features.row(static_cast<Eigen::Index>(test_idx[i]));
        }

        const PcaModel pca = pca_fit(train_x, config.n_components);
        RepeatOutcome& outcome = result.repeats[r];
        outcome.pca_rank = pca.rank();
        outcome.test_units.assign(test_idx.begin(), test_idx.end());
        outcome.predictions = knn_predict_all(pca_transform(pca, train_x), train_y, pca_transform(pca, test_x), config.k);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < test_idx.size(); ++i) {
            if (outcome.predictions[i] == units.labels[test_idx[i]]) ++correct;
        }
        outcome.accuracy = static_cast<double>(correct) / static_cast<double>(test_idx.size());
    });

    for (const RepeatOutcome& outcome : result.repeats) result.per_repeat_accuracy.push_back(outcome.accuracy);
    const MeanStd stats = mean_std(result.per_repeat_accuracy);
    result.mean = stats.mean;
    result.std = stats.std;
    return result;
}

BenchmarkResult run_benchmark(const EmbeddingSet& set, const BenchConfig& config) {
    return run_benchmark(prepare_units(set, config.level), config);
}

}  // namespace featdistill
