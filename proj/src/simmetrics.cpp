#include "featdistill/simmetrics.hpp"

#include "featdistill/parallel.hpp"
#include "featdistill/rng.hpp"

#include <algorithm>

namespace featdistill {

Matrix center_columns(const Matrix& x) {
    if (x.rows() < 2) throw DataError("center_columns: need at least 2 rows, got " + std::to_string(x.rows()));
    const RowVector mean = x.colwise().mean();
    return x.rowwise() - mean;
}

CkaValue linear_cka(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows()) {
        throw DataError("linear_cka: row counts differ (" + std::to_string(x.rows()) + " vs " +
                        std::to_string(y.rows()) + ")");
    }
    if (!x.allFinite() || !y.allFinite()) throw NumericalError("linear_cka: non-finite input");
    const Matrix xc = center_columns(x);
    const Matrix yc = center_columns(y);

    const double cross = (yc.transpose() * xc).squaredNorm();
    const double self_x = (xc.transpose() * xc).norm();
    const double self_y = (yc.transpose() * yc).norm();
    if (self_x == 0.0 || self_y == 0.0) return {0.0, true};
    return {cross / (self_x * self_y), false};
}

CkaReport cka_report(const Matrix& x, const Matrix& y, std::size_t n_subsamples, std::size_t subsample_size,
                     std::uint64_t seed, unsigned threads) {
    if (x.rows() != y.rows()) throw DataError("cka_report: row counts differ");
    const auto n = static_cast<std::size_t>(x.rows());
    if (subsample_size < 2) throw ConfigError("cka_report: subsample_size must be >= 2");
    if (n_subsamples < 1) throw ConfigError("cka_report: n_subsamples must be >= 1");
    if (n < subsample_size) {
        throw DataError("cka_report: " + std::to_string(n) + " aligned rows, fewer than subsample_size " +
                        std::to_string(subsample_size));
    }

    CkaReport report;
    report.n_subsamples = n_subsamples;
    report.subsample_size = subsample_size;
    report.n_aligned = n;
    report.seed = seed;
    report.values.resize(n_subsamples);
    std::vector<char> degenerate(n_subsamples, 0);

    parallel_for(n_subsamples, threads, [&](std::size_t i) {
        Rng rng(seed, i);
        auto rows = sample_without_replacement(n, subsample_size, rng);
        std::sort(rows.begin(), rows.end());
        Matrix xs(static_cast<Eigen::Index>(rows.size()), x.cols());
        Matrix ys(static_cast<Eigen::Index>(rows.size()), y.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            xs.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
            ys.row(static_cast<Eigen::Index>(r)) = y.row(static_cast<Eigen::Index>(rows[r]));
        }
        const CkaValue v = linear_cka(xs, ys);
        report.values[i] = v.value;
        degenerate[i] = v.degenerate ? 1 : 0;
    });

    report.n_degenerate = static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), 1));
    const MeanStd stats = mean_std(report.values);
    report.mean = stats.mean;
    report.std = stats.std;
    return report;
}

CkaReport cka_report(const EmbeddingSet& x_set, const EmbeddingSet& y_set, std::size_t n_subsamples,
                     std::size_t subsample_size, std::uint64_t seed, unsigned threads) {
    const PairAlignment alignment = align_pairs(x_set, y_set);
    std::vector<std::size_t> x_rows;
    std::vector<std::size_t> y_rows;
    for (const auto& [a, b] : alignment.pairs) {
        x_rows.push_back(a);
        y_rows.push_back(b);
    }
    if (subsample_size == 0) subsample_size = std::min<std::size_t>(alignment.pairs.size(), 2048);
    return cka_report(x_set.to_matrix(x_rows), y_set.to_matrix(y_rows), n_subsamples, subsample_size, seed, threads);
}

}  // namespace featdistill
