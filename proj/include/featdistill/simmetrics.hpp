#pragma once

#include "featdistill/common.hpp"
#include "featdistill/embedstore.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace featdistill {

/// Subtracts each column's mean. Requires n >= 2.
Matrix center_columns(const Matrix& x);

struct CkaValue {
    double value = 0.0;
    bool degenerate = false;  // a centered input had zero self-similarity
};

/// Linear CKA in feature space:
/// ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F * ||Yc^T Yc||_F).
CkaValue linear_cka(const Matrix& x, const Matrix& y);

struct CkaReport {
    std::vector<double> values;
    double mean = 0.0;
    double std = 0.0;
    std::size_t n_subsamples = 0;
    std::size_t subsample_size = 0;
    std::size_t n_aligned = 0;
    std::size_t n_degenerate = 0;
    std::uint64_t seed = 0;
};

/// Linear CKA on `n_subsamples` seeded row subsets (subset i drawn without
/// replacement from Rng(seed, i)). Rows of x and y must already correspond.
CkaReport cka_report(const Matrix& x, const Matrix& y, std::size_t n_subsamples, std::size_t subsample_size,
                     std::uint64_t seed, unsigned threads = 1);

/// Aligns by sample_id first. subsample_size = 0 selects min(n_aligned, 2048).
CkaReport cka_report(const EmbeddingSet& x_set, const EmbeddingSet& y_set, std::size_t n_subsamples,
                     std::size_t subsample_size, std::uint64_t seed, unsigned threads = 1);

}  // namespace featdistill
