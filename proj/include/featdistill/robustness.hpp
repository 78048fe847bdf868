#pragma once

#include "featdistill/common.hpp"
#include "featdistill/embedstore.hpp"
#include "featdistill/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace featdistill {

struct RobustnessConfig {
    std::size_t per_class = 80;
    std::size_t k_neighbors = 5;
    std::size_t n_folds = 5;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const;
};

/// Exactly `per_class` rows from every tissue class, drawn without
/// replacement; returned in ascending row order. Requires tissue_class and
/// center_id on every row.
std::vector<std::size_t> sample_balanced(const EmbeddingSet& set, std::size_t per_class, Rng& rng);

struct RobustnessIndex {
    double index = 0.0;  // +infinity when center_matches == 0
    std::size_t tissue_matches = 0;
    std::size_t center_matches = 0;
    std::size_t n_queries = 0;
    std::size_t duplicate_rows = 0;  // rows with an exact duplicate elsewhere in the subset
};

/// Every row queries its k nearest other rows (Euclidean, ties to the lower
/// row). index = same-tissue neighbor count / same-center neighbor count,
/// aggregated over all queries.
RobustnessIndex robustness_index(const Matrix& x, std::span<const int> tissue, std::span<const int> center,
                                 std::size_t k_neighbors);

/// Same, on the given rows of a set (center_id strings compared for equality).
RobustnessIndex robustness_index(const EmbeddingSet& set, std::span<const std::size_t> rows, std::size_t k_neighbors);

struct RobustnessResult {
    std::vector<RobustnessIndex> folds;
    std::vector<double> per_fold_index;
    double mean = 0.0;
    double std = 0.0;
    RobustnessConfig config;
};

/// n_folds independent balanced samples, fold f drawn from Rng(seed ^ f).
RobustnessResult robustness_cv(const EmbeddingSet& set, const RobustnessConfig& config);

}  // namespace featdistill
