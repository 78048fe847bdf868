#pragma once

#include "featdistill/common.hpp"
#include "featdistill/embedstore.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace featdistill {

struct PcaModel {
    RowVector mean;              // length d
    Matrix components;           // r x d, orthonormal rows, descending variance
    Vector explained_variance;   // length r, sample variance (1/(n-1)) along each component

    [[nodiscard]] std::size_t rank() const { return static_cast<std::size_t>(components.rows()); }
    [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(components.cols()); }
};

/// Thin SVD of the centered data; r = min(n - 1, d, n_components). Each
/// component's largest-magnitude entry (lowest index on ties) is made
/// non-negative.
PcaModel pca_fit(const Matrix& x, std::size_t n_components);

/// (x - mean) * components^T.
Matrix pca_transform(const PcaModel& model, const Matrix& x);

/// Majority label among the k nearest training rows (Euclidean). Distance
/// ties go to the lower training index, vote ties to the smaller label.
/// k is clamped to the training size.
int knn_predict(const Matrix& train_x, std::span<const int> train_y, const RowVector& query, std::size_t k);

/// knn_predict for every row of `queries`.
std::vector<int> knn_predict_all(const Matrix& train_x, std::span<const int> train_y, const Matrix& queries,
                                 std::size_t k);

/// Arithmetic mean of the given rows.
RowVector mean_pool(const EmbeddingSet& set, std::span<const std::size_t> rows);

enum class BenchLevel { patch, bag };

struct BenchConfig {
    std::size_t n_components = 50;
    std::size_t k = 15;
    std::size_t n_repeats = 10;
    double train_fraction = 0.8;
    BenchLevel level = BenchLevel::patch;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const;
};

/// Evaluation units after optional bag pooling, sorted by id.
struct BenchUnits {
    std::vector<std::string> ids;
    Matrix features;
    std::vector<int> labels;
};

BenchUnits prepare_units(const EmbeddingSet& set, BenchLevel level);

/// Size of the training portion for n units: round(n * train_fraction),
/// kept within [1, n - 1].
std::size_t train_split_size(std::size_t n_units, double train_fraction);

/// Unit permutation used by repeat `repeat`: Fisher-Yates with Rng(seed ^ repeat).
std::vector<std::size_t> repeat_permutation(std::size_t n_units, std::uint64_t seed, std::size_t repeat);

struct RepeatOutcome {
    std::vector<std::size_t> test_units;
    std::vector<int> predictions;
    double accuracy = 0.0;
    std::size_t pca_rank = 0;
};

struct BenchmarkResult {
    std::vector<double> per_repeat_accuracy;
    double mean = 0.0;
    double std = 0.0;
    std::vector<RepeatOutcome> repeats;
    std::size_t n_units = 0;
    BenchConfig config;
};

BenchmarkResult run_benchmark(const BenchUnits& units, const BenchConfig& config);
BenchmarkResult run_benchmark(const EmbeddingSet& set, const BenchConfig& config);

}  // namespace featdistill
