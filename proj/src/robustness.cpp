#include "featdistill/robustness.hpp"

#include "featdistill/parallel.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <unordered_map>

namespace featdistill {

void RobustnessConfig::validate() const {
    if (per_class < 1) throw ConfigError("per_class must be >= 1");
    if (k_neighbors < 1) throw ConfigError("k_neighbors must be >= 1");
    if (n_folds < 1) throw ConfigError("n_folds must be >= 1");
}

std::vector<std::size_t> sample_balanced(const EmbeddingSet& set, std::size_t per_class, Rng& rng) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < set.n; ++i) {
        const SampleMeta& m = set.meta[i];
        if (!m.tissue_class) throw DataError("sample '" + m.sample_id + "' has no tissue_class");
        if (!m.center_id) throw DataError("sample '" + m.sample_id + "' has no center_id");
        by_class[*m.tissue_class].push_back(i);
    }
    for (const auto& [cls, rows] : by_class) {
        if (rows.size() < per_class) {
            const std::string name = static_cast<std::size_t>(cls) < set.class_names.size()
                                         ? set.class_names[static_cast<std::size_t>(cls)]
                                         : std::to_string(cls);
            throw DataError("tissue class '" + name + "' has " + std::to_string(rows.size()) + " rows, " +
                            std::to_string(per_class) + " required");
        }
    }
    std::vector<std::size_t> out;
    for (const auto& [cls, rows] : by_class) {
        for (const std::size_t pick : sample_without_replacement(rows.size(), per_class, rng)) {
            out.push_back(rows[pick]);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

RobustnessIndex robustness_index(const Matrix& x, std::span<const int> tissue, std::span<const int> center,
                                 std::size_t k_neighbors) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (tissue.size() != n || center.size() != n) throw DataError("robustness_index: label count does not match rows");
    if (k_neighbors < 1) throw ConfigError("robustness_index: k_neighbors must be >= 1");
    if (n < k_neighbors + 1) {
        throw DataError("robustness_index: " + std::to_string(n) + " rows, need at least k_neighbors + 1 = " +
                        std::to_string(k_neighbors + 1));
    }

    RobustnessIndex out;
    out.n_queries = n;
    std::vector<std::pair<double, std::size_t>> dist(n - 1);
    std::vector<char> duplicated(n, 0);
    for (std::size_t q = 0; q < n; ++q) {
        std::size_t slot = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == q) continue;
            double s = 0.0;
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                const double diff = x(static_cast<Eigen::Index>(j), c) - x(static_cast<Eigen::Index>(q), c);
                s += diff * diff;
            }
            if (s == 0.0) duplicated[q] = 1;
            dist[slot++] = {s, j};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_neighbors), dist.end());
        for (std::size_t i = 0; i < k_neighbors; ++i) {
            const std::size_t j = dist[i].second;
            if (tissue[j] == tissue[q]) ++out.tissue_matches;
            if (center[j] == center[q]) ++out.center_matches;
        }
    }
    out.duplicate_rows = static_cast<std::size_t>(std::count(duplicated.begin(), duplicated.end(), 1));
    out.index = out.center_matches == 0
                    ? std::numeric_limits<double>::infinity()
                    : static_cast<double>(out.tissue_matches) / static_cast<double>(out.center_matches);
    return out;
}

RobustnessIndex robustness_index(const EmbeddingSet& set, std::span<const std::size_t> rows, std::size_t k_neighbors) {
    std::vector<int> tissue;
    std::vector<int> center;
    std::unordered_map<std::string, int> center_ids;
    for (const std::size_t r : rows) {
        if (r >= set.n) throw DataError("robustness_index: row " + std::to_string(r) + " out of range");
        const SampleMeta& m = set.meta[r];
        if (!m.tissue_class) throw DataError("sample '" + m.sample_id + "' has no tissue_class");
        if (!m.center_id) throw DataError("sample '" + m.sample_id + "' has no center_id");
        tissue.push_back(*m.tissue_class);
        center.push_back(center_ids.try_emplace(*m.center_id, static_cast<int>(center_ids.size())).first->second);
    }
    return robustness_index(set.to_matrix(rows), tissue, center, k_neighbors);
}

RobustnessResult robustness_cv(const EmbeddingSet& set, const RobustnessConfig& config) {
    config.validate();
    RobustnessResult result;
    result.config = config;
    result.folds.resize(config.n_folds);
    parallel_for(config.n_folds, config.threads, [&](std::size_t fold) {
        Rng rng(config.seed ^ static_cast<std::uint64_t>(fold));
        const auto rows = sample_balanced(set, config.per_class, rng);
        result.folds[fold] = robustness_index(set, rows, config.k_neighbors);
    });
    for (const RobustnessIndex& f : result.folds) result.per_fold_index.push_back(f.index);
    const MeanStd stats = mean_std(result.per_fold_index);
    result.mean = stats.mean;
    result.std = stats.std;
    return result;
}

}  // namespace featdistill
