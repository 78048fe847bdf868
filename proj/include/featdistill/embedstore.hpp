#pragma once

#include "featdistill/common.hpp"

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace featdistill {

struct SampleMeta {
    std::string sample_id;
    std::string bag_id;  // slide or ROI; may be empty for patch-level sets
    std::optional<int> label;
    std::optional<std::string> center_id;
    std::optional<int> tissue_class;

    bool operator==(const SampleMeta&) const = default;
};

/// n x d float32 embeddings (row-major) with one SampleMeta per row.
struct EmbeddingSet {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<float> data;
    std::vector<SampleMeta> meta;
    std::vector<std::string> class_names;
    std::string provenance;

    [[nodiscard]] std::span<const float> row(std::size_t i) const {
        return std::span<const float>(data).subspan(i * d, d);
    }

    /// Rows (all, or the given subset in order) widened to double.
    [[nodiscard]] Matrix to_matrix() const;
    [[nodiscard]] Matrix to_matrix(std::span<const std::size_t> rows) const;

    /// Throws DataError describing the first violated invariant.
    void validate() const;

    bool operator==(const EmbeddingSet&) const = default;
};

/// Builds a set from a double matrix (narrowed to float32) and metadata.
EmbeddingSet make_embedding_set(const Matrix& values, std::vector<SampleMeta> meta,
                                std::vector<std::string> class_names = {},
                                std::string provenance = {});

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kMetaFile = "meta.jsonl";
inline constexpr const char* kEmbeddingFile = "emb.bin";
inline constexpr int kFormatVersion = 1;

/// Writes manifest.json, meta.jsonl and emb.bin (little-endian float32)
/// into `dir`, creating it if needed. Each file is written to a temporary
/// name and renamed; the manifest goes last.
void write_embedding_set(const EmbeddingSet& set, const std::filesystem::path& dir);

EmbeddingSet read_embedding_set(const std::filesystem::path& dir);

/// FNV-1a over the little-endian float32 payload, as stored in the manifest.
std::uint64_t embedding_checksum(const EmbeddingSet& set);

struct PairAlignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (student row, teacher row)
    std::size_t student_only = 0;
    std::size_t teacher_only = 0;
};

/// Matches rows by sample_id in student row order. Throws DataError when
/// nothing matches.
PairAlignment align_pairs(const EmbeddingSet& student, const EmbeddingSet& teacher);

struct BagGroup {
    std::string bag_id;
    std::vector<std::size_t> rows;
};

/// Groups rows by bag_id in order of first occurrence.
std::vector<BagGroup> group_by_bag(const EmbeddingSet& set);

struct CsvIngestOptions {
    std::vector<std::string> class_names;  // inferred from max label/tissue id when empty
    std::string provenance;
};

/// Parses `sample_id,bag_id,label,center_id,tissue_class,v0,...,v{d-1}` rows.
/// A leading header row (first field "sample_id") is skipped; empty optional
/// fields become absent.
EmbeddingSet parse_embedding_csv(std::istream& in, const CsvIngestOptions& options = {});

}  // namespace featdistill
