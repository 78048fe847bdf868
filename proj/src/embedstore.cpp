#include "featdistill/embedstore.hpp"

#include "featdistill/fileio.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <istream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace featdistill {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::uint32_t to_little_endian(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0x000000ffU) << 24) | ((v & 0x0000ff00U) << 8) | ((v & 0x00ff0000U) >> 8) |
            ((v & 0xff000000U) >> 24);
    }
    return v;
}

std::string encode_floats(std::span<const float> values) {
    std::string bytes(values.size() * 4, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t le = to_little_endian(std::bit_cast<std::uint32_t>(values[i]));
        std::memcpy(bytes.data() + 4 * i, &le, 4);
    }
    return bytes;
}

std::vector<float> decode_floats(std::string_view bytes) {
    std::vector<float> values(bytes.size() / 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t le;
        std::memcpy(&le, bytes.data() + 4 * i, 4);
        values[i] = std::bit_cast<float>(to_little_endian(le));
    }
    return values;
}

void check_finite(std::span<const float> data, std::size_t d) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw DataError("non-finite embedding value at row " + std::to_string(i / d) + ", column " +
                            std::to_string(i % d));
        }
    }
}

ordered_json meta_to_json(const SampleMeta& m) {
    ordered_json j;
    j["sample_id"] = m.sample_id;
    j["bag_id"] = m.bag_id;
    j["label"] = m.label ? ordered_json(*m.label) : ordered_json(nullptr);
    j["center_id"] = m.center_id ? ordered_json(*m.center_id) : ordered_json(nullptr);
    j["tissue_class"] = m.tissue_class ? ordered_json(*m.tissue_class) : ordered_json(nullptr);
    return j;
}

std::optional<int> optional_class_id(const ordered_json& j, const char* field, std::size_t line) {
    if (!j.contains(field) || j[field].is_null()) return std::nullopt;
    if (!j[field].is_number_integer() || j[field].get<long long>() < 0) {
        throw DataError(std::string(kMetaFile) + " line " + std::to_string(line) + ": '" + field +
                        "' must be a non-negative integer or null");
    }
    return j[field].get<int>();
}

SampleMeta meta_from_json(std::string_view text, std::size_t line) {
    const std::string where = std::string(kMetaFile) + " line " + std::to_string(line);
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(where + ": " + e.what());
    }
    if (!j.is_object()) throw DataError(where + ": expected a JSON object");
    SampleMeta m;
    if (!j.contains("sample_id") || !j["sample_id"].is_string()) {
        throw DataError(where + ": missing string 'sample_id'");
    }
    m.sample_id = j["sample_id"].get<std::string>();
    if (j.contains("bag_id") && !j["bag_id"].is_null()) {
        if (!j["bag_id"].is_string()) throw DataError(where + ": 'bag_id' must be a string");
        m.bag_id = j["bag_id"].get<std::string>();
    }
    m.label = optional_class_id(j, "label", line);
    if (j.contains("center_id") && !j["center_id"].is_null()) {
        if (!j["center_id"].is_string()) throw DataError(where + ": 'center_id' must be a string or null");
        m.center_id = j["center_id"].get<std::string>();
    }
    m.tissue_class = optional_class_id(j, "tissue_class", line);
    return m;
}

}  // namespace

Matrix EmbeddingSet::to_matrix() const {
    Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n * d; ++i) out.data()[i] = data[i];
    return out;
}

Matrix EmbeddingSet::to_matrix(std::span<const std::size_t> rows) const {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= n) throw DataError("row index " + std::to_string(rows[r]) + " out of range");
        const auto src = row(rows[r]);
        for (std::size_t c = 0; c < d; ++c) out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = src[c];
    }
    return out;
}

void EmbeddingSet::validate() const {
    if (n < 1) throw DataError("embedding set invariant violated: n must be >= 1");
    if (d < 1) throw DataError("embedding set invariant violated: d must be >= 1");
    if (data.size() != n * d) {
        throw DataError("embedding set invariant violated: data holds " + std::to_string(data.size()) +
                        " values, expected n*d = " + std::to_string(n * d));
    }
    if (meta.size() != n) {
        throw DataError("embedding set invariant violated: " + std::to_string(meta.size()) +
                        " metadata rows for n = " + std::to_string(n));
    }
    check_finite(data, d);
    std::unordered_set<std::string_view> seen;
    seen.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const SampleMeta& m = meta[i];
        if (!seen.insert(m.sample_id).second) {
            throw DataError("duplicate sample_id '" + m.sample_id + "' at row " + std::to_string(i));
        }
        if (m.label && (*m.label < 0 || static_cast<std::size_t>(*m.label) >= class_names.size())) {
            throw DataError("row " + std::to_string(i) + ": label " + std::to_string(*m.label) +
                            " outside declared class count " + std::to_string(class_names.size()));
        }
        if (m.tissue_class &&
            (*m.tissue_class < 0 || static_cast<std::size_t>(*m.tissue_class) >= class_names.size())) {
            throw DataError("row " + std::to_string(i) + ": tissue_class " + std::to_string(*m.tissue_class) +
                            " outside declared class count " + std::to_string(class_names.size()));
        }
    }
}

EmbeddingSet make_embedding_set(const Matrix& values, std::vector<SampleMeta> meta,
                                std::vector<std::string> class_names, std::string provenance) {
    EmbeddingSet set;
    set.n = static_cast<std::size_t>(values.rows());
    set.d = static_cast<std::size_t>(values.cols());
    set.data.resize(set.n * set.d);
    for (std::size_t i = 0; i < set.data.size(); ++i) set.data[i] = static_cast<float>(values.data()[i]);
    set.meta = std::move(meta);
    set.class_names = std::move(class_names);
    set.provenance = std::move(provenance);
    set.validate();
    return set;
}

std::uint64_t embedding_checksum(const EmbeddingSet& set) {
    return fnv1a64(encode_floats(set.data));
}

void write_embedding_set(const EmbeddingSet& set, const fs::path& dir) {
    set.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());

    const std::string payload = encode_floats(set.data);

    std::string meta_lines;
    for (const SampleMeta& m : set.meta) {
        meta_lines += meta_to_json(m).dump();
        meta_lines += '\n';
    }

    ordered_json manifest;
    manifest["format"] = "featdistill.embedding_set";
    manifest["version"] = kFormatVersion;
    manifest["n"] = set.n;
    manifest["d"] = set.d;
    manifest["dtype"] = "float32";
    manifest["byte_order"] = "little";
    manifest["class_names"] = set.class_names;
    manifest["provenance"] = set.provenance;
    manifest["checksum"] = "fnv1a64:" + to_hex(fnv1a64(payload));

    write_file_atomic(dir / kEmbeddingFile, payload);
    write_file_atomic(dir / kMetaFile, meta_lines);
    write_file_atomic(dir / kManifestFile, manifest.dump(2) + "\n");
}

EmbeddingSet read_embedding_set(const fs::path& dir) {
    const fs::path manifest_path = dir / kManifestFile;
    ordered_json manifest;
    try {
        manifest = ordered_json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }

    EmbeddingSet set;
    try {
        if (manifest.at("version").get<int>() != kFormatVersion) {
            throw DataError(manifest_path.string() + ": unsupported format version " +
                            manifest.at("version").dump());
        }
        const auto n = manifest.at("n").get<long long>();
        const auto d = manifest.at("d").get<long long>();
        if (n < 1 || d < 1) {
            throw DataError(manifest_path.string() + ": embedding set invariant violated: n = " +
                            std::to_string(n) + ", d = " + std::to_string(d) + " (both must be >= 1)");
        }
        set.n = static_cast<std::size_t>(n);
        set.d = static_cast<std::size_t>(d);
        set.class_names = manifest.value("class_names", std::vector<std::string>{});
        set.provenance = manifest.value("provenance", std::string{});
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }

    const fs::path emb_path = dir / kEmbeddingFile;
    const std::string payload = read_file(emb_path);
    const std::size_t expected = set.n * set.d * 4;
    if (payload.size() != expected) {
        throw DataError(emb_path.string() + ": size mismatch, expected " + std::to_string(expected) +
                        " bytes (n*d*4), found " + std::to_string(payload.size()));
    }
    const std::string checksum = "fnv1a64:" + to_hex(fnv1a64(payload));
    const std::string recorded = manifest.value("checksum", std::string{});
    if (recorded != checksum) {
        throw DataError(emb_path.string() + ": checksum mismatch, manifest records '" + recorded +
                        "', payload hashes to '" + checksum + "'");
    }
    set.data = decode_floats(payload);
    check_finite(set.data, set.d);

    const fs::path meta_path = dir / kMetaFile;
    std::istringstream lines(read_file(meta_path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.empty()) continue;
        set.meta.push_back(meta_from_json(line, line_no));
    }
    set.validate();
    return set;
}

PairAlignment align_pairs(const EmbeddingSet& student, const EmbeddingSet& teacher) {
    std::unordered_map<std::string_view, std::size_t> teacher_rows;
    teacher_rows.reserve(teacher.meta.size());
    for (std::size_t j = 0; j < teacher.meta.size(); ++j) teacher_rows.emplace(teacher.meta[j].sample_id, j);

    PairAlignment out;
    for (std::size_t i = 0; i < student.meta.size(); ++i) {
        const auto it = teacher_rows.find(student.meta[i].sample_id);
        if (it == teacher_rows.end()) {
            ++out.student_only;
        } else {
            out.pairs.emplace_back(i, it->second);
        }
    }
    out.teacher_only = teacher.meta.size() - out.pairs.size();
    if (out.pairs.empty()) {
        throw DataError("no sample_id is shared between the student (" + std::to_string(student.meta.size()) +
                        " rows) and teacher (" + std::to_string(teacher.meta.size()) + " rows) sets");
    }
    return out;
}

std::vector<BagGroup> group_by_bag(const EmbeddingSet& set) {
    std::string missing;
    for (const SampleMeta& m : set.meta) {
        if (m.bag_id.empty()) missing += (missing.empty() ? "" : ", ") + m.sample_id;
    }
    if (!missing.empty()) throw DataError("empty bag_id for samples: " + missing);

    std::vector<BagGroup> groups;
    std::unordered_map<std::string_view, std::size_t> index;
    for (std::size_t i = 0; i < set.meta.size(); ++i) {
        const auto [it, inserted] = index.try_emplace(set.meta[i].bag_id, groups.size());
        if (inserted) groups.push_back({set.meta[i].bag_id, {}});
        groups[it->second].rows.push_back(i);
    }
    return groups;
}

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    for (auto& f : fields) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    }
    return fields;
}

std::optional<int> parse_optional_int(std::string_view field, const char* name, std::size_t line) {
    if (field.empty()) return std::nullopt;
    int value = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size() || value < 0) {
        throw DataError("CSV line " + std::to_string(line) + ": '" + name +
                        "' must be a non-negative integer, got '" + std::string(field) + "'");
    }
    return value;
}

}  // namespace

EmbeddingSet parse_embedding_csv(std::istream& in, const CsvIngestOptions& options) {
    constexpr std::size_t kMetaColumns = 5;
    EmbeddingSet set;
    std::string line;
    std::size_t line_no = 0;
    int max_class = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (line_no == 1 && fields[0] == "sample_id") continue;
        if (fields.size() <= kMetaColumns) {
            throw DataError("CSV line " + std::to_string(line_no) + ": expected " +
                            std::to_string(kMetaColumns) + " metadata columns plus at least one value");
        }
        const std::size_t d = fields.size() - kMetaColumns;
        if (set.d == 0) set.d = d;
        if (d != set.d) {
            throw DataError("CSV line " + std::to_string(line_no) + ": " + std::to_string(d) +
                            " value columns, earlier rows have " + std::to_string(set.d));
        }
        SampleMeta m;
        m.sample_id = std::string(fields[0]);
        if (m.sample_id.empty()) throw DataError("CSV line " + std::to_string(line_no) + ": empty sample_id");
        m.bag_id = std::string(fields[1]);
        m.label = parse_optional_int(fields[2], "label", line_no);
        if (!fields[3].empty()) m.center_id = std::string(fields[3]);
        m.tissue_class = parse_optional_int(fields[4], "tissue_class", line_no);
        max_class = std::max({max_class, m.label.value_or(-1), m.tissue_class.value_or(-1)});

        for (std::size_t c = 0; c < d; ++c) {
            const std::string_view f = fields[kMetaColumns + c];
            float v = 0.0f;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc{} || ptr != f.data() + f.size() || !std::isfinite(v)) {
                throw DataError("CSV line " + std::to_string(line_no) + ", value column " + std::to_string(c) +
                                ": not a finite number: '" + std::string(f) + "'");
            }
            set.data.push_back(v);
        }
        set.meta.push_back(std::move(m));
    }
    set.n = set.meta.size();
    if (set.n == 0) throw DataError("CSV contains no data rows");

    if (!options.class_names.empty()) {
        set.class_names = options.class_names;
    } else {
        for (int c = 0; c <= max_class; ++c) set.class_names.push_back(std::to_string(c));
    }
    set.provenance = options.provenance;
    set.validate();
    return set;
}

}  // namespace featdistill
