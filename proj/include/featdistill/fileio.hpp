#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace featdistill {

/// Writes `contents` to `<path>.tmp` and renames it over `path`, so readers
/// never observe a partially written file. Throws DataError on failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Whole file as bytes. Throws DataError naming the path on failure.
std::string read_file(const std::filesystem::path& path);

/// FNV-1a of a file's bytes, or for a directory of every regular file
/// underneath it (relative names and contents, sorted by name).
std::uint64_t path_checksum(const std::filesystem::path& path);

}  // namespace featdistill
