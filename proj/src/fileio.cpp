#include "featdistill/fileio.hpp"

#include "featdistill/common.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

namespace featdistill {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::string_view contents) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open for writing: " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ignored;
            fs::remove(tmp, ignored);
            throw DataError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        std::error_code ignored;
        fs::remove(tmp, ignored);
        throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw DataError("read failed: " + path.string());
    return std::move(buf).str();
}

std::uint64_t path_checksum(const fs::path& path) {
    std::error_code ec;
    if (fs::is_regular_file(path, ec)) return fnv1a64(read_file(path));
    if (!fs::is_directory(path, ec)) throw DataError("no such file or directory: " + path.string());

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
        if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), path));
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = kFnvOffsetBasis;
    for (const auto& rel : files) {
        h = fnv1a64(rel.generic_string(), h);
        h = fnv1a64(read_file(path / rel), h);
    }
    return h;
}

}  // namespace featdistill
