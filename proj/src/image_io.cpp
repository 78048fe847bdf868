#include "featdistill/augment.hpp"
#include "featdistill/common.hpp"
#include "featdistill/fileio.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <string>

namespace featdistill {

namespace fs = std::filesystem;

namespace {

bool has_extension(const fs::path& path, const char* ext) {
    std::string e = path.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e == ext;
}

RasterImage decode_ppm(const std::string& bytes, const fs::path& path) {
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(start, pos - start);
    };
    if (next_token() != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(next_token());
        h = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw DataError(path.string() + ": malformed PPM header");
    }
    if (w < 1 || h < 1 || maxval != 255) throw DataError(path.string() + ": unsupported PPM geometry or maxval");
    ++pos;  // single whitespace after maxval
    RasterImage img(w, h);
    if (bytes.size() < pos + img.data.size()) throw DataError(path.string() + ": truncated PPM payload");
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), img.data.size(), img.data.begin());
    return img;
}

}  // namespace

RasterImage read_image(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, path);

    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw DataError(path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    RasterImage img(static_cast<int>(image.width), static_cast<int>(image.height));
    if (!png_image_finish_read(&image, nullptr, img.data.data(), 0, nullptr)) {
        const std::string message = image.message;
        png_image_free(&image);
        throw DataError(path.string() + ": " + message);
    }
    return img;
}

void write_image(const RasterImage& img, const fs::path& path) {
    if (!img.valid() || img.width < 1 || img.height < 1) throw DataError("write_image: invalid image");
    if (has_extension(path, ".ppm")) {
        std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
        out.append(reinterpret_cast<const char*>(img.data.data()), img.data.size());
        write_file_atomic(path, out);
        return;
    }
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(image, size, 0, img.data.data(), 0, nullptr)) {
        throw DataError(path.string() + ": " + image.message);
    }
    std::string buffer(size, '\0');
    if (!png_image_write_to_memory(&image, buffer.data(), &size, 0, img.data.data(), 0, nullptr)) {
        throw DataError(path.string() + ": " + image.message);
    }
    buffer.resize(size);
    write_file_atomic(path, buffer);
}

}  // namespace featdistill
