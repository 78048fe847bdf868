#include "featdistill/augment.hpp"

#include "featdistill/common.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace featdistill {

RasterImage::RasterImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

bool RasterImage::valid() const {
    return width >= 0 && height >= 0 &&
           data.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
}

FloatImage::FloatImage(int w, int h, double fill)
    : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, fill) {}

namespace {

void require_valid(const RasterImage& img, const char* op) {
    if (!img.valid()) {
        throw DataError(std::string(op) + ": image data length does not equal width*height*3");
    }
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
}

double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

// RGB and HSV components all in [0, 1]; hue in turns.
void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double delta = mx - mn;
    v = mx;
    s = mx > 0.0 ? delta / mx : 0.0;
    if (delta == 0.0) {
        h = 0.0;
    } else if (mx == r) {
        h = (g - b) / delta / 6.0;
    } else if (mx == g) {
        h = ((b - r) / delta + 2.0) / 6.0;
    } else {
        h = ((r - g) / delta + 4.0) / 6.0;
    }
    h -= std::floor(h);
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double h6 = (h - std::floor(h)) * 6.0;
    const int sector = std::min(5, static_cast<int>(h6));
    const double f = h6 - sector;
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace

FloatImage to_float(const RasterImage& img) {
    require_valid(img, "to_float");
    FloatImage out(img.width, img.height);
    std::copy(img.data.begin(), img.data.end(), out.data.begin());
    return out;
}

RasterImage quantize(const FloatImage& img) {
    RasterImage out(img.width, img.height);
    std::transform(img.data.begin(), img.data.end(), out.data.begin(), to_byte);
    return out;
}

RasterImage crop_region(const RasterImage& img, int x, int y, int w, int h) {
    require_valid(img, "crop_region");
    if (x < 0 || y < 0 || w < 0 || h < 0 || x + w > img.width || y + h > img.height) {
        throw DataError("crop_region: region exceeds image bounds");
    }
    RasterImage out(w, h);
    for (int row = 0; row < h; ++row) {
        const auto src = img.data.begin() + ((static_cast<std::ptrdiff_t>(y + row) * img.width + x) * 3);
        std::copy(src, src + static_cast<std::ptrdiff_t>(w) * 3,
                  out.data.begin() + static_cast<std::ptrdiff_t>(row) * w * 3);
    }
    return out;
}

double hsv_saturation(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const int mx = std::max({r, g, b});
    const int mn = std::min({r, g, b});
    return mx == 0 ? 0.0 : static_cast<double>(mx - mn) / mx;
}

std::vector<Tile> tile_image(const RasterImage& img, int tile, double saturation_threshold, double min_fraction) {
    require_valid(img, "tile_image");
    if (tile < 1) throw ConfigError("tile size must be >= 1");
    std::vector<Tile> tiles;
    const double pixels = static_cast<double>(tile) * tile;
    for (int ty = 0; ty + tile <= img.height; ty += tile) {
        for (int tx = 0; tx + tile <= img.width; tx += tile) {
            std::size_t foreground = 0;
            for (int y = ty; y < ty + tile; ++y) {
                for (int x = tx; x < tx + tile; ++x) {
                    if (hsv_saturation(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)) > saturation_threshold) {
                        ++foreground;
                    }
                }
            }
            if (static_cast<double>(foreground) / pixels >= min_fraction) {
                tiles.push_back({tx, ty, crop_region(img, tx, ty, tile, tile)});
            }
        }
    }
    return tiles;
}

RasterImage random_crop(const RasterImage& img, int crop, Rng& rng) {
    require_valid(img, "random_crop");
    if (crop < 1 || crop > img.width || crop > img.height) {
        throw DataError("random_crop: crop " + std::to_string(crop) + " does not fit a " + std::to_string(img.width) +
                        "x" + std::to_string(img.height) + " image");
    }
    const auto x = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width - crop + 1)));
    const auto y = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height - crop + 1)));
    return crop_region(img, x, y, crop, crop);
}

RasterImage flip_h(const RasterImage& img) {
    require_valid(img, "flip_h");
    RasterImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
        }
    }
    return out;
}

RasterImage flip_v(const RasterImage& img) {
    require_valid(img, "flip_v");
    RasterImage out(img.width, img.height);
    const std::size_t stride = static_cast<std::size_t>(img.width) * 3;
    for (int y = 0; y < img.height; ++y) {
        std::copy_n(img.data.begin() + static_cast<std::ptrdiff_t>(y * stride), stride,
                    out.data.begin() + static_cast<std::ptrdiff_t>((img.height - 1 - y) * stride));
    }
    return out;
}

JitterParams draw_jitter(const JitterStrength& strength, Rng& rng) {
    JitterParams p;
    p.brightness = rng.uniform(1.0 - strength.brightness, 1.0 + strength.brightness);
    p.contrast = rng.uniform(1.0 - strength.contrast, 1.0 + strength.contrast);
    p.saturation = rng.uniform(1.0 - strength.saturation, 1.0 + strength.saturation);
    p.hue_shift = rng.uniform(-strength.hue, strength.hue);
    shuffle(std::span<JitterStage>(p.order), rng);
    return p;
}

RasterImage apply_jitter(const RasterImage& img, const JitterParams& params) {
    require_valid(img, "color_jitter");
    RasterImage out = img;
    const std::size_t n_pixels = static_cast<std::size_t>(img.width) * img.height;
    for (const JitterStage stage : params.order) {
        auto& d = out.data;
        switch (stage) {
            case JitterStage::brightness:
                if (params.brightness == 1.0) break;
                for (auto& v : d) v = to_byte(v * params.brightness);
                break;
            case JitterStage::contrast: {
                if (params.contrast == 1.0 || n_pixels == 0) break;
                CompensatedSum sum;
                for (std::size_t i = 0; i < n_pixels; ++i) sum.add(luminance(d[3 * i], d[3 * i + 1], d[3 * i + 2]));
                const double mean = sum.value() / static_cast<double>(n_pixels);
                for (auto& v : d) v = to_byte(mean + (v - mean) * params.contrast);
                break;
            }
            case JitterStage::saturation:
                if (params.saturation == 1.0) break;
                for (std::size_t i = 0; i < n_pixels; ++i) {
                    const double gray = luminance(d[3 * i], d[3 * i + 1], d[3 * i + 2]);
                    for (int c = 0; c < 3; ++c) d[3 * i + c] = to_byte(gray + (d[3 * i + c] - gray) * params.saturation);
                }
                break;
            case JitterStage::hue:
                if (params.hue_shift == 0.0) break;
                for (std::size_t i = 0; i < n_pixels; ++i) {
                    double h, s, v, r, g, b;
                    rgb_to_hsv(d[3 * i] / 255.0, d[3 * i + 1] / 255.0, d[3 * i + 2] / 255.0, h, s, v);
                    hsv_to_rgb(h + params.hue_shift, s, v, r, g, b);
                    d[3 * i] = to_byte(r * 255.0);
                    d[3 * i + 1] = to_byte(g * 255.0);
                    d[3 * i + 2] = to_byte(b * 255.0);
                }
                break;
        }
    }
    return out;
}

RasterImage color_jitter(const RasterImage& img, const JitterStrength& strength, Rng& rng) {
    return apply_jitter(img, draw_jitter(strength, rng));
}

std::vector<double> gaussian_kernel(int kernel, double sigma) {
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("blur kernel size must be odd, got " + std::to_string(kernel));
    if (!(sigma > 0.0)) throw ConfigError("blur sigma must be > 0");
    const int radius = kernel / 2;
    std::vector<double> taps(static_cast<std::size_t>(kernel));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        taps[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += taps[static_cast<std::size_t>(i + radius)];
    }
    for (auto& t : taps) t /= sum;
    return taps;
}

FloatImage gaussian_blur(const FloatImage& img, int kernel, double sigma) {
    const auto taps = gaussian_kernel(kernel, sigma);
    const int radius = kernel / 2;
    FloatImage tmp(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    acc += taps[static_cast<std::size_t>(t + radius)] * img.at(reflect_index(x + t, img.width), y, c);
                }
                tmp.at(x, y, c) = acc;
            }
        }
    }
    FloatImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    acc += taps[static_cast<std::size_t>(t + radius)] * tmp.at(x, reflect_index(y + t, img.height), c);
                }
                out.at(x, y, c) = acc;
            }
        }
    }
    return out;
}

RasterImage gaussian_blur(const RasterImage& img, int kernel, double sigma) {
    return quantize(gaussian_blur(to_float(img), kernel, sigma));
}

void AugmentConfig::validate() const {
    for (const double p : {p_hflip, p_vflip, p_jitter, p_blur, fg_min_fraction}) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probabilities and fractions must lie in [0, 1]");
    }
    if (blur_kernel < 1 || blur_kernel % 2 == 0) throw ConfigError("blur_kernel must be odd");
    if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) {
        throw ConfigError("blur sigma range must satisfy 0 < min <= max");
    }
    if (crop < 1 || tile < 1 || crop > tile) throw ConfigError("crop must lie in [1, tile]");
}

AugmentResult augment_pipeline(const RasterImage& tile, const AugmentConfig& config, Rng& rng) {
    config.validate();
    require_valid(tile, "augment_pipeline");
    if (config.crop > tile.width || config.crop > tile.height) {
        throw DataError("augment_pipeline: crop " + std::to_string(config.crop) + " exceeds the " +
                        std::to_string(tile.width) + "x" + std::to_string(tile.height) + " tile");
    }
    AugmentTrace trace;
    trace.crop_x = static_cast<int>(rng.below(static_cast<std::uint64_t>(tile.width - config.crop + 1)));
    trace.crop_y = static_cast<int>(rng.below(static_cast<std::uint64_t>(tile.height - config.crop + 1)));
    trace.hflip = rng.bernoulli(config.p_hflip);
    trace.vflip = rng.bernoulli(config.p_vflip);
    trace.jitter = rng.bernoulli(config.p_jitter);
    trace.jitter_params = draw_jitter(config.jitter, rng);
    trace.blur = rng.bernoulli(config.p_blur);
    trace.blur_sigma = rng.uniform(config.blur_sigma_min, config.blur_sigma_max);

    RasterImage img = crop_region(tile, trace.crop_x, trace.crop_y, config.crop, config.crop);
    if (trace.hflip) img = flip_h(img);
    if (trace.vflip) img = flip_v(img);
    if (trace.jitter) img = apply_jitter(img, trace.jitter_params);
    if (trace.blur) img = gaussian_blur(img, config.blur_kernel, trace.blur_sigma);
    return {std::move(img), trace};
}

}  // namespace featdistill
