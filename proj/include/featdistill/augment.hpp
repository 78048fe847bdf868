#pragma once

#include "featdistill/rng.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace featdistill {

/// 8-bit interleaved RGB, row-major.
struct RasterImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    RasterImage() = default;
    RasterImage(int w, int h, std::uint8_t fill = 0);

    std::uint8_t& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    [[nodiscard]] std::uint8_t at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    [[nodiscard]] bool valid() const;

    bool operator==(const RasterImage&) const = default;
};

/// Floating-point RGB image in the same layout, used for blur arithmetic.
struct FloatImage {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    FloatImage() = default;
    FloatImage(int w, int h, double fill = 0.0);

    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    [[nodiscard]] double at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

FloatImage to_float(const RasterImage& img);
/// Rounds to nearest and clamps to [0, 255].
RasterImage quantize(const FloatImage& img);

/// Extracts the sub-image with top-left corner (x, y).
RasterImage crop_region(const RasterImage& img, int x, int y, int w, int h);

// --- tiling ------------------------------------------------------------------

struct Tile {
    int x = 0;
    int y = 0;
    RasterImage image;
};

/// HSV saturation (max - min) / max in [0, 1]; 0 for black.
double hsv_saturation(std::uint8_t r, std::uint8_t g, std::uint8_t b);

/// Non-overlapping tile x tile grid from (0, 0), partial edge tiles dropped.
/// A tile is kept when the fraction of pixels with saturation above
/// `saturation_threshold` is at least `min_fraction`.
std::vector<Tile> tile_image(const RasterImage& img, int tile = 256, double saturation_threshold = 0.07,
                             double min_fraction = 0.25);

// --- geometric ---------------------------------------------------------------

/// Offsets uniform in [0, side - crop] per axis, x drawn before y.
RasterImage random_crop(const RasterImage& img, int crop, Rng& rng);
RasterImage flip_h(const RasterImage& img);
RasterImage flip_v(const RasterImage& img);

// --- color -------------------------------------------------------------------

struct JitterStrength {
    double brightness = 0.15;
    double contrast = 0.15;
    double saturation = 0.1;
    double hue = 0.05;
};

enum class JitterStage : std::uint8_t { brightness, contrast, saturation, hue };

struct JitterParams {
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
    double hue_shift = 0.0;  // in turns
    std::array<JitterStage, 4> order{JitterStage::brightness, JitterStage::contrast, JitterStage::saturation,
                                     JitterStage::hue};
};

/// Draws factors in [1 - s, 1 + s] (hue shift in [-h, h]) and a random stage
/// order: brightness, contrast, saturation, hue, then three Fisher-Yates swaps.
JitterParams draw_jitter(const JitterStrength& strength, Rng& rng);

/// Applies the stages in `params.order`; each stage rounds and clamps to 8 bits.
RasterImage apply_jitter(const RasterImage& img, const JitterParams& params);

RasterImage color_jitter(const RasterImage& img, const JitterStrength& strength, Rng& rng);

// --- blur --------------------------------------------------------------------

/// Normalized 1-D Gaussian taps of odd length `kernel`.
std::vector<double> gaussian_kernel(int kernel, double sigma);

/// Separable blur with reflect (mirror without edge repeat) padding.
FloatImage gaussian_blur(const FloatImage& img, int kernel, double sigma);
RasterImage gaussian_blur(const RasterImage& img, int kernel, double sigma);

// --- pipeline ----------------------------------------------------------------

struct AugmentConfig {
    double p_hflip = 0.5;
    double p_vflip = 0.5;
    double p_jitter = 0.5;
    JitterStrength jitter;
    double p_blur = 0.1;
    int blur_kernel = 9;
    double blur_sigma_min = 0.5;
    double blur_sigma_max = 2.0;
    int crop = 224;
    int tile = 256;
    double fg_saturation_threshold = 0.07;
    double fg_min_fraction = 0.25;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Which steps fired for one sample.
struct AugmentTrace {
    int crop_x = 0;
    int crop_y = 0;
    bool hflip = false;
    bool vflip = false;
    bool jitter = false;
    JitterParams jitter_params;
    bool blur = false;
    double blur_sigma = 0.0;
};

struct AugmentResult {
    RasterImage image;
    AugmentTrace trace;
};

/// Crop, then flip_h / flip_v / jitter / blur with their probabilities. Every
/// draw is made on every call in a fixed order, whether or not the step
/// fires. One call per sample; the result feeds both teacher and student.
AugmentResult augment_pipeline(const RasterImage& tile, const AugmentConfig& config, Rng& rng);

/// Generator stream for sample `index` under `seed`.
inline Rng sample_rng(std::uint64_t seed, std::uint64_t index) { return Rng(seed, index); }

// --- raster files ------------------------------------------------------------

/// PNG (8-bit gray/RGB/RGBA, alpha dropped) or binary PPM (P6, maxval 255).
RasterImage read_image(const std::filesystem::path& path);
/// `.ppm` writes P6; anything else writes PNG. Atomic.
void write_image(const RasterImage& img, const std::filesystem::path& path);

}  // namespace featdistill
