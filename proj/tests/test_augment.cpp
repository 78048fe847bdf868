#include "featdistill/augment.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

using namespace featdistill;

namespace {

RasterImage noise_image(int w, int h, std::uint64_t seed) {
    Rng rng(seed);
    RasterImage img(w, h);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.below(256));
    return img;
}

RasterImage solid(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    RasterImage img(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            img.at(x, y, 0) = r;
            img.at(x, y, 1) = g;
            img.at(x, y, 2) = b;
        }
    }
    return img;
}

}  // namespace

TEST(Tiling, FullySaturatedGrid) {
    const auto tiles = tile_image(solid(512, 512, 200, 20, 20));
    ASSERT_EQ(tiles.size(), 4u);
    const std::pair<int, int> expected[] = {{0, 0}, {256, 0}, {0, 256}, {256, 256}};
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(tiles[i].x, expected[i].first);
        EXPECT_EQ(tiles[i].y, expected[i].second);
        EXPECT_EQ(tiles[i].image.width, 256);
    }
}

TEST(Tiling, WhiteAndSmallImagesGiveNothing) {
    EXPECT_TRUE(tile_image(solid(512, 512, 255, 255, 255)).empty());
    EXPECT_TRUE(tile_image(solid(100, 300, 200, 0, 0)).empty());
}

TEST(Tiling, HalfSaturatedMatchesPixelCount) {
    RasterImage img = solid(600, 300, 255, 255, 255);
    for (int y = 0; y < 300; ++y) {
        for (int x = 0; x < 300; ++x) {
            img.at(x, y, 0) = 220;
            img.at(x, y, 1) = 30;
            img.at(x, y, 2) = 30;
        }
    }
    const auto tiles = tile_image(img);
    // Brute-force count over the grid.
    std::vector<std::pair<int, int>> expected;
    for (int ty = 0; ty + 256 <= 300; ty += 256) {
        for (int tx = 0; tx + 256 <= 600; tx += 256) {
            int fg = 0;
            for (int y = ty; y < ty + 256; ++y) {
                for (int x = tx; x < tx + 256; ++x) {
                    const int mx = std::max({img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)});
                    const int mn = std::min({img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)});
                    if (mx > 0 && static_cast<double>(mx - mn) / mx > 0.07) ++fg;
                }
            }
            if (fg >= 0.25 * 256 * 256) expected.emplace_back(tx, ty);
        }
    }
    ASSERT_EQ(tiles.size(), expected.size());
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        EXPECT_EQ(std::make_pair(tiles[i].x, tiles[i].y), expected[i]);
    }
    EXPECT_EQ(tiles.size(), 1u);  // (256,0) has 44 saturated columns of 256, below 25%
}

TEST(Tiling, TilesDisjointAndInside) {
    const RasterImage img = noise_image(300, 520, 1);
    const auto tiles = tile_image(img, 64, 0.07, 0.0);
    std::vector<int> cover(300 * 520, 0);
    for (const auto& t : tiles) {
        ASSERT_LE(t.x + 64, 300);
        ASSERT_LE(t.y + 64, 520);
        EXPECT_EQ(t.image, crop_region(img, t.x, t.y, 64, 64));
        for (int y = t.y; y < t.y + 64; ++y) {
            for (int x = t.x; x < t.x + 64; ++x) ++cover[static_cast<std::size_t>(y * 300 + x)];
        }
    }
    EXPECT_EQ(*std::max_element(cover.begin(), cover.end()), 1);
    EXPECT_EQ(tiles.size(), 4u * 8u);
}

TEST(RandomCrop, IdentityConstantAndReplay) {
    const RasterImage img = noise_image(32, 32, 2);
    Rng rng(1);
    EXPECT_EQ(random_crop(img, 32, rng), img);
    const RasterImage flat = solid(32, 32, 9, 8, 7);
    EXPECT_EQ(random_crop(flat, 20, rng), solid(20, 20, 9, 8, 7));
    Rng a(5), b(5);
    EXPECT_EQ(random_crop(img, 10, a), random_crop(img, 10, b));
    EXPECT_THROW(random_crop(img, 33, a), DataError);
}

TEST(RandomCrop, OffsetsCoverRange) {
    Rng rng(9);
    RasterImage img(4, 4);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) img.at(x, y, 0) = static_cast<std::uint8_t>(y * 4 + x);
    }
    std::vector<int> offsets(9, 0);
    for (int i = 0; i < 9000; ++i) {
        const int v = random_crop(img, 2, rng).at(0, 0, 0);
        ++offsets[static_cast<std::size_t>((v / 4) * 3 + v % 4)];
    }
    for (const int c : offsets) EXPECT_NEAR(c, 1000, 150);
}

TEST(Flip, InvolutionsCommuteAndMirror) {
    const RasterImage img = noise_image(7, 5, 3);
    EXPECT_EQ(flip_h(flip_h(img)), img);
    EXPECT_EQ(flip_v(flip_v(img)), img);
    EXPECT_EQ(flip_h(flip_v(img)), flip_v(flip_h(img)));
    const RasterImage flat = solid(6, 4, 1, 2, 3);
    EXPECT_EQ(flip_h(flat), flat);
    EXPECT_EQ(flip_v(flat), flat);
    RasterImage ab(2, 1);
    ab.data = {1, 2, 3, 4, 5, 6};
    EXPECT_EQ(flip_h(ab).data, (std::vector<std::uint8_t>{4, 5, 6, 1, 2, 3}));
}

TEST(Jitter, IdentityFactorsUnchanged) {
    const RasterImage img = noise_image(9, 9, 4);
    EXPECT_EQ(apply_jitter(img, JitterParams{}), img);
    JitterParams p;
    p.order = {JitterStage::hue, JitterStage::saturation, JitterStage::contrast, JitterStage::brightness};
    EXPECT_EQ(apply_jitter(img, p), img);
}

TEST(Jitter, BrightnessOnConstant) {
    JitterParams p;
    p.brightness = 1.15;
    EXPECT_EQ(apply_jitter(solid(3, 3, 100, 200, 250), p), solid(3, 3, 115, 230, 255));
}

TEST(Jitter, ContrastFixedPoint) {
    JitterParams p;
    p.contrast = 1.15;
    const RasterImage gray = solid(1, 1, 77, 77, 77);
    EXPECT_EQ(apply_jitter(gray, p), gray);
}

TEST(Jitter, SaturationAndHue) {
    JitterParams p;
    p.saturation = 0.0;
    const RasterImage out = apply_jitter(solid(1, 1, 200, 100, 50), p);
    const double gray = 0.299 * 200 + 0.587 * 100 + 0.114 * 50;
    for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(0, 0, c), static_cast<int>(std::lround(gray)));
    JitterParams h;
    h.hue_shift = 1.0 / 3.0;  // red -> green
    const RasterImage green = apply_jitter(solid(1, 1, 255, 0, 0), h);
    EXPECT_EQ(green, solid(1, 1, 0, 255, 0));
    h.hue_shift = -1.0 / 3.0;  // red wraps to blue
    EXPECT_EQ(apply_jitter(solid(1, 1, 255, 0, 0), h), solid(1, 1, 0, 0, 255));
}

TEST(Jitter, DrawRangesAndOrder) {
    Rng rng(6);
    const JitterStrength s;
    std::vector<int> first(4, 0);
    for (int i = 0; i < 4000; ++i) {
        const JitterParams p = draw_jitter(s, rng);
        ASSERT_GE(p.brightness, 0.85);
        ASSERT_LE(p.brightness, 1.15);
        ASSERT_GE(p.contrast, 0.85);
        ASSERT_LE(p.contrast, 1.15);
        ASSERT_GE(p.saturation, 0.9);
        ASSERT_LE(p.saturation, 1.1);
        ASSERT_GE(p.hue_shift, -0.05);
        ASSERT_LE(p.hue_shift, 0.05);
        ++first[static_cast<std::size_t>(p.order[0])];
    }
    for (const int f : first) EXPECT_NEAR(f, 1000, 150);
}

TEST(Blur, KernelNormalizedAndErrors) {
    for (const double sigma : {0.5, 1.0, 2.0}) {
        const auto k = gaussian_kernel(9, sigma);
        EXPECT_NEAR(std::accumulate(k.begin(), k.end(), 0.0), 1.0, 1e-12);
        for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(k[i], k[8 - i]);
    }
    EXPECT_THROW(gaussian_kernel(8, 1.0), ConfigError);
    EXPECT_THROW(gaussian_blur(RasterImage(4, 4), 4, 1.0), ConfigError);
}

TEST(Blur, ConstantUnchanged) {
    const RasterImage flat = solid(12, 10, 40, 90, 200);
    EXPECT_EQ(gaussian_blur(flat, 9, 1.7), flat);
}

TEST(Blur, ImpulseMatchesDirectConvolution) {
    FloatImage img(21, 21);
    img.at(10, 10, 1) = 255.0;
    const auto taps = gaussian_kernel(9, 1.3);
    const FloatImage fast = gaussian_blur(img, 9, 1.3);
    const FloatImage direct = oracle::direct_blur(img, taps);
    for (std::size_t i = 0; i < fast.data.size(); ++i) EXPECT_NEAR(fast.data[i], direct.data[i], 1e-10);
    for (int dy = -4; dy <= 4; ++dy) {
        for (int dx = -4; dx <= 4; ++dx) {
            EXPECT_NEAR(fast.at(10 + dx, 10 + dy, 1), 255.0 * taps[static_cast<std::size_t>(dx + 4)] * taps[static_cast<std::size_t>(dy + 4)], 1e-10);
        }
    }
}

TEST(Blur, BorderHandlingMatchesOracle) {
    const FloatImage img = to_float(noise_image(11, 7, 7));
    const FloatImage fast = gaussian_blur(img, 9, 2.0);
    const FloatImage direct = oracle::direct_blur(img, gaussian_kernel(9, 2.0));
    for (std::size_t i = 0; i < fast.data.size(); ++i) EXPECT_NEAR(fast.data[i], direct.data[i], 1e-10);
}

TEST(Blur, PreservesMeanWithConstantBorder) {
    // Random interior, constant band at least the kernel radius wide.
    FloatImage img(40, 40, 128.0);
    Rng rng(8);
    for (int y = 8; y < 32; ++y) {
        for (int x = 8; x < 32; ++x) {
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = rng.uniform(0.0, 255.0);
        }
    }
    const FloatImage out = gaussian_blur(img, 9, 1.5);
    const double before = std::accumulate(img.data.begin(), img.data.end(), 0.0);
    const double after = std::accumulate(out.data.begin(), out.data.end(), 0.0);
    EXPECT_NEAR(after / static_cast<double>(out.data.size()), before / static_cast<double>(img.data.size()), 1e-9);
}

TEST(Pipeline, AllOffIsIdentity) {
    AugmentConfig cfg;
    cfg.p_hflip = cfg.p_vflip = cfg.p_jitter = cfg.p_blur = 0.0;
    cfg.crop = cfg.tile = 16;
    const RasterImage tile = noise_image(16, 16, 9);
    Rng rng(1);
    const AugmentResult r = augment_pipeline(tile, cfg, rng);
    EXPECT_EQ(r.image, tile);
    EXPECT_FALSE(r.trace.hflip || r.trace.vflip || r.trace.jitter || r.trace.blur);
}

TEST(Pipeline, ReplayAndFixedDrawCount) {
    AugmentConfig cfg;
    cfg.crop = 24;
    cfg.tile = 32;
    const RasterImage tile = noise_image(32, 32, 10);
    for (std::uint64_t i = 0; i < 20; ++i) {
        Rng a = sample_rng(42, i), b = sample_rng(42, i);
        const AugmentResult x = augment_pipeline(tile, cfg, a);
        const AugmentResult y = augment_pipeline(tile, cfg, b);
        EXPECT_EQ(x.image, y.image);
        EXPECT_EQ(x.image.width, 24);
        EXPECT_EQ(a.counter(), b.counter());
        if (i > 0) {
            Rng c = sample_rng(42, i - 1);
            augment_pipeline(tile, cfg, c);
            EXPECT_EQ(c.counter(), a.counter());  // same number of draws whatever fires
        }
    }
}

TEST(Pipeline, BlurFrequency) {
    AugmentConfig cfg;
    cfg.crop = cfg.tile = 4;
    const RasterImage tile = noise_image(4, 4, 11);
    int blurred = 0;
    for (std::uint64_t i = 0; i < 10000; ++i) {
        Rng rng = sample_rng(2024, i);
        if (augment_pipeline(tile, cfg, rng).trace.blur) ++blurred;
    }
    EXPECT_NEAR(blurred / 10000.0, 0.10, 0.01);
}

TEST(Pipeline, ConfigValidation) {
    AugmentConfig cfg;
    cfg.crop = 300;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.p_blur = 1.5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.blur_kernel = 4;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(ImageIo, PngAndPpmRoundTrip) {
    const RasterImage img = noise_image(13, 7, 12);
    const auto dir = std::filesystem::temp_directory_path() / "featdistill_image_io";
    std::filesystem::create_directories(dir);
    write_image(img, dir / "a.png");
    write_image(img, dir / "a.ppm");
    EXPECT_EQ(read_image(dir / "a.png"), img);
    EXPECT_EQ(read_image(dir / "a.ppm"), img);
    EXPECT_THROW(read_image(dir / "missing.png"), DataError);
    std::filesystem::remove_all(dir);
}
