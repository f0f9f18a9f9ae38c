#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include <unistd.h>

#include "msca/dataset.hpp"
#include "msca/preprocess.hpp"
#include "msca/tensor_io.hpp"

using namespace msca;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("msca_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Window, ClipsToLevelPlusMinusHalfWidth) {
    const std::vector<double> raw{-1000, 40, 1000, -160, 240, 239.5};
    const auto w = window_ct(raw);
    EXPECT_EQ(w, (std::vector<double>{-160, 40, 240, -160, 240, 239.5}));
    EXPECT_THROW(window_ct(raw, 0.0), ConfigError);
}

TEST(Percentiles, NearestRankOnOneToThousand) {
    std::vector<double> v(1000);
    std::iota(v.begin(), v.end(), 1.0);
    std::shuffle(v.begin(), v.end(), Rng(3));
    EXPECT_EQ(nearest_rank_percentile(v, 0.5), 5.0);
    EXPECT_EQ(nearest_rank_percentile(v, 99.5), 995.0);
    const auto c = clip_percentiles(v);
    EXPECT_EQ(*std::min_element(c.begin(), c.end()), 5.0);
    EXPECT_EQ(*std::max_element(c.begin(), c.end()), 995.0);
    EXPECT_EQ(clip_percentiles(v, 0.0, 100.0), v);
    EXPECT_THROW(clip_percentiles(std::vector<double>{}), ValidationError);
    EXPECT_EQ(clip_percentiles(std::vector<double>(7, 2.5)), std::vector<double>(7, 2.5));
}

TEST(MinMax, FormulaAndConstantCase) {
    EXPECT_EQ(minmax_normalize(std::vector<double>{0, 1}), (std::vector<double>{0, 255}));
    const auto n = minmax_normalize(std::vector<double>{-160, 40, 240});
    EXPECT_NEAR(n[0], 0.0, 1e-12);
    EXPECT_NEAR(n[1], 127.5, 1e-12);
    EXPECT_NEAR(n[2], 255.0, 1e-12);
    EXPECT_EQ(minmax_normalize(std::vector<double>(4, 9.0)), std::vector<double>(4, 0.0));
}

TEST(Resize, BilinearHalfPixelOracle) {
    const Image src{2, 2, {1, 2, 3, 4}};
    const auto out = resize(src, 4, ResizeMode::Bilinear);
    const std::vector<double> expect{1, 1.25, 1.75, 2, 1.5, 1.75, 2.25, 2.5, 2.5, 2.75, 3.25, 3.5, 3, 3.25, 3.75, 4};
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(out.pixels[i], expect[i], 1e-12);
}

TEST(Resize, SameSizeIsIdentityAndNearestStaysBinary) {
    Rng rng(1);
    Image img{5, 5, std::vector<double>(25)};
    for (auto& v : img.pixels) v = std::uniform_real_distribution<double>(0, 255)(rng);
    EXPECT_EQ(resize(img, 5, ResizeMode::Bilinear).pixels, img.pixels);
    EXPECT_EQ(resize(img, 5, ResizeMode::Nearest).pixels, img.pixels);
    Image mask{7, 5, std::vector<double>(35)};
    for (auto& v : mask.pixels) v = rng() % 2;
    for (double v : resize(mask, 16, ResizeMode::Nearest).pixels) EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_THROW(resize(img, 0, ResizeMode::Nearest), ConfigError);
}

TEST(Preprocess, MriChainIdempotent) {
    Rng rng(4);
    std::vector<double> raw(4000);
    for (auto& v : raw) v = std::lognormal_distribution<double>(3.0, 1.0)(rng);
    const auto once = normalize_intensities(raw, Modality::MRI);
    const auto twice = normalize_intensities(once, Modality::MRI);
    for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(once[i], twice[i], 1e-12);
}

TEST(Preprocess, CtStagesIdempotent) {
    Rng rng(5);
    std::vector<double> raw(1000);
    for (auto& v : raw) v = std::uniform_real_distribution<double>(-1200, 1500)(rng);
    const auto w = window_ct(raw);
    EXPECT_EQ(window_ct(w), w);
    const auto n = minmax_normalize(w);
    const auto n2 = minmax_normalize(n);
    for (std::size_t i = 0; i < n.size(); ++i) EXPECT_NEAR(n[i], n2[i], 1e-12);
}

TEST(Preprocess, VolumeSlicesShareWholeVolumeStatistics) {
    Tensor vol({2, 4, 4});
    for (std::int64_t i = 0; i < 16; ++i) vol.data()[i] = -1000;  // slice 0: air
    for (std::int64_t i = 16; i < 32; ++i) vol.data()[i] = 1000;  // slice 1: bone
    const auto slices = preprocess_volume(vol, Modality::CT, 8);
    ASSERT_EQ(slices.size(), 2u);
    EXPECT_EQ(slices[0].pixels.front(), 0.0);
    EXPECT_EQ(slices[1].pixels.front(), 255.0);
    EXPECT_EQ(slices[1].width, 8);
    EXPECT_THROW(preprocess_volume(Tensor({4, 4}), Modality::CT, 8), DimensionError);
}

TEST(Boxes, FromMask) {
    BinaryMask m(8, 6);
    m.set(3, 5, true);
    EXPECT_EQ(box_from_mask(m), (BoxPrompt{5, 3, 6, 4}));
    BinaryMask full(8, 6, std::vector<std::uint8_t>(48, 1));
    EXPECT_EQ(box_from_mask(full), (BoxPrompt{0, 0, 8, 6}));
    EXPECT_THROW(box_from_mask(BinaryMask(4, 4)), ValidationError);
}

TEST(Boxes, FromMaskMatchesExtremaScan) {
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
        const auto s = gen_synthetic_one(7, t, 32);
        int r0 = 99, r1 = -1, c0 = 99, c1 = -1;
        for (int r = 0; r < 32; ++r)
            for (int c = 0; c < 32; ++c)
                if (s.mask.at(r, c)) {
                    r0 = std::min(r0, r), r1 = std::max(r1, r), c0 = std::min(c0, c), c1 = std::max(c1, c);
                }
        EXPECT_EQ(s.box, (BoxPrompt{c0, r0, c1 + 1, r1 + 1}));
    }
}

TEST(Boxes, PerturbationBounds) {
    EXPECT_EQ(perturbation_max(1024), 20);
    EXPECT_EQ(perturbation_max(64), 1);
    EXPECT_EQ(perturbation_max(512), 10);
    Rng rng(1);
    const BoxPrompt b{10, 12, 30, 40};
    EXPECT_EQ(perturb_box(b, rng, 64, 0), b);
    for (int t = 0; t < 2000; ++t) {
        const auto p = perturb_box(b, rng, 48, 20);
        EXPECT_TRUE(p.contains(b));
        EXPECT_TRUE(p.inside(48, 48));
    }
}

TEST(Synthetic, DeterministicAndWellFormed) {
    const auto a = gen_synthetic(42, 5, 64), b = gen_synthetic(42, 5, 64);
    for (int i = 0; i < 5; ++i) {
        EXPECT_EQ(a[i].id, b[i].id);
        EXPECT_EQ(a[i].mask, b[i].mask);
        EXPECT_TRUE(std::equal(a[i].image.data().begin(), a[i].image.data().end(), b[i].image.data().begin()));
        EXPECT_FALSE(a[i].mask.empty());
        EXPECT_EQ(a[i].image.shape(), (Shape{3, 64, 64}));
    }
    EXPECT_EQ(a[3].id, "synth_00003");
    // Sample i depends only on (seed, i).
    EXPECT_EQ(gen_synthetic_one(42, 3, 64).mask, a[3].mask);
    EXPECT_THROW(gen_synthetic(1, 1, 40), ConfigError);
}

TEST(Synthetic, MaskAreaWithinConfiguredRange) {
    const int s = 64;
    const SynthConfig cfg;
    // One ellipse at the smallest axes, minus a boundary ring for pixel-centre sampling.
    const double lo = std::numbers::pi * (cfg.axis_lo * s - 1) * (cfg.axis_lo * s - 1);
    const double hi = std::min<double>(s * s, 2 * std::numbers::pi * (cfg.axis_hi * s + 1) * (cfg.axis_hi * s + 1));
    double mean = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto area = static_cast<double>(gen_synthetic_one(9, i, s).mask.count());
        EXPECT_GE(area, lo);
        EXPECT_LE(area, hi);
        mean += area / 1000;
    }
    EXPECT_GT(mean, lo);
    EXPECT_LT(mean, hi);
}

TEST(Pgm, HeaderArithmeticAndRoundTrip) {
    const auto dir = scratch("pgm");
    GrayImage img{64, 64, std::vector<std::uint8_t>(4096)};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 7);
    const auto path = (dir / "a.pgm").string();
    write_pgm(path, img);
    EXPECT_EQ(fs::file_size(path), 13u + 4096u);  // "P5\n64 64\n255\n"
    EXPECT_EQ(read_pgm(path), img);
    fs::remove_all(dir);
}

TEST(Pgm, CommentsAndMalformedHeaders) {
    const std::string ok = "P5\n# made by hand\n2 1\n255\n\x01\x02";
    const auto img = decode_pgm(std::vector<std::uint8_t>(ok.begin(), ok.end()));
    EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{1, 2}));
    const std::string wide = "P5\n2 1\n65535\n\x01\x02\x03\x04";
    try {
        decode_pgm(std::vector<std::uint8_t>(wide.begin(), wide.end()));
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 7u);
    }
    const std::string truncated = "P5\n4 4\n255\n\x01";
    EXPECT_THROW(decode_pgm(std::vector<std::uint8_t>(truncated.begin(), truncated.end())), FormatError);
    const std::string p2 = "P2\n1 1\n255\n0";
    EXPECT_THROW(decode_pgm(std::vector<std::uint8_t>(p2.begin(), p2.end())), FormatError);
}

TEST(Pgm, MaskValuesMustBeBinary) {
    const auto dir = scratch("mask");
    Rng rng(2);
    BinaryMask m(9, 5);
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 9; ++c) m.set(r, c, rng() % 2);
    write_mask((dir / "m.pgm").string(), m);
    EXPECT_EQ(read_mask((dir / "m.pgm").string()), m);
    GrayImage bad{3, 1, {0, 255, 128}};
    write_pgm((dir / "bad.pgm").string(), bad);
    try {
        read_mask((dir / "bad.pgm").string());
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 11u + 2u);  // "P5\n3 1\n255\n" then third pixel
    }
    fs::remove_all(dir);
}

TEST(Dataset, WriteLoadAndSplits) {
    const auto dir = scratch("ds");
    const auto sizes = split_sizes(300);
    EXPECT_EQ(sizes.train, 200);
    EXPECT_EQ(sizes.val, 50);
    EXPECT_EQ(sizes.test, 50);
    const auto m = write_synthetic_dataset(dir.string(), 5, 12, 32);
    const auto back = load_manifest(dir.string());
    EXPECT_EQ(back.train, m.train);
    EXPECT_EQ(back.test, m.test);
    EXPECT_EQ(back.seed, 5u);
    EXPECT_EQ(back.size, 32);
    const auto train = load_split(back, Split::Train);
    ASSERT_EQ(train.samples.size(), m.train.size());
    const auto original = gen_synthetic_one(5, 0, 32);
    EXPECT_EQ(train.samples[0].mask, original.mask);
    EXPECT_EQ(train.samples[0].box, original.box);
    // Images are stored at 8 bits and generated on the same grid.
    EXPECT_TRUE(std::equal(original.image.data().begin(), original.image.data().end(),
                           train.samples[0].image.data().begin()));
    fs::remove_all(dir);
}

TEST(Dataset, EmptyMasksAreFilteredAndCounted) {
    const auto dir = scratch("empty");
    auto m = write_synthetic_dataset(dir.string(), 5, 6, 32);
    write_mask((dir / "masks" / (m.train[0] + ".pgm")).string(), BinaryMask(32, 32));
    const auto train = load_split(load_manifest(dir.string()), Split::Train);
    EXPECT_EQ(train.filtered_empty, 1u);
    EXPECT_EQ(train.samples.size(), m.train.size() - 1);
    fs::remove_all(dir);
}

TEST(Dataset, GenerationIsByteIdentical) {
    const auto a = scratch("byte_a"), b = scratch("byte_b");
    write_synthetic_dataset(a.string(), 11, 6, 32);
    write_synthetic_dataset(b.string(), 11, 6, 32);
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const auto other = b / fs::relative(entry.path(), a);
        EXPECT_EQ(read_file(entry.path().string()), read_file(other.string())) << entry.path();
    }
    fs::remove_all(a);
    fs::remove_all(b);
}
