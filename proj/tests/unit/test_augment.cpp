#include <gtest/gtest.h>

#include <cmath>

#include "ftk/augment.hpp"
#include "generators.hpp"

namespace ftk {
namespace {

// Image on the 8-bit grid, as decoded from PPM.
Tensor grid_image(SplitMix64& rng, std::size_t c, std::size_t h, std::size_t w) {
    Tensor t({c, h, w});
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, static_cast<double>(rng.below(256)) / 255.0);
    return t;
}

double px(const Tensor& t, std::size_t c, std::size_t y, std::size_t x) {
    return t.item((c * t.dim(1) + y) * t.dim(2) + x);
}

TEST(Flips, InvolutionsAndRotationGroup) {
    for (std::uint64_t c = 0; c < 50; ++c) {
        auto rng = testing::case_rng(30, c);
        const Tensor img = grid_image(rng, 3, testing::gen_size(rng, 1, 9), testing::gen_size(rng, 1, 9));
        ASSERT_TRUE(hflip(hflip(img)).bitwise_equal(img));
        ASSERT_TRUE(vflip(vflip(img)).bitwise_equal(img));
        ASSERT_TRUE(rot90(rot90(rot90(rot90(img, 1), 1), 1), 1).bitwise_equal(img));
        ASSERT_TRUE(hflip(vflip(img)).bitwise_equal(rot90(img, 2)));
        ASSERT_TRUE(rot90(img, 3).bitwise_equal(rot90(rot90(rot90(img, 1), 1), 1)));
        ASSERT_TRUE(rot90(img, 0).bitwise_equal(img));
    }
}

TEST(Flips, IndexDefinitions) {
    auto rng = testing::case_rng(31, 0);
    const Tensor img = grid_image(rng, 2, 3, 4);
    const Tensor h = hflip(img), v = vflip(img), r = rot90(img, 1);
    EXPECT_EQ(r.shape(), (Shape{2, 4, 3}));
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t y = 0; y < 3; ++y) {
            for (std::size_t x = 0; x < 4; ++x) {
                EXPECT_EQ(px(h, c, y, x), px(img, c, y, 3 - x));
                EXPECT_EQ(px(v, c, y, x), px(img, c, 2 - y, x));
                // Counter-clockwise: the top output row is the input's right column.
                EXPECT_EQ(px(r, c, 3 - x, y), px(img, c, y, x));
            }
        }
    }
}

TEST(Flips, PipelineHflipTwiceIsIdentity) {
    auto rng = testing::case_rng(32, 0);
    const Tensor img = grid_image(rng, 3, 8, 8);
    const AugmentPipeline p{{AugOp::hflip(1.0), AugOp::hflip(1.0)}, 5};
    EXPECT_TRUE(augment(img, p, 0, 0).bitwise_equal(img));
}

TEST(Blur, KernelNormalizedWithRadiusCeil3Sigma) {
    for (double sigma : {0.1, 0.33, 0.5, 1.0, 2.7}) {
        const auto k = gaussian_kernel(sigma);
        EXPECT_EQ(k.size(), 2 * static_cast<std::size_t>(std::ceil(3 * sigma)) + 1) << sigma;
        double s = 0;
        for (double v : k) s += v;
        EXPECT_NEAR(s, 1.0, 1e-12);
        for (std::size_t i = 0; i < k.size(); ++i) EXPECT_DOUBLE_EQ(k[i], k[k.size() - 1 - i]);
    }
}

TEST(Blur, ConstantImageStaysConstant) {
    for (double sigma : {0.1, 0.6, 1.0, 3.0}) {
        const Tensor img = Tensor::full({3, 5, 7}, 0.42);
        for (double v : gaussian_blur(img, sigma).to_vector()) ASSERT_NEAR(v, 0.42, 1e-6) << sigma;
    }
}

int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

TEST(Blur, MatchesDirectTwoDimensionalConvolution) {
    for (std::uint64_t c = 0; c < 20; ++c) {
        auto rng = testing::case_rng(33, c);
        const std::size_t h = testing::gen_size(rng, 1, 9), w = testing::gen_size(rng, 1, 9);
        const double sigma = rng.uniform(0.1, 1.5);
        const Tensor img = grid_image(rng, 2, h, w);
        const Tensor out = gaussian_blur(img, sigma);
        const int r = static_cast<int>(std::ceil(3 * sigma));
        std::vector<double> g;
        double gs = 0;
        for (int i = -r; i <= r; ++i) {
            g.push_back(std::exp(-0.5 * i * i / (sigma * sigma)));
            gs += g.back();
        }
        for (auto& v : g) v /= gs;
        for (std::size_t ch = 0; ch < 2; ++ch) {
            for (int y = 0; y < static_cast<int>(h); ++y) {
                for (int x = 0; x < static_cast<int>(w); ++x) {
                    double acc = 0;
                    for (int dy = -r; dy <= r; ++dy) {
                        for (int dx = -r; dx <= r; ++dx) {
                            acc += g[dy + r] * g[dx + r] *
                                   px(img, ch, reflect101(y + dy, static_cast<int>(h)),
                                      reflect101(x + dx, static_cast<int>(w)));
                        }
                    }
                    ASSERT_NEAR(px(out, ch, y, x), acc, 1e-5) << "case " << c;
                }
            }
        }
    }
}

double bilinear_ref(const Tensor& img, std::size_t c, std::size_t oy, std::size_t ox, std::size_t oh,
                    std::size_t ow) {
    const double h = static_cast<double>(img.dim(1)), w = static_cast<double>(img.dim(2));
    auto coord = [](double o, double in, double out) {
        return std::clamp((o + 0.5) * in / out - 0.5, 0.0, in - 1);
    };
    const double sy = coord(static_cast<double>(oy), h, static_cast<double>(oh));
    const double sx = coord(static_cast<double>(ox), w, static_cast<double>(ow));
    const auto y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
    const std::size_t y1 = std::min(y0 + 1, img.dim(1) - 1), x1 = std::min(x0 + 1, img.dim(2) - 1);
    const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
    return (1 - fy) * ((1 - fx) * px(img, c, y0, x0) + fx * px(img, c, y0, x1)) +
           fy * ((1 - fx) * px(img, c, y1, x0) + fx * px(img, c, y1, x1));
}

TEST(Resize, MatchesPixelCenterBilinear) {
    for (std::uint64_t c = 0; c < 30; ++c) {
        auto rng = testing::case_rng(34, c);
        const Tensor img = grid_image(rng, 3, testing::gen_size(rng, 1, 8), testing::gen_size(rng, 1, 8));
        const std::size_t oh = testing::gen_size(rng, 1, 12), ow = testing::gen_size(rng, 1, 12);
        const Tensor out = resize_bilinear(img, oh, ow);
        ASSERT_EQ(out.shape(), (Shape{3, oh, ow}));
        for (std::size_t ch = 0; ch < 3; ++ch) {
            for (std::size_t y = 0; y < oh; ++y) {
                for (std::size_t x = 0; x < ow; ++x) {
                    ASSERT_NEAR(px(out, ch, y, x), bilinear_ref(img, ch, y, x, oh, ow), 1e-6) << "case " << c;
                }
            }
        }
    }
}

TEST(Resize, SameSizeIsIdentity) {
    auto rng = testing::case_rng(35, 0);
    const Tensor img = grid_image(rng, 3, 6, 5);
    const Tensor out = resize_bilinear(img, 6, 5);
    for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(out.item(i), img.item(i), 1e-7);
}

TEST(Normalize, IdentityZerosAndInverse) {
    auto rng = testing::case_rng(36, 0);
    const Tensor img = grid_image(rng, 3, 4, 4);
    EXPECT_TRUE(normalize(img, {0, 0, 0}, {1, 1, 1}).bitwise_equal(img));
    const std::array<double, 3> mean{0.485, 0.456, 0.406}, sd{0.229, 0.224, 0.225};
    Tensor at_mean({3, 2, 2});
    for (std::size_t i = 0; i < 12; ++i) at_mean.set(i, mean[i / 4]);
    for (double v : normalize(at_mean, mean, sd).to_vector()) EXPECT_NEAR(v, 0.0, 1e-7);
    const Tensor back = denormalize(normalize(img, mean, sd), mean, sd);
    for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(back.item(i), img.item(i), 1e-6);
    EXPECT_THROW(normalize(img, mean, {0.2, 0.0, 0.2}), ValueError);
}

TEST(Pipeline, PureInSeedEpochIndex) {
    auto rng = testing::case_rng(37, 0);
    const Tensor img = grid_image(rng, 3, 16, 16);
    const AugmentPipeline p = default_pipeline(20, 99);
    const Tensor a = augment(img, p, 3, 17);
    EXPECT_TRUE(augment(img, p, 3, 17).bitwise_equal(a));
    std::size_t differing = 0;
    for (std::uint64_t i = 0; i < 10; ++i) {
        differing += !augment(img, p, 3, 100 + i).bitwise_equal(a);
    }
    EXPECT_GT(differing, 5u);
    AugmentPipeline other = p;
    other.base_seed = 100;
    EXPECT_FALSE(augment(img, other, 3, 17).bitwise_equal(a) && augment(img, other, 4, 17).bitwise_equal(a));
}

TEST(Pipeline, OutputsStayInUnitRange) {
    for (std::uint64_t c = 0; c < 40; ++c) {
        auto rng = testing::case_rng(38, c);
        const Tensor img = grid_image(rng, 3, 12, 12);
        const AugmentPipeline p{{AugOp::blur(1.0, 0.1, 1.5), AugOp::hflip(0.5), AugOp::vflip(0.5),
                                 AugOp::rot90(1.0), AugOp::resize(17, 9)},
                                c};
        const Tensor out = augment(img, p, 0, c);
        for (double v : out.to_vector()) {
            ASSERT_GE(v, -1e-6);
            ASSERT_LE(v, 1.0 + 1e-6);
        }
    }
}

TEST(Pipeline, BlurAndResizeStayWithinInputRange) {
    for (std::uint64_t c = 0; c < 40; ++c) {
        auto rng = testing::case_rng(39, c);
        Tensor img = grid_image(rng, 3, 9, 9);
        double lo = 1, hi = 0;
        for (double v : img.to_vector()) lo = std::min(lo, v), hi = std::max(hi, v);
        for (const Tensor& out : {gaussian_blur(img, rng.uniform(0.1, 2.0)), resize_bilinear(img, 14, 5)}) {
            for (double v : out.to_vector()) {
                ASSERT_GE(v, lo - 1e-6);
                ASSERT_LE(v, hi + 1e-6);
            }
        }
    }
}

TEST(Pipeline, DeterministicOnlyKeepsResizeAndNormalize) {
    const AugmentPipeline p = default_pipeline(64, 1);
    const AugmentPipeline d = p.deterministic_only();
    ASSERT_EQ(d.ops.size(), 2u);
    EXPECT_EQ(d.ops[0].kind, AugOpKind::resize);
    EXPECT_EQ(d.ops[1].kind, AugOpKind::normalize);
}

TEST(Pipeline, InvalidOpsAndInputsRejected) {
    AugmentPipeline p{{AugOp::hflip(1.5)}, 0};
    EXPECT_THROW(p.validate(), ValueError);
    Tensor bad({3, 2, 2});
    bad.set(0, NAN);
    EXPECT_THROW(augment(bad, default_pipeline(4, 0), 0, 0), ValueError);
}

} // namespace
} // namespace ftk
