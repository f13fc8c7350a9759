#include "support.hpp"

#include "pssam/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pssam;

namespace {

double brute_directed(const Mask2D& a, const Mask2D& b, std::vector<double>& out) {
    double worst = 0.0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            if (!a.at(x, y))
                continue;
            double best = INFINITY;
            for (int v = 0; v < b.height; ++v)
                for (int u = 0; u < b.width; ++u)
                    if (b.at(u, v))
                        best = std::min(best, std::hypot(double(x - u), double(y - v)));
            out.push_back(best);
            worst = std::max(worst, best);
        }
    return worst;
}

double brute_hd(const Mask2D& a, const Mask2D& b) {
    std::vector<double> tmp;
    return std::max(brute_directed(a, b, tmp), brute_directed(b, a, tmp));
}

double brute_hd95(const Mask2D& a, const Mask2D& b) {
    auto pct = [](std::vector<double> d) {
        std::sort(d.begin(), d.end());
        const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(d.size())));
        return d[std::max<std::size_t>(rank, 1) - 1];
    };
    std::vector<double> ab, ba;
    brute_directed(a, b, ab);
    brute_directed(b, a, ba);
    return std::max(pct(ab), pct(ba));
}

} // namespace

TEST(Dice, Examples) {
    const Mask2D full(4, 4, true), empty(4, 4);
    EXPECT_EQ(dice(full, full), 1.0);
    EXPECT_EQ(dice(empty, empty), 1.0);
    EXPECT_EQ(dice(full, empty), 0.0);
    Mask2D half(4, 4);
    for (int x = 0; x < 4; ++x)
        for (int y = 0; y < 2; ++y)
            half.set(x, y);
    EXPECT_DOUBLE_EQ(dice(full, half), 2.0 * 8 / (16 + 8));
    EXPECT_THROW(dice(full, Mask2D(4, 5)), DimensionMismatch);
}

TEST(Dice, MatchesCountsAndIsSymmetric) {
    Rng rng(31);
    for (int k = 0; k < 500; ++k) {
        const int w = uniform_int(rng, 1, 24), h = uniform_int(rng, 1, 24);
        const Mask2D a = test::random_mask(rng, w, h, uniform01(rng)), b = test::random_mask(rng, w, h, uniform01(rng));
        int inter = 0, na = 0, nb = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                inter += a.at(x, y) && b.at(x, y);
                na += a.at(x, y);
                nb += b.at(x, y);
            }
        const double expect = na + nb == 0 ? 1.0 : 2.0 * inter / (na + nb);
        ASSERT_EQ(dice(a, b), expect);
        ASSERT_EQ(dice(a, b), dice(b, a));
        ASSERT_EQ(dice(a, a), 1.0);
    }
}

TEST(Hausdorff, ThreeFourFive) {
    Mask2D a(8, 8), b(8, 8);
    a.set(0, 0);
    b.set(3, 4);
    EXPECT_DOUBLE_EQ(hausdorff_mm(a, b, 1.0), 5.0);
    EXPECT_DOUBLE_EQ(hausdorff_mm(a, a, 1.0), 0.0);
}

TEST(Hausdorff, ScalesWithSpacing) {
    Rng rng(37);
    for (int k = 0; k < 50; ++k) {
        const Mask2D a = test::random_mask(rng, 16, 16, 0.1), b = test::random_mask(rng, 16, 16, 0.1);
        if (!a.any() || !b.any())
            continue;
        ASSERT_NEAR(hausdorff_mm(a, b, 0.7), 0.7 * hausdorff_mm(a, b, 1.0), 1e-12);
    }
}

TEST(Hausdorff, EmptyMaskGivesDiagonal) {
    Mask2D a(30, 40), b(30, 40);
    b.set(2, 2);
    EXPECT_DOUBLE_EQ(hausdorff_mm(a, b, 0.5), 25.0);
    EXPECT_DOUBLE_EQ(hausdorff_mm(a, a, 1.0), 50.0);
}

TEST(Hausdorff, MatchesBruteForce) {
    Rng rng(41);
    for (int k = 0; k < 300; ++k) {
        const int w = uniform_int(rng, 1, 24), h = uniform_int(rng, 1, 24);
        const Mask2D a = test::random_mask(rng, w, h, uniform01(rng) * 0.3);
        const Mask2D b = test::random_mask(rng, w, h, uniform01(rng) * 0.3);
        if (!a.any() || !b.any())
            continue;
        ASSERT_NEAR(hausdorff_mm(a, b, 1.0), brute_hd(a, b), 1e-9);
        ASSERT_NEAR(hausdorff_mm(a, b, 1.0, HausdorffVariant::Percentile95), brute_hd95(a, b), 1e-9);
        ASSERT_LE(hausdorff_mm(a, b, 1.0, HausdorffVariant::Percentile95), hausdorff_mm(a, b, 1.0) + 1e-12);
    }
}

TEST(Hausdorff, Percentile95IgnoresSingleOutlier) {
    // 100 points on a line and the same line plus one far pixel
    Mask2D a(120, 120), b(120, 120);
    for (int x = 0; x < 100; ++x) {
        a.set(x, 0);
        b.set(x, 0);
    }
    b.set(0, 100);
    EXPECT_DOUBLE_EQ(hausdorff_mm(a, b, 1.0), 100.0);
    EXPECT_DOUBLE_EQ(hausdorff_mm(a, b, 1.0, HausdorffVariant::Percentile95), 0.0);
}

TEST(Overlay, EmptyMasksAreGrayscale) {
    Rng rng(43);
    const Image2D img = test::random_image(rng, 5, 3);
    const std::string out = emit_overlay(img, Mask2D(5, 3), Mask2D(5, 3));
    const std::string header = "P6\n5 3\n255\n";
    ASSERT_EQ(out.size(), header.size() + 45);
    EXPECT_EQ(out.substr(0, header.size()), header);
    for (std::size_t i = 0; i < 15; ++i) {
        const auto* px = reinterpret_cast<const unsigned char*>(out.data() + header.size() + 3 * i);
        EXPECT_EQ(px[0], px[1]);
        EXPECT_EQ(px[1], px[2]);
        EXPECT_EQ(px[0], static_cast<int>(std::floor(img.pixels[i] * 255.0 + 0.5)));
    }
}

TEST(Overlay, FullAgreementIsYellow) {
    const Image2D img(2, 2, 0.0);
    const Mask2D full(2, 2, true);
    const std::string out = emit_overlay(img, full, full);
    const std::string body = out.substr(out.size() - 12);
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(static_cast<unsigned char>(body[3 * i]), 102);
        EXPECT_EQ(static_cast<unsigned char>(body[3 * i + 1]), 102);
        EXPECT_EQ(static_cast<unsigned char>(body[3 * i + 2]), 0);
    }
}

TEST(Overlay, GoldenBytes) {
    Image2D img(2, 2);
    img.pixels = {0.0, 1.0, 0.5, 0.2};
    Mask2D gt(2, 2), pred(2, 2);
    gt.set(0, 0);
    gt.set(1, 0);
    pred.set(0, 0);
    pred.set(0, 1);
    const std::string expect = std::string("P6\n2 2\n255\n") +
                               std::string{char(102), char(102), char(0), char(153), char(255), char(153),
                                           char(179), char(77),  char(77), char(51),  char(51),  char(51)};
    EXPECT_EQ(emit_overlay(img, gt, pred), expect);
    EXPECT_THROW(emit_overlay(img, Mask2D(3, 2), pred), DimensionMismatch);
}
