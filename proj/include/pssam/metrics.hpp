#pragma once

// Overlap and boundary metrics plus the PPM overlay used for inspection.

#include "pssam/error.hpp"
#include "pssam/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace pssam {

inline void require_same_shape(const Mask2D& a, const Mask2D& b, const char* what) {
    if (!a.same_shape(b))
        throw DimensionMismatch(std::string(what) + ": masks are " + std::to_string(a.width) + "x" +
                                std::to_string(a.height) + " and " + std::to_string(b.width) + "x" +
                                std::to_string(b.height));
}

/// 2|A n B| / (|A| + |B|); two empty masks score 1.
inline double dice(const Mask2D& a, const Mask2D& b) {
    require_same_shape(a, b, "dice");
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
        na += x;
        nb += y;
        inter += x && y;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

namespace detail {

// 1-D squared distance transform of a sampled function (Felzenszwalb &
// Huttenlocher lower envelope of parabolas).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for (int q = 1; q < n; ++q) {
        if (f[q] == inf)
            continue;
        if (f[v[k]] == inf) {
            v[k] = q;
            continue;
        }
        double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q)
            ++k;
        const double diff = q - v[k];
        d[q] = f[v[k]] == inf ? inf : diff * diff + f[v[k]];
    }
}

} // namespace detail

/// Exact squared Euclidean distance (in pixels^2) from every pixel to the
/// nearest set pixel of m. Infinite everywhere when m is empty.
inline std::vector<double> squared_distance_transform(const Mask2D& m) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    const int w = m.width, h = m.height;
    std::vector<double> g(static_cast<std::size_t>(w) * h);
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = m.bits[i] ? 0.0 : inf;

    const int n = std::max(w, h);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    f.resize(h);
    d.resize(h);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y)
            f[y] = g[static_cast<std::size_t>(y) * w + x];
        detail::edt_1d(f, d, v, z);
        for (int y = 0; y < h; ++y)
            g[static_cast<std::size_t>(y) * w + x] = d[y];
    }
    f.resize(w);
    d.resize(w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            f[x] = g[static_cast<std::size_t>(y) * w + x];
        detail::edt_1d(f, d, v, z);
        for (int x = 0; x < w; ++x)
            g[static_cast<std::size_t>(y) * w + x] = d[x];
    }
    return g;
}

/// Distances (pixels) from each set pixel of `from` to the nearest set pixel of `to`.
inline std::vector<double> directed_distances(const Mask2D& from, const Mask2D& to) {
    const std::vector<double> dt = squared_distance_transform(to);
    std::vector<double> out;
    for (std::size_t i = 0; i < from.bits.size(); ++i)
        if (from.bits[i])
            out.push_back(std::sqrt(dt[i]));
    return out;
}

enum class HausdorffVariant { Max, Percentile95 };

/// Symmetric Hausdorff distance between pixel-center sets, in mm. When either
/// mask is empty the image diagonal is returned. The percentile variant takes
/// the larger of the two directed 95th percentiles (nearest rank).
inline double hausdorff_mm(const Mask2D& a, const Mask2D& b, double spacing,
                           HausdorffVariant variant = HausdorffVariant::Max) {
    require_same_shape(a, b, "hausdorff");
    if (!a.any() || !b.any())
        return std::hypot(static_cast<double>(a.width), static_cast<double>(a.height)) * spacing;
    auto reduce = [variant](std::vector<double> d) {
        if (variant == HausdorffVariant::Max)
            return *std::max_element(d.begin(), d.end());
        const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(d.size())));
        const std::size_t idx = std::max<std::size_t>(rank, 1) - 1;
        std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(idx), d.end());
        return d[idx];
    };
    return std::max(reduce(directed_distances(a, b)), reduce(directed_distances(b, a))) * spacing;
}

/// P6 overlay: grayscale base, GT-only green, prediction-only red, agreement
/// yellow; tinted channels are clamp(base*0.6 + tint*0.4).
inline std::string emit_overlay(const Image2D& img, const Mask2D& gt, const Mask2D& pred) {
    if (!gt.same_shape(img) || !pred.same_shape(img))
        throw DimensionMismatch("overlay masks must match the image dimensions");
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + img.pixels.size() * 3);
    auto q = [](double v) {
        return static_cast<char>(static_cast<unsigned char>(std::clamp(std::floor(v + 0.5), 0.0, 255.0)));
    };
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const double base = std::clamp(img.pixels[i], 0.0, 1.0) * 255.0;
        const bool g = gt.bits[i] != 0, p = pred.bits[i] != 0;
        double tint[3] = {0, 0, 0};
        if (g && p) {
            tint[0] = tint[1] = 255.0;
        } else if (g) {
            tint[1] = 255.0;
        } else if (p) {
            tint[0] = 255.0;
        }
        for (int c = 0; c < 3; ++c)
            out.push_back(g || p ? q(base * 0.6 + tint[c] * 0.4) : q(base));
    }
    return out;
}

} // namespace pssam
