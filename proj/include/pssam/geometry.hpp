#pragma once

// Value types for slices, point prompts, boxes and masks, plus the box
// arithmetic shared by the refiner, the segmenter backends and the metrics.
//
// Boxes are half-open integer pixel boxes: [x0, x1) x [y0, y1).

#include "pssam/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace pssam {

struct Image2D {
    int width = 0;
    int height = 0;
    std::vector<double> pixels; // row-major, intensities in [0,1]
    double spacing = 1.0;       // mm per pixel, isotropic

    Image2D() = default;
    Image2D(int w, int h, double fill = 0.0, double spacing_mm = 1.0)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill),
          spacing(spacing_mm) {
        validate();
    }

    double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

    void validate() const {
        if (width < 1 || height < 1)
            throw DimensionMismatch("image dimensions must be positive");
        if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
            throw DimensionMismatch("image pixel count does not match width*height");
        if (!(spacing > 0.0) || !std::isfinite(spacing))
            throw DimensionMismatch("image spacing must be positive");
        for (double v : pixels)
            if (!std::isfinite(v) || v < 0.0 || v > 1.0)
                throw DimensionMismatch("image intensities must be finite and within [0,1]");
    }
};

struct PointPrompt {
    int x = 0;
    int y = 0;
    int class_id = 0;

    friend bool operator==(const PointPrompt&, const PointPrompt&) = default;
};

struct BBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0; // exclusive
    int y1 = 0; // exclusive

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    long long area() const { return empty() ? 0 : static_cast<long long>(width()) * height(); }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool contains(const BBox& o) const { return o.x0 >= x0 && o.y0 >= y0 && o.x1 <= x1 && o.y1 <= y1; }

    friend bool operator==(const BBox&, const BBox&) = default;
    friend std::ostream& operator<<(std::ostream& os, const BBox& b) {
        return os << "x:[" << b.x0 << "," << b.x1 << ") y:[" << b.y0 << "," << b.y1 << ")";
    }
};

struct Mask2D {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits; // row-major, 0 or 1

    Mask2D() = default;
    Mask2D(int w, int h, bool fill = false)
        : width(w), height(h), bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill ? 1 : 0) {}

    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v = true) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }

    std::size_t count() const {
        return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
    }
    bool any() const {
        return std::any_of(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; });
    }
    bool same_shape(const Mask2D& o) const { return width == o.width && height == o.height; }
    bool same_shape(const Image2D& img) const { return width == img.width && height == img.height; }

    friend bool operator==(const Mask2D&, const Mask2D&) = default;
};

inline BBox image_box(const Image2D& img) { return {0, 0, img.width, img.height}; }
inline BBox image_box(const Mask2D& m) { return {0, 0, m.width, m.height}; }

/// Intersection of a box with [0,w) x [0,h). The result may be empty.
inline BBox clip_box(const BBox& b, int w, int h) {
    return {std::clamp(b.x0, 0, w), std::clamp(b.y0, 0, h), std::clamp(b.x1, 0, w), std::clamp(b.y1, 0, h)};
}

inline BBox seed_box_from_point(const PointPrompt& p, int seed_w, int seed_h, const Image2D& img) {
    if (!img.contains(p.x, p.y))
        throw PointOutOfBounds("point (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                               ") outside " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                               " image");
    if (seed_w < 1 || seed_h < 1)
        throw DegenerateBox("seed box size must be at least 1x1");
    const int x0 = p.x - seed_w / 2;
    const int y0 = p.y - seed_h / 2;
    return clip_box({x0, y0, x0 + seed_w, y0 + seed_h}, img.width, img.height);
}

/// Scales a box about its (possibly fractional) center. Rounding is
/// half-away-from-zero for both the new extent and the new start.
inline BBox scale_box(const BBox& b, double s, int img_w, int img_h) {
    if (!(s > 0.0) || !std::isfinite(s))
        throw DegenerateBox("scale must be positive");
    const int w = std::max(1, static_cast<int>(std::round(b.width() * s)));
    const int h = std::max(1, static_cast<int>(std::round(b.height() * s)));
    const double cx = (b.x0 + b.x1) / 2.0;
    const double cy = (b.y0 + b.y1) / 2.0;
    const int x0 = static_cast<int>(std::round(cx - w / 2.0));
    const int y0 = static_cast<int>(std::round(cy - h / 2.0));
    BBox out = clip_box({x0, y0, x0 + w, y0 + h}, img_w, img_h);
    if (out.empty())
        throw DegenerateBox("scaled box lies outside the image");
    return out;
}

inline BBox scale_box(const BBox& b, double s, const Image2D& img) { return scale_box(b, s, img.width, img.height); }

inline std::optional<BBox> tight_box(const Mask2D& m) {
    int x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
    for (int y = 0; y < m.height; ++y) {
        const std::uint8_t* row = m.bits.data() + static_cast<std::size_t>(y) * m.width;
        for (int x = 0; x < m.width; ++x) {
            if (!row[x])
                continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (x1 < 0)
        return std::nullopt;
    return BBox{x0, y0, x1 + 1, y1 + 1};
}

inline BBox intersect(const BBox& a, const BBox& b) {
    return {std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
}

inline double box_iou(const BBox& a, const BBox& b) {
    const long long inter = intersect(a, b).area();
    const long long uni = a.area() + b.area() - inter;
    if (uni <= 0)
        return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Bilinear resampling of the box region onto an out_w x out_h grid. Sample
/// (i, j) sits at x0 + (i+0.5)*w/out_w - 0.5 (likewise in y); coordinates are
/// clamped to the image edge.
inline std::vector<double> crop_resize(const Image2D& img, const BBox& b, int out_w, int out_h) {
    std::vector<double> out(static_cast<std::size_t>(out_w) * static_cast<std::size_t>(out_h));
    const double sx = static_cast<double>(b.width()) / out_w;
    const double sy = static_cast<double>(b.height()) / out_h;
    const double max_x = img.width - 1;
    const double max_y = img.height - 1;

    std::vector<int> xa(out_w), xb(out_w);
    std::vector<double> xt(out_w);
    for (int i = 0; i < out_w; ++i) {
        const double fx = std::clamp(b.x0 + (i + 0.5) * sx - 0.5, 0.0, max_x);
        xa[i] = static_cast<int>(std::floor(fx));
        xb[i] = std::min(xa[i] + 1, img.width - 1);
        xt[i] = fx - xa[i];
    }
    for (int j = 0; j < out_h; ++j) {
        const double fy = std::clamp(b.y0 + (j + 0.5) * sy - 0.5, 0.0, max_y);
        const int ya = static_cast<int>(std::floor(fy));
        const int yb = std::min(ya + 1, img.height - 1);
        const double ty = fy - ya;
        for (int i = 0; i < out_w; ++i) {
            const double top = img.at(xa[i], ya) * (1.0 - xt[i]) + img.at(xb[i], ya) * xt[i];
            const double bot = img.at(xa[i], yb) * (1.0 - xt[i]) + img.at(xb[i], yb) * xt[i];
            out[static_cast<std::size_t>(j) * out_w + i] = top * (1.0 - ty) + bot * ty;
        }
    }
    return out;
}

inline Mask2D mask_intersect_box(const Mask2D& m, const BBox& b) {
    Mask2D out(m.width, m.height);
    const BBox c = clip_box(b, m.width, m.height);
    for (int y = c.y0; y < c.y1; ++y)
        for (int x = c.x0; x < c.x1; ++x)
            if (m.at(x, y))
                out.set(x, y);
    return out;
}

inline Mask2D box_mask(const BBox& b, int w, int h) {
    Mask2D out(w, h);
    const BBox c = clip_box(b, w, h);
    for (int y = c.y0; y < c.y1; ++y)
        for (int x = c.x0; x < c.x1; ++x)
            out.set(x, y);
    return out;
}

} // namespace pssam
