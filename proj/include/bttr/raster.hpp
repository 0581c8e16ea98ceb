#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "bttr/tensor.hpp"

namespace bttr {

struct Point {
    real x = 0;
    real y = 0;
};

// One stroke is a polyline; a single point renders as a dot.
using Stroke = std::vector<Point>;

struct StrokeSet {
    std::vector<Stroke> strokes;

    bool empty() const { return strokes.empty(); }

    void bounds(real& x0, real& y0, real& x1, real& y1) const {
        x0 = y0 = std::numeric_limits<real>::infinity();
        x1 = y1 = -std::numeric_limits<real>::infinity();
        for (const auto& s : strokes)
            for (const auto& p : s) {
                x0 = std::min(x0, p.x);
                y0 = std::min(y0, p.y);
                x1 = std::max(x1, p.x);
                y1 = std::max(y1, p.y);
            }
    }
};

// Grayscale image, row-major, background 0, ink 1.
struct Bitmap {
    int height = 0;
    int width = 0;
    std::vector<real> pixels;  // height*width values in [0,1]

    real& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    real at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

struct RasterParams {
    int target_height = 128;
    real pen_width = 2.0;
    int margin = 4;
    int max_width = 1600;
};

namespace detail {
inline real dist_point_segment(real px, real py, real ax, real ay, real bx, real by) {
    real dx = bx - ax, dy = by - ay;
    real len2 = dx * dx + dy * dy;
    real t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : real(0);
    t = std::clamp(t, real(0), real(1));
    real qx = ax + t * dx, qy = ay + t * dy;
    return std::hypot(px - qx, py - qy);
}

inline void draw_segment(Bitmap& bm, real ax, real ay, real bx, real by, real pen) {
    real r = pen / 2;
    int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - r - 1)));
    int y1 = std::min(bm.height - 1, static_cast<int>(std::ceil(std::max(ay, by) + r + 1)));
    int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - r - 1)));
    int x1 = std::min(bm.width - 1, static_cast<int>(std::ceil(std::max(ax, bx) + r + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            real d = dist_point_segment(x + real(0.5), y + real(0.5), ax, ay, bx, by);
            real cov = std::clamp(r + real(0.5) - d, real(0), real(1));  // anti-aliased edge
            if (cov > 0) bm.at(y, x) = std::max(bm.at(y, x), cov);
        }
}
}  // namespace detail

// Scales strokes isotropically so the ink bounding box height equals
// target_height minus margins; width follows aspect ratio, clamped to
// max_width. Invariant to uniform scaling and translation of the source.
inline Bitmap rasterize(const StrokeSet& strokes, const RasterParams& params = {}) {
    if (strokes.empty()) throw std::invalid_argument("rasterize: empty stroke set");
    real x0, y0, x1, y1;
    strokes.bounds(x0, y0, x1, y1);
    real src_h = y1 - y0, src_w = x1 - x0;

    int inner_h = params.target_height - 2 * params.margin;
    Bitmap bm;
    bm.height = params.target_height;

    if (src_h <= 0 && src_w <= 0) {
        // degenerate: a single point becomes a dot at image center
        bm.width = params.target_height;
        bm.pixels.assign(static_cast<std::size_t>(bm.height) * bm.width, real(0));
        real c = bm.height / real(2);
        detail::draw_segment(bm, c, c, c, c, std::max(params.pen_width, real(3)));
        return bm;
    }

    // height-degenerate ink (a pure horizontal stroke) is normalized by width
    // instead, so the scale stays a pure ratio of source extents
    real s = src_h > 0 ? inner_h / src_h
                       : (std::min(params.max_width, 4 * params.target_height) - 2 * params.margin) / src_w;
    int inner_w = std::max(1, static_cast<int>(std::lround(src_w * s)));
    int width = inner_w + 2 * params.margin;
    if (width > params.max_width) {
        s *= static_cast<real>(params.max_width - 2 * params.margin) / inner_w;
        width = params.max_width;
    }
    bm.width = width;
    bm.pixels.assign(static_cast<std::size_t>(bm.height) * bm.width, real(0));

    auto tx = [&](const Point& p) { return params.margin + (p.x - x0) * s; };
    auto ty = [&](const Point& p) {
        // center vertically when width clamping shrank the scale
        real used_h = src_h * s;
        real off = params.margin + (inner_h - used_h) / 2;
        return off + (p.y - y0) * s;
    };

    for (const auto& stroke : strokes.strokes) {
        if (stroke.size() == 1) {
            detail::draw_segment(bm, tx(stroke[0]), ty(stroke[0]), tx(stroke[0]), ty(stroke[0]), params.pen_width);
            continue;
        }
        for (std::size_t i = 0; i + 1 < stroke.size(); ++i)
            detail::draw_segment(bm, tx(stroke[i]), ty(stroke[i]), tx(stroke[i + 1]), ty(stroke[i + 1]),
                                 params.pen_width);
    }
    return bm;
}

// ------------------------------------------------------------------- PGM io

inline void write_pgm(const Bitmap& bm, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write image: " + path);
    f << "P5\n" << bm.width << ' ' << bm.height << "\n255\n";
    for (real v : bm.pixels) {
        unsigned char b = static_cast<unsigned char>(std::lround(std::clamp(v, real(0), real(1)) * 255));
        f.put(static_cast<char>(b));
    }
}

inline Bitmap read_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read image: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw std::runtime_error(path + ": not a binary PGM file");
    int w, h, maxv;
    f >> w >> h >> maxv;
    f.get();  // single whitespace after header
    Bitmap bm;
    bm.width = w;
    bm.height = h;
    bm.pixels.resize(static_cast<std::size_t>(w) * h);
    std::vector<unsigned char> raw(bm.pixels.size());
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw std::runtime_error(path + ": truncated PGM payload");
    for (std::size_t i = 0; i < raw.size(); ++i) bm.pixels[i] = raw[i] / real(255);
    return bm;
}

}  // namespace bttr
