#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <vector>

#include "vispflow/canvas.hpp"

namespace vispflow {

struct Point {
    int x{0}, y{0};
};

// Integer-only scanline painter writing opaque pixels onto an RGBA layer.
// Everything is clipped to the layer; `clipped` records whether any pixel
// fell outside. No anti-aliasing, so identical inputs give identical bytes
// on every platform.
class Painter {
public:
    explicit Painter(Canvas& layer) : layer_(layer) {}

    bool clipped() const { return clipped_; }

    void pixel(int x, int y, Color c) {
        if (!layer_.set_clipped(x, y, c)) clipped_ = true;
    }

    void fill_rect(const Rect& r, Color c) {
        for (int y = r.y; y < r.y + r.h; ++y)
            for (int x = r.x; x < r.x + r.w; ++x) pixel(x, y, c);
    }

    void stroke_rect(const Rect& r, int width, Color c) {
        fill_rect({r.x, r.y, r.w, width}, c);
        fill_rect({r.x, r.y + r.h - width, r.w, width}, c);
        fill_rect({r.x, r.y + width, width, r.h - 2 * width}, c);
        fill_rect({r.x + r.w - width, r.y + width, width, r.h - 2 * width}, c);
    }

    // Bresenham line with a square brush of the given width.
    void line(Point a, Point b, int width, Color c) {
        const int half = width / 2;
        int x0 = a.x, y0 = a.y;
        const int dx = std::abs(b.x - x0), sx = x0 < b.x ? 1 : -1;
        const int dy = -std::abs(b.y - y0), sy = y0 < b.y ? 1 : -1;
        int err = dx + dy;
        while (true) {
            fill_rect({x0 - half, y0 - half, width, width}, c);
            if (x0 == b.x && y0 == b.y) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void polyline(const std::vector<Point>& pts, int width, Color c) {
        if (pts.size() == 1) {
            fill_rect({pts[0].x - width / 2, pts[0].y - width / 2, width, width}, c);
            return;
        }
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) line(pts[i], pts[i + 1], width, c);
    }

    void fill_circle(Point center, int radius, Color c) {
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx)
                if (dx * dx + dy * dy <= radius * radius) pixel(center.x + dx, center.y + dy, c);
    }

    // Filled triangle by per-pixel half-plane tests with integer cross
    // products over the bounding box.
    void fill_triangle(Point p0, Point p1, Point p2, Color c) {
        const auto cross = [](Point o, Point a, Point b) {
            return static_cast<long long>(a.x - o.x) * (b.y - o.y) -
                   static_cast<long long>(a.y - o.y) * (b.x - o.x);
        };
        if (cross(p0, p1, p2) < 0) std::swap(p1, p2);  // counter-clockwise
        const int minx = std::min({p0.x, p1.x, p2.x});
        const int maxx = std::max({p0.x, p1.x, p2.x});
        const int miny = std::min({p0.y, p1.y, p2.y});
        const int maxy = std::max({p0.y, p1.y, p2.y});
        for (int y = miny; y <= maxy; ++y) {
            for (int x = minx; x <= maxx; ++x) {
                const Point p{x, y};
                if (cross(p0, p1, p) >= 0 && cross(p1, p2, p) >= 0 && cross(p2, p0, p) >= 0)
                    pixel(x, y, c);
            }
        }
    }

private:
    Canvas& layer_;
    bool clipped_{false};
};

// Fully transparent layer matching a base canvas, ready for compositing.
inline Canvas transparent_layer(const Canvas& base) {
    Canvas layer(base.width, base.height, {0, 0, 0, 0});
    return layer;
}

}  // namespace vispflow
