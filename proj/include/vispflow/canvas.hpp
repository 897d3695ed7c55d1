#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vispflow/errors.hpp"

namespace vispflow {

struct Color {
    std::uint8_t r{0}, g{0}, b{0}, a{255};
    bool operator==(const Color&) const = default;
};

struct Rect {
    int x{0}, y{0}, w{0}, h{0};
};

// RGBA8 raster, row-major. The single cross-modal medium: rendered
// instructions and target images both live here.
struct Canvas {
    int width{0}, height{0};
    std::vector<std::uint8_t> pixels;  // 4 bytes per pixel, RGBA

    Canvas() = default;
    Canvas(int w, int h, Color fill = {255, 255, 255, 255}) : width(w), height(h) {
        if (w < 1 || h < 1) throw dim_error("canvas dimensions must be >= 1");
        pixels.resize(static_cast<std::size_t>(w) * h * 4);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) set(x, y, fill);
    }

    bool inside(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }

    Color get(int x, int y) const {
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 4;
        return {pixels[i], pixels[i + 1], pixels[i + 2], pixels[i + 3]};
    }
    void set(int x, int y, Color c) {
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 4;
        pixels[i] = c.r;
        pixels[i + 1] = c.g;
        pixels[i + 2] = c.b;
        pixels[i + 3] = c.a;
    }
    // Clipping write; reports whether the pixel landed inside.
    bool set_clipped(int x, int y, Color c) {
        if (!inside(x, y)) return false;
        set(x, y, c);
        return true;
    }

    bool same_size(const Canvas& o) const { return width == o.width && height == o.height; }
    bool operator==(const Canvas& o) const {
        return width == o.width && height == o.height && pixels == o.pixels;
    }
};

inline Rect full_rect(const Canvas& c) { return {0, 0, c.width, c.height}; }

inline bool rect_inside(const Rect& r, const Canvas& c) {
    return r.w > 0 && r.h > 0 && r.x >= 0 && r.y >= 0 && r.x + r.w <= c.width && r.y + r.h <= c.height;
}

// Source-over alpha compositing on straight-alpha RGBA. Channel rounding is
// half-up; output alpha is forced to 255.
inline Canvas composite_over(const Canvas& dst, const Canvas& src) {
    if (!dst.same_size(src)) throw dim_error("composite_over: size mismatch");
    Canvas out = dst;
    for (int y = 0; y < dst.height; ++y) {
        for (int x = 0; x < dst.width; ++x) {
            const Color s = src.get(x, y);
            const Color d = dst.get(x, y);
            const int a = s.a;
            const auto blend = [a](int sc, int dc) {
                const int num = sc * a + dc * (255 - a);
                return static_cast<std::uint8_t>((2 * num + 255) / 510);
            };
            out.set(x, y, {blend(s.r, d.r), blend(s.g, d.g), blend(s.b, d.b), 255});
        }
    }
    return out;
}

// Perceptual luminance of a region: L = 0.299 uR + 0.587 uG + 0.114 uB over
// the mean channels.
inline double luminance(const Canvas& c, const Rect& region) {
    if (!rect_inside(region, c)) throw dim_error("luminance: region outside canvas or empty");
    double sr = 0.0, sg = 0.0, sb = 0.0;
    for (int y = region.y; y < region.y + region.h; ++y) {
        for (int x = region.x; x < region.x + region.w; ++x) {
            const Color p = c.get(x, y);
            sr += p.r;
            sg += p.g;
            sb += p.b;
        }
    }
    const double n = static_cast<double>(region.w) * region.h;
    return 0.299 * (sr / n) + 0.587 * (sg / n) + 0.114 * (sb / n);
}

// ------------------------------------------------------------ PPM (P6) I/O
// RGB with maxval 255; alpha is dropped on save and assumed 255 on load.

inline std::string canvas_to_ppm(const Canvas& c) {
    std::string out = "P6\n" + std::to_string(c.width) + " " + std::to_string(c.height) + "\n255\n";
    out.reserve(out.size() + static_cast<std::size_t>(c.width) * c.height * 3);
    for (int y = 0; y < c.height; ++y) {
        for (int x = 0; x < c.width; ++x) {
            const Color p = c.get(x, y);
            out.push_back(static_cast<char>(p.r));
            out.push_back(static_cast<char>(p.g));
            out.push_back(static_cast<char>(p.b));
        }
    }
    return out;
}

inline Canvas canvas_from_ppm(const std::string& bytes) {
    std::size_t pos = 0;
    const auto token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (bytes[pos] == ' ' || bytes[pos] == '\n' || bytes[pos] == '\t' || bytes[pos] == '\r') {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && bytes[pos] != ' ' && bytes[pos] != '\n' && bytes[pos] != '\t' &&
               bytes[pos] != '\r') {
            ++pos;
        }
        if (start == pos) throw format_error("ppm: truncated header", start);
        return bytes.substr(start, pos - start);
    };
    if (token() != "P6") throw format_error("ppm: expected P6 magic", 0);
    const int w = std::stoi(token());
    const int h = std::stoi(token());
    const int maxval = std::stoi(token());
    if (maxval != 255) throw format_error("ppm: maxval must be 255", pos);
    ++pos;  // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (pos + need > bytes.size()) throw format_error("ppm: truncated pixel data", bytes.size());
    Canvas c(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto r = static_cast<std::uint8_t>(bytes[pos++]);
            const auto g = static_cast<std::uint8_t>(bytes[pos++]);
            const auto b = static_cast<std::uint8_t>(bytes[pos++]);
            c.set(x, y, {r, g, b, 255});
        }
    }
    return c;
}

inline void save_ppm(const Canvas& c, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw format_error("cannot open for writing: " + path, 0);
    const std::string bytes = canvas_to_ppm(c);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Canvas load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw format_error("cannot open: " + path, 0);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return canvas_from_ppm(bytes);
}

}  // namespace vispflow
