#pragma once

#include <array>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "vispflow/canvas.hpp"
#include "vispflow/errors.hpp"
#include "vispflow/glyphs.hpp"
#include "vispflow/raster.hpp"
#include "vispflow/rng.hpp"
#include "vispflow/text_layout.hpp"

namespace vispflow {

// ----------------------------------------------------------------- styling

struct TextStyle {
    Color fill;
    Color stroke;
    int stroke_width{1};
    bool dark_text{false};
};

// Context-aware contrast rule: heavily illuminated background (L > 128)
// gets dark text with a white stroke, dark background gets bright text with
// a dark stroke. Stroke width scales with the line height.
inline TextStyle choose_style(double luminance_value, int line_height_px) {
    if (luminance_value < 0.0 || luminance_value > 255.0)
        throw contract_error("choose_style: luminance must be in [0, 255]");
    TextStyle s;
    s.stroke_width = std::max(1, (line_height_px + 6) / 12);  // round(lh / 12), half up
    if (luminance_value > 128.0) {
        s.dark_text = true;
        s.fill = {25, 25, 25, 255};
        s.stroke = {255, 255, 255, 255};
    } else {
        s.dark_text = false;
        s.fill = {230, 230, 230, 255};
        s.stroke = {25, 25, 25, 255};
    }
    return s;
}

namespace detail {

// Color families for sampled text fills, keyed by hue; one dark and one
// bright variant each so the contrast class from choose_style is preserved.
inline const std::array<std::array<Color, 2>, 8>& fill_palette() {
    static const std::array<std::array<Color, 2>, 8> p = {{
        // {dark variant, bright variant}
        {{{25, 25, 25, 255}, {235, 235, 235, 255}}},    // neutral
        {{{96, 16, 16, 255}, {250, 200, 200, 255}}},    // red
        {{{16, 80, 16, 255}, {200, 245, 200, 255}}},    // green
        {{{16, 24, 96, 255}, {200, 210, 250, 255}}},    // blue
        {{{92, 76, 10, 255}, {250, 240, 180, 255}}},    // yellow
        {{{16, 76, 84, 255}, {190, 240, 245, 255}}},    // cyan
        {{{84, 18, 84, 255}, {245, 200, 245, 255}}},    // magenta
        {{{92, 52, 12, 255}, {250, 220, 190, 255}}},    // orange
    }};
    return p;
}

inline void draw_glyph(Painter& p, const GlyphBitmap& rows, int x, int y, int w, int h, Color c) {
    for (int r = 0; r < 7; ++r) {
        const int y0 = y + r * h / 7;
        const int y1 = y + (r + 1) * h / 7;
        for (int col = 0; col < 5; ++col) {
            if (!((rows[static_cast<std::size_t>(r)] >> (4 - col)) & 1)) continue;
            const int x0 = x + col * w / 5;
            const int x1 = x + (col + 1) * w / 5;
            p.fill_rect({x0, y0, std::max(1, x1 - x0), std::max(1, y1 - y0)}, c);
        }
    }
}

inline void draw_text_line(Painter& p, const GlyphSource& glyphs, const LayoutLine& line, int origin_x,
                           int origin_y, int size, const TextStyle& style) {
    const int glyph_h = size;
    long long acc_milli = 0;
    for (const auto& item : line.items) {
        for (char32_t cp : utf8_decode(item.text)) {
            const int adv = glyphs.advance_milli(cp);
            if (item.kind != TokenKind::separator) {
                const int x = origin_x + static_cast<int>(acc_milli * size / 1000);
                const int w = std::max(1, adv * size / 1000 - 1);
                const GlyphBitmap& bm = glyphs.bitmap(cp);
                const int k = style.stroke_width;
                for (int dy = -k; dy <= k; ++dy)
                    for (int dx = -k; dx <= k; ++dx)
                        if (dx || dy) draw_glyph(p, bm, x + dx, origin_y + dy, w, glyph_h, style.stroke);
                draw_glyph(p, bm, x, origin_y, w, glyph_h, style.fill);
            }
            acc_milli += adv;
        }
    }
}

}  // namespace detail

// ------------------------------------------------------- text instructions

struct TextConstraints {
    Rect box;                    // zero-sized -> position and size are sampled
    int size_min{8};
    int size_max{72};
    double font_threshold{0.05};  // minimum mean ink ratio
    int canvas_margin{2};         // kept clear when sampling and for fallback
    const GlyphSource* glyphs{nullptr};  // defaults to the builtin font
};

struct TextPlacement {
    Rect box;
    int font_size{0};
    bool fallback{false};
    TextStyle style;
    int palette{0};
    std::size_t lines{0};
};

// Renders one text instruction: samples box position, size bounds and color
// family from the rng, validates the font, lays the tokens out (with the
// global fallback), picks the contrast style from the covered region's
// luminance, rasterizes onto a transparent layer and composites.
inline Canvas render_text_instruction(const Canvas& canvas, const std::string& text, Rng& rng,
                                      const TextConstraints& cons, TextPlacement* placement = nullptr) {
    const GlyphSource& glyphs = cons.glyphs ? *cons.glyphs : builtin_font();
    const int margin = cons.canvas_margin;
    const Rect margins_box{margin, margin, canvas.width - 2 * margin, canvas.height - 2 * margin};
    if (margins_box.w <= 0 || margins_box.h <= 0)
        throw contract_error("render_text_instruction: margins leave no drawable area");

    Rect box = cons.box;
    if (box.w <= 0 || box.h <= 0) {
        const int w = static_cast<int>(rng.uniform_int(margins_box.w / 3, margins_box.w));
        const int h = static_cast<int>(rng.uniform_int(margins_box.h / 3, margins_box.h));
        box.x = margin + static_cast<int>(rng.uniform_int(0, margins_box.w - w));
        box.y = margin + static_cast<int>(rng.uniform_int(0, margins_box.h - h));
        box.w = w;
        box.h = h;
    }
    if (!rect_inside(box, canvas))
        throw contract_error("render_text_instruction: box outside canvas");

    const int s_max = static_cast<int>(rng.uniform_int(cons.size_min, cons.size_max));
    const int palette = static_cast<int>(rng.uniform_int(0, 7));

    for (char32_t cp : utf8_decode(text))
        if (!glyphs.covers(cp)) throw unlayoutable_error(utf8_encode(cp));
    if (!validate_font(glyphs, text, std::max(1, s_max), cons.font_threshold))
        throw unlayoutable_error(text.empty() ? "" : text.substr(0, 1));

    const auto items = tokenize(text);
    LayoutResult layout = layout_with_fallback(items, box, margins_box, cons.size_min, s_max, glyphs);

    const double region_l = luminance(canvas, layout.box);
    const int line_height_px = glyphs.line_height_milli() * layout.font_size / 1000;
    TextStyle style = choose_style(region_l, line_height_px);
    style.fill = detail::fill_palette()[static_cast<std::size_t>(palette)][style.dark_text ? 0 : 1];

    Canvas layer = transparent_layer(canvas);
    Painter p(layer);
    for (const auto& line : layout.lines)
        detail::draw_text_line(p, glyphs, line, layout.box.x + line.x_px, layout.box.y + line.y_px,
                               layout.font_size, style);

    if (placement) {
        placement->box = layout.box;
        placement->font_size = layout.font_size;
        placement->fallback = layout.fallback;
        placement->style = style;
        placement->palette = palette;
        placement->lines = layout.lines.size();
    }
    return composite_over(canvas, layer);
}

// ----------------------------------------------------------------- markers

struct ArrowSpec {
    Point origin;
    double angle{0.0};      // radians, screen coordinates (y grows down)
    double magnitude{0.0};  // in [0, 1]
    Color color{0, 0, 0, 0};  // alpha 0 -> sampled
    int width{0};             // 0 -> sampled
};

struct BBoxSpec {
    Rect rect;
    Color color{0, 0, 0, 0};
    std::string label;
};

struct TrajectorySpec {
    std::vector<Point> points;
    int thickness{0};
    Color color{0, 0, 0, 0};
};

struct DoodleSpec {
    std::vector<std::vector<Point>> strokes;
    int thickness{0};
    Color color{0, 0, 0, 0};
};

using MarkerSpec = std::variant<ArrowSpec, BBoxSpec, TrajectorySpec, DoodleSpec>;

struct MarkerConfig {
    // Arrow shaft pixel range; the shaft length is len_min + m*(len_max-len_min).
    double arrow_len_min{20.0};
    double arrow_len_max{100.0};
    int width_min{2};
    int width_max{4};
};

struct MarkerOutcome {
    bool clipped{false};
    Point arrow_tip{0, 0};
    double shaft_length{0.0};
};

inline double arrow_shaft_length(double magnitude, const MarkerConfig& cfg) {
    if (magnitude < 0.0 || magnitude > 1.0)
        throw contract_error("arrow magnitude must be in [0, 1]");
    return cfg.arrow_len_min + magnitude * (cfg.arrow_len_max - cfg.arrow_len_min);
}

namespace detail {

inline const std::array<Color, 6>& marker_palette() {
    static const std::array<Color, 6> p = {{
        {220, 30, 30, 255},
        {30, 160, 30, 255},
        {30, 60, 220, 255},
        {230, 140, 20, 255},
        {160, 30, 200, 255},
        {20, 180, 190, 255},
    }};
    return p;
}

inline Color pick_color(Color requested, Rng& rng) {
    if (requested.a != 0) return requested;
    return marker_palette()[static_cast<std::size_t>(rng.uniform_int(0, 5))];
}

inline int pick_width(int requested, Rng& rng, const MarkerConfig& cfg) {
    if (requested > 0) return requested;
    return static_cast<int>(rng.uniform_int(cfg.width_min, cfg.width_max));
}

}  // namespace detail

// Draws one marker onto a transparent layer and composites it. Geometry
// that leaves the canvas is clipped and flagged in the outcome.
inline Canvas render_marker(const Canvas& canvas, const MarkerSpec& spec, Rng& rng,
                            const MarkerConfig& cfg = {}, MarkerOutcome* outcome = nullptr) {
    Canvas layer = transparent_layer(canvas);
    Painter p(layer);
    MarkerOutcome out;

    if (const auto* arrow = std::get_if<ArrowSpec>(&spec)) {
        const double len = arrow_shaft_length(arrow->magnitude, cfg);
        const Color c = detail::pick_color(arrow->color, rng);
        const int w = detail::pick_width(arrow->width, rng, cfg);
        const double dx = std::cos(arrow->angle), dy = std::sin(arrow->angle);
        const Point tip{arrow->origin.x + static_cast<int>(std::lround(len * dx)),
                        arrow->origin.y + static_cast<int>(std::lround(len * dy))};
        const double head_len = std::max(4.0, 3.0 * w);
        const Point base{tip.x - static_cast<int>(std::lround(head_len * dx)),
                         tip.y - static_cast<int>(std::lround(head_len * dy))};
        p.line(arrow->origin, base, w, c);
        const double hw = head_len * 0.6;
        const Point left{base.x + static_cast<int>(std::lround(-dy * hw)),
                         base.y + static_cast<int>(std::lround(dx * hw))};
        const Point right{base.x - static_cast<int>(std::lround(-dy * hw)),
                          base.y - static_cast<int>(std::lround(dx * hw))};
        p.fill_triangle(tip, left, right, c);
        out.arrow_tip = tip;
        out.shaft_length = len;
    } else if (const auto* bbox = std::get_if<BBoxSpec>(&spec)) {
        if (!rect_inside(bbox->rect, canvas)) throw contract_error("bbox marker rect outside canvas");
        const Color c = detail::pick_color(bbox->color, rng);
        const int w = detail::pick_width(0, rng, cfg);
        p.stroke_rect(bbox->rect, w, c);
        if (!bbox->label.empty()) {
            const GlyphSource& glyphs = builtin_font();
            const int size = std::clamp(bbox->rect.h / 3, 8, 16);
            LayoutLine line;
            for (const auto& t : tokenize(bbox->label)) line.items.push_back(t);
            TextStyle style;
            style.fill = c;
            style.stroke = c;
            style.stroke_width = 0;
            detail::draw_text_line(p, glyphs, line, bbox->rect.x + w + 1, bbox->rect.y + w + 1, size,
                                   style);
        }
    } else if (const auto* traj = std::get_if<TrajectorySpec>(&spec)) {
        if (traj->points.empty()) throw contract_error("trajectory polyline must be nonempty");
        const Color c = detail::pick_color(traj->color, rng);
        const int w = detail::pick_width(traj->thickness, rng, cfg);
        p.polyline(traj->points, w, c);
    } else if (const auto* doodle = std::get_if<DoodleSpec>(&spec)) {
        if (doodle->strokes.empty()) throw contract_error("doodle must have at least one stroke");
        const Color c = detail::pick_color(doodle->color, rng);
        const int w = detail::pick_width(doodle->thickness, rng, cfg);
        for (const auto& stroke : doodle->strokes) {
            if (stroke.empty()) throw contract_error("doodle stroke must be nonempty");
            p.polyline(stroke, w, c);
        }
    }

    out.clipped = p.clipped();
    if (outcome) *outcome = out;
    return composite_over(canvas, layer);
}

}  // namespace vispflow
