#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vispflow/canvas.hpp"
#include "vispflow/errors.hpp"
#include "vispflow/glyphs.hpp"
#include "vispflow/unicode.hpp"

namespace vispflow {

enum class TokenKind { word, character, separator };

struct Token {
    std::string text;
    TokenKind kind{TokenKind::word};
    bool operator==(const Token&) const = default;
};

// Tokenization for visual layout: contiguous Latin alphanumeric/symbol runs
// become whole-word tokens that word wrap may never split, every other
// character (CJK etc.) stands alone, and whitespace is kept as separator
// items so that concatenating all items reproduces the input exactly.
inline std::vector<Token> tokenize(const std::string& text) {
    // Code points below this are treated as Latin-script run characters.
    constexpr char32_t kLatinLimit = 0x370;
    const auto is_ws = [](char32_t cp) {
        return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r';
    };
    std::vector<Token> items;
    std::string run;
    const auto flush_run = [&]() {
        if (!run.empty()) {
            items.push_back({run, TokenKind::word});
            run.clear();
        }
    };
    for (char32_t cp : utf8_decode(text)) {
        if (is_ws(cp)) {
            flush_run();
            if (!items.empty() && items.back().kind == TokenKind::separator)
                items.back().text += utf8_encode(cp);
            else
                items.push_back({utf8_encode(cp), TokenKind::separator});
        } else if (cp < kLatinLimit) {
            run += utf8_encode(cp);
        } else {
            flush_run();
            items.push_back({utf8_encode(cp), TokenKind::character});
        }
    }
    flush_run();
    return items;
}

inline std::vector<Token> layout_tokens(const std::vector<Token>& items) {
    std::vector<Token> out;
    for (const auto& t : items)
        if (t.kind != TokenKind::separator) out.push_back(t);
    return out;
}

// True iff every code point is covered and the mean ink ratio
// (1/N) sum A_c(s)/s^2 exceeds the threshold. Empty text is vacuously true.
inline bool validate_font(const GlyphSource& glyphs, const std::string& text, int size,
                          double threshold) {
    if (size <= 0) throw contract_error("validate_font: size must be > 0");
    const auto cps = utf8_decode(text);
    if (cps.empty()) return true;
    long long area_sum = 0;
    for (char32_t cp : cps) {
        if (!glyphs.covers(cp)) return false;
        area_sum += glyphs.area_milli(cp);
    }
    const double mean_ratio = static_cast<double>(area_sum) / (1000.0 * static_cast<double>(cps.size()));
    return mean_ratio > threshold;
}

struct LayoutLine {
    std::vector<Token> items;  // words/characters plus committed separators
    int width_milli{0};        // at the chosen size, milli-pixels
    int x_px{0}, y_px{0};      // origin offset inside the box
};

struct LayoutResult {
    int font_size{0};
    Rect box;
    std::vector<LayoutLine> lines;
    bool fallback{false};
};

namespace detail {

inline long long token_advance_milli(const GlyphSource& g, const Token& t) {
    long long a = 0;
    for (char32_t cp : utf8_decode(t.text)) a += g.advance_milli(cp);
    return a;
}

struct WrapResult {
    bool ok{false};
    std::vector<LayoutLine> lines;
    int failing_token{-1};  // index into the token list when !ok
};

// Greedy word wrap at a fixed size. Fails only when a single token is wider
// than the box; separators at a break point are dropped from the line.
inline WrapResult try_word_wrap(const std::vector<Token>& items, int box_w_px, int size,
                                const GlyphSource& glyphs) {
    const long long w_limit = static_cast<long long>(box_w_px) * 1000;
    WrapResult res;
    LayoutLine cur;
    long long cur_w = 0;
    std::vector<Token> pending;  // separators waiting for the next token
    long long pending_w = 0;
    int token_index = -1;
    for (const auto& item : items) {
        if (item.kind == TokenKind::separator) {
            if (!cur.items.empty()) {
                pending.push_back(item);
                pending_w += token_advance_milli(glyphs, item) * size;
            }
            continue;
        }
        ++token_index;
        const long long w_tok = token_advance_milli(glyphs, item) * size;
        if (w_tok > w_limit) {
            res.failing_token = token_index;
            return res;
        }
        if (cur.items.empty() || cur_w + pending_w + w_tok <= w_limit) {
            for (auto& sep : pending) cur.items.push_back(std::move(sep));
            cur_w += pending_w + w_tok;
            cur.items.push_back(item);
        } else {
            cur.width_milli = static_cast<int>(cur_w);
            res.lines.push_back(std::move(cur));
            cur = LayoutLine{};
            cur.items.push_back(item);
            cur_w = w_tok;
        }
        pending.clear();
        pending_w = 0;
    }
    if (!cur.items.empty()) {
        cur.width_milli = static_cast<int>(cur_w);
        res.lines.push_back(std::move(cur));
    }
    res.ok = true;
    return res;
}

inline void place_lines(LayoutResult& r, const GlyphSource& glyphs) {
    const long long lh = static_cast<long long>(glyphs.line_height_milli()) * r.font_size;
    for (std::size_t i = 0; i < r.lines.size(); ++i) {
        r.lines[i].x_px = 0;
        r.lines[i].y_px = static_cast<int>(static_cast<long long>(i) * lh / 1000);
    }
}

}  // namespace detail

// Adaptive bounding-box layout: binary search for the maximum integer size
// in [s_min, s_max] whose greedy wrap fits the box width and whose total
// height (lines x line-height x size) fits the box height. Returns nothing
// when no size fits. wrap_evals, when given, counts wrap evaluations.
inline std::optional<LayoutResult> layout_bbox(const std::vector<Token>& items, int box_w, int box_h,
                                               int s_min, int s_max, const GlyphSource& glyphs,
                                               int* wrap_evals = nullptr) {
    if (box_w <= 0 || box_h <= 0) throw contract_error("layout_bbox: box must be positive");
    if (s_min > s_max) throw contract_error("layout_bbox: s_min must be <= s_max");
    if (wrap_evals) *wrap_evals = 0;
    int low = s_min, high = s_max;
    std::optional<LayoutResult> best;
    const long long h_limit = static_cast<long long>(box_h) * 1000;
    while (low <= high) {
        const int mid = low + (high - low) / 2;
        if (wrap_evals) ++(*wrap_evals);
        auto wrap = detail::try_word_wrap(items, box_w, mid, glyphs);
        if (wrap.ok) {
            const long long total_h = static_cast<long long>(wrap.lines.size()) *
                                      glyphs.line_height_milli() * mid;
            if (total_h <= h_limit) {
                LayoutResult r;
                r.font_size = mid;
                r.box = {0, 0, box_w, box_h};
                r.lines = std::move(wrap.lines);
                detail::place_lines(r, glyphs);
                best = std::move(r);
                low = mid + 1;
            } else {
                high = mid - 1;
            }
        } else {
            high = mid - 1;
        }
    }
    return best;
}

// layout_bbox in the requested box, then once more in the maximum safe
// canvas-margin box; throws when even that fails, naming the widest token.
inline LayoutResult layout_with_fallback(const std::vector<Token>& items, const Rect& box,
                                         const Rect& canvas_margins, int s_min, int s_max,
                                         const GlyphSource& glyphs) {
    if (auto r = layout_bbox(items, box.w, box.h, s_min, s_max, glyphs)) {
        r->box = box;
        return *r;
    }
    if (auto r = layout_bbox(items, canvas_margins.w, canvas_margins.h, s_min, s_max, glyphs)) {
        r->box = canvas_margins;
        r->fallback = true;
        return *r;
    }
    // Name the token that cannot fit the fallback box at the minimum size.
    auto wrap = detail::try_word_wrap(items, canvas_margins.w, s_min, glyphs);
    std::string failing = "<height overflow>";
    if (!wrap.ok) {
        int idx = -1;
        for (const auto& item : items) {
            if (item.kind == TokenKind::separator) continue;
            if (++idx == wrap.failing_token) {
                failing = item.text;
                break;
            }
        }
    }
    throw unlayoutable_error(failing);
}

}  // namespace vispflow
