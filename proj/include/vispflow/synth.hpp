#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "vispflow/dataset.hpp"
#include "vispflow/render.hpp"
#include "vispflow/rng.hpp"

namespace vispflow {
namespace synth {

struct ColorWord {
    const char* word;
    Color color;
};

inline const std::vector<ColorWord>& color_words() {
    static const std::vector<ColorWord> words = {
        {"red", {220, 40, 40, 255}},    {"green", {40, 180, 60, 255}},
        {"blue", {40, 70, 220, 255}},   {"yellow", {230, 210, 40, 255}},
        {"cyan", {40, 200, 210, 255}},  {"magenta", {200, 50, 200, 255}},
        {"orange", {240, 150, 30, 255}}, {"purple", {140, 60, 200, 255}},
    };
    return words;
}

struct SynthConfig {
    int image_side{64};
    int pairs_per_category{8};
    std::vector<Category> categories{Category::C2I, Category::T2I, Category::TIE, Category::TBE,
                                     Category::VME, Category::DE,  Category::FU,  Category::TU};
    // Optional pinned palette index per entry of `categories` (-1 = sample);
    // pinning one color word per category yields fixed class-to-target tasks.
    std::vector<int> category_color;
    std::uint64_t seed{0};
    int threads{1};
};

namespace detail {

inline TextConstraints small_text(int side) {
    TextConstraints c;
    c.size_min = 5;
    c.size_max = std::max(8, side / 5);
    c.canvas_margin = 2;
    return c;
}

// Widest word that fits the fallback margins box at the minimum font size.
inline std::string fit_word(std::string w, int side) {
    const int box = side - 4;
    const std::size_t max_chars =
        static_cast<std::size_t>(std::max(1, (box * 1000) / (600 * 5)));
    if (w.size() > max_chars) w.resize(max_chars);
    return w;
}

inline PairRecord make_pair(const SynthConfig& cfg, Category cat, int index, int pinned_color,
                            Rng rng) {
    const int side = cfg.image_side;
    const auto& words = color_words();
    const int pick = pinned_color >= 0
                         ? pinned_color
                         : static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(words.size()) - 1));
    const ColorWord cw = words[static_cast<std::size_t>(pick)];
    const Color base_gray{205, 205, 205, 255};

    PairRecord rec;
    rec.category = cat;
    rec.root_id = std::string(to_string(cat)) + "-root-" + std::to_string(index);

    switch (cat) {
        case Category::C2I: {
            rec.instruction = fit_word(cw.word, side);
            Canvas input(side, side, {255, 255, 255, 255});
            rec.input = render_text_instruction(input, rec.instruction, rng, small_text(side));
            rec.target = Canvas(side, side, cw.color);
            break;
        }
        case Category::T2I: {
            rec.instruction = side >= 48 ? std::string("a ") + cw.word + " image"
                                         : fit_word(cw.word, side);
            Canvas input(side, side, {255, 255, 255, 255});
            rec.input = render_text_instruction(input, rec.instruction, rng, small_text(side));
            rec.target = Canvas(side, side, cw.color);
            break;
        }
        case Category::TIE: {
            const ColorWord from = words[static_cast<std::size_t>(rng.uniform_int(0, 7))];
            rec.instruction = side >= 48 ? std::string("make it ") + cw.word
                                         : fit_word(cw.word, side);
            Canvas input(side, side, from.color);
            rec.input = render_text_instruction(input, rec.instruction, rng, small_text(side));
            rec.target = Canvas(side, side, cw.color);
            break;
        }
        case Category::TBE: {
            rec.instruction = fit_word(cw.word, side);
            Canvas input(side, side, base_gray);
            const int w = static_cast<int>(rng.uniform_int(side / 4, side / 2));
            const int h = static_cast<int>(rng.uniform_int(side / 4, side / 2));
            const Rect box{static_cast<int>(rng.uniform_int(2, side - w - 2)),
                           static_cast<int>(rng.uniform_int(2, side - h - 2)), w, h};
            BBoxSpec marker;
            marker.rect = box;
            marker.label = rec.instruction;
            marker.color = {30, 30, 30, 255};
            rec.input = render_marker(input, MarkerSpec{marker}, rng);
            rec.target = Canvas(side, side, base_gray);
            Painter p(rec.target);
            p.fill_rect(box, cw.color);
            rec.geometry["bbox"] = {{"x", box.x}, {"y", box.y}, {"w", box.w}, {"h", box.h}};
            break;
        }
        case Category::VME: {
            rec.instruction = "remove the object pointed by the arrow";
            const Point obj{static_cast<int>(rng.uniform_int(side / 3, 2 * side / 3)),
                            static_cast<int>(rng.uniform_int(side / 3, 2 * side / 3))};
            const int radius = side / 10;
            Canvas input(side, side, base_gray);
            {
                Painter p(input);
                p.fill_circle(obj, radius, cw.color);
            }
            MarkerConfig mc;
            mc.arrow_len_min = side / 5.0;
            mc.arrow_len_max = side / 2.5;
            ArrowSpec arrow;
            const double angle = rng.uniform(0.0, 6.283185307179586);
            arrow.magnitude = 0.5;
            const double len = arrow_shaft_length(arrow.magnitude, mc);
            arrow.origin = {obj.x - static_cast<int>(std::lround(len * std::cos(angle))),
                            obj.y - static_cast<int>(std::lround(len * std::sin(angle)))};
            arrow.angle = angle;
            rec.input = render_marker(input, MarkerSpec{arrow}, rng, mc);
            rec.target = Canvas(side, side, base_gray);
            rec.geometry["object"] = {{"x", obj.x}, {"y", obj.y}, {"r", radius}};
            break;
        }
        case Category::DE: {
            rec.instruction = fit_word(cw.word, side);
            const Point center{static_cast<int>(rng.uniform_int(side / 3, 2 * side / 3)),
                               static_cast<int>(rng.uniform_int(side / 3, 2 * side / 3))};
            const int r = side / 8;
            Canvas input(side, side, base_gray);
            DoodleSpec doodle;
            std::vector<Point> ring;
            for (int k = 0; k <= 8; ++k) {
                const double a = k * 6.283185307179586 / 8.0;
                const int jitter = static_cast<int>(rng.uniform_int(-1, 1));
                ring.push_back({center.x + static_cast<int>(std::lround((r + jitter) * std::cos(a))),
                                center.y + static_cast<int>(std::lround((r + jitter) * std::sin(a)))});
            }
            doodle.strokes = {ring};
            doodle.thickness = 1;
            rec.input = render_marker(input, MarkerSpec{doodle}, rng);
            rec.target = Canvas(side, side, base_gray);
            Painter p(rec.target);
            p.fill_circle(center, r, cw.color);
            rec.geometry["center"] = {{"x", center.x}, {"y", center.y}, {"r", r}};
            break;
        }
        case Category::FU: {
            const double magnitude = rng.uniform(0.0, 1.0);
            rec.instruction = "apply the force shown by the arrow";
            const int radius = side / 10;
            const Point obj{static_cast<int>(rng.uniform_int(side / 3, side / 2)),
                            static_cast<int>(rng.uniform_int(side / 3, 2 * side / 3))};
            Canvas input(side, side, base_gray);
            {
                Painter p(input);
                p.fill_circle(obj, radius, cw.color);
            }
            MarkerConfig mc;
            mc.arrow_len_min = side / 8.0;
            mc.arrow_len_max = side / 3.0;
            ArrowSpec arrow;
            arrow.origin = obj;
            arrow.angle = 0.0;  // push right
            arrow.magnitude = magnitude;
            rec.input = render_marker(input, MarkerSpec{arrow}, rng, mc);
            const int disp = static_cast<int>(std::lround(magnitude * (side / 3.0)));
            rec.target = Canvas(side, side, base_gray);
            Painter p(rec.target);
            p.fill_circle({obj.x + disp, obj.y}, radius, cw.color);
            rec.geometry["magnitude"] = magnitude;
            rec.geometry["displacement"] = disp;
            break;
        }
        case Category::TU: {
            rec.instruction = "move along the drawn path";
            const int radius = side / 10;
            const Point start{static_cast<int>(rng.uniform_int(side / 5, side / 2)),
                              static_cast<int>(rng.uniform_int(side / 5, 4 * side / 5))};
            const Point end{static_cast<int>(rng.uniform_int(side / 2, 4 * side / 5)),
                            static_cast<int>(rng.uniform_int(side / 5, 4 * side / 5))};
            const Point mid{(start.x + end.x) / 2,
                            std::clamp((start.y + end.y) / 2 +
                                           static_cast<int>(rng.uniform_int(-side / 6, side / 6)),
                                       radius, side - radius)};
            Canvas input(side, side, base_gray);
            {
                Painter p(input);
                p.fill_circle(start, radius, cw.color);
            }
            TrajectorySpec traj;
            traj.points = {start, mid, end};
            traj.thickness = 1;
            rec.input = render_marker(input, MarkerSpec{traj}, rng);
            rec.target = Canvas(side, side, base_gray);
            Painter p(rec.target);
            p.fill_circle(end, radius, cw.color);
            rec.geometry["path"] = nlohmann::json::array(
                {{start.x, start.y}, {mid.x, mid.y}, {end.x, end.y}});
            break;
        }
    }
    return rec;
}

}  // namespace detail

inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const int workers = std::min<int>(threads, static_cast<int>(n));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([=, &fn]() {
            for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(workers))
                fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

// Deterministic synthetic corpus: every pair's randomness comes from a
// per-index forked stream, so thread count never changes the output.
inline std::vector<PairRecord> build_pairs(const SynthConfig& cfg) {
    if (!cfg.category_color.empty() && cfg.category_color.size() != cfg.categories.size())
        throw contract_error("synth: category_color must align with categories");
    struct Job {
        Category cat;
        int index;
        int color;
    };
    std::vector<Job> jobs;
    for (int i = 0; i < cfg.pairs_per_category; ++i)
        for (std::size_t c = 0; c < cfg.categories.size(); ++c)
            jobs.push_back({cfg.categories[c], i,
                            cfg.category_color.empty() ? -1 : cfg.category_color[c]});

    Rng master(cfg.seed);
    std::vector<Rng> streams;
    streams.reserve(jobs.size());
    for (std::size_t i = 0; i < jobs.size(); ++i) streams.push_back(master.fork(i));

    std::vector<PairRecord> out(jobs.size());
    parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
        out[i] = detail::make_pair(cfg, jobs[i].cat, jobs[i].index, jobs[i].color, streams[i]);
    });
    return out;
}

}  // namespace synth
}  // namespace vispflow
