#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vispflow/canvas.hpp"
#include "vispflow/dataset.hpp"
#include "vispflow/errors.hpp"

namespace vispflow {
namespace eval {

constexpr double kDisplacementEps = 1e-9;

// Cosine of the displacement vectors (a1 - a0) and (b1 - b0). Degenerate
// displacements are an error, never a silent zero.
inline double directional_similarity(const std::vector<double>& a0, const std::vector<double>& a1,
                                     const std::vector<double>& b0, const std::vector<double>& b1) {
    if (a0.size() != a1.size() || b0.size() != b1.size() || a0.size() != b0.size())
        throw dim_error("directional_similarity: dimension mismatch");
    double da_norm = 0.0, db_norm = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < a0.size(); ++i) {
        const double da = a1[i] - a0[i];
        const double db = b1[i] - b0[i];
        da_norm += da * da;
        db_norm += db * db;
        dot += da * db;
    }
    da_norm = std::sqrt(da_norm);
    db_norm = std::sqrt(db_norm);
    if (da_norm <= kDisplacementEps || db_norm <= kDisplacementEps)
        throw degenerate_edit_error("directional_similarity: displacement below epsilon");
    return dot / (da_norm * db_norm);
}

using ImageEmbedder = std::function<std::vector<double>(const Canvas&)>;
using TextEmbedder = std::function<std::vector<double>(const std::string&)>;

// Directional similarity between the caption displacement and the image
// displacement, with pluggable embedders.
inline double dir_clip(const std::string& src_caption, const std::string& tgt_caption,
                       const Canvas& in_img, const Canvas& gen_img, const TextEmbedder& text_embedder,
                       const ImageEmbedder& img_embedder) {
    if (src_caption.empty() || tgt_caption.empty())
        throw contract_error("dir_clip: captions must be nonempty");
    return directional_similarity(text_embedder(src_caption), text_embedder(tgt_caption),
                                  img_embedder(in_img), img_embedder(gen_img));
}

// Directional similarity of dense-feature edit displacements: generated
// edit vs ground-truth edit, both measured from the input image.
inline double dinov3_dir_sim(const Canvas& in_img, const Canvas& gen_img, const Canvas& gt_img,
                             const ImageEmbedder& dense_embedder) {
    if (!in_img.same_size(gen_img) || !in_img.same_size(gt_img))
        throw dim_error("dinov3_dir_sim: image sizes must match");
    const auto fi = dense_embedder(in_img);
    return directional_similarity(fi, dense_embedder(gen_img), fi, dense_embedder(gt_img));
}

// ------------------------------------------------------------ pass verdict

struct ScoreCard {
    double fidelity{0.0};
    double consistency{0.0};
    double realism{0.0};
    double spatial{0.0};
};

// PASS iff fidelity >= 3.0, mean of the four >= 3.0, and every dimension is
// strictly above 2.0.
inline bool verdict(const ScoreCard& s) {
    const std::array<double, 4> v = {s.fidelity, s.consistency, s.realism, s.spatial};
    for (double x : v)
        if (x < 1.0 || x > 5.0) throw contract_error("verdict: scores must be in [1, 5]");
    const double mean = (v[0] + v[1] + v[2] + v[3]) / 4.0;
    double mn = v[0];
    for (double x : v) mn = std::min(mn, x);
    return s.fidelity >= 3.0 && mean >= 3.0 && mn > 2.0;
}

// -------------------------------------------------------------- aggregation

inline double round3(double x) {
    // Half away from zero at 3 decimals.
    return (x < 0 ? -1.0 : 1.0) * std::floor(std::abs(x) * 1000.0 + 0.5) / 1000.0;
}

enum class TotalMode {
    mean_of_category_rates,  // unweighted mean over categories
    sample_weighted,         // pooled pass count over all samples
};

struct BenchReport {
    std::map<Category, double> category_rates;                // rounded to 3 decimals
    std::map<Category, std::pair<long, long>> category_counts;  // passes / samples
    double total{0.0};
    TotalMode mode{TotalMode::mean_of_category_rates};
};

struct SampleVerdict {
    Category category{Category::C2I};
    bool pass{false};
};

// Category rate = passes/samples; total = unweighted mean of the present
// category rates, at 3 decimals. Empty categories are an error unless
// explicitly allowed and excluded.
inline BenchReport aggregate(const std::vector<SampleVerdict>& samples,
                             bool allow_absent_categories = false,
                             TotalMode mode = TotalMode::mean_of_category_rates) {
    BenchReport report;
    report.mode = mode;
    std::map<Category, std::pair<long, long>> counts;
    for (const auto& s : samples) {
        auto& c = counts[s.category];
        c.first += s.pass ? 1 : 0;
        c.second += 1;
    }
    for (int i = 0; i < kNumCategories; ++i) {
        const Category cat = static_cast<Category>(i);
        if (!counts.count(cat)) {
            if (!allow_absent_categories)
                throw contract_error(std::string("aggregate: category ") + to_string(cat) +
                                     " has no samples");
            continue;
        }
        const auto [passes, total] = counts.at(cat);
        report.category_counts[cat] = {passes, total};
        report.category_rates[cat] = round3(static_cast<double>(passes) / static_cast<double>(total));
    }
    if (report.category_rates.empty()) throw contract_error("aggregate: no samples at all");

    if (mode == TotalMode::mean_of_category_rates) {
        double sum = 0.0;
        for (const auto& [cat, rate] : report.category_rates) sum += rate;
        report.total = round3(sum / static_cast<double>(report.category_rates.size()));
    } else {
        long passes = 0, total = 0;
        for (const auto& [cat, pc] : report.category_counts) {
            passes += pc.first;
            total += pc.second;
        }
        report.total = round3(static_cast<double>(passes) / static_cast<double>(total));
    }
    return report;
}

// Total recomputed from already-known category rates (e.g. a published
// table row); same rounding contract as aggregate.
inline double total_from_rates(const std::vector<double>& rates) {
    if (rates.empty()) throw contract_error("total_from_rates: need at least one rate");
    double sum = 0.0;
    for (double r : rates) sum += r;
    return round3(sum / static_cast<double>(rates.size()));
}

}  // namespace eval
}  // namespace vispflow
