#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vispflow/canvas.hpp"
#include "vispflow/errors.hpp"
#include "vispflow/unicode.hpp"

namespace vispflow {
namespace qc {

// Character error rate (S + D + I) / N by character-level Levenshtein
// alignment; N is the source length, so the rate can exceed 1.
inline double cer(const std::string& source, const std::string& hypothesis) {
    const auto s = utf8_decode(source);
    const auto h = utf8_decode(hypothesis);
    if (s.empty()) throw contract_error("cer: source must be nonempty");
    // Rolling two-row edit-distance DP.
    std::vector<int> prev(h.size() + 1), cur(h.size() + 1);
    for (std::size_t j = 0; j <= h.size(); ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= s.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= h.size(); ++j) {
            const int sub = prev[j - 1] + (s[i - 1] == h[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[h.size()]) / static_cast<double>(s.size());
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw dim_error("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::max(1e-300, std::sqrt(na) * std::sqrt(nb));
}

// Greedy sequential deduplication in input order: candidate i is retained
// iff its max cosine similarity to every previously retained candidate is
// strictly below tau_div.
inline std::vector<std::size_t> diversity_filter(const std::vector<std::vector<double>>& embeddings,
                                                 double tau_div) {
    if (tau_div <= 0.0 || tau_div > 1.0) throw contract_error("diversity_filter: tau must be in (0, 1]");
    std::vector<std::size_t> retained;
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        double worst = -2.0;
        for (std::size_t r : retained) worst = std::max(worst, cosine(embeddings[i], embeddings[r]));
        if (retained.empty() || worst < tau_div) retained.push_back(i);
    }
    return retained;
}

// Confidence score (P(yes) - P(no)) / P(no) from a binary judge.
inline double logit_score(double p_yes, double p_no) {
    if (p_yes < 0.0 || p_no < 0.0) throw contract_error("logit_score: probabilities must be >= 0");
    if (p_no == 0.0) throw contract_error("logit_score: p_no must be > 0");
    return (p_yes - p_no) / p_no;
}

// --------------------------------------------------------------- embedders
// Deterministic, dependency-free stand-ins for learned image embedders.

namespace detail {

inline void l2_normalize(std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-12) {
        // Degenerate all-zero feature (e.g. a pure black canvas); pin a
        // deterministic direction so the unit-norm invariant always holds.
        std::fill(v.begin(), v.end(), 0.0);
        v[0] = 1.0;
        return;
    }
    for (double& x : v) x /= n;
}

struct CellMean {
    double r, g, b;
};

inline CellMean region_mean(const Canvas& c, int x0, int y0, int x1, int y1) {
    double sr = 0.0, sg = 0.0, sb = 0.0;
    long n = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const Color p = c.get(x, y);
            sr += p.r;
            sg += p.g;
            sb += p.b;
            ++n;
        }
    if (n == 0) return {0, 0, 0};
    return {sr / (255.0 * n), sg / (255.0 * n), sb / (255.0 * n)};
}

}  // namespace detail

// Global embedder: 4x4 grid of per-cell mean RGB, 48 dims, L2-normalized.
inline std::vector<double> global_embedding(const Canvas& c) {
    constexpr int kGrid = 4;
    std::vector<double> v;
    v.reserve(kGrid * kGrid * 3);
    for (int gy = 0; gy < kGrid; ++gy) {
        for (int gx = 0; gx < kGrid; ++gx) {
            const int x0 = gx * c.width / kGrid, x1 = (gx + 1) * c.width / kGrid;
            const int y0 = gy * c.height / kGrid, y1 = (gy + 1) * c.height / kGrid;
            const auto m = detail::region_mean(c, x0, y0, x1, y1);
            v.push_back(m.r);
            v.push_back(m.g);
            v.push_back(m.b);
        }
    }
    detail::l2_normalize(v);
    return v;
}

// Dense embedder: 8x8 patch grid; per patch mean RGB plus a 3x3 downsampled
// gray thumbnail, 12 dims each, concatenated patch-major.
inline std::vector<double> dense_embedding(const Canvas& c) {
    constexpr int kGrid = 8;
    std::vector<double> v;
    v.reserve(kGrid * kGrid * 12);
    for (int gy = 0; gy < kGrid; ++gy) {
        for (int gx = 0; gx < kGrid; ++gx) {
            const int x0 = gx * c.width / kGrid, x1 = (gx + 1) * c.width / kGrid;
            const int y0 = gy * c.height / kGrid, y1 = (gy + 1) * c.height / kGrid;
            const auto m = detail::region_mean(c, x0, y0, x1, y1);
            v.push_back(m.r);
            v.push_back(m.g);
            v.push_back(m.b);
            for (int sy = 0; sy < 3; ++sy) {
                for (int sx = 0; sx < 3; ++sx) {
                    const int ux0 = x0 + sx * (x1 - x0) / 3, ux1 = x0 + (sx + 1) * (x1 - x0) / 3;
                    const int uy0 = y0 + sy * (y1 - y0) / 3, uy1 = y0 + (sy + 1) * (y1 - y0) / 3;
                    const auto s = detail::region_mean(c, ux0, uy0, ux1, uy1);
                    v.push_back(0.299 * s.r + 0.587 * s.g + 0.114 * s.b);
                }
            }
        }
    }
    return v;
}

// Deterministic 48-dim text embedder (hashed bag of words), dimensioned to
// pair with global_embedding in directional metrics.
inline std::vector<double> text_embedding(const std::string& text) {
    constexpr int kDim = 48;
    std::vector<double> v(kDim, 0.0);
    std::uint64_t h = 1469598103934665603ULL;
    bool any = false;
    const auto flush = [&](std::uint64_t word_hash) {
        const std::size_t bucket = word_hash % kDim;
        const double sign = (word_hash >> 8) & 1 ? 1.0 : -1.0;
        v[bucket] += sign;
        any = true;
    };
    std::uint64_t cur = 1469598103934665603ULL;
    bool in_word = false;
    for (char ch : text) {
        if (ch == ' ' || ch == '\t' || ch == '\n') {
            if (in_word) flush(cur);
            cur = 1469598103934665603ULL;
            in_word = false;
        } else {
            cur = (cur ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
            in_word = true;
        }
        h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ULL;
    }
    if (in_word) flush(cur);
    if (!any) v[h % kDim] = 1.0;
    detail::l2_normalize(v);
    return v;
}

}  // namespace qc
}  // namespace vispflow
