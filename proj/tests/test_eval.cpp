#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vispflow/eval.hpp"
#include "vispflow/qc.hpp"
#include "vispflow/rng.hpp"

using namespace vispflow;
using eval::directional_similarity;

TEST_CASE("directional similarity") {
    const std::vector<double> zero = {0, 0};
    SECTION("identical displacements give 1") {
        REQUIRE(directional_similarity(zero, {1, 2}, zero, {1, 2}) == Catch::Approx(1.0));
    }
    SECTION("opposite displacements give -1") {
        REQUIRE(directional_similarity(zero, {1, 2}, zero, {-1, -2}) == Catch::Approx(-1.0));
    }
    SECTION("orthogonal displacements give 0") {
        REQUIRE(directional_similarity(zero, {1, 0}, zero, {0, 1}) == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("degenerate displacement is an error, not zero") {
        REQUIRE_THROWS_AS(directional_similarity(zero, zero, zero, {1, 0}), degenerate_edit_error);
        REQUIRE_THROWS_AS(directional_similarity(zero, {1, 0}, {3, 3}, {3, 3}), degenerate_edit_error);
    }
    SECTION("invariant to positive scaling, sign flip under negation") {
        Rng rng(11);
        for (int i = 0; i < 200; ++i) {
            std::vector<double> a(4), b(4);
            for (auto& v : a) v = rng.normal();
            for (auto& v : b) v = rng.normal();
            const double base = directional_similarity(std::vector<double>(4, 0.0), a,
                                                       std::vector<double>(4, 0.0), b);
            std::vector<double> a_scaled = a;
            for (auto& v : a_scaled) v *= 3.7;
            const double scaled = directional_similarity(std::vector<double>(4, 0.0), a_scaled,
                                                         std::vector<double>(4, 0.0), b);
            REQUIRE(scaled == Catch::Approx(base).margin(1e-12));
            std::vector<double> a_neg = a;
            for (auto& v : a_neg) v = -v;
            const double negated = directional_similarity(std::vector<double>(4, 0.0), a_neg,
                                                          std::vector<double>(4, 0.0), b);
            REQUIRE(negated == Catch::Approx(-base).margin(1e-12));
        }
    }
}

TEST_CASE("dir_clip with stub embedders") {
    Canvas in(8, 8, {0, 0, 0, 255});
    Canvas gen(8, 8, {255, 255, 255, 255});

    SECTION("equal displacements in both spaces give 1") {
        eval::TextEmbedder te = [](const std::string& s) {
            return s == "before" ? std::vector<double>{0, 0} : std::vector<double>{1, 1};
        };
        eval::ImageEmbedder ie = [](const Canvas& c) {
            return c.get(0, 0).r == 0 ? std::vector<double>{0, 0} : std::vector<double>{1, 1};
        };
        REQUIRE(eval::dir_clip("before", "after", in, gen, te, ie) == Catch::Approx(1.0));
    }

    SECTION("hand-built 60-degree angle gives 0.5") {
        eval::TextEmbedder te = [](const std::string& s) {
            return s == "before" ? std::vector<double>{0, 0} : std::vector<double>{1, 0};
        };
        eval::ImageEmbedder ie = [](const Canvas& c) {
            if (c.get(0, 0).r == 0) return std::vector<double>{0, 0};
            return std::vector<double>{0.5, std::sqrt(3.0) / 2.0};
        };
        REQUIRE(eval::dir_clip("before", "after", in, gen, te, ie) == Catch::Approx(0.5));
    }

    SECTION("zero edit propagates the degenerate error") {
        eval::TextEmbedder te = [](const std::string&) { return std::vector<double>{1, 1}; };
        eval::ImageEmbedder ie = [](const Canvas&) { return std::vector<double>{2, 2}; };
        REQUIRE_THROWS_AS(eval::dir_clip("same", "same", in, in, te, ie), degenerate_edit_error);
    }
}

TEST_CASE("dinov3-style directional similarity") {
    Canvas in(16, 16, {10, 10, 10, 255});
    Canvas gen(16, 16, {200, 10, 10, 255});
    Canvas gt = gen;

    SECTION("generated edit equal to the ground-truth edit gives 1") {
        REQUIRE(eval::dinov3_dir_sim(in, gen, gt, qc::dense_embedding) == Catch::Approx(1.0));
    }

    SECTION("generated equal to input is degenerate") {
        REQUIRE_THROWS_AS(eval::dinov3_dir_sim(in, in, gt, qc::dense_embedding),
                          degenerate_edit_error);
    }

    SECTION("hand-set two-patch stub matches brute-force cosine") {
        eval::ImageEmbedder stub = [](const Canvas& c) {
            const double k = static_cast<double>(c.get(0, 0).r);
            return std::vector<double>{k, 2.0 * k, -k, 0.5 * k};
        };
        Canvas a(2, 2, {1, 0, 0, 255});
        Canvas b(2, 2, {3, 0, 0, 255});
        Canvas c(2, 2, {5, 0, 0, 255});
        // Displacements are parallel by construction -> exactly 1.
        REQUIRE(eval::dinov3_dir_sim(a, b, c, stub) == Catch::Approx(1.0));
    }
}

TEST_CASE("verdict rule") {
    REQUIRE(eval::verdict({3, 3, 3, 3}));
    REQUIRE_FALSE(eval::verdict({5, 5, 5, 2}));    // one dimension at 2.0 fails
    REQUIRE_FALSE(eval::verdict({2.5, 5, 5, 5}));  // fidelity below 3 fails
    REQUIRE(eval::verdict({3, 2.1, 3.5, 3.5}));
    REQUIRE_FALSE(eval::verdict({3, 2.0, 5, 5}));
    REQUIRE_THROWS_AS(eval::verdict({0.5, 3, 3, 3}), contract_error);

    SECTION("monotone: raising any score never flips pass to fail") {
        Rng rng(3);
        for (int i = 0; i < 500; ++i) {
            eval::ScoreCard s{rng.uniform(1, 5), rng.uniform(1, 5), rng.uniform(1, 5),
                              rng.uniform(1, 5)};
            if (!eval::verdict(s)) continue;
            eval::ScoreCard up = s;
            const int which = static_cast<int>(rng.uniform_int(0, 3));
            double* fields[4] = {&up.fidelity, &up.consistency, &up.realism, &up.spatial};
            *fields[which] = std::min(5.0, *fields[which] + rng.uniform(0.0, 1.0));
            REQUIRE(eval::verdict(up));
        }
    }
}

TEST_CASE("aggregation reproduces the published row totals") {
    using eval::total_from_rates;
    SECTION("three evaluator rows at 3 decimals") {
        REQUIRE(total_from_rates({.890, .700, .355, .727, .302, .520, .292, .535}) == 0.540);
        REQUIRE(total_from_rates({.850, .800, .079, .500, .116, .240, .083, .465}) == 0.392);
        REQUIRE(total_from_rates({.859, .720, .354, .713, .272, .320, .306, .481}) == 0.503);
    }
    SECTION("the human row mean lands within 0.002 of the printed total") {
        const double mean = total_from_rates({.800, .645, .242, .705, .255, .280, .255, .400});
        REQUIRE(std::abs(mean - 0.449) <= 0.002);
    }
}

TEST_CASE("aggregate over sample verdicts") {
    std::vector<eval::SampleVerdict> samples;
    for (int c = 0; c < kNumCategories; ++c)
        for (int i = 0; i < 10; ++i)
            samples.push_back({static_cast<Category>(c), i < c + 1});  // rate (c+1)/10

    auto report = eval::aggregate(samples);
    REQUIRE(report.category_rates.at(Category::C2I) == 0.1);
    REQUIRE(report.category_rates.at(Category::TU) == 0.8);
    // Mean of 0.1 .. 0.8.
    REQUIRE(report.total == 0.45);

    SECTION("empty category errors by default, excluded with the flag") {
        std::vector<eval::SampleVerdict> partial = {{Category::C2I, true}, {Category::C2I, false}};
        REQUIRE_THROWS_AS(eval::aggregate(partial), contract_error);
        auto r = eval::aggregate(partial, true);
        REQUIRE(r.total == 0.5);
        REQUIRE(r.category_rates.size() == 1);
    }

    SECTION("sample-weighted mode pools the counts") {
        std::vector<eval::SampleVerdict> mixed;
        for (int i = 0; i < 9; ++i) mixed.push_back({Category::C2I, true});
        mixed.push_back({Category::T2I, false});
        auto r = eval::aggregate(mixed, true, eval::TotalMode::sample_weighted);
        REQUIRE(r.total == 0.9);
        auto m = eval::aggregate(mixed, true, eval::TotalMode::mean_of_category_rates);
        REQUIRE(m.total == 0.5);
    }

    SECTION("rounding is half away from zero") {
        REQUIRE(eval::round3(0.4405) == 0.441);
        REQUIRE(eval::round3(0.44749999) == 0.447);
        REQUIRE(eval::round3(-0.4405) == -0.441);
    }
}
