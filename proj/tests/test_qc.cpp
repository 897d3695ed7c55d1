#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "vispflow/qc.hpp"
#include "vispflow/rng.hpp"

using namespace vispflow;

namespace {

// Full-matrix DP oracle kept separate from the implementation's rolling rows.
int oracle_edit_distance(const std::string& a, const std::string& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1, 0));
    for (std::size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int>(i);
    for (std::size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j)
            d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                                d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    return d[n][m];
}

std::vector<std::string> all_strings_up_to(int max_len, const std::string& alphabet) {
    std::vector<std::string> out = {""};
    std::vector<std::string> frontier = {""};
    for (int len = 1; len <= max_len; ++len) {
        std::vector<std::string> next;
        for (const auto& s : frontier)
            for (char c : alphabet) next.push_back(s + c);
        out.insert(out.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    return out;
}

}  // namespace

TEST_CASE("cer spot values") {
    REQUIRE(qc::cer("cat", "cat") == 0.0);
    REQUIRE(qc::cer("abc", "axc") == Catch::Approx(1.0 / 3.0));
    REQUIRE(qc::cer("ab", "abc") == Catch::Approx(0.5));
    REQUIRE(qc::cer("ab", "") == Catch::Approx(1.0));
    REQUIRE(qc::cer("a", "bcd") == Catch::Approx(3.0));  // can exceed 1
    REQUIRE_THROWS_AS(qc::cer("", "x"), contract_error);
}

TEST_CASE("cer is unicode aware") {
    const std::string cat = utf8_encode(0x732B);
    const std::string dog = utf8_encode(0x72AC);
    REQUIRE(qc::cer(cat + dog, cat + dog) == 0.0);
    REQUIRE(qc::cer(cat + dog, cat + cat) == Catch::Approx(0.5));
}

TEST_CASE("cer matches the DP oracle exhaustively on a 3-symbol alphabet") {
    const auto strings = all_strings_up_to(4, "abc");
    for (const auto& s : strings) {
        if (s.empty()) continue;
        for (const auto& h : strings) {
            const double expected =
                static_cast<double>(oracle_edit_distance(s, h)) / static_cast<double>(s.size());
            REQUIRE(qc::cer(s, h) == expected);
        }
    }
}

TEST_CASE("diversity filter") {
    SECTION("duplicate direction dropped, orthogonal kept") {
        std::vector<std::vector<double>> e = {{1, 0}, {1, 0}, {0, 1}};
        auto kept = qc::diversity_filter(e, 0.9);
        REQUIRE(kept == std::vector<std::size_t>{0, 2});
    }
    SECTION("mutually orthogonal set fully retained") {
        std::vector<std::vector<double>> e = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        REQUIRE(qc::diversity_filter(e, 0.5).size() == 3);
    }
    SECTION("tau = 1 retains everything without exact duplicates") {
        std::vector<std::vector<double>> e = {{1, 0}, {0.9, 0.1}, {0.5, 0.5}};
        REQUIRE(qc::diversity_filter(e, 1.0).size() == 3);
    }
    SECTION("retained set is pairwise below tau by brute force") {
        Rng rng(77);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<std::vector<double>> e;
            const int n = static_cast<int>(rng.uniform_int(1, 30));
            for (int i = 0; i < n; ++i) {
                std::vector<double> v(6);
                for (double& x : v) x = rng.normal();
                e.push_back(v);
            }
            const double tau = rng.uniform(0.2, 1.0);
            auto kept = qc::diversity_filter(e, tau);
            for (std::size_t i = 0; i < kept.size(); ++i)
                for (std::size_t j = i + 1; j < kept.size(); ++j)
                    REQUIRE(qc::cosine(e[kept[i]], e[kept[j]]) < tau);
        }
    }
    SECTION("tau outside (0, 1] rejected") {
        REQUIRE_THROWS_AS(qc::diversity_filter({}, 0.0), contract_error);
        REQUIRE_THROWS_AS(qc::diversity_filter({}, 1.5), contract_error);
    }
}

TEST_CASE("logit score") {
    REQUIRE(qc::logit_score(0.5, 0.5) == 0.0);
    REQUIRE(qc::logit_score(0.8, 0.2) == Catch::Approx(3.0));
    REQUIRE(qc::logit_score(0.2, 0.8) == Catch::Approx(-0.75));
    REQUIRE_THROWS_AS(qc::logit_score(0.5, 0.0), contract_error);
    REQUIRE_THROWS_AS(qc::logit_score(-0.1, 0.5), contract_error);

    SECTION("monotone in both arguments") {
        Rng rng(5);
        for (int i = 0; i < 200; ++i) {
            const double py = rng.uniform(0.0, 1.0);
            const double pn = rng.uniform(0.01, 1.0);
            const double d = rng.uniform(0.001, 0.2);
            REQUIRE(qc::logit_score(py + d, pn) > qc::logit_score(py, pn));
            REQUIRE(qc::logit_score(py, pn + d) < qc::logit_score(py, pn));
        }
    }
}

TEST_CASE("embedders are unit norm and deterministic") {
    Canvas c(32, 32, {200, 60, 30, 255});
    for (int y = 8; y < 16; ++y)
        for (int x = 4; x < 20; ++x) c.set(x, y, {0, 120, 255, 255});

    auto g1 = qc::global_embedding(c);
    auto g2 = qc::global_embedding(c);
    REQUIRE(g1 == g2);
    REQUIRE(g1.size() == 48);
    double norm = 0.0;
    for (double v : g1) norm += v * v;
    REQUIRE(std::sqrt(norm) == Catch::Approx(1.0).margin(1e-9));

    Canvas black(32, 32, {0, 0, 0, 255});
    auto gb = qc::global_embedding(black);
    norm = 0.0;
    for (double v : gb) norm += v * v;
    REQUIRE(std::sqrt(norm) == Catch::Approx(1.0).margin(1e-9));

    auto d = qc::dense_embedding(c);
    REQUIRE(d.size() == 8 * 8 * 12);

    auto t1 = qc::text_embedding("make it blue");
    auto t2 = qc::text_embedding("make it blue");
    REQUIRE(t1 == t2);
    REQUIRE(t1.size() == 48);
    auto t3 = qc::text_embedding("make it red");
    REQUIRE(t1 != t3);
}
