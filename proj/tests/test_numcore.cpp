#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "vispflow/autograd.hpp"
#include "vispflow/checkpoint.hpp"
#include "vispflow/optim.hpp"
#include "vispflow/rng.hpp"
#include "vispflow/tensor.hpp"

using namespace vispflow;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
    Rng rng(1);
    Tensor x = random_tensor(rng, {3, 5});
    Tensor ix = matmul(Tensor::identity(3), x);
    REQUIRE(ix.data == x.data);

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    REQUIRE(c.shape == Shape{2, 1});
    REQUIRE(c.data[0] == 3.0);
    REQUIRE(c.data[1] == 7.0);

    Tensor e1 = Tensor::zeros({2, 0});
    Tensor e2 = Tensor::zeros({0, 2});
    Tensor z = matmul(e1, e2);
    REQUIRE(z.shape == Shape{2, 2});
    for (double v : z.data) REQUIRE(v == 0.0);

    REQUIRE_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), dim_error);
}

TEST_CASE("softmax rows sum to one and is shift invariant") {
    Tensor x({1, 2}, {0, 0});
    Tensor y = softmax_lastdim(x);
    REQUIRE(y.data[0] == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(y.data[1] == Catch::Approx(0.5).margin(1e-15));

    Tensor big({1, 2}, {1000, 1000});
    Tensor yb = softmax_lastdim(big);
    REQUIRE(yb.all_finite());
    REQUIRE(yb.data[0] == Catch::Approx(0.5).margin(1e-15));

    Tensor t({1, 2}, {0.0, std::log(3.0)});
    Tensor yt = softmax_lastdim(t);
    REQUIRE(yt.data[0] == Catch::Approx(0.25).epsilon(1e-12));
    REQUIRE(yt.data[1] == Catch::Approx(0.75).epsilon(1e-12));

    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor r = random_tensor(rng, {4, 6}, 3.0);
        Tensor shifted = r;
        const double shift = rng.uniform(-100.0, 100.0);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 6; ++j) shifted.at(i, j) += shift;
        Tensor s1 = softmax_lastdim(r);
        Tensor s2 = softmax_lastdim(shifted);
        for (int i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 6; ++j) {
                sum += s1.at(i, j);
                REQUIRE(s1.at(i, j) == Catch::Approx(s2.at(i, j)).margin(1e-12));
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
        }
    }
}

TEST_CASE("grad of linear and quadratic maps") {
    SECTION("sum of p gives all-ones gradient") {
        ParamSet params;
        params.add("p", Tensor({2, 3}, {1, -2, 3, 0.5, 4, -1}));
        GradMap g = grad([](Tape& t, const std::map<std::string, Var>& lv) {
            return t.sum_all(lv.at("p"));
        }, params);
        for (double v : g.at("p").data) REQUIRE(v == 1.0);
    }

    SECTION("sum of p*p at [1,2] gives [2,4]") {
        ParamSet params;
        params.add("p", Tensor({2}, {1, 2}));
        GradMap g = grad([](Tape& t, const std::map<std::string, Var>& lv) {
            Var p = lv.at("p");
            return t.sum_all(t.mul(p, p));
        }, params);
        REQUIRE(g.at("p").data[0] == Catch::Approx(2.0));
        REQUIRE(g.at("p").data[1] == Catch::Approx(4.0));
    }

    SECTION("non-scalar loss rejected") {
        ParamSet params;
        params.add("p", Tensor({2}, {1, 2}));
        REQUIRE_THROWS_AS(grad([](Tape& t, const std::map<std::string, Var>& lv) {
            return lv.at("p");
        }, params), contract_error);
    }

    SECTION("frozen parameters get no gradient entry") {
        ParamSet params;
        params.add("w", Tensor({2}, {1, 2}));
        params.add("frozen", Tensor({2}, {3, 4}), false);
        GradMap g = grad([](Tape& t, const std::map<std::string, Var>& lv) {
            return t.sum_all(t.add(lv.at("w"), lv.at("frozen")));
        }, params);
        REQUIRE(g.count("w") == 1);
        REQUIRE(g.count("frozen") == 0);
    }
}

TEST_CASE("finite difference check basics") {
    SECTION("quadratic loss passes at tight tolerance") {
        ParamSet params;
        params.add("p", Tensor({3}, {0.3, -1.2, 2.0}));
        auto report = finite_diff_check([](Tape& t, const std::map<std::string, Var>& lv) {
            Var p = lv.at("p");
            return t.sum_all(t.mul(p, p));
        }, params, 1e-5, 1e-6);
        REQUIRE(report.pass);
    }

    SECTION("zero-gradient parameter reports error 0") {
        ParamSet params;
        params.add("used", Tensor({2}, {1.0, 2.0}));
        params.add("unused", Tensor({2}, {5.0, 6.0}));
        auto report = finite_diff_check([](Tape& t, const std::map<std::string, Var>& lv) {
            Var p = lv.at("used");
            return t.sum_all(t.mul(p, p));
        }, params, 1e-5, 1e-6);
        REQUIRE(report.pass);
        for (const auto& item : report.per_param)
            if (item.path == "unused") REQUIRE(item.max_rel_err == 0.0);
    }

    SECTION("epsilon must be positive") {
        ParamSet params;
        params.add("p", Tensor({1}, {1.0}));
        REQUIRE_THROWS_AS(finite_diff_check([](Tape& t, const std::map<std::string, Var>& lv) {
            return t.sum_all(lv.at("p"));
        }, params, 0.0, 1e-6), contract_error);
    }
}

// Every differentiable op against central finite differences on random
// small tensors, 100 seeds.
TEST_CASE("per-op gradients match finite differences over 100 seeds") {
    struct OpCase {
        const char* name;
        LossFn fn;
        Shape shape;
        bool positive_only{false};
    };
    const std::vector<OpCase> cases = {
        {"matmul", [](Tape& t, const std::map<std::string, Var>& lv) {
             return t.mean_all(t.matmul(lv.at("p"), lv.at("q")));
         }, {3, 4}},
        {"softmax", [](Tape& t, const std::map<std::string, Var>& lv) {
             Var s = t.softmax_lastdim(lv.at("p"));
             return t.mean_all(t.mul(s, t.constant(Tensor({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}))));
         }, {3, 4}},
        {"layer_norm", [](Tape& t, const std::map<std::string, Var>& lv) {
             Var y = t.layer_norm(lv.at("p"), lv.at("g"), lv.at("b"));
             return t.mean_all(t.mul(y, y));
         }, {3, 4}},
        {"sigmoid", [](Tape& t, const std::map<std::string, Var>& lv) {
             return t.mean_all(t.sigmoid(lv.at("p")));
         }, {3, 4}},
        {"gelu", [](Tape& t, const std::map<std::string, Var>& lv) {
             return t.mean_all(t.gelu(lv.at("p")));
         }, {3, 4}},
        {"exp", [](Tape& t, const std::map<std::string, Var>& lv) {
             return t.mean_all(t.exp(lv.at("p")));
         }, {3, 4}},
        {"log", [](Tape& t, const std::map<std::string, Var>& lv) {
             return t.mean_all(t.log(lv.at("p")));
         }, {3, 4}, true},
        {"powc", [](Tape& t, const std::map<std::string, Var>& lv) {
             return t.mean_all(t.powc(lv.at("p"), -0.5));
         }, {3, 4}, true},
        {"reshape_concat_slice", [](Tape& t, const std::map<std::string, Var>& lv) {
             Var p = lv.at("p");
             Var r = t.reshape(p, {4, 3});
             Var c = t.concat_cols(r, r);
             Var s = t.slice_cols(c, 1, 5);
             return t.mean_all(t.mul(s, s));
         }, {3, 4}},
        {"gather_rows", [](Tape& t, const std::map<std::string, Var>& lv) {
             Var gathered = t.gather_rows(lv.at("p"), {2, 0, 2, 1});
             return t.mean_all(t.mul(gathered, gathered));
         }, {3, 4}},
        {"rowsum_rowscale", [](Tape& t, const std::map<std::string, Var>& lv) {
             Var p = lv.at("p");
             Var s = t.rowsum_lastdim(p);
             return t.mean_all(t.rowwise_scale(p, s));
         }, {3, 4}},
        {"logsumexp_diag", [](Tape& t, const std::map<std::string, Var>& lv) {
             Var sq = t.matmul(lv.at("p"), t.transpose(lv.at("p")));
             return t.mean_all(t.sub(t.logsumexp_lastdim(sq), t.take_diag(sq)));
         }, {3, 4}},
        {"add_rowvec_transpose", [](Tape& t, const std::map<std::string, Var>& lv) {
             Var y = t.add_rowvec(t.transpose(lv.at("p")), lv.at("v"));
             return t.mean_all(t.mul(y, y));
         }, {3, 4}},
        {"scale_by_recip", [](Tape& t, const std::map<std::string, Var>& lv) {
             Var y = t.scale_by_recip(lv.at("p"), lv.at("tau"));
             return t.mean_all(t.mul(y, y));
         }, {3, 4}},
    };

    for (const auto& c : cases) {
        DYNAMIC_SECTION("op " << c.name) {
            int failures = 0;
            for (std::uint64_t seed = 0; seed < 100; ++seed) {
                Rng rng(seed * 7919 + 13);
                ParamSet params;
                Tensor p = random_tensor(rng, c.shape, 0.8);
                if (c.positive_only)
                    for (double& v : p.data) v = 0.5 + std::abs(v);
                params.add("p", std::move(p));
                params.add("q", random_tensor(rng, {4, 2}, 0.8));
                params.add("g", random_tensor(rng, {4}, 0.3));
                params.add("b", random_tensor(rng, {4}, 0.3));
                params.add("v", random_tensor(rng, {3}, 0.5));
                params.add("tau", Tensor({1}, {0.5 + rng.uniform()}));
                auto report = finite_diff_check(c.fn, params, 1e-5, 1e-4);
                if (!report.pass) ++failures;
            }
            REQUIRE(failures == 0);
        }
    }
}

TEST_CASE("ops are deterministic") {
    Rng rng(11);
    Tensor a = random_tensor(rng, {8, 8});
    Tensor b = random_tensor(rng, {8, 8});
    Tensor c1 = matmul(a, b);
    Tensor c2 = matmul(a, b);
    REQUIRE(c1.data == c2.data);
    Tensor s1 = softmax_lastdim(a);
    Tensor s2 = softmax_lastdim(a);
    REQUIRE(s1.data == s2.data);
}

TEST_CASE("adamw step") {
    SECTION("zero gradient and zero decay leaves params unchanged") {
        ParamSet params;
        params.add("p", Tensor({2}, {1.5, -2.5}));
        GradMap g;
        g.emplace("p", Tensor::zeros({2}));
        AdamWState state;
        AdamWConfig cfg;
        cfg.lr = 0.1;
        adamw_step(params, g, state, cfg);
        REQUIRE(params.at("p").data[0] == 1.5);
        REQUIRE(params.at("p").data[1] == -2.5);
    }

    SECTION("one step with unit gradient moves by about -lr") {
        ParamSet params;
        params.add("p", Tensor({1}, {0.0}));
        GradMap g;
        g.emplace("p", Tensor({1}, {1.0}));
        AdamWState state;
        AdamWConfig cfg;
        cfg.lr = 0.1;
        adamw_step(params, g, state, cfg);
        // bias-corrected mhat = 1, vhat = 1 -> delta = -lr / (1 + eps)
        REQUIRE(params.at("p").data[0] == Catch::Approx(-0.1).epsilon(1e-6));
    }

    SECTION("decoupled decay with zero gradient") {
        ParamSet params;
        params.add("p", Tensor({1}, {2.0}));
        GradMap g;
        g.emplace("p", Tensor({1}, {0.0}));
        AdamWState state;
        AdamWConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.01;
        adamw_step(params, g, state, cfg);
        REQUIRE(params.at("p").data[0] == Catch::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
    }

    SECTION("frozen parameters never move") {
        ParamSet params;
        params.add("p", Tensor({1}, {1.0}), false);
        GradMap g;
        g.emplace("p", Tensor({1}, {5.0}));
        AdamWState state;
        adamw_step(params, g, state, AdamWConfig{});
        REQUIRE(params.at("p").data[0] == 1.0);
    }
}

TEST_CASE("lr schedule endpoints") {
    REQUIRE(lr_schedule(1e-3, 0, 100, 1000) == 0.0);
    REQUIRE(lr_schedule(1e-3, 100, 100, 1000) == Catch::Approx(1e-3));
    REQUIRE(lr_schedule(1e-3, 1000, 100, 1000) == Catch::Approx(0.0).margin(1e-18));
}

TEST_CASE("checkpoint round trip") {
    Rng rng(3);
    ParamSet params;
    params.add("a.w", random_tensor(rng, {3, 4}));
    params.add("a.b", random_tensor(rng, {4}));
    params.add("codec.p", random_tensor(rng, {6, 2}), false);

    const std::string bytes = serialize_params(params);
    REQUIRE(bytes.substr(0, 4) == "VPW1");

    ParamSet loaded;
    loaded.add("a.w", Tensor::zeros({3, 4}));
    loaded.add("a.b", Tensor::zeros({4}));
    loaded.add("codec.p", Tensor::zeros({6, 2}), false);
    deserialize_params(bytes, loaded);
    REQUIRE(loaded.at("a.w").data == params.at("a.w").data);
    REQUIRE(loaded.at("codec.p").data == params.at("codec.p").data);

    SECTION("truncated file reports a format error") {
        ParamSet again;
        again.add("a.w", Tensor::zeros({3, 4}));
        REQUIRE_THROWS_AS(deserialize_params(bytes.substr(0, bytes.size() - 3), again), format_error);
    }
    SECTION("bad magic rejected") {
        ParamSet again;
        REQUIRE_THROWS_AS(deserialize_params("XXXX", again), format_error);
    }
}
