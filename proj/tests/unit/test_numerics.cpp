#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dflat/gradcheck.hpp"
#include "dflat/store.hpp"
#include "dflat/tape.hpp"
#include "dflat/tensor.hpp"
#include "support/oracles.hpp"

using namespace dflat;

TEST_CASE("matmul identity and projector") {
    ParameterStore store(0);
    Graph g(store);
    const Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
    Var out = g.matmul(g.input(Tensor::identity(2)), g.input(m));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(g.value(out)[i] == m[i]);
    }
    Var proj = g.matmul(g.input(Tensor::from_rows({{1, 0}, {0, 0}})),
                        g.input(Tensor::from_rows({{5, 6}, {7, 8}})));
    CHECK(g.value(proj).at(0, 0) == 5.0);
    CHECK(g.value(proj).at(0, 1) == 6.0);
    CHECK(g.value(proj).at(1, 0) == 0.0);
    CHECK(g.value(proj).at(1, 1) == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(7);
    ParameterStore store(0);
    Graph g(store);
    const Tensor a = oracle::random_tensor(rng, {3, 4});
    const Tensor b = oracle::random_tensor(rng, {4, 2});
    Var out = g.matmul(g.input(a), g.input(b));
    CHECK(oracle::max_abs_diff(g.value(out), oracle::matmul(a, b)) < 1e-12);
}

TEST_CASE("matmul shape error names both dims") {
    ParameterStore store(0);
    Graph g(store);
    Var a = g.input(Tensor({2, 3}));
    Var b = g.input(Tensor({4, 2}));
    CHECK_THROWS_WITH(g.matmul(a, b), Catch::Matchers::ContainsSubstring("2x3") &&
                                          Catch::Matchers::ContainsSubstring("4x2"));
}

TEST_CASE("softmax rows: uniform, saturation, direct formula") {
    ParameterStore store(0);
    Graph g(store);
    Var u = g.softmax_rows(g.input(Tensor::from_rows({{0, 0, 0}})));
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(g.value(u).at(0, j) == Catch::Approx(1.0 / 3.0).margin(1e-15));
    }
    Var sat = g.softmax_rows(g.input(Tensor::from_rows({{1000, 0}})));
    CHECK(std::abs(g.value(sat).at(0, 0) - 1.0) < 1e-12);
    CHECK(std::abs(g.value(sat).at(0, 1)) < 1e-12);

    Var v = g.softmax_rows(g.input(Tensor::from_rows({{1, 2, 3}})));
    const double denom = std::exp(1.0 - 3.0) + std::exp(2.0 - 3.0) + std::exp(0.0);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(g.value(v).at(0, j) ==
              Catch::Approx(std::exp(static_cast<double>(j + 1) - 3.0) / denom).margin(1e-15));
    }
}

TEST_CASE("softmax rows sum to one and shift invariance") {
    Rng rng(11);
    ParameterStore store(0);
    Graph g(store);
    const Tensor x = oracle::random_tensor(rng, {6, 9}, 3.0);
    Var y = g.softmax_rows(g.input(x));
    for (std::size_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 9; ++j) {
            sum += g.value(y).at(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
    // Exactly representable entries shifted by an exactly representable
    // constant: max subtraction restores the same logits bit for bit.
    const Tensor base = Tensor::from_rows({{1.5, 2.25, -3.0, 0.5}});
    Tensor shifted = base;
    for (std::size_t i = 0; i < shifted.size(); ++i) {
        shifted[i] += 1000.0;
    }
    Var y0 = g.softmax_rows(g.input(base));
    Var y1 = g.softmax_rows(g.input(shifted));
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(g.value(y0).at(0, j) == g.value(y1).at(0, j));
    }
    // Arbitrary values keep it within round-off.
    Tensor noisy = x;
    for (std::size_t i = 0; i < noisy.size(); ++i) {
        noisy[i] += 999.25;
    }
    Var y2 = g.softmax_rows(g.input(noisy));
    CHECK(oracle::max_abs_diff(g.value(y), g.value(y2)) < 1e-12);
}

TEST_CASE("layer_norm examples and direct evaluation") {
    ParameterStore store(0);
    Graph g(store);
    Var gain = g.input([] {
        Tensor t({4});
        t.fill(1.0);
        return t;
    }());
    Var bias = g.input(Tensor({4}));

    Var constant = g.layer_norm(g.input(Tensor::from_rows({{2.5, 2.5, 2.5, 2.5}})), gain, bias);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(g.value(constant).at(0, j) == 0.0);
    }

    Var gain2 = g.input([] {
        Tensor t({2});
        t.fill(1.0);
        return t;
    }());
    Var bias2 = g.input(Tensor({2}));
    Var pm = g.layer_norm(g.input(Tensor::from_rows({{1, -1}})), gain2, bias2);
    CHECK(g.value(pm).at(0, 0) == Catch::Approx(1.0).margin(1e-4));
    CHECK(g.value(pm).at(0, 1) == Catch::Approx(-1.0).margin(1e-4));

    Rng rng(3);
    const Tensor x = oracle::random_tensor(rng, {5, 4});
    const Tensor gv = oracle::random_tensor(rng, {4});
    const Tensor bv = oracle::random_tensor(rng, {4});
    Var out = g.layer_norm(g.input(x), g.input(gv), g.input(bv));
    CHECK(oracle::max_abs_diff(g.value(out), oracle::layer_norm(x, gv, bv)) < 1e-12);
}

TEST_CASE("backward: linear map gradient is broadcast of x") {
    ParameterStore store(0);
    Tensor& w = store.add("w", {2, 3}, ParameterStore::Init::normal_002);
    (void)w;
    Graph g(store);
    const Tensor x = Tensor::from_rows({{1.0}, {2.0}, {-0.5}});
    Var loss = g.sum_all(g.matmul(g.param("w"), g.input(x)));
    g.backward(loss);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(store.grad("w").at(i, j) == x.at(j, 0));
        }
    }
}

TEST_CASE("backward: gradient of squared norm is 2W") {
    ParameterStore store(5);
    store.add("w", {3, 3}, ParameterStore::Init::normal_002);
    Graph g(store);
    Var w = g.param("w");
    g.backward(g.sum_all(g.mul(w, w)));
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(store.grad("w")[i] == Catch::Approx(2.0 * store.value("w")[i]).margin(1e-15));
    }
}

TEST_CASE("backward state errors and idempotency") {
    ParameterStore store(0);
    store.add("w", {2, 2}, ParameterStore::Init::normal_002);
    Graph empty(store);
    CHECK_THROWS_AS(empty.backward(Var{}), StateError);

    Graph g(store);
    Var w = g.param("w");
    CHECK_THROWS_AS(g.backward(w), StateError);  // non-scalar loss
    Var loss = g.sum_all(g.mul(w, w));
    g.backward(loss);
    const Tensor first = store.grad("w");
    store.zero_grad();
    g.backward(loss);
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(store.grad("w")[i] == first[i]);
    }
}

TEST_CASE("every tape op passes a central-difference check") {
    // One scalar function routed through the whole op inventory.
    ParameterStore store(21);
    store.add("a", {4, 6}, ParameterStore::Init::normal_002);
    store.add("b", {6, 4}, ParameterStore::Init::normal_002);
    store.add("gain", {4}, ParameterStore::Init::ones);
    store.add("bias", {4}, ParameterStore::Init::zeros);
    store.add("v", {6}, ParameterStore::Init::normal_002);
    // Nudge values away from relu kinks and make magnitudes O(1).
    {
        Rng rng(99);
        for (auto& slot : store.slots()) {
            for (std::size_t i = 0; i < slot.value.size(); ++i) {
                slot.value[i] += rng.normal(0.0, 0.3);
            }
        }
    }
    auto loss_fn = [&](bool with_grad) {
        Graph g(store);
        Var a = g.param("a");
        Var b = g.param("b");
        Var prod = g.matmul(a, b);                      // 4x4
        Var ln = g.layer_norm(prod, g.param("gain"), g.param("bias"));
        Var soft = g.softmax_rows(g.scale(ln, 1.4142));
        Var act = g.relu(g.sub(soft, g.scale(ln, -0.5)));
        Var mixed = g.add(act, g.transpose(act));
        Var rows = g.concat_rows({mixed, g.slice_rows(mixed, 1, 2)});          // 6x4
        Var withv = g.add_rowvec(g.transpose(rows), g.param("v"));             // 4x6
        Var pooled = g.segment_mean_rows(withv, {{0, 2}, {2, 1}, {3, 1}});     // 3x6
        Var gathered = g.gather_rows(pooled, {0, 2, 2, 1});                    // 4x6
        Var osum = g.outer_sum(pooled, gathered);                              // 12x6
        Var up = g.bilinear_rows(g.concat_cols({osum, osum}), 3, 4, 5, 6);     // 30x12
        Var loss = g.cross_entropy_mean(
            up, {0, 3, 5, 1, 2, 7, 11, 4, 6, 8, 9, 10, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11,
                 5, 4, 3, 2, 1, 0});
        if (with_grad) {
            g.backward(loss);
        }
        return g.value(loss)[0];
    };
    const GradCheckReport report = gradcheck(store, loss_fn);
    for (const auto& group : report.groups) {
        INFO(group.name);
        CHECK(group.max_rel_err <= 1e-3);
    }
}

TEST_CASE("stability-critical ops stay finite on extreme inputs") {
    ParameterStore store(0);
    Graph g(store);
    Rng rng(61);
    Tensor huge({4, 6});
    for (std::size_t i = 0; i < huge.size(); ++i) {
        huge[i] = rng.normal(0.0, 300.0);
    }
    CHECK(g.value(g.softmax_rows(g.input(huge))).all_finite());
    Tensor gain({6});
    gain.fill(1.0);
    CHECK(g.value(g.layer_norm(g.input(huge), g.input(gain), g.input(Tensor({6}))))
              .all_finite());
    Var ce = g.cross_entropy_mean(g.input(huge), {0, 1, 2, 3});
    CHECK(g.value(ce).all_finite());
    g.backward(ce);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(g.grad_of(Var{i}).all_finite());
    }
}

TEST_CASE("parameter stores from the same seed are bit-identical") {
    auto build = [] {
        ParameterStore s(42);
        s.add("m", {5, 7}, ParameterStore::Init::normal_002);
        s.add("b", {7}, ParameterStore::Init::zeros);
        s.add("g", {7}, ParameterStore::Init::ones);
        return s;
    };
    ParameterStore s1 = build();
    ParameterStore s2 = build();
    REQUIRE(s1.slots().size() == s2.slots().size());
    for (std::size_t p = 0; p < s1.slots().size(); ++p) {
        const auto& a = s1.slots()[p];
        const auto& b = s2.slots()[p];
        CHECK(a.name == b.name);
        REQUIRE(a.value.dims() == b.grad.dims());  // gradient buffer matches value dims
        for (std::size_t i = 0; i < a.value.size(); ++i) {
            CHECK(a.value[i] == b.value[i]);
        }
    }
    CHECK_THROWS_AS(s1.add("m", {1}, ParameterStore::Init::zeros), ConfigError);
}

TEST_CASE("tensor dump round trip is bit-exact") {
    Rng rng(13);
    const Tensor t = oracle::random_tensor(rng, {3, 4, 2}, 5.0);
    const std::string path = (std::filesystem::temp_directory_path() / "dflat_dump_test.dflt")
                                 .string();
    save_tensor(path, t);
    const Tensor back = load_tensor(path);
    REQUIRE(back.dims() == t.dims());
    for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(back[i] == t[i]);
    }
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_tensor("/nonexistent/nope.dflt"), IoError);
}

TEST_CASE("optimizers drive a quadratic toward zero") {
    for (int use_adam = 0; use_adam < 2; ++use_adam) {
        ParameterStore store(1);
        store.add("w", {4}, ParameterStore::Init::normal_002);
        for (std::size_t i = 0; i < 4; ++i) {
            store.value("w")[i] += 1.0;
        }
        Sgd sgd(0.1);
        Adam adam(0.05);
        double first = 0.0, last = 0.0;
        for (int it = 0; it < 80; ++it) {
            Graph g(store);
            Var w = g.param("w");
            Var loss = g.sum_all(g.mul(w, w));
            store.zero_grad();
            g.backward(loss);
            if (use_adam) {
                adam.step(store);
            } else {
                sgd.step(store);
            }
            if (it == 0) {
                first = g.value(loss)[0];
            }
            last = g.value(loss)[0];
        }
        CHECK(first > 1.0);
        CHECK(last < 0.05);
    }
}
