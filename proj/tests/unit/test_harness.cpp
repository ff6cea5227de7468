#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dflat/data.hpp"
#include "dflat/metrics.hpp"
#include "dflat/model.hpp"
#include "dflat/train.hpp"
#include "support/oracles.hpp"

using namespace dflat;

namespace {

ModelConfig harness_config(Variant v = Variant::dflat) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.H = 8;
    cfg.W = 8;
    cfg.h = 4;
    cfg.w = 4;
    cfg.d = 8;
    cfg.n_classes = 3;
    cfg.seed = 3;
    cfg.attn.d = 8;
    cfg.attn.n_h = 2;
    cfg.attn.L = 1;
    cfg.attn.n_p = 2;
    cfg.attn.n_w = 2;
    return cfg;
}

}  // namespace

TEST_CASE("stripes masks are a function of i+j and cover every class") {
    const auto set = generate(Task::stripes, 2, 16, 16, 3, 5);
    std::vector<bool> seen(3, false);
    for (const auto& s : set) {
        for (std::size_t i = 0; i < 16; ++i) {
            for (std::size_t j = 0; j < 16; ++j) {
                CHECK(s.mask[i * 16 + j] == stripes_label(i, j, 16, 16, 3));
                seen[s.mask[i * 16 + j]] = true;
            }
        }
    }
    CHECK((seen[0] && seen[1] && seen[2]));
    // Same (i+j) means same label.
    for (std::size_t i = 1; i < 16; ++i) {
        CHECK(set[0].mask[i * 16 + 3] == set[0].mask[(i - 1) * 16 + 4]);
    }
}

TEST_CASE("generation is deterministic per seed") {
    for (Task t : {Task::stripes, Task::rects}) {
        const auto a = generate(t, 3, 12, 12, 3, 17);
        const auto b = generate(t, 3, 12, 12, 3, 17);
        REQUIRE(a.size() == b.size());
        for (std::size_t s = 0; s < a.size(); ++s) {
            CHECK(a[s].mask == b[s].mask);
            for (std::size_t i = 0; i < a[s].image.size(); ++i) {
                CHECK(a[s].image[i] == b[s].image[i]);
            }
        }
    }
}

TEST_CASE("checker phase vanishes in every 4x4 tile average") {
    const auto set = generate(Task::checker, 1, 16, 16, 3, 0);
    const auto& s = set[0];
    for (std::size_t bi = 0; bi < 4; ++bi) {
        for (std::size_t bj = 0; bj < 4; ++bj) {
            double mask_sum = 0.0;
            double offset_sum = 0.0;  // class brightness after removing the ramp
            for (std::size_t di = 0; di < 4; ++di) {
                for (std::size_t dj = 0; dj < 4; ++dj) {
                    const std::size_t i = bi * 4 + di, j = bj * 4 + dj;
                    CHECK(s.mask[i * 16 + j] == (i % 2) + (j % 2));
                    mask_sum += static_cast<double>(s.mask[i * 16 + j]);
                    const double v = s.image.at(i, j, 0);
                    offset_sum += v - checker_ramp(i, j, 16, 16);
                    CHECK(v >= 0.0);
                    CHECK(v <= 1.0);
                }
            }
            // Tile mean is the mid class exactly (0.5 in class-brightness
            // units) and the +-0.25 offsets cancel to round-off: downsampling
            // to encoder resolution erases the period-2 phase.
            CHECK(mask_sum / 16.0 == 1.0);
            CHECK(std::abs(offset_sum) < 1e-13);
        }
    }
    CHECK_THROWS_AS(generate(Task::checker, 1, 16, 16, 2, 0), ConfigError);
}

TEST_CASE("rects cover every class including background") {
    const auto set = generate(Task::rects, 4, 16, 16, 4, 23);
    std::vector<bool> seen(4, false);
    for (const auto& s : set) {
        for (const std::size_t c : s.mask) {
            seen[c] = true;
        }
    }
    for (std::size_t c = 0; c < 4; ++c) {
        INFO("class " << c);
        CHECK(seen[c]);
    }
}

TEST_CASE("stripes class count is bounded by the band count") {
    CHECK_THROWS_AS(generate(Task::stripes, 1, 2, 2, 4, 0), ConfigError);
}

TEST_CASE("cross entropy: uniform, saturated, direct evaluation") {
    ParameterStore store(0);
    Graph g(store);
    Tensor uniform({5, 3});
    uniform.fill(0.25);
    Var u = g.cross_entropy_mean(g.input(uniform), {0, 1, 2, 0, 1});
    CHECK(std::abs(g.value(u)[0] - std::log(3.0)) < 1e-12);

    Tensor onehot({2, 3});
    onehot.at(0, 1) = 1000.0;
    onehot.at(1, 2) = 1000.0;
    Var sat = g.cross_entropy_mean(g.input(onehot), {1, 2});
    CHECK(g.value(sat)[0] >= 0.0);
    CHECK(g.value(sat)[0] < 1e-6);

    Rng rng(31);
    const Tensor logits = oracle::random_tensor(rng, {6, 4});
    const std::vector<std::size_t> labels = {3, 0, 1, 2, 2, 0};
    Var ce = g.cross_entropy_mean(g.input(logits), labels);
    double expect = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
        double se = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            se += std::exp(logits.at(i, j));
        }
        expect += -std::log(std::exp(logits.at(i, labels[i])) / se);
    }
    expect /= 6.0;
    CHECK(g.value(ce)[0] == Catch::Approx(expect).margin(1e-12));
    CHECK(g.value(ce)[0] >= 0.0);
    CHECK(cross_entropy_value(logits, labels) == g.value(ce)[0]);
}

TEST_CASE("miou: perfect, skewed, exclusion, relabeling") {
    CHECK(miou({0, 1, 2, 1}, {0, 1, 2, 1}, 3).miou == 1.0);

    // Half class 0, half class 1 in truth; everything predicted class 0.
    const MiouResult r = miou({0, 0, 0, 0}, {0, 0, 1, 1}, 3);
    CHECK(r.per_class[0] == 0.5);
    CHECK(r.per_class[1] == 0.0);
    CHECK_FALSE(r.present[2]);
    CHECK(r.miou == 0.25);  // mean over the two present classes

    // Relabeling both masks the same way keeps the score.
    const MiouResult a = miou({0, 1, 1, 2}, {0, 2, 1, 2}, 3);
    const MiouResult b = miou({1, 2, 2, 0}, {1, 0, 2, 0}, 3);  // 0->1, 1->2, 2->0
    CHECK(a.miou == Catch::Approx(b.miou).margin(1e-15));
}

TEST_CASE("zero learning rate freezes the loss over full-batch steps") {
    Model model(harness_config());
    TrainConfig tcfg;
    tcfg.steps = 5;
    tcfg.batch_size = 2;
    tcfg.train_samples = 2;  // every step sees the whole set
    tcfg.holdout_samples = 1;
    tcfg.learning_rate = 0.0;
    tcfg.eval_every = 5;
    const TrainResult r = train(model, tcfg);
    REQUIRE(r.history.size() == 5);
    for (const auto& rec : r.history) {
        CHECK(rec.loss == r.history[0].loss);
    }
}

TEST_CASE("identical seeds give bit-identical training histories") {
    auto run = [] {
        Model model(harness_config());
        TrainConfig tcfg;
        tcfg.steps = 6;
        tcfg.batch_size = 2;
        tcfg.train_samples = 4;
        tcfg.holdout_samples = 2;
        tcfg.eval_every = 3;
        return train(model, tcfg);
    };
    const TrainResult a = run();
    const TrainResult b = run();
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].loss == b.history[i].loss);
        CHECK(a.history[i].miou.has_value() == b.history[i].miou.has_value());
        if (a.history[i].miou) {
            CHECK(*a.history[i].miou == *b.history[i].miou);
        }
    }
    // mIoU recorded exactly at eval_every multiples and at the last step.
    CHECK(a.history[2].miou.has_value());
    CHECK_FALSE(a.history[3].miou.has_value());
    CHECK(a.history[5].miou.has_value());
}

TEST_CASE("non-finite loss aborts with a divergence diagnostic") {
    Model model(harness_config());
    model.store().value("cls.weight")[0] = std::nan("");
    TrainConfig tcfg;
    tcfg.steps = 2;
    tcfg.batch_size = 1;
    tcfg.train_samples = 1;
    tcfg.holdout_samples = 1;
    CHECK_THROWS_AS(train(model, tcfg), DivergenceError);
}

TEST_CASE("train and eval agree on the held-out score") {
    Model model(harness_config());
    TrainConfig tcfg;
    tcfg.steps = 4;
    tcfg.batch_size = 2;
    tcfg.train_samples = 4;
    tcfg.holdout_samples = 2;
    tcfg.eval_every = 2;
    const TrainResult r = train(model, tcfg);
    const auto holdout = generate(tcfg.task, tcfg.holdout_samples, 8, 8, 3,
                                  holdout_seed(model.config().seed));
    const EvalResult e = evaluate(model, holdout);
    CHECK(e.miou == r.final_miou);
}
