#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "kinverify/fusion.hpp"
#include "kinverify/losses.hpp"
#include "kinverify/nethead.hpp"
#include "test_util.hpp"

using namespace kin;

namespace {

HeadConfig small_head(std::vector<int> dims, HeadOutput output, std::uint64_t seed) {
    HeadConfig cfg;
    cfg.layer_dims = std::move(dims);
    cfg.dropout_rate = 0.0;
    cfg.use_bias = true;
    cfg.output = output;
    cfg.seed = seed;
    return cfg;
}

double head_loss(const HeadParams& params, const HeadConfig& cfg,
                 const std::vector<double>& x, int label) {
    const std::vector<double> logits = forward(params, cfg, x, false);
    if (cfg.output == HeadOutput::Softmax) return softmax_ce(logits, label).loss;
    const double p = 1.0 / (1.0 + std::exp(-logits[0]));
    return bce(p, label).loss;
}

/// Central finite differences of the loss with respect to every parameter.
HeadGrads numeric_grads(HeadParams params, const HeadConfig& cfg,
                        const std::vector<double>& x, int label, double eps = 1e-5) {
    HeadGrads out = HeadParams::zeros_like(params);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        for (std::size_t i = 0; i < params.layers[l].w.a.size(); ++i) {
            double& w = params.layers[l].w.a[i];
            const double old = w;
            w = old + eps;
            const double hi = head_loss(params, cfg, x, label);
            w = old - eps;
            const double lo = head_loss(params, cfg, x, label);
            w = old;
            out.layers[l].w.a[i] = (hi - lo) / (2.0 * eps);
        }
        for (std::size_t i = 0; i < params.layers[l].b.size(); ++i) {
            double& b = params.layers[l].b[i];
            const double old = b;
            b = old + eps;
            const double hi = head_loss(params, cfg, x, label);
            b = old - eps;
            const double lo = head_loss(params, cfg, x, label);
            b = old;
            out.layers[l].b[i] = (hi - lo) / (2.0 * eps);
        }
    }
    return out;
}

HeadGrads analytic_grads(const HeadParams& params, const HeadConfig& cfg,
                         const std::vector<double>& x, int label) {
    ForwardCache cache;
    const std::vector<double> logits = forward(params, cfg, x, true, nullptr, &cache);
    std::vector<double> dlogits;
    if (cfg.output == HeadOutput::Softmax) {
        dlogits = softmax_ce(logits, label).dlogits;
    } else {
        const double p = 1.0 / (1.0 + std::exp(-logits[0]));
        dlogits = {bce(p, label).dp * p * (1.0 - p)};
    }
    return backward(cache, params, cfg, dlogits);
}

} // namespace

TEST_CASE("forward reduces to the affine closed forms") {
    // Zero weights with an output bias: logits equal the bias for any input.
    HeadConfig cfg = small_head({3, 1}, HeadOutput::SigmoidBinary, 1);
    HeadParams params = HeadParams::init(cfg);
    for (double& w : params.layers[0].w.a) w = 0.0;
    params.layers[0].b[0] = 0.75;
    CHECK(forward(params, cfg, std::vector<double>{5, -2, 9}, false)[0] ==
          doctest::Approx(0.75));
    CHECK(forward(params, cfg, std::vector<double>{0, 0, 0}, false)[0] ==
          doctest::Approx(0.75));

    // Single weight [[2]], no bias, x = [3] -> logit 6.
    HeadConfig tiny = small_head({1, 1}, HeadOutput::SigmoidBinary, 2);
    tiny.use_bias = false;
    HeadParams tp = HeadParams::init(tiny);
    tp.layers[0].w.a[0] = 2.0;
    CHECK(forward(tp, tiny, std::vector<double>{3.0}, false)[0] == doctest::Approx(6.0));
}

TEST_CASE("dropout rate zero makes train and eval identical") {
    HeadConfig cfg = small_head({6, 4, 1}, HeadOutput::SigmoidBinary, 3);
    HeadParams params = HeadParams::init(cfg);
    Rng rng(5);
    std::vector<double> x{0.5, -1.0, 2.0, 0.1, -0.3, 1.4};
    const auto train_logits = forward(params, cfg, x, true, &rng);
    const auto eval_logits = forward(params, cfg, x, false);
    CHECK(train_logits[0] == eval_logits[0]);
}

TEST_CASE("predict_prob sigmoid and softmax special points") {
    HeadConfig cfg = small_head({2, 1}, HeadOutput::SigmoidBinary, 4);
    HeadParams params = HeadParams::init(cfg);
    for (double& w : params.layers[0].w.a) w = 0.0;
    params.layers[0].b[0] = 0.0;
    CHECK(predict_prob(params, cfg, std::vector<double>{1, 2})[0] == doctest::Approx(0.5));

    HeadConfig sm = small_head({2, 4}, HeadOutput::Softmax, 5);
    HeadParams smp = HeadParams::init(sm);
    for (double& w : smp.layers[0].w.a) w = 0.0;
    const auto probs = predict_prob(smp, sm, std::vector<double>{3, -1});
    REQUIRE(probs.size() == 4);
    for (double p : probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));

    // Explicit logits [ln 2, 0] via identity weights on a 2-d input.
    HeadConfig two = small_head({2, 2}, HeadOutput::Softmax, 6);
    HeadParams twop = HeadParams::init(two);
    twop.layers[0].w.a = {1.0, 0.0, 0.0, 1.0};
    twop.layers[0].b = {0.0, 0.0};
    const auto p2 = predict_prob(twop, two, std::vector<double>{std::log(2.0), 0.0});
    CHECK(p2[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(p2[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax probabilities sum to one and sigmoid stays in (0,1)") {
    Rng rng(71);
    HeadConfig sm = small_head({5, 8, 4}, HeadOutput::Softmax, 7);
    HeadParams smp = HeadParams::init(sm);
    HeadConfig sg = small_head({5, 8, 1}, HeadOutput::SigmoidBinary, 8);
    HeadParams sgp = HeadParams::init(sg);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> x(5);
        for (double& v : x) v = rng.uniform(-20, 20);
        const auto probs = predict_prob(smp, sm, x);
        double sum = 0.0;
        for (double p : probs) sum += p;
        CHECK(std::abs(sum - 1.0) < 1e-12);
        const double p = predict_prob(sgp, sg, x)[0];
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("backward matches central finite differences") {
    Rng rng(73);
    const std::vector<std::vector<int>> shapes{
        {4, 1},          // 1 layer
        {5, 3, 1},       // 2 layers
        {6, 5, 3, 1},    // 3 layers
    };
    for (const HeadOutput output : {HeadOutput::SigmoidBinary, HeadOutput::Softmax}) {
        for (std::vector<int> dims : shapes) {
            if (output == HeadOutput::Softmax) dims.back() = 3;
            for (int rep = 0; rep < 12; ++rep) {
                HeadConfig cfg = small_head(dims, output, rng.next_u64());
                cfg.use_bias = rep % 2 == 0;
                HeadParams params = HeadParams::init(cfg);
                // Nonzero biases exercise their gradients too.
                for (auto& layer : params.layers) {
                    for (double& b : layer.b) b = rng.uniform(-0.5, 0.5);
                }
                std::vector<double> x(static_cast<std::size_t>(dims.front()));
                for (double& v : x) v = rng.uniform(-2, 2);
                const int label = output == HeadOutput::Softmax
                                      ? static_cast<int>(rng.uniform_index(3))
                                      : static_cast<int>(rng.uniform_index(2));

                const HeadGrads got = analytic_grads(params, cfg, x, label);
                const HeadGrads want = numeric_grads(params, cfg, x, label);
                for (std::size_t l = 0; l < got.layers.size(); ++l) {
                    for (std::size_t i = 0; i < got.layers[l].w.a.size(); ++i) {
                        CHECK(kintest::rel_err(got.layers[l].w.a[i],
                                               want.layers[l].w.a[i]) < 1e-5);
                    }
                    for (std::size_t i = 0; i < got.layers[l].b.size(); ++i) {
                        CHECK(kintest::rel_err(got.layers[l].b[i],
                                               want.layers[l].b[i]) < 1e-5);
                    }
                }
            }
        }
    }
}

TEST_CASE("zero upstream gradient produces zero parameter gradients") {
    HeadConfig cfg = small_head({4, 3, 1}, HeadOutput::SigmoidBinary, 11);
    HeadParams params = HeadParams::init(cfg);
    ForwardCache cache;
    forward(params, cfg, std::vector<double>{1, 2, 3, 4}, true, nullptr, &cache);
    const HeadGrads grads = backward(cache, params, cfg, std::vector<double>{0.0});
    for (const auto& layer : grads.layers) {
        for (double g : layer.w.a) CHECK(g == 0.0);
        for (double g : layer.b) CHECK(g == 0.0);
    }
}

TEST_CASE("disabling bias removes exactly the bias parameters") {
    HeadConfig with = small_head({10, 7, 3, 1}, HeadOutput::SigmoidBinary, 12);
    HeadConfig without = with;
    without.use_bias = false;
    const std::size_t diff = HeadParams::init(with).parameter_count() -
                             HeadParams::init(without).parameter_count();
    CHECK(diff == 7 + 3 + 1); // sum of layer output dims

    HeadParams params = HeadParams::init(without);
    ForwardCache cache;
    forward(params, without, std::vector<double>(10, 0.5), true, nullptr, &cache);
    const HeadGrads grads = backward(cache, params, without, std::vector<double>{1.0});
    for (const auto& layer : grads.layers) CHECK(layer.b.empty());
}

TEST_CASE("dropout masks are reused by backward") {
    // Weights into a dropped unit must receive zero gradient.
    HeadConfig cfg = small_head({3, 8, 1}, HeadOutput::SigmoidBinary, 13);
    cfg.dropout_rate = 0.5;
    HeadParams params = HeadParams::init(cfg);
    Rng rng(17);
    ForwardCache cache;
    forward(params, cfg, std::vector<double>{1.0, -2.0, 0.5}, true, &rng, &cache);
    REQUIRE(cache.masks.size() == 1);
    const HeadGrads grads = backward(cache, params, cfg, std::vector<double>{1.0});
    bool saw_dropped = false;
    for (int unit = 0; unit < 8; ++unit) {
        if (cache.masks[0][static_cast<std::size_t>(unit)] == 0.0) {
            saw_dropped = true;
            for (int c = 0; c < 3; ++c) {
                CHECK(grads.layers[0].w.at(unit, c) == 0.0);
            }
        }
    }
    CHECK(saw_dropped); // rate 0.5 over 8 units; seeded, so stable
}

TEST_CASE("backward rejects eval-mode and mismatched caches") {
    HeadConfig cfg = small_head({3, 2, 1}, HeadOutput::SigmoidBinary, 14);
    HeadParams params = HeadParams::init(cfg);
    ForwardCache cache;
    forward(params, cfg, std::vector<double>{1, 2, 3}, false, nullptr, &cache);
    CHECK_THROWS_AS((void)backward(cache, params, cfg, std::vector<double>{1.0}),
                    ValidationError);

    ForwardCache stale;
    forward(params, cfg, std::vector<double>{1, 2, 3}, true, nullptr, &stale);
    HeadConfig other = small_head({3, 5, 1}, HeadOutput::SigmoidBinary, 15);
    HeadParams other_params = HeadParams::init(other);
    CHECK_THROWS_AS((void)backward(stale, other_params, other, std::vector<double>{1.0}),
                    ValidationError);
}

TEST_CASE("sgd step follows the update rule") {
    HeadConfig cfg = small_head({1, 1}, HeadOutput::SigmoidBinary, 16);
    cfg.use_bias = false;
    HeadParams params = HeadParams::init(cfg);
    params.layers[0].w.a[0] = 1.0;
    HeadGrads grads = HeadParams::zeros_like(params);
    grads.layers[0].w.a[0] = 0.5;

    OptConfig opt_cfg;
    opt_cfg.kind = OptKind::Sgd;
    opt_cfg.lr = 0.1;
    opt_cfg.momentum = 0.0;
    OptState opt(opt_cfg, params);
    opt.step(params, grads);
    CHECK(params.layers[0].w.a[0] == doctest::Approx(0.95).epsilon(1e-15));

    // Zero gradient leaves SGD parameters untouched.
    grads.layers[0].w.a[0] = 0.0;
    opt.step(params, grads);
    CHECK(params.layers[0].w.a[0] == doctest::Approx(0.95).epsilon(1e-15));
}

TEST_CASE("adam step matches the closed-form recurrence") {
    HeadConfig cfg = small_head({1, 1}, HeadOutput::SigmoidBinary, 17);
    cfg.use_bias = false;
    HeadParams params = HeadParams::init(cfg);
    params.layers[0].w.a[0] = 1.0;

    OptConfig oc;
    oc.kind = OptKind::Adam;
    oc.lr = 0.01;
    OptState opt(oc, params);

    // Closed-form shadow of the same recurrence.
    double w = 1.0, m = 0.0, v = 0.0;
    auto shadow_step = [&](double g, long t) {
        m = oc.beta1 * m + (1 - oc.beta1) * g;
        v = oc.beta2 * v + (1 - oc.beta2) * g * g;
        const double mhat = m / (1 - std::pow(oc.beta1, static_cast<double>(t)));
        const double vhat = v / (1 - std::pow(oc.beta2, static_cast<double>(t)));
        w -= oc.lr * mhat / (std::sqrt(vhat) + oc.eps);
    };

    HeadGrads grads = HeadParams::zeros_like(params);
    const double gs[] = {0.5, -0.25, 0.0, 0.0};
    for (long t = 1; t <= 4; ++t) {
        grads.layers[0].w.a[0] = gs[t - 1];
        opt.step(params, grads);
        shadow_step(gs[t - 1], t);
        CHECK(params.layers[0].w.a[0] == doctest::Approx(w).epsilon(1e-15));
    }
    // The zero-gradient steps still moved the weight via decaying moments.
    CHECK(params.layers[0].w.a[0] != doctest::Approx(1.0));
}

TEST_CASE("training steps are bitwise deterministic") {
    auto run = [] {
        HeadConfig cfg = small_head({4, 6, 1}, HeadOutput::SigmoidBinary, 18);
        cfg.dropout_rate = 0.2;
        HeadParams params = HeadParams::init(cfg);
        OptConfig oc;
        OptState opt(oc, params);
        Rng data_rng(19), dropout_rng(20);
        for (int step = 0; step < 100; ++step) {
            std::vector<double> x(4);
            for (double& v : x) v = data_rng.uniform(-1, 1);
            const int y = data_rng.uniform() < 0.5 ? 0 : 1;
            ForwardCache cache;
            const auto logits = forward(params, cfg, x, true, &dropout_rng, &cache);
            const double p = 1.0 / (1.0 + std::exp(-logits[0]));
            const ScalarLoss sl = bce(p, y);
            const HeadGrads grads =
                backward(cache, params, cfg, std::vector<double>{sl.dp * p * (1 - p)});
            opt.step(params, grads);
        }
        return params;
    };
    const HeadParams a = run();
    const HeadParams b = run();
    REQUIRE(a.layers.size() == b.layers.size());
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        CHECK(a.layers[l].w.a == b.layers[l].w.a);
        CHECK(a.layers[l].b == b.layers[l].b);
    }
}

TEST_CASE("checkpoints round-trip bitwise") {
    kintest::TempDir tmp("ckpt");
    HeadConfig cfg = small_head({6, 4, 2}, HeadOutput::Softmax, 21);
    cfg.dropout_rate = 0.25;
    HeadParams params = HeadParams::init(cfg);
    const std::string path = tmp.str() + "/head.ckpt";
    save_checkpoint(path, cfg, params);

    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.config.layer_dims == cfg.layer_dims);
    CHECK(loaded.config.dropout_rate == cfg.dropout_rate);
    CHECK(loaded.config.use_bias == cfg.use_bias);
    CHECK(loaded.config.output == cfg.output);
    REQUIRE(loaded.params.layers.size() == params.layers.size());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        CHECK(loaded.params.layers[l].w.a == params.layers[l].w.a);
        CHECK(loaded.params.layers[l].b == params.layers[l].b);
    }
}

TEST_CASE("checkpoint loading rejects bad magic and versions") {
    kintest::TempDir tmp("ckpt_bad");
    const std::string good = tmp.str() + "/good.ckpt";
    HeadConfig cfg = small_head({2, 1}, HeadOutput::SigmoidBinary, 22);
    save_checkpoint(good, cfg, HeadParams::init(cfg));

    std::string content = kintest::read_file(good);
    {
        std::string bad = content;
        bad.replace(0, 7, "BADMAGI");
        kintest::write_file(tmp.path() / "bad_magic.ckpt", bad);
        CHECK_THROWS_AS((void)load_checkpoint(tmp.str() + "/bad_magic.ckpt"),
                        ValidationError);
    }
    {
        std::string bad = content;
        bad.replace(8, 1, "9"); // version digit
        kintest::write_file(tmp.path() / "bad_version.ckpt", bad);
        CHECK_THROWS_AS((void)load_checkpoint(tmp.str() + "/bad_version.ckpt"),
                        ValidationError);
    }
    CHECK_THROWS_AS((void)load_checkpoint(tmp.str() + "/missing.ckpt"), IoError);
}

TEST_CASE("symmetric fusion makes the verdict order-invariant for any params") {
    const FusionConfig fusion = FusionConfig::symmetric({"c"});
    Rng rng(83);
    HeadConfig cfg = small_head({4 * 6, 5, 1}, HeadOutput::SigmoidBinary, 23);
    for (int rep = 0; rep < 50; ++rep) {
        cfg.seed = rng.next_u64();
        const HeadParams params = HeadParams::init(cfg);
        std::vector<double> a(6), b(6);
        for (double& v : a) v = rng.uniform(-2, 2);
        for (double& v : b) v = rng.uniform(-2, 2);
        const double pab =
            predict_prob(params, cfg, fuse(fusion, {{a, b}}).values)[0];
        const double pba =
            predict_prob(params, cfg, fuse(fusion, {{b, a}}).values)[0];
        CHECK(pab == pba); // exact
    }
}
