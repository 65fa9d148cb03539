#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dsmcd/checkpoint.hpp"
#include "dsmcd/datapipe.hpp"
#include "dsmcd/model.hpp"
#include "grad_check.hpp"

using namespace dsmcd;
using namespace dsmcd::nn;
using namespace dsmcd::model;

namespace {

ModelConfig tiny_config() {
    ModelConfig mc;
    mc.backbone.embed_dims = {8, 16, 32, 64};
    mc.backbone.num_heads = {1, 2, 4, 8};
    mc.backbone.depths = {1, 1, 1, 1};
    mc.decoder.decode_dim = 16;
    mc.decoder.head_hidden = 8;
    return mc;
}

} // namespace

TEST_CASE("soft threshold point values") {
    CHECK(soft_threshold(0.0, 0.5) == 0.0);
    CHECK(soft_threshold(0.0, 0.01) == 0.0);
    // 2*sigmoid(1) - 1
    CHECK(soft_threshold(0.5, 0.5) == doctest::Approx(0.46211715726).epsilon(1e-9));
    // 2*sigmoid(-6) - 1
    CHECK(soft_threshold(-3.0, 0.5) == doctest::Approx(-0.99505475368673).epsilon(1e-9));
    CHECK_THROWS_AS(soft_threshold(1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(soft_threshold(1.0, -0.5), std::invalid_argument);
}

TEST_CASE("soft threshold approximates the hard sign as t shrinks") {
    // |T_s(x; 0.05) - T_h(x)| <= 1e-4 for |x| >= 0.5
    for (double x = 0.5; x <= 4.0; x += 0.25) {
        CHECK(std::abs(soft_threshold(x, 0.05) - 1.0) <= 1e-4);
        CHECK(std::abs(soft_threshold(-x, 0.05) + 1.0) <= 1e-4);
    }
    // pointwise limit at t = 1e-3 for x away from zero
    CHECK(std::abs(soft_threshold(0.1, 1e-3) - 1.0) < 1e-9);
    CHECK(std::abs(soft_threshold(-0.1, 1e-3) + 1.0) < 1e-9);
}

TEST_CASE("soft threshold is odd, monotone, with slope 1/(2t) at zero") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(-10, 10);
        const double t = rng.uniform(0.05, 2.0);
        CHECK(soft_threshold(-x, t) == -soft_threshold(x, t));  // exactly odd
    }
    for (int i = 0; i < 1000; ++i) {
        const double t = rng.uniform(0.05, 2.0);
        double x1 = rng.uniform(-5, 5), x2 = rng.uniform(-5, 5);
        if (x1 > x2) std::swap(x1, x2);
        if (x1 == x2) continue;
        CHECK(soft_threshold(x1, t) < soft_threshold(x2, t));
    }
    for (double t : {0.05, 0.1, 0.5, 1.0})
        CHECK(soft_threshold_grad(0.0, t) == doctest::Approx(1.0 / (2.0 * t)).epsilon(1e-12));
}

TEST_CASE("soft threshold analytic gradient matches central differences") {
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const double t = rng.uniform(0.05, 1.0);
        const double x = rng.uniform(-20.0 * t, 20.0 * t);  // |x/t| <= 20
        const double h = 1e-6 * std::max(1.0, std::abs(x));
        const double numeric = (soft_threshold(x + h, t) - soft_threshold(x - h, t)) / (2 * h);
        const double analytic = soft_threshold_grad(x, t);
        CHECK(analytic == doctest::Approx(numeric).epsilon(1e-6));
    }
}

TEST_CASE("pseudo probability construction") {
    auto s = constant({1, 1, 3}, {0.0, 0.999, -0.5});
    auto p = signed_scalar_to_probs(s);
    // s = 0: (1, 0, 0)
    CHECK(p->value[0] == doctest::Approx(1.0));
    CHECK(p->value[3] == doctest::Approx(0.0));
    CHECK(p->value[6] == doctest::Approx(0.0));
    // s -> 1: positive mass -> 1
    CHECK(p->value[1] == doctest::Approx(0.001));
    CHECK(p->value[4] == doctest::Approx(0.999));
    // s = -0.5: (0.5, 0, 0.5)
    CHECK(p->value[2] == doctest::Approx(0.5));
    CHECK(p->value[5] == doctest::Approx(0.0));
    CHECK(p->value[8] == doctest::Approx(0.5));
}

TEST_CASE("model outputs honor the full contract at 128x128") {
    ModelConfig mc = tiny_config();
    ChangeModel m(mc);
    RasterD dsm(1, 128, 128, 0.1);
    RasterD img(3, 128, 128, -0.2);
    ModelOutputs out = m.forward(dsm, img);

    REQUIRE(out.sem_logits);
    CHECK(out.sem_logits->shape == std::vector<int>{3, 128, 128});
    REQUIRE(out.height_norm);
    CHECK(out.height_norm->shape == std::vector<int>{1, 128, 128});
    REQUIRE(out.pseudo_probs);
    CHECK(out.pseudo_probs->shape == std::vector<int>{3, 128, 128});

    for (double v : out.sem_logits->value) CHECK(std::isfinite(v));
    for (double v : out.height_norm->value) {
        CHECK(v > -1.0);
        CHECK(v < 1.0);
    }
    const int n = 128 * 128;
    for (int i = 0; i < n; ++i) {
        const double sum = out.pseudo_probs->value[i] + out.pseudo_probs->value[n + i] +
                           out.pseudo_probs->value[2 * n + i];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    // argmax over logits lands in {0,1,2} by construction; spot a few pixels
    for (int i : {0, 500, 16000}) {
        int arg = 0;
        double best = out.sem_logits->value[i];
        for (int c = 1; c < 3; ++c)
            if (out.sem_logits->value[c * n + i] > best) {
                best = out.sem_logits->value[c * n + i];
                arg = c;
            }
        CHECK(arg >= 0);
        CHECK(arg <= 2);
    }
}

TEST_CASE("argmax of pseudo probabilities matches the scalar's sign once decisive") {
    // with probs (1-|s|, max(s,0), max(-s,0)) the sign class dominates
    // exactly when |s| > 0.5
    Rng rng(3);
    for (int trial = 0; trial < 500; ++trial) {
        double s = rng.uniform(-0.999, 0.999);
        if (std::abs(s) <= 0.5) continue;
        auto sv = constant({1, 1, 1}, {s});
        auto p = signed_scalar_to_probs(sv);
        int arg = 0;
        double best = p->value[0];
        for (int c = 1; c < 3; ++c)
            if (p->value[c] > best) {
                best = p->value[c];
                arg = c;
            }
        CHECK(arg == (s > 0 ? 1 : 2));
    }
}

TEST_CASE("task gates prune outputs and parameters") {
    ModelConfig mc = tiny_config();
    mc.gates = {true, false, false};
    ChangeModel sem_only(mc);
    RasterD dsm(1, 32, 32, 0.3);
    RasterD img(3, 32, 32, 0.1);
    ModelOutputs out = sem_only.forward(dsm, img);
    CHECK(out.sem_logits);
    CHECK_FALSE(out.height_norm);
    CHECK_FALSE(out.pseudo_scalar);
    CHECK_FALSE(out.pseudo_probs);
    CHECK(sem_only.params().count_with_prefix("head.height") == 0);
    CHECK(sem_only.params().count_with_prefix("head.pseudo") == 0);

    mc.gates = {false, true, true};
    ChangeModel no_sem(mc);
    ModelOutputs out2 = no_sem.forward(dsm, img);
    CHECK_FALSE(out2.sem_logits);
    CHECK(out2.height_norm);
    CHECK(out2.pseudo_probs);

    mc.gates = {false, false, false};
    CHECK_THROWS_AS(ChangeModel{mc}, std::invalid_argument);
}

TEST_CASE("forward is deterministic and rejects bad dimensions") {
    ModelConfig mc = tiny_config();
    ChangeModel m(mc);
    RasterD dsm(1, 32, 32);
    RasterD img(3, 32, 32);
    Rng rng(4);
    for (auto& v : dsm.raw()) v = rng.uniform(-1, 1);
    for (auto& v : img.raw()) v = rng.uniform(-1, 1);
    ModelOutputs a = m.forward(dsm, img);
    ModelOutputs b = m.forward(dsm, img);
    CHECK(a.sem_logits->value == b.sem_logits->value);
    CHECK(a.height_norm->value == b.height_norm->value);
    CHECK(a.pseudo_probs->value == b.pseudo_probs->value);

    RasterD bad(1, 33, 32);
    RasterD bad_img(3, 33, 32);
    CHECK_THROWS_AS(m.forward(bad, bad_img), std::invalid_argument);
}

TEST_CASE("model config document round-trips") {
    ModelConfig mc = tiny_config();
    mc.decoder.temperature = 0.1;
    mc.gates = {true, true, false};
    mc.share_backbone_weights = true;
    ModelConfig back = ModelConfig::from_json(mc.to_json());
    CHECK(back.backbone.embed_dims == mc.backbone.embed_dims);
    CHECK(back.decoder.temperature == doctest::Approx(0.1));
    CHECK(back.gates.pseudo == false);
    CHECK(back.share_backbone_weights == true);
}

TEST_CASE("checkpointed parameters restore the exact function") {
    namespace fs = std::filesystem;
    ModelConfig mc = tiny_config();
    ChangeModel m(mc);
    RasterD dsm(1, 32, 32, 0.2);
    RasterD img(3, 32, 32, -0.1);
    ModelOutputs before = m.forward(dsm, img);

    const auto path = fs::temp_directory_path() / "dsmcd_test_model.ckpt";
    checkpoint::save(path, m);
    auto loaded = checkpoint::load(path);
    ModelOutputs after = loaded->forward(dsm, img);
    CHECK(before.sem_logits->value == after.sem_logits->value);
    CHECK(before.height_norm->value == after.height_norm->value);
    fs::remove(path);
}

TEST_CASE("parameter count is additive and matches simple layers") {
    Rng rng(5);
    ParamStore ps;
    Linear lin(ps, "lin", 4, 3, rng);
    CHECK(ps.total_scalars() == 15);  // 4*3 + 3

    ParamStore two;
    Linear a(two, "a", 4, 3, rng);
    Linear b(two, "b", 7, 2, rng);
    CHECK(two.total_scalars() == 15 + 16);
    CHECK(two.count_with_prefix("a.") == 15);
    CHECK(two.count_with_prefix("b.") == 16);
}
