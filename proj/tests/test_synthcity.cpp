#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dsmcd/synthcity.hpp"

using namespace dsmcd;
using namespace dsmcd::synthcity;

namespace {

// Literal per-pixel reading of the labeling rule, independent of the
// implementation: threshold small deltas to zero, then classify by the
// relevance-weighted sign and the period footprints.
ChangeLabels label_oracle(const RasterF& delta_h, const RelevanceMask& relevance,
                          const MaskU8& pre, const MaskU8& post, double tau) {
    const int h = delta_h.height(), w = delta_h.width();
    ChangeLabels out;
    out.semantic = LabelMap(1, h, w, kBackground);
    out.height_change = RasterF(1, h, w, 0.0f);
    out.raw_delta_h = delta_h;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double dh = delta_h.at(y, x);
            if (std::fabs(dh) < tau) dh = 0.0;
            const int m = relevance.at(y, x);
            if (dh * m < 0 && pre.at(y, x)) {
                out.semantic.at(y, x) = kDemolished;
                out.height_change.at(y, x) = static_cast<float>(delta_h.at(y, x) * m);
            } else if (dh * m > 0 && post.at(y, x)) {
                out.semantic.at(y, x) = kNewlyBuilt;
                out.height_change.at(y, x) = static_cast<float>(delta_h.at(y, x) * m);
            }
        }
    return out;
}

SceneConfig base_config(uint64_t seed) {
    SceneConfig c;
    c.seed = seed;
    return c;
}

} // namespace

TEST_CASE("generate_scene is deterministic for a fixed seed") {
    SceneConfig c = base_config(7);
    Scene a = generate_scene(c);
    Scene b = generate_scene(c);
    CHECK(a.dsm_pre == b.dsm_pre);
    CHECK(a.dsm_post == b.dsm_post);
    CHECK(a.image_post == b.image_post);
    CHECK(a.buildings_pre == b.buildings_pre);
    CHECK(a.buildings_post == b.buildings_post);
    CHECK(a.relevance_mask == b.relevance_mask);
}

TEST_CASE("no injected change leaves only noise in the difference") {
    SceneConfig c = base_config(3);
    c.num_new = 0;
    c.num_demolished = 0;
    c.num_rebuilt = 0;
    Scene s = generate_scene(c);
    RasterF dh = compute_height_change(s.dsm_pre, s.dsm_post);
    // every |delta| stays well under the labeling threshold's reach:
    // noise difference has sigma*sqrt(2), 3 sigma rule catches it
    auto labels = generate_change_map(dh, s.relevance_mask, s.buildings_pre, s.buildings_post,
                                      default_tau_noise(c));
    size_t changed = 0;
    for (uint8_t v : labels.semantic.raw()) changed += v != kBackground;
    // a tiny number of speckle pixels can exceed 3 sigma, but never within
    // footprints that exist in both periods at the same height; with all
    // footprints static, demolished/newly-built require |dh| >= tau inside
    // them, which has probability ~2e-3 per pixel for sigma*sqrt(2) noise
    CHECK(changed < s.dsm_pre.pixels() / 100);
    CHECK(s.buildings_pre == s.buildings_post);
}

TEST_CASE("num_new components appear above the noise floor") {
    SceneConfig c = base_config(11);
    c.num_new = 3;
    c.num_demolished = 0;
    c.num_rebuilt = 0;
    Scene s = generate_scene(c);
    RasterF dh = compute_height_change(s.dsm_pre, s.dsm_post);
    // oracle: threshold at 3*noise_sigma and count 8-connected components
    LabelMap above(1, dh.height(), dh.width(), 0);
    for (int y = 0; y < dh.height(); ++y)
        for (int x = 0; x < dh.width(); ++x)
            above.at(y, x) = dh.at(y, x) > 3.0 * c.noise_sigma ? 1 : 0;
    CHECK(count_components(above, 1) == 3);
}

TEST_CASE("generate_scene rejects footprint area beyond 80%") {
    SceneConfig c = base_config(1);
    c.width = c.height = 32;
    c.num_buildings_pre = 300;
    c.num_demolished = 0;
    c.num_rebuilt = 0;
    CHECK_THROWS_AS(generate_scene(c), std::invalid_argument);
}

TEST_CASE("SceneConfig validation") {
    SceneConfig c = base_config(0);
    c.occlusion_rate = 1.5;
    CHECK_THROWS_AS(generate_scene(c), std::invalid_argument);
    c = base_config(0);
    c.height_min_m = 0.0;
    CHECK_THROWS_AS(generate_scene(c), std::invalid_argument);
    c = base_config(0);
    c.num_demolished = 10;  // exceeds pre-period population
    CHECK_THROWS_AS(generate_scene(c), std::invalid_argument);
}

TEST_CASE("compute_height_change basics") {
    RasterF a(1, 4, 4, 2.0f);
    RasterF b = a;
    RasterF zero = compute_height_change(a, b);
    for (float v : zero.raw()) CHECK(v == 0.0f);

    RasterF pre(1, 3, 3, 0.0f);
    RasterF post(1, 3, 3, 0.0f);
    post.at(1, 2) = 10.0f;
    RasterF dh = compute_height_change(pre, post);
    CHECK(dh.at(1, 2) == 10.0f);
    CHECK(dh.at(0, 0) == 0.0f);

    RasterF bad(1, 2, 2);
    CHECK_THROWS_AS(compute_height_change(a, bad), std::invalid_argument);
}

TEST_CASE("compute_height_change matches element-wise oracle on random pair") {
    Rng rng(99);
    RasterF pre(1, 8, 8), post(1, 8, 8);
    for (auto& v : pre.raw()) v = static_cast<float>(rng.uniform(-5, 20));
    for (auto& v : post.raw()) v = static_cast<float>(rng.uniform(-5, 20));
    RasterF dh = compute_height_change(pre, post);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            CHECK(dh.at(y, x) == post.at(y, x) - pre.at(y, x));
}

TEST_CASE("generate_change_map single-pixel rule table") {
    auto run = [](float dh, int8_t m, bool pre, bool post) {
        RasterF delta(1, 1, 1, dh);
        RelevanceMask rel(1, 1, 1, m);
        MaskU8 bpre(1, 1, 1, pre ? 1 : 0);
        MaskU8 bpost(1, 1, 1, post ? 1 : 0);
        return generate_change_map(delta, rel, bpre, bpost, 0.5).semantic.at(0, 0);
    };
    CHECK(run(+5.0f, +1, false, true) == kNewlyBuilt);
    CHECK(run(-4.0f, +1, true, false) == kDemolished);
    // sign flipped by relevance but no early-period footprint
    CHECK(run(+5.0f, -1, false, true) == kBackground);
    // rebuilt overlap: both footprints, positive delta
    CHECK(run(+3.0f, +1, true, true) == kNewlyBuilt);
    // sub-threshold delta is treated as zero
    CHECK(run(+0.3f, +1, false, true) == kBackground);
}

TEST_CASE("generate_change_map rejects bad relevance and dimension mismatch") {
    RasterF delta(1, 2, 2, 1.0f);
    RelevanceMask rel(1, 2, 2, 0);  // invalid value
    MaskU8 m(1, 2, 2, 1);
    CHECK_THROWS_AS(generate_change_map(delta, rel, m, m, 0.1), std::invalid_argument);
    RelevanceMask ok(1, 1, 2, 1);
    CHECK_THROWS_AS(generate_change_map(delta, ok, m, m, 0.1), std::invalid_argument);
}

TEST_CASE("full scenes match the brute-force rule interpreter") {
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        SceneConfig c = base_config(seed);
        c.occlusion_rate = 0.5;
        Scene s = generate_scene(c);
        RasterF dh = compute_height_change(s.dsm_pre, s.dsm_post);
        const double tau = default_tau_noise(c);
        ChangeLabels got = generate_change_map(dh, s.relevance_mask, s.buildings_pre,
                                               s.buildings_post, tau);
        ChangeLabels want =
            label_oracle(dh, s.relevance_mask, s.buildings_pre, s.buildings_post, tau);
        CHECK(got.semantic == want.semantic);
        CHECK(got.height_change == want.height_change);
    }
}

TEST_CASE("label invariants: closure and sign coherence") {
    SceneConfig c = base_config(21);
    c.occlusion_rate = 0.4;
    Scene s = generate_scene(c);
    RasterF dh = compute_height_change(s.dsm_pre, s.dsm_post);
    ChangeLabels labels = generate_change_map(dh, s.relevance_mask, s.buildings_pre,
                                              s.buildings_post, default_tau_noise(c));
    for (int y = 0; y < labels.semantic.height(); ++y)
        for (int x = 0; x < labels.semantic.width(); ++x) {
            const uint8_t cls = labels.semantic.at(y, x);
            const float hc = labels.height_change.at(y, x);
            CHECK(cls <= 2);
            if (cls == kBackground) CHECK(hc == 0.0f);
            if (cls == kDemolished) CHECK(hc < 0.0f);
            if (cls == kNewlyBuilt) CHECK(hc > 0.0f);
        }
}

TEST_CASE("occlusion flips desynchronize semantic support from the raw delta") {
    SceneConfig c = base_config(5);
    c.occlusion_rate = 1.0;  // every changed building flips
    Scene s = generate_scene(c);
    RasterF dh = compute_height_change(s.dsm_pre, s.dsm_post);
    const double tau = default_tau_noise(c);
    ChangeLabels labels =
        generate_change_map(dh, s.relevance_mask, s.buildings_pre, s.buildings_post, tau);
    size_t sem_on = 0, raw_on = 0, mismatch = 0;
    for (int y = 0; y < dh.height(); ++y)
        for (int x = 0; x < dh.width(); ++x) {
            const bool sem = labels.semantic.at(y, x) != kBackground;
            const bool raw = std::fabs(labels.raw_delta_h.at(y, x)) >= tau;
            sem_on += sem;
            raw_on += raw;
            mismatch += sem != raw;
        }
    CHECK(raw_on > 0);
    CHECK(mismatch > 0);  // the two change supports genuinely differ
}

TEST_CASE("split_tiles grid arithmetic and identity") {
    SceneConfig c = base_config(2);
    c.width = c.height = 64;
    Scene s = generate_scene(c);
    RasterF dh = compute_height_change(s.dsm_pre, s.dsm_post);
    ChangeLabels labels = generate_change_map(dh, s.relevance_mask, s.buildings_pre,
                                              s.buildings_post, default_tau_noise(c));

    auto tiles = split_tiles(s, labels, 32);
    CHECK(tiles.size() == 4);

    auto one = split_tiles(s, labels, 64);
    REQUIRE(one.size() == 1);
    CHECK(one[0].dsm_pre == s.dsm_pre);
    CHECK(one[0].gt_semantic == labels.semantic);

    CHECK_THROWS_AS(split_tiles(s, labels, 48), std::invalid_argument);
}

TEST_CASE("split_tiles keep_empty=false drops change-free tiles") {
    // confine all change to one quadrant of a 64x64 scene
    SceneConfig c = base_config(0);
    c.width = c.height = 64;
    c.num_buildings_pre = 1;
    c.num_new = 0;
    c.num_demolished = 1;
    c.num_rebuilt = 0;
    Scene s;
    // hand-built scene: single demolished building in the top-left quadrant
    s.dsm_pre = RasterF(1, 64, 64, 0.0f);
    s.dsm_post = RasterF(1, 64, 64, 0.0f);
    s.image_post = RasterF(3, 64, 64, 0.5f);
    s.buildings_pre = MaskU8(1, 64, 64, 0);
    s.buildings_post = MaskU8(1, 64, 64, 0);
    s.relevance_mask = RelevanceMask(1, 64, 64, 1);
    for (int y = 4; y < 12; ++y)
        for (int x = 4; x < 12; ++x) {
            s.dsm_pre.at(y, x) = 10.0f;
            s.buildings_pre.at(y, x) = 1;
        }
    RasterF dh = compute_height_change(s.dsm_pre, s.dsm_post);
    ChangeLabels labels =
        generate_change_map(dh, s.relevance_mask, s.buildings_pre, s.buildings_post, 0.5);
    auto kept = split_tiles(s, labels, 32, false);
    CHECK(kept.size() == 1);
    auto all = split_tiles(s, labels, 32, true);
    CHECK(all.size() == 4);
}

TEST_CASE("compute_normalization_stats quantiles") {
    TileSample t;
    t.gt_height = RasterF(1, 4, 4, 0.0f);
    std::vector<TileSample> tiles;
    tiles.push_back(t);

    SUBCASE("degenerate all-zero distribution") {
        auto hs = compute_normalization_stats(tiles, 0.995);
        CHECK(hs.min_m == 0.0);
        CHECK(hs.max_m == 0.0);
    }

    SUBCASE("coverage 1.0 returns global extrema") {
        tiles[0].gt_height.at(0, 0) = -12.0f;
        tiles[0].gt_height.at(3, 3) = 31.0f;
        auto hs = compute_normalization_stats(tiles, 1.0);
        CHECK(hs.min_m == -12.0);
        CHECK(hs.max_m == 31.0);
    }

    SUBCASE("matches a sort-based oracle on random data") {
        Rng rng(5);
        TileSample big;
        big.gt_height = RasterF(1, 32, 32);
        for (auto& v : big.gt_height.raw()) v = static_cast<float>(rng.uniform(-30, 60));
        std::vector<TileSample> many{big};
        const double coverage = 0.9;
        auto hs = compute_normalization_stats(many, coverage);

        std::vector<float> sorted(big.gt_height.raw());
        std::sort(sorted.begin(), sorted.end());
        const size_t n = sorted.size();
        auto idx = [n](double p) {
            return static_cast<size_t>(std::llround(p * static_cast<double>(n - 1)));
        };
        CHECK(hs.min_m == doctest::Approx(sorted[idx(0.05)]));
        CHECK(hs.max_m == doctest::Approx(sorted[idx(0.95)]));
    }

    SUBCASE("rejects empty input") {
        std::vector<TileSample> none;
        CHECK_THROWS_AS(compute_normalization_stats(none, 0.995), std::invalid_argument);
    }
}

TEST_CASE("dataset_stats counts objects, pixels and tiles") {
    SceneConfig c = base_config(13);
    c.num_buildings_pre = 5;
    c.num_new = 3;
    c.num_demolished = 2;
    c.num_rebuilt = 0;
    c.occlusion_rate = 0.0;
    Scene s = generate_scene(c);
    RasterF dh = compute_height_change(s.dsm_pre, s.dsm_post);
    ChangeLabels labels = generate_change_map(dh, s.relevance_mask, s.buildings_pre,
                                              s.buildings_post, default_tau_noise(c));
    auto tiles = split_tiles(s, labels, c.width);
    DatasetStats st = dataset_stats(tiles);
    CHECK(st.objects_newly_built == 3);
    CHECK(st.objects_demolished == 2);
    CHECK(st.tiles_with_change == 1);
    CHECK(st.cum_height_newly_built.back().cumulative_fraction == doctest::Approx(1.0));
}

TEST_CASE("dataset_stats proportions") {
    SUBCASE("no-change scene has zero changed proportion") {
        TileSample t;
        t.gt_semantic = LabelMap(1, 16, 16, 0);
        t.gt_height = RasterF(1, 16, 16, 0.0f);
        DatasetStats st = dataset_stats({t});
        CHECK(st.changed_pixel_proportion == 0.0);
        CHECK(st.tiles_with_change == 0);
    }
    SUBCASE("10 demolished pixels in 1000 total is 1 percent") {
        // 1000 pixels: 25x40 grid
        TileSample t;
        t.gt_semantic = LabelMap(1, 25, 40, 0);
        t.gt_height = RasterF(1, 25, 40, 0.0f);
        for (int x = 0; x < 10; ++x) {
            t.gt_semantic.at(5, x) = synthcity::kDemolished;
            t.gt_height.at(5, x) = -4.0f;
        }
        DatasetStats st = dataset_stats({t});
        CHECK(st.pixels_total == 1000);
        CHECK(st.changed_pixel_proportion == doctest::Approx(0.01));
    }
    SUBCASE("empty input gives a zero report") {
        DatasetStats st = dataset_stats({});
        CHECK(st.tiles_total == 0);
        CHECK(st.pixels_total == 0);
    }
}
