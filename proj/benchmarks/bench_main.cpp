#include <benchmark/benchmark.h>

#include "dsmcd/datapipe.hpp"
#include "dsmcd/model.hpp"
#include "dsmcd/objective.hpp"
#include "dsmcd/synthcity.hpp"
#include "dsmcd/train.hpp"

using namespace dsmcd;

static void SceneGeneration(benchmark::State& state) {
    synthcity::SceneConfig cfg;
    cfg.width = cfg.height = static_cast<int>(state.range(0));
    uint64_t seed = 0;
    for (auto _ : state) {
        cfg.seed = seed++;
        auto scene = synthcity::generate_scene(cfg);
        benchmark::DoNotOptimize(scene.dsm_post.data());
    }
}
BENCHMARK(SceneGeneration)->Arg(128)->Arg(256);

static void ChangeMapLabeling(benchmark::State& state) {
    synthcity::SceneConfig cfg;
    cfg.width = cfg.height = static_cast<int>(state.range(0));
    cfg.seed = 7;
    auto scene = synthcity::generate_scene(cfg);
    auto delta = synthcity::compute_height_change(scene.dsm_pre, scene.dsm_post);
    for (auto _ : state) {
        auto labels = synthcity::generate_change_map(delta, scene.relevance_mask,
                                                     scene.buildings_pre, scene.buildings_post,
                                                     synthcity::default_tau_noise(cfg));
        benchmark::DoNotOptimize(labels.semantic.data());
    }
}
BENCHMARK(ChangeMapLabeling)->Arg(128)->Arg(512);

static model::ModelConfig tiny_model_config() {
    model::ModelConfig mc;
    mc.backbone.embed_dims = {8, 16, 32, 64};
    mc.backbone.num_heads = {1, 2, 4, 8};
    mc.backbone.depths = {1, 1, 1, 1};
    mc.decoder.decode_dim = 16;
    mc.decoder.head_hidden = 8;
    return mc;
}

static void ModelForwardTiny(benchmark::State& state) {
    model::ChangeModel m(tiny_model_config());
    const int hw = static_cast<int>(state.range(0));
    RasterD dsm(1, hw, hw, 0.1);
    RasterD image(3, hw, hw, 0.2);
    for (auto _ : state) {
        auto out = m.forward(dsm, image);
        benchmark::DoNotOptimize(out.sem_logits->value.data());
    }
}
BENCHMARK(ModelForwardTiny)->Arg(32)->Arg(64);

static void ModelForwardBackwardDefault(benchmark::State& state) {
    model::ModelConfig mc;  // default desk-scale dims
    model::ChangeModel m(mc);
    const int hw = static_cast<int>(state.range(0));
    RasterD dsm(1, hw, hw, 0.1);
    RasterD image(3, hw, hw, 0.2);
    LabelMap labels(1, hw, hw, 0);
    RasterF gt_h(1, hw, hw, 0.0f);
    MaskU8 overlap(1, hw, hw, 0);

    datapipe::SamplePair sp;
    sp.gt_semantic = labels;
    sp.gt_height = gt_h;
    sp.gt_pseudo = labels;
    sp.overlap_mask = overlap;

    train::PreparedSample ps;
    ps.sample = &sp;
    ps.input.dsm = dsm;
    ps.input.image = image;
    ps.gt_height_norm.assign(static_cast<size_t>(hw) * hw, 0.0);

    objective::LossWeights lw;
    objective::ClassWeights cw;
    for (auto _ : state) {
        auto out = m.forward(dsm, image);
        auto losses = train::compute_losses(m, out, ps, lw, cw, 0.0);
        nn::backward(losses.total);
        m.params().zero_grads();
        benchmark::DoNotOptimize(losses.total->value[0]);
    }
}
BENCHMARK(ModelForwardBackwardDefault)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
