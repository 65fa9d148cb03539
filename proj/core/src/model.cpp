#include "dsmcd/model.hpp"

#include <stdexcept>

#include <json.hpp>

namespace dsmcd::model {

using namespace nn;
using nlohmann::json;

std::string ModelConfig::to_json() const {
    json j;
    j["backbone"] = {{"embed_dims", backbone.embed_dims},
                     {"depths", backbone.depths},
                     {"num_heads", backbone.num_heads},
                     {"sr_ratios", backbone.sr_ratios},
                     {"patch_strides", backbone.patch_strides},
                     {"mlp_ratio", backbone.mlp_ratio}};
    j["decoder"] = {{"decode_dim", decoder.decode_dim},
                    {"head_hidden", decoder.head_hidden},
                    {"temperature", decoder.temperature}};
    j["gates"] = {{"semantic", gates.semantic}, {"height", gates.height},
                  {"pseudo", gates.pseudo}};
    j["share_backbone_weights"] = share_backbone_weights;
    j["init_seed"] = init_seed;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    if (j.contains("backbone")) {
        const auto& b = j["backbone"];
        auto arr4 = [&](const char* key, std::array<int, 4>& out) {
            if (!b.contains(key)) return;
            for (int i = 0; i < 4; ++i) out[i] = b[key][i].get<int>();
        };
        arr4("embed_dims", c.backbone.embed_dims);
        arr4("depths", c.backbone.depths);
        arr4("num_heads", c.backbone.num_heads);
        arr4("sr_ratios", c.backbone.sr_ratios);
        arr4("patch_strides", c.backbone.patch_strides);
        c.backbone.mlp_ratio = b.value("mlp_ratio", c.backbone.mlp_ratio);
    }
    if (j.contains("decoder")) {
        const auto& d = j["decoder"];
        c.decoder.decode_dim = d.value("decode_dim", c.decoder.decode_dim);
        c.decoder.head_hidden = d.value("head_hidden", c.decoder.head_hidden);
        c.decoder.temperature = d.value("temperature", c.decoder.temperature);
    }
    if (j.contains("gates")) {
        c.gates.semantic = j["gates"].value("semantic", true);
        c.gates.height = j["gates"].value("height", true);
        c.gates.pseudo = j["gates"].value("pseudo", true);
    }
    c.share_backbone_weights = j.value("share_backbone_weights", false);
    c.init_seed = j.value("init_seed", uint64_t{42});
    return c;
}

ChangeModel::ChangeModel(const ModelConfig& config) : config_(config) {
    config_.backbone.validate();
    config_.decoder.validate();
    if (!config_.gates.any())
        throw std::invalid_argument("ChangeModel: at least one task gate must be on");
    Rng rng(config_.init_seed);
    backbone_ = DualBackbone(params_, config_.backbone, config_.share_backbone_weights, rng);
    cfm_ = Cfm(params_, config_.backbone, rng);
    decoder_ = MlpDecoder(params_, config_.backbone, config_.decoder, rng);
    const int dd = config_.decoder.decode_dim;
    const int hh = config_.decoder.head_hidden;
    if (config_.gates.semantic)
        sem_head_ = OutputHead(params_, "head.semantic", dd, hh, 3, rng);
    if (config_.gates.height)
        height_head_ = OutputHead(params_, "head.height", dd, hh, 1, rng);
    if (config_.gates.pseudo)
        pseudo_head_ = OutputHead(params_, "head.pseudo", dd, hh, 1, rng);
}

VarPtr raster_to_variable(const RasterD& r, bool requires_grad) {
    std::vector<double> data = r.raw();
    auto v = requires_grad
                 ? leaf({r.channels(), r.height(), r.width()}, std::move(data))
                 : nn::constant({r.channels(), r.height(), r.width()}, std::move(data));
    return v;
}

ModelOutputs ChangeModel::forward(const RasterD& dsm_norm, const RasterD& image_norm) const {
    return forward(raster_to_variable(dsm_norm), raster_to_variable(image_norm));
}

ModelOutputs ChangeModel::forward(const VarPtr& dsm_chw, const VarPtr& image_chw) const {
    if (dsm_chw->shape.size() != 3 || image_chw->shape.size() != 3 || dsm_chw->dim(0) != 1 ||
        image_chw->dim(0) != 3)
        throw std::invalid_argument("ChangeModel: expected [1,H,W] DSM and [3,H,W] image");
    if (dsm_chw->dim(1) != image_chw->dim(1) || dsm_chw->dim(2) != image_chw->dim(2))
        throw std::invalid_argument("ChangeModel: input dimensions disagree");
    const int h = dsm_chw->dim(1), w = dsm_chw->dim(2);
    const int stride = config_.backbone.total_stride();
    if (h % stride != 0 || w % stride != 0)
        throw std::invalid_argument("ChangeModel: input size must be divisible by " +
                                    std::to_string(stride));

    FeaturePyramid xh = backbone_.forward_dsm(dsm_chw);
    FeaturePyramid xi = backbone_.forward_image(image_chw);
    FusedPyramid fused = cfm_.forward(xh, xi);
    PyramidLevel decode_feat = decoder_.forward(fused);

    ModelOutputs out;
    if (config_.gates.semantic) out.sem_logits = sem_head_.forward(decode_feat, h, w);
    if (config_.gates.height)
        out.height_norm = tanh_op(height_head_.forward(decode_feat, h, w));
    if (config_.gates.pseudo) {
        out.pseudo_scalar = soft_threshold_op(pseudo_head_.forward(decode_feat, h, w),
                                              config_.decoder.temperature);
        out.pseudo_probs = signed_scalar_to_probs(out.pseudo_scalar);
    }
    return out;
}

} // namespace dsmcd::model
