#pragma once

#include <memory>
#include <string>

#include "dsmcd/decoder.hpp"
#include "dsmcd/grid.hpp"

namespace dsmcd::model {

struct TaskGates {
    bool semantic = true;
    bool height = true;
    bool pseudo = true;

    bool any() const { return semantic || height || pseudo; }
};

struct ModelConfig {
    BackboneConfig backbone;
    DecoderConfig decoder;
    TaskGates gates;
    bool share_backbone_weights = false;
    uint64_t init_seed = 42;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

/// Per-head outputs at full input resolution; gated-off heads stay null.
struct ModelOutputs {
    nn::VarPtr sem_logits;     // [3,H,W]
    nn::VarPtr height_norm;    // [1,H,W], strictly in (-1,1)
    nn::VarPtr pseudo_scalar;  // [1,H,W], strictly in (-1,1)
    nn::VarPtr pseudo_probs;   // [3,H,W], per-pixel simplex
};

/// Dual-branch encoder + cross-modal fusion + MLP decoder with three heads.
class ChangeModel {
public:
    explicit ChangeModel(const ModelConfig& config);

    ModelOutputs forward(const RasterD& dsm_norm, const RasterD& image_norm) const;
    /// Forward from already-built input variables (for gradient checks).
    ModelOutputs forward(const nn::VarPtr& dsm_chw, const nn::VarPtr& image_chw) const;

    const ModelConfig& config() const { return config_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    double mparams() const { return static_cast<double>(params_.total_scalars()) / 1e6; }

    const DualBackbone& backbone() const { return backbone_; }
    const Cfm& cfm() const { return cfm_; }

private:
    ModelConfig config_;
    nn::ParamStore params_;
    DualBackbone backbone_;
    Cfm cfm_;
    MlpDecoder decoder_;
    OutputHead sem_head_, height_head_, pseudo_head_;
};

nn::VarPtr raster_to_variable(const RasterD& r, bool requires_grad = false);

} // namespace dsmcd::model
