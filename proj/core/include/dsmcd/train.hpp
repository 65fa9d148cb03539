#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dsmcd/datapipe.hpp"
#include "dsmcd/model.hpp"
#include "dsmcd/objective.hpp"

namespace dsmcd::train {

/// Raised when a loss turns non-finite; the CLI maps it to exit code 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OptimConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    bool cosine_decay = true;
};

/// Adam over a ParamStore, with optional cosine learning-rate decay.
class Adam {
public:
    Adam(nn::ParamStore& params, OptimConfig config, int64_t total_steps);

    /// Applies one update using the accumulated gradients scaled by
    /// `grad_scale` (1/batch for mean-reduction over accumulated samples).
    void step(double grad_scale);
    double current_lr() const;
    int64_t steps_done() const { return t_; }

private:
    nn::ParamStore& params_;
    OptimConfig config_;
    int64_t total_steps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
    int epochs = 50;
    std::optional<int64_t> max_steps;  // optimizer updates cap
    int batch_size = 4;
    int accum_steps = 1;  // gradient accumulation multiplier
    uint64_t seed = 0;
    bool shuffle = true;
    OptimConfig optim;
    objective::LossWeights loss_weights;
    objective::ClassWeights class_weights;
    double consistency_weight = 0.0;  // opt-in explicit consistency term
    int checkpoint_every_steps = 0;   // 0: only final
    std::filesystem::path checkpoint_path;
    std::filesystem::path log_path;  // JSON-lines step log; empty: no file
    // called after every optimizer update; return false to stop training
    std::function<bool(const struct StepRecord&)> step_callback;
};

/// Per-step scalar record mirrored to the JSONL log.
struct StepRecord {
    int64_t step = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    std::optional<double> loss_semantic;
    std::optional<double> loss_height;
    std::optional<double> loss_pseudo;
    std::optional<double> consistency;

    std::string to_json_line() const;
};

struct TrainResult {
    int64_t steps = 0;
    std::vector<StepRecord> history;
};

/// Model inputs plus supervision in the spaces the losses consume.
struct PreparedSample {
    datapipe::ModelInput input;
    const datapipe::SamplePair* sample = nullptr;
    std::vector<double> gt_height_norm;
};

PreparedSample prepare_sample(const datapipe::SamplePair& sp, const datapipe::InputStats& stats,
                              const datapipe::HeightScale& scale);

/// Loss bundle for one sample.
struct SampleLosses {
    nn::VarPtr semantic;     // null if gated off
    nn::VarPtr height;
    nn::VarPtr pseudo;
    nn::VarPtr consistency;  // null unless both pseudo and semantic are on
    nn::VarPtr total;
};

SampleLosses compute_losses(const model::ChangeModel& m, const model::ModelOutputs& out,
                            const PreparedSample& ps, const objective::LossWeights& lw,
                            const objective::ClassWeights& cw, double consistency_weight);

TrainResult train_model(model::ChangeModel& m, const std::vector<datapipe::SamplePair>& samples,
                        const datapipe::InputStats& input_stats,
                        const datapipe::HeightScale& height_scale, const TrainConfig& config);

} // namespace dsmcd::train
