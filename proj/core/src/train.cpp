#include "dsmcd/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dsmcd/checkpoint.hpp"

namespace dsmcd::train {

using namespace nn;
using nlohmann::json;

Adam::Adam(ParamStore& params, OptimConfig config, int64_t total_steps)
    : params_(params), config_(config), total_steps_(std::max<int64_t>(1, total_steps)) {
    for (const auto& [name, p] : params_.entries()) {
        m_.emplace_back(p->numel(), 0.0);
        v_.emplace_back(p->numel(), 0.0);
    }
}

double Adam::current_lr() const {
    if (!config_.cosine_decay) return config_.lr;
    const double progress = static_cast<double>(t_) / static_cast<double>(total_steps_);
    return config_.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(progress, 1.0)));
}

void Adam::step(double grad_scale) {
    const double lr = current_lr();
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    size_t pi = 0;
    for (const auto& [name, p] : params_.entries()) {
        auto& m = m_[pi];
        auto& v = v_[pi];
        ++pi;
        for (size_t i = 0; i < p->numel(); ++i) {
            const double g = p->grad[i] * grad_scale;
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p->value[i] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

std::string StepRecord::to_json_line() const {
    json j;
    j["step"] = step;
    j["lr"] = lr;
    j["loss_total"] = loss_total;
    if (loss_semantic) j["loss_semantic"] = *loss_semantic;
    if (loss_height) j["loss_height"] = *loss_height;
    if (loss_pseudo) j["loss_pseudo"] = *loss_pseudo;
    if (consistency) j["consistency"] = *consistency;
    return j.dump();
}

PreparedSample prepare_sample(const datapipe::SamplePair& sp, const datapipe::InputStats& stats,
                              const datapipe::HeightScale& scale) {
    PreparedSample ps;
    ps.sample = &sp;
    ps.input = datapipe::normalize_inputs(sp.dsm_pre, sp.image_post, stats);
    RasterD norm = datapipe::normalize_height(sp.gt_height, scale);
    ps.gt_height_norm = std::move(norm.raw());
    return ps;
}

SampleLosses compute_losses(const model::ChangeModel& m, const model::ModelOutputs& out,
                            const PreparedSample& ps, const objective::LossWeights& lw,
                            const objective::ClassWeights& cw, double consistency_weight) {
    const auto& gates = m.config().gates;
    const datapipe::SamplePair& sp = *ps.sample;

    SampleLosses losses;
    if (gates.semantic)
        losses.semantic = objective::weighted_ce(out.sem_logits, sp.gt_semantic, cw, false);
    if (gates.height) losses.height = objective::mse_height(out.height_norm, ps.gt_height_norm);
    if (gates.pseudo)
        losses.pseudo = objective::weighted_ce(out.pseudo_probs, sp.gt_pseudo, cw, true);
    if (gates.pseudo && gates.semantic)
        losses.consistency = objective::consistency(
            out.pseudo_probs, objective::softmax_channels(out.sem_logits), sp.overlap_mask);

    losses.total = objective::total_loss(losses.pseudo, losses.height, losses.semantic, lw);
    if (losses.consistency && consistency_weight != 0.0)
        losses.total = add(losses.total, scale(losses.consistency, consistency_weight));
    return losses;
}

namespace {

void check_total_matches_components(const SampleLosses& l, const objective::LossWeights& lw,
                                    double mu) {
    double expect = 0.0;
    if (l.pseudo) expect += lw.lambda_pseudo * l.pseudo->value[0];
    if (l.height) expect += lw.lambda_height * l.height->value[0];
    if (l.semantic) expect += lw.lambda_semantic * l.semantic->value[0];
    if (l.consistency && mu != 0.0) expect += mu * l.consistency->value[0];
    const double got = l.total->value[0];
    if (std::abs(got - expect) > 1e-6 * std::max(1.0, std::abs(got)))
        throw NumericError("train: optimized total diverges from weighted components");
}

} // namespace

TrainResult train_model(model::ChangeModel& m, const std::vector<datapipe::SamplePair>& samples,
                        const datapipe::InputStats& input_stats,
                        const datapipe::HeightScale& height_scale, const TrainConfig& config) {
    if (samples.empty()) throw std::invalid_argument("train_model: empty dataset");
    config.loss_weights.validate();
    config.class_weights.validate();
    if (config.batch_size < 1 || config.accum_steps < 1)
        throw std::invalid_argument("train_model: batch_size and accum_steps must be >= 1");

    const int64_t micro_per_epoch =
        (static_cast<int64_t>(samples.size()) + config.batch_size - 1) / config.batch_size;
    const int64_t updates_per_epoch =
        std::max<int64_t>(1, micro_per_epoch / config.accum_steps);
    int64_t planned = updates_per_epoch * config.epochs;
    if (config.max_steps) planned = std::min(planned, *config.max_steps);

    Adam adam(m.params(), config.optim, planned);

    std::ofstream log_file;
    if (!config.log_path.empty()) {
        log_file.open(config.log_path, std::ios::trunc);
        if (!log_file)
            throw std::runtime_error("train_model: cannot open log " +
                                     config.log_path.string());
    }

    TrainResult result;
    const auto& gates = m.config().gates;
    bool done = false;

    for (int epoch = 0; epoch < config.epochs && !done; ++epoch) {
        auto batches = datapipe::make_batches(samples, config.batch_size, config.shuffle,
                                              config.seed + static_cast<uint64_t>(epoch));
        size_t bi = 0;
        while (bi < batches.size() && !done) {
            m.params().zero_grads();
            int samples_in_update = 0;
            double sum_total = 0.0, sum_sem = 0.0, sum_h = 0.0, sum_ps = 0.0, sum_cons = 0.0;

            const int micro_count =
                static_cast<int>(std::min<size_t>(config.accum_steps, batches.size() - bi));
            for (int micro = 0; micro < micro_count; ++micro, ++bi) {
                for (const datapipe::SamplePair* sp : batches[bi].samples) {
                    PreparedSample ps = prepare_sample(*sp, input_stats, height_scale);
                    model::ModelOutputs out = m.forward(ps.input.dsm, ps.input.image);
                    SampleLosses losses = compute_losses(m, out, ps, config.loss_weights,
                                                         config.class_weights,
                                                         config.consistency_weight);
                    if (!std::isfinite(losses.total->value[0])) {
                        StepRecord snap;
                        snap.step = adam.steps_done();
                        snap.loss_total = losses.total->value[0];
                        if (log_file) log_file << snap.to_json_line() << "\n";
                        throw NumericError("train: non-finite loss at step " +
                                           std::to_string(adam.steps_done()));
                    }
                    check_total_matches_components(losses, config.loss_weights,
                                                   config.consistency_weight);
                    backward(losses.total);
                    ++samples_in_update;
                    sum_total += losses.total->value[0];
                    if (losses.semantic) sum_sem += losses.semantic->value[0];
                    if (losses.height) sum_h += losses.height->value[0];
                    if (losses.pseudo) sum_ps += losses.pseudo->value[0];
                    if (losses.consistency) sum_cons += losses.consistency->value[0];
                }
            }

            StepRecord rec;
            rec.lr = adam.current_lr();
            adam.step(1.0 / samples_in_update);
            rec.step = adam.steps_done();
            rec.loss_total = sum_total / samples_in_update;
            if (gates.semantic) rec.loss_semantic = sum_sem / samples_in_update;
            if (gates.height) rec.loss_height = sum_h / samples_in_update;
            if (gates.pseudo) rec.loss_pseudo = sum_ps / samples_in_update;
            if (gates.pseudo && gates.semantic) rec.consistency = sum_cons / samples_in_update;
            if (log_file) log_file << rec.to_json_line() << "\n";
            result.history.push_back(rec);

            if (config.checkpoint_every_steps > 0 && !config.checkpoint_path.empty() &&
                adam.steps_done() % config.checkpoint_every_steps == 0)
                checkpoint::save(config.checkpoint_path, m);

            if (config.step_callback && !config.step_callback(rec)) done = true;
            if (config.max_steps && adam.steps_done() >= *config.max_steps) done = true;
        }
    }

    result.steps = adam.steps_done();
    if (!config.checkpoint_path.empty()) checkpoint::save(config.checkpoint_path, m);
    return result;
}

} // namespace dsmcd::train
