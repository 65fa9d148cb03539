#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dsmcd/dataset_io.hpp"
#include "dsmcd/metrics.hpp"
#include "dsmcd/train.hpp"

namespace dsmcd::harness {

/// Exit codes of the CLI commands.
enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericError = 3 };

struct DatasetConfig {
    int scenes = 20;
    int tile_size = 128;
    bool keep_empty = true;
    double coverage = 0.995;
    // train / val / test proportions; boundaries are cumulative floors and
    // the remainder goes to test
    std::array<double, 3> splits = {0.68, 0.08, 0.24};
    std::filesystem::path path;  // defaults to <out>/dataset
};

struct EvalConfig {
    std::string split = "test";
    int hist_bins = 40;
    std::filesystem::path checkpoint;  // defaults to <out>/model.ckpt
};

struct RunConfig {
    synthcity::SceneConfig scene;
    DatasetConfig dataset;
    model::ModelConfig model;
    train::TrainConfig training;
    EvalConfig eval;
    std::vector<double> sweep_t = {0.05, 0.1, 0.5, 1.0};
    uint64_t seed = 0;
    std::filesystem::path out = "run";

    static RunConfig from_json(const std::string& text);
    static RunConfig from_json_file(const std::filesystem::path& path);

    std::filesystem::path dataset_path() const {
        return dataset.path.empty() ? out / "dataset" : dataset.path;
    }
};

struct GenerateSummary {
    size_t tiles_train = 0, tiles_val = 0, tiles_test = 0;
    std::filesystem::path path;
};

/// Cumulative-floor split boundaries over n tiles: train gets
/// floor(p_train*n), val the next floor((p_train+p_val)*n) - train,
/// test the remainder.
std::array<size_t, 3> split_counts(size_t n, const std::array<double, 3>& proportions);

GenerateSummary cmd_generate(const RunConfig& cfg);

train::TrainResult cmd_train(const RunConfig& cfg);

struct Prediction {
    LabelMap classes;   // argmax semantic classes (all background if absent)
    RasterF height_m;   // denormalized height (zeros if absent)
    bool has_semantic = false;
    bool has_height = false;
};

using Predictor = std::function<Prediction(const datapipe::SamplePair&)>;

struct EvalOutcome {
    bool has_semantic = false;
    bool has_height = false;
    metrics::MetricReport report;
    std::optional<metrics::Histogram> histogram;
};

EvalOutcome evaluate_split(const Predictor& predictor, double mparams,
                           const std::vector<datapipe::SamplePair>& samples, int hist_bins);

Predictor model_predictor(const model::ChangeModel& m, const datapipe::InputStats& stats,
                          const datapipe::HeightScale& scale);
/// Oracle predictor that replays the ground truth (for identity checks).
Predictor gt_predictor();

EvalOutcome cmd_eval(const RunConfig& cfg);

struct AblationRow {
    std::string setting;
    model::TaskGates gates;
    std::optional<EvalOutcome> outcome;  // empty when the run failed
};

/// Runs the five-gate ablation matrix and writes the merged comparison
/// table; partial tables survive a failing row.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg);
std::string ablation_table_csv(const std::vector<AblationRow>& rows);

struct SweepEntry {
    double t;
    std::filesystem::path histogram_csv;
    double near_zero_pred_mass = 0.0;  // fraction of predictions in the bin containing 0
};

std::vector<SweepEntry> cmd_sweep_t(const RunConfig& cfg);

/// Renders the reports found under <out> as an aligned text table.
std::string cmd_report(const RunConfig& cfg);

/// Dispatch used by the CLI binary; returns the process exit code.
int run_command(const std::string& command, const RunConfig& cfg);

} // namespace dsmcd::harness
