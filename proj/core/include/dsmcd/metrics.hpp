#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dsmcd/grid.hpp"

namespace dsmcd::metrics {

/// Dataset-level confusion accumulator over the 3 semantic classes.
/// Accumulators merge associatively, so per-worker partials combine to the
/// global result.
class ConfusionAccumulator {
public:
    void add(const LabelMap& pred, const LabelMap& gt);
    void add_pixel(uint8_t pred, uint8_t gt) { counts_[gt][pred] += 1; }
    void merge(const ConfusionAccumulator& other);

    uint64_t count(int gt, int pred) const { return counts_[gt][pred]; }
    uint64_t total() const;

    /// IoU of one class in percent; nullopt when the class is absent from
    /// both prediction and ground truth.
    std::optional<double> iou(int cls) const;

    double iou_demolished() const;
    double iou_newly_built() const;
    /// Mean IoU over the two change classes (background excluded), percent.
    double miou() const;
    /// Macro-averaged Dice over the change classes, percent. Classes absent
    /// from both prediction and ground truth are skipped.
    double f1() const;

private:
    uint64_t counts_[3][3] = {};
};

/// F1 (percent) from the two change-class IoUs given in percent:
/// mean of 2*IoU/(1+IoU) per class.
double f1_from_ious(double iou_d_percent, double iou_n_percent);
/// Change-class mean of the two IoUs, percent.
double miou_from_ious(double iou_d_percent, double iou_n_percent);

/// Height-error accumulator (mergeable).
class HeightAccumulator {
public:
    /// change_mask: nonzero where the ground truth marks change.
    void add(const RasterF& pred_m, const RasterF& gt_m, const MaskU8& change_mask);
    void add_pixel(double pred_m, double gt_m, bool changed);
    void merge(const HeightAccumulator& other);

    double rmse() const;
    double mae() const;
    /// Changed-area metrics are undefined when the dataset has no changed
    /// pixels; they report nullopt rather than zero.
    std::optional<double> crmse() const;
    std::optional<double> crel() const;
    std::optional<double> czncc() const;

    uint64_t pixels_all() const { return n_all_; }
    uint64_t pixels_changed() const { return n_changed_; }

private:
    // all pixels
    double sq_sum_all_ = 0.0, abs_sum_all_ = 0.0;
    uint64_t n_all_ = 0;
    // changed pixels
    double sq_sum_ch_ = 0.0;
    double rel_sum_ = 0.0;
    uint64_t n_rel_ = 0;  // changed pixels passing the |H_r| >= 0.1 m guard
    double sum_r_ = 0.0, sum_e_ = 0.0, sum_rr_ = 0.0, sum_ee_ = 0.0, sum_re_ = 0.0;
    uint64_t n_changed_ = 0;
};

struct MetricReport {
    double iou_d = 0.0, iou_n = 0.0, miou = 0.0, f1 = 0.0;  // percent
    double rmse = 0.0, mae = 0.0;                            // meters
    std::optional<double> crmse;                             // meters
    std::optional<double> crel;
    std::optional<double> czncc;
    double mparams = 0.0;

    std::string to_json() const;
    static MetricReport from_json(const std::string& text);
};

MetricReport make_report(const ConfusionAccumulator& conf, const HeightAccumulator& height,
                         double mparams);

struct Histogram {
    std::vector<double> edges;        // bins+1 edges
    std::vector<uint64_t> pred_counts;
    std::vector<uint64_t> gt_counts;

    std::string to_csv() const;
};

/// Binned frequency tables of predicted and ground-truth heights over shared
/// bin edges.
Histogram height_histogram(const RasterF& pred_m, const RasterF& gt_m, int bins);
Histogram height_histogram(const std::vector<double>& pred_m, const std::vector<double>& gt_m,
                           int bins);

} // namespace dsmcd::metrics
