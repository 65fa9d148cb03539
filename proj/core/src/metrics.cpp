#include "dsmcd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dsmcd::metrics {

void ConfusionAccumulator::add(const LabelMap& pred, const LabelMap& gt) {
    if (!pred.same_plane(gt))
        throw std::invalid_argument("ConfusionAccumulator: dimension mismatch");
    for (size_t i = 0; i < pred.size(); ++i) {
        const uint8_t p = pred.raw()[i];
        const uint8_t g = gt.raw()[i];
        if (p > 2 || g > 2)
            throw std::invalid_argument("ConfusionAccumulator: class out of range");
        counts_[g][p] += 1;
    }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
    for (int g = 0; g < 3; ++g)
        for (int p = 0; p < 3; ++p) counts_[g][p] += other.counts_[g][p];
}

uint64_t ConfusionAccumulator::total() const {
    uint64_t t = 0;
    for (int g = 0; g < 3; ++g)
        for (int p = 0; p < 3; ++p) t += counts_[g][p];
    return t;
}

std::optional<double> ConfusionAccumulator::iou(int cls) const {
    const uint64_t tp = counts_[cls][cls];
    uint64_t fn = 0, fp = 0;
    for (int p = 0; p < 3; ++p)
        if (p != cls) fn += counts_[cls][p];
    for (int g = 0; g < 3; ++g)
        if (g != cls) fp += counts_[g][cls];
    const uint64_t uni = tp + fn + fp;
    if (uni == 0) return std::nullopt;
    return 100.0 * static_cast<double>(tp) / static_cast<double>(uni);
}

double ConfusionAccumulator::iou_demolished() const { return iou(1).value_or(0.0); }
double ConfusionAccumulator::iou_newly_built() const { return iou(2).value_or(0.0); }

double ConfusionAccumulator::miou() const {
    if (total() == 0) throw std::invalid_argument("ConfusionAccumulator: empty evaluation set");
    double sum = 0.0;
    int n = 0;
    for (int cls : {1, 2}) {
        if (auto v = iou(cls)) {
            sum += *v;
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / n;
}

double ConfusionAccumulator::f1() const {
    if (total() == 0) throw std::invalid_argument("ConfusionAccumulator: empty evaluation set");
    double sum = 0.0;
    int n = 0;
    for (int cls : {1, 2}) {
        if (auto v = iou(cls)) {
            const double i = *v / 100.0;
            sum += 100.0 * (2.0 * i / (1.0 + i));
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / n;
}

double f1_from_ious(double iou_d_percent, double iou_n_percent) {
    auto dice = [](double iou_pct) {
        const double i = iou_pct / 100.0;
        return 100.0 * (2.0 * i / (1.0 + i));
    };
    return 0.5 * (dice(iou_d_percent) + dice(iou_n_percent));
}

double miou_from_ious(double iou_d_percent, double iou_n_percent) {
    return 0.5 * (iou_d_percent + iou_n_percent);
}

void HeightAccumulator::add_pixel(double pred_m, double gt_m, bool changed) {
    const double d = gt_m - pred_m;
    sq_sum_all_ += d * d;
    abs_sum_all_ += std::abs(d);
    ++n_all_;
    if (!changed) return;
    ++n_changed_;
    sq_sum_ch_ += d * d;
    if (std::abs(gt_m) >= 0.1) {
        rel_sum_ += std::abs(d) / std::abs(gt_m);
        ++n_rel_;
    }
    sum_r_ += gt_m;
    sum_e_ += pred_m;
    sum_rr_ += gt_m * gt_m;
    sum_ee_ += pred_m * pred_m;
    sum_re_ += gt_m * pred_m;
}

void HeightAccumulator::add(const RasterF& pred_m, const RasterF& gt_m,
                            const MaskU8& change_mask) {
    if (!pred_m.same_plane(gt_m) || !pred_m.same_plane(change_mask))
        throw std::invalid_argument("HeightAccumulator: dimension mismatch");
    for (size_t i = 0; i < pred_m.size(); ++i)
        add_pixel(pred_m.raw()[i], gt_m.raw()[i], change_mask.raw()[i] != 0);
}

void HeightAccumulator::merge(const HeightAccumulator& o) {
    sq_sum_all_ += o.sq_sum_all_;
    abs_sum_all_ += o.abs_sum_all_;
    n_all_ += o.n_all_;
    sq_sum_ch_ += o.sq_sum_ch_;
    rel_sum_ += o.rel_sum_;
    n_rel_ += o.n_rel_;
    sum_r_ += o.sum_r_;
    sum_e_ += o.sum_e_;
    sum_rr_ += o.sum_rr_;
    sum_ee_ += o.sum_ee_;
    sum_re_ += o.sum_re_;
    n_changed_ += o.n_changed_;
}

double HeightAccumulator::rmse() const {
    return n_all_ == 0 ? 0.0 : std::sqrt(sq_sum_all_ / n_all_);
}
double HeightAccumulator::mae() const { return n_all_ == 0 ? 0.0 : abs_sum_all_ / n_all_; }

std::optional<double> HeightAccumulator::crmse() const {
    if (n_changed_ == 0) return std::nullopt;
    return std::sqrt(sq_sum_ch_ / n_changed_);
}

std::optional<double> HeightAccumulator::crel() const {
    if (n_changed_ == 0) return std::nullopt;
    return n_rel_ == 0 ? 0.0 : rel_sum_ / n_rel_;
}

std::optional<double> HeightAccumulator::czncc() const {
    if (n_changed_ == 0) return std::nullopt;
    const double n = static_cast<double>(n_changed_);
    const double mu_r = sum_r_ / n, mu_e = sum_e_ / n;
    const double var_r = std::max(0.0, sum_rr_ / n - mu_r * mu_r);
    const double var_e = std::max(0.0, sum_ee_ / n - mu_e * mu_e);
    const double cov = sum_re_ / n - mu_r * mu_e;
    const double eps = 1e-6;
    return cov / ((std::sqrt(var_r) + eps) * (std::sqrt(var_e) + eps));
}

namespace {
nlohmann::json opt_json(const std::optional<double>& v) {
    if (v) return *v;
    return nullptr;
}
} // namespace

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["iou_d"] = iou_d;
    j["iou_n"] = iou_n;
    j["miou"] = miou;
    j["f1"] = f1;
    j["rmse"] = rmse;
    j["mae"] = mae;
    j["crmse"] = opt_json(crmse);
    j["crel"] = opt_json(crel);
    j["czncc"] = opt_json(czncc);
    j["mparams"] = mparams;
    return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    MetricReport r;
    r.iou_d = j.at("iou_d").get<double>();
    r.iou_n = j.at("iou_n").get<double>();
    r.miou = j.at("miou").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.rmse = j.at("rmse").get<double>();
    r.mae = j.at("mae").get<double>();
    auto opt = [&](const char* k) -> std::optional<double> {
        if (j.at(k).is_null()) return std::nullopt;
        return j.at(k).get<double>();
    };
    r.crmse = opt("crmse");
    r.crel = opt("crel");
    r.czncc = opt("czncc");
    r.mparams = j.at("mparams").get<double>();
    return r;
}

MetricReport make_report(const ConfusionAccumulator& conf, const HeightAccumulator& height,
                         double mparams) {
    MetricReport r;
    r.iou_d = conf.iou_demolished();
    r.iou_n = conf.iou_newly_built();
    r.miou = conf.miou();
    r.f1 = conf.f1();
    r.rmse = height.rmse();
    r.mae = height.mae();
    r.crmse = height.crmse();
    r.crel = height.crel();
    r.czncc = height.czncc();
    r.mparams = mparams;
    return r;
}

Histogram height_histogram(const std::vector<double>& pred_m, const std::vector<double>& gt_m,
                           int bins) {
    if (bins < 1) throw std::invalid_argument("height_histogram: bins must be >= 1");
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const auto* v : {&pred_m, &gt_m})
        for (double x : *v) {
            if (first) {
                lo = hi = x;
                first = false;
            } else {
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
        }
    if (first) throw std::invalid_argument("height_histogram: empty input");
    if (hi <= lo) hi = lo + 1.0;  // degenerate range widens to one unit

    Histogram h;
    h.edges.resize(bins + 1);
    for (int b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * b / bins;
    h.pred_counts.assign(bins, 0);
    h.gt_counts.assign(bins, 0);
    auto bin_of = [&](double x) {
        int b = static_cast<int>((x - lo) / (hi - lo) * bins);
        return std::clamp(b, 0, bins - 1);
    };
    for (double x : pred_m) h.pred_counts[bin_of(x)]++;
    for (double x : gt_m) h.gt_counts[bin_of(x)]++;
    return h;
}

Histogram height_histogram(const RasterF& pred_m, const RasterF& gt_m, int bins) {
    std::vector<double> p(pred_m.raw().begin(), pred_m.raw().end());
    std::vector<double> g(gt_m.raw().begin(), gt_m.raw().end());
    return height_histogram(p, g, bins);
}

std::string Histogram::to_csv() const {
    std::ostringstream os;
    os << "bin_lo,bin_hi,pred_count,gt_count\n";
    for (size_t b = 0; b + 1 < edges.size(); ++b)
        os << edges[b] << "," << edges[b + 1] << "," << pred_counts[b] << "," << gt_counts[b]
           << "\n";
    return os.str();
}

} // namespace dsmcd::metrics
