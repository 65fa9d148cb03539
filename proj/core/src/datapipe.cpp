#include "dsmcd/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "dsmcd/rng.hpp"

namespace dsmcd::datapipe {

LabelMap derive_pseudo_gt(const RasterF& gt_height) {
    LabelMap out(1, gt_height.height(), gt_height.width(), kUnchanged);
    for (int y = 0; y < gt_height.height(); ++y) {
        for (int x = 0; x < gt_height.width(); ++x) {
            const float v = gt_height.at(y, x);
            if (std::isnan(v))
                throw std::invalid_argument("derive_pseudo_gt: NaN height");
            if (v > 0.0f) out.at(y, x) = kPositive;
            else if (v < 0.0f) out.at(y, x) = kNegative;
        }
    }
    return out;
}

OverlapResult overlap_mask(const LabelMap& gt_semantic, const LabelMap& gt_pseudo) {
    if (!gt_semantic.same_plane(gt_pseudo))
        throw std::invalid_argument("overlap_mask: dimension mismatch");
    OverlapResult r;
    r.mask = MaskU8(1, gt_semantic.height(), gt_semantic.width(), 0);
    size_t inter = 0, uni = 0;
    for (int y = 0; y < gt_semantic.height(); ++y) {
        for (int x = 0; x < gt_semantic.width(); ++x) {
            const uint8_t s = gt_semantic.at(y, x);
            const uint8_t p = gt_pseudo.at(y, x);
            const bool s_on = s != synthcity::kBackground;
            const bool p_on = p != kUnchanged;
            if (s_on || p_on) ++uni;
            const bool agree = (s == synthcity::kDemolished && p == kNegative) ||
                               (s == synthcity::kNewlyBuilt && p == kPositive);
            if (agree) {
                r.mask.at(y, x) = 1;
                ++inter;
            }
        }
    }
    r.intersection_rate = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
    return r;
}

double normalize_height(double h_meters, const HeightScale& scale) {
    if (!(scale.min_m < scale.max_m))
        throw std::invalid_argument("normalize_height: degenerate scale");
    const double v = 2.0 * (h_meters - scale.min_m) / (scale.max_m - scale.min_m) - 1.0;
    return std::clamp(v, -1.0, 1.0);
}

double denormalize_height(double v, const HeightScale& scale) {
    if (!(scale.min_m < scale.max_m))
        throw std::invalid_argument("denormalize_height: degenerate scale");
    return (v + 1.0) * 0.5 * (scale.max_m - scale.min_m) + scale.min_m;
}

RasterD normalize_height(const RasterF& h_meters, const HeightScale& scale) {
    RasterD out(h_meters.channels(), h_meters.height(), h_meters.width());
    for (size_t i = 0; i < out.size(); ++i)
        out.raw()[i] = normalize_height(static_cast<double>(h_meters.raw()[i]), scale);
    return out;
}

InputStats compute_input_stats(const std::vector<SamplePair>& train_samples) {
    if (train_samples.empty())
        throw std::invalid_argument("compute_input_stats: empty training set");
    InputStats s;
    double dsm_sum = 0.0, dsm_sq = 0.0;
    double img_sum[3] = {0, 0, 0}, img_sq[3] = {0, 0, 0};
    size_t n_dsm = 0, n_img = 0;
    for (const auto& sp : train_samples) {
        for (float v : sp.dsm_pre.raw()) {
            dsm_sum += v;
            dsm_sq += static_cast<double>(v) * v;
            ++n_dsm;
        }
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < sp.image_post.height(); ++y)
                for (int x = 0; x < sp.image_post.width(); ++x) {
                    const double v = sp.image_post.at(c, y, x);
                    img_sum[c] += v;
                    img_sq[c] += v * v;
                }
        n_img += sp.image_post.pixels();
    }
    s.dsm_mean = dsm_sum / n_dsm;
    s.dsm_std = std::sqrt(std::max(0.0, dsm_sq / n_dsm - s.dsm_mean * s.dsm_mean));
    for (int c = 0; c < 3; ++c) {
        s.image_mean[c] = img_sum[c] / n_img;
        s.image_std[c] =
            std::sqrt(std::max(0.0, img_sq[c] / n_img - s.image_mean[c] * s.image_mean[c]));
    }
    return s;
}

namespace {

constexpr double kStdFloor = 1e-12;

double safe_std(double sd, const char* what) {
    if (sd < kStdFloor) {
        std::cerr << "dsmcd: warning: zero-variance " << what
                  << " channel, skipping standardization\n";
        return 1.0;
    }
    return sd;
}

} // namespace

ModelInput normalize_inputs(const RasterF& dsm_pre, const RasterF& image_post,
                            const InputStats& stats) {
    if (!dsm_pre.same_plane(image_post))
        throw std::invalid_argument("normalize_inputs: dimension mismatch");
    ModelInput mi;
    mi.dsm = RasterD(1, dsm_pre.height(), dsm_pre.width());
    const double dsm_sd = safe_std(stats.dsm_std, "DSM");
    for (size_t i = 0; i < mi.dsm.size(); ++i)
        mi.dsm.raw()[i] = (dsm_pre.raw()[i] - stats.dsm_mean) / dsm_sd;

    mi.image = RasterD(3, image_post.height(), image_post.width());
    for (int c = 0; c < 3; ++c) {
        const double sd = safe_std(stats.image_std[c], "image");
        for (int y = 0; y < image_post.height(); ++y)
            for (int x = 0; x < image_post.width(); ++x)
                mi.image.at(c, y, x) = (image_post.at(c, y, x) - stats.image_mean[c]) / sd;
    }
    return mi;
}

std::vector<Batch> make_batches(const std::vector<SamplePair>& samples, int batch_size,
                                bool shuffle, uint64_t shuffle_seed) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    if (samples.empty()) throw std::invalid_argument("make_batches: empty dataset");

    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) {
        Rng rng(shuffle_seed);
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);
    }

    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += batch_size) {
        Batch b;
        const size_t end = std::min(order.size(), start + batch_size);
        for (size_t i = start; i < end; ++i) b.samples.push_back(&samples[order[i]]);
        batches.push_back(std::move(b));
    }
    return batches;
}

SamplePair assemble_sample(std::string id, const synthcity::TileSample& tile) {
    SamplePair sp;
    sp.id = std::move(id);
    sp.dsm_pre = tile.dsm_pre;
    sp.image_post = tile.image_post;
    sp.gt_semantic = tile.gt_semantic;
    sp.gt_height = tile.gt_height;
    sp.gt_pseudo = derive_pseudo_gt(sp.gt_height);
    sp.overlap_mask = overlap_mask(sp.gt_semantic, sp.gt_pseudo).mask;
    return sp;
}

} // namespace dsmcd::datapipe
