#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsmcd/grid.hpp"
#include "dsmcd/synthcity.hpp"

namespace dsmcd::datapipe {

using synthcity::HeightScale;

/// Pseudo-change class codes. The sign classes reuse the 3-way weighted
/// cross-entropy path: 0=unchanged, 1=positive, 2=negative.
enum PseudoClass : uint8_t { kUnchanged = 0, kPositive = 1, kNegative = 2 };

/// A fully loaded training/evaluation sample.
struct SamplePair {
    std::string id;
    RasterF dsm_pre;      // meters
    RasterF image_post;   // 3 channels, [0,1]
    LabelMap gt_semantic; // {0,1,2}
    RasterF gt_height;    // meters, 0 on background
    LabelMap gt_pseudo;   // derived: sign classes of gt_height
    MaskU8 overlap_mask;  // sign-consistent intersection of semantic and pseudo supports
};

/// Hard sign thresholding of a height map into pseudo-change classes.
LabelMap derive_pseudo_gt(const RasterF& gt_height);

struct OverlapResult {
    MaskU8 mask;
    double intersection_rate;  // |mask| / |support union|, 1.0 when both supports empty
};

/// Intersection of the two change supports, kept only where the change
/// identities agree (demolished <-> negative, newly-built <-> positive).
OverlapResult overlap_mask(const LabelMap& gt_semantic, const LabelMap& gt_pseudo);

/// Affine bijection between [min_m, max_m] and [-1, 1]; out-of-range meters
/// clamp on the normalized side.
double normalize_height(double h_meters, const HeightScale& scale);
double denormalize_height(double v, const HeightScale& scale);
RasterD normalize_height(const RasterF& h_meters, const HeightScale& scale);

/// Training-split statistics for input standardization.
struct InputStats {
    double dsm_mean = 0.0;
    double dsm_std = 1.0;
    double image_mean[3] = {0.0, 0.0, 0.0};
    double image_std[3] = {1.0, 1.0, 1.0};
};

InputStats compute_input_stats(const std::vector<SamplePair>& train_samples);

struct ModelInput {
    RasterD dsm;    // 1 channel, standardized
    RasterD image;  // 3 channels, standardized
};

/// DSM standardized by training stats; image (already in [0,1]) standardized
/// per channel. A zero-variance channel is passed through centered only.
ModelInput normalize_inputs(const RasterF& dsm_pre, const RasterF& image_post,
                            const InputStats& stats);

struct Batch {
    std::vector<const SamplePair*> samples;
};

/// Deterministic batching: fixed seed fixes the order, the final partial
/// batch is retained, shuffle off keeps dataset order.
std::vector<Batch> make_batches(const std::vector<SamplePair>& samples, int batch_size,
                                bool shuffle, uint64_t shuffle_seed);

/// Assemble a SamplePair from raw tiles: derives the pseudo ground truth
/// and the overlap mask.
SamplePair assemble_sample(std::string id, const synthcity::TileSample& tile);

} // namespace dsmcd::datapipe
