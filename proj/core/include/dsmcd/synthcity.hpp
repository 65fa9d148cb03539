#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dsmcd/grid.hpp"

namespace dsmcd::synthcity {

/// Parameters of a procedurally generated toy-city scene.
struct SceneConfig {
    int width = 128;
    int height = 128;
    int num_buildings_pre = 6;  // buildings present in the early period
    int num_new = 3;            // appear only in the late period
    int num_demolished = 2;     // subset of pre buildings removed in the late period
    int num_rebuilt = 1;        // subset of pre buildings replaced (overlapping footprint,
                                // different height) in the late period
    double height_min_m = 5.0;
    double height_max_m = 25.0;
    double occlusion_rate = 0.0;  // fraction of changed buildings whose relevance flips to -1
    double noise_sigma = 0.05;    // DSM sensor noise, meters
    uint64_t seed = 0;

    void validate() const;  // throws std::invalid_argument
};

/// A generated bi-temporal scene.
struct Scene {
    RasterF dsm_pre;               // meters, 1 channel
    RasterF dsm_post;              // meters, 1 channel
    RasterF image_post;            // 3 channels, [0,1]
    MaskU8 buildings_pre;          // binary footprints, early period
    MaskU8 buildings_post;         // binary footprints, late period
    RelevanceMask relevance_mask;  // {-1, +1}
};

/// Per-pixel change annotation.
/// semantic: 0=background, 1=demolished, 2=newly-built.
/// height_change: signed meters on labeled pixels (relevance-corrected), 0 elsewhere.
/// raw_delta_h: unmasked post-minus-pre difference.
struct ChangeLabels {
    LabelMap semantic;
    RasterF height_change;
    RasterF raw_delta_h;
};

enum SemanticClass : uint8_t { kBackground = 0, kDemolished = 1, kNewlyBuilt = 2 };

Scene generate_scene(const SceneConfig& config);

/// Per-pixel post - pre, meters.
RasterF compute_height_change(const RasterF& dsm_pre, const RasterF& dsm_post);

/// Change annotation rule. Differences with magnitude below tau_noise are
/// treated as zero before the rule applies. A pixel is demolished when the
/// relevance-weighted difference is negative and an early-period footprint
/// covers it, newly-built when positive and a late-period footprint covers it,
/// background otherwise.
ChangeLabels generate_change_map(const RasterF& delta_h, const RelevanceMask& relevance,
                                 const MaskU8& buildings_pre, const MaskU8& buildings_post,
                                 double tau_noise);

/// Default labeling threshold for a scene: 3 * noise_sigma.
double default_tau_noise(const SceneConfig& config);

/// One grid tile cut out of a scene, with its ground truth.
struct TileSample {
    RasterF dsm_pre;      // meters
    RasterF image_post;   // 3 channels, [0,1]
    LabelMap gt_semantic;
    RasterF gt_height;    // meters, 0 on background
    RelevanceMask relevance;
};

std::vector<TileSample> split_tiles(const Scene& scene, const ChangeLabels& labels,
                                    int tile_size, bool keep_empty = true);

struct HeightScale {
    double min_m = 0.0;
    double max_m = 0.0;
};

/// Symmetric-quantile interval of gt_height values over all training pixels
/// (zeros included) covering `coverage` of the distribution.
HeightScale compute_normalization_stats(const std::vector<TileSample>& train_tiles,
                                        double coverage);

struct CumulativeRow {
    double upper_edge_m;
    double cumulative_fraction;
};

struct DatasetStats {
    size_t objects_demolished = 0;  // connected components
    size_t objects_newly_built = 0;
    size_t pixels_demolished = 0;
    size_t pixels_newly_built = 0;
    size_t pixels_total = 0;
    double changed_pixel_proportion = 0.0;
    size_t tiles_total = 0;
    size_t tiles_with_change = 0;
    double tiles_with_change_fraction = 0.0;
    std::vector<CumulativeRow> cum_height_demolished;
    std::vector<CumulativeRow> cum_height_newly_built;
};

DatasetStats dataset_stats(const std::vector<TileSample>& tiles, int cum_bins = 32);

/// 8-connected component count of a binary predicate over the semantic map.
size_t count_components(const LabelMap& semantic, uint8_t cls);

} // namespace dsmcd::synthcity
