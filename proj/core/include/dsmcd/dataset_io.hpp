#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dsmcd/datapipe.hpp"
#include "dsmcd/synthcity.hpp"

namespace dsmcd::dataset_io {

/// Split-level stats document. The height scale and input stats are computed
/// on the training split only and stored with it; loaders for other splits
/// read them from `train/stats.json`.
struct SplitStats {
    std::string split;
    size_t class_pixels[3] = {0, 0, 0};
    std::optional<datapipe::HeightScale> height_scale;
    std::optional<datapipe::InputStats> input_stats;
    double coverage = 0.0;  // quantile coverage used for the height scale
};

inline const char* kSplits[3] = {"train", "val", "test"};

/// Writes one sample directory:
///   dsm_pre.npy (f32 HxW), image_post.npy (u8 HxWx3), sem_change.npy (u8),
///   height_change.npy (f32), relevance.npy (u8, 0 -> -1, 1 -> +1).
void write_sample(const std::filesystem::path& dir, const synthcity::TileSample& tile);

synthcity::TileSample read_sample(const std::filesystem::path& dir);

void write_stats(const std::filesystem::path& split_dir, const SplitStats& stats);
SplitStats read_stats(const std::filesystem::path& split_dir);

void write_manifest(const std::filesystem::path& split_dir,
                    const std::vector<std::string>& ids);
std::vector<std::string> read_manifest(const std::filesystem::path& split_dir);

/// Loads every sample of a split, deriving pseudo ground truth and overlap
/// masks, and re-checking the label invariants.
std::vector<datapipe::SamplePair> load_split(const std::filesystem::path& dataset_dir,
                                             const std::string& split);

} // namespace dsmcd::dataset_io
