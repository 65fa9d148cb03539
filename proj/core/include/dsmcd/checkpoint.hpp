#pragma once

#include <filesystem>
#include <memory>

#include "dsmcd/model.hpp"

namespace dsmcd::checkpoint {

/// Checkpoint container: a JSON header (model config + named parameter
/// index) followed by raw little-endian float64 data. Parameter names are
/// the stable identity across versions.
void save(const std::filesystem::path& path, const model::ChangeModel& m);

/// Rebuilds the model from the stored config and restores every parameter
/// by name.
std::unique_ptr<model::ChangeModel> load(const std::filesystem::path& path);

} // namespace dsmcd::checkpoint
