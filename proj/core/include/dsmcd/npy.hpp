#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsmcd/grid.hpp"

namespace dsmcd::npy {

/// Minimal NPY (v1.0) container support for the raster dtypes the dataset
/// layout uses: little-endian float32 and uint8/int8, 2-D (H,W) or
/// 3-D (H,W,C) arrays. Float channels round-trip bit-exactly.

struct Array {
    std::string dtype;        // "<f4", "|u1", "|i1"
    std::vector<size_t> shape;
    std::vector<uint8_t> bytes;

    size_t element_count() const {
        size_t n = 1;
        for (size_t d : shape) n *= d;
        return n;
    }
};

void save(const std::filesystem::path& path, const Array& a);
Array load(const std::filesystem::path& path);

// Grid adapters. Multi-channel grids are written interleaved (H,W,C);
// single-channel as (H,W).
void save_grid(const std::filesystem::path& path, const RasterF& g);
void save_grid(const std::filesystem::path& path, const Grid<uint8_t>& g);
void save_grid(const std::filesystem::path& path, const Grid<int8_t>& g);

RasterF load_f32(const std::filesystem::path& path);
Grid<uint8_t> load_u8(const std::filesystem::path& path);
Grid<int8_t> load_i8(const std::filesystem::path& path);

} // namespace dsmcd::npy
