#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace dsmcd {

/// Planar multi-channel raster grid. Storage is [channel][row][col],
/// row-major within a channel.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int channels, int height, int width, T fill = T{})
        : channels_(channels), height_(height), width_(width),
          data_(static_cast<size_t>(channels) * height * width, fill) {
        if (channels <= 0 || height <= 0 || width <= 0)
            throw std::invalid_argument("Grid: dimensions must be positive");
    }

    static Grid single(int height, int width, T fill = T{}) {
        return Grid(1, height, width, fill);
    }

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    size_t size() const { return data_.size(); }
    size_t pixels() const { return static_cast<size_t>(height_) * width_; }
    bool empty() const { return data_.empty(); }

    T& at(int c, int y, int x) { return data_[idx(c, y, x)]; }
    const T& at(int c, int y, int x) const { return data_[idx(c, y, x)]; }

    // Single-channel shorthand.
    T& at(int y, int x) { return data_[idx(0, y, x)]; }
    const T& at(int y, int x) const { return data_[idx(0, y, x)]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& raw() { return data_; }
    const std::vector<T>& raw() const { return data_; }

    bool same_shape(const Grid& o) const {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }
    bool same_plane(const Grid& o) const {
        return height_ == o.height_ && width_ == o.width_;
    }

    bool operator==(const Grid& o) const {
        return channels_ == o.channels_ && height_ == o.height_ &&
               width_ == o.width_ && data_ == o.data_;
    }

private:
    size_t idx(int c, int y, int x) const {
        return (static_cast<size_t>(c) * height_ + y) * width_ + x;
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

using RasterF = Grid<float>;
using RasterD = Grid<double>;
using RasterU8 = Grid<uint8_t>;
using MaskU8 = Grid<uint8_t>;
using LabelMap = Grid<uint8_t>;
/// Relevance mask, values in {-1, +1}.
using RelevanceMask = Grid<int8_t>;

inline void require_same_plane(const char* op, int h1, int w1, int h2, int w2) {
    if (h1 != h2 || w1 != w2)
        throw std::invalid_argument(std::string(op) + ": dimension mismatch");
}

} // namespace dsmcd
