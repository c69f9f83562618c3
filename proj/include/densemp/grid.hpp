#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "densemp/errors.hpp"

namespace densemp {

/// Row-major 2-D grid.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
    if (height < 0 || width < 0) throw ArgumentError("grid dimensions must be non-negative");
  }
  Grid(int height, int width, std::vector<T> data) : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(height) * width)
      throw ArgumentError("grid data size does not match dimensions");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * width_ + c]; }
  const T& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * width_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool same_shape(const Grid& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }
  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// Binary mask, values in {0, 1}.
using Mask = Grid<std::uint8_t>;

/// Integer label map (ground-truth annotations or superpixels).
using LabelMap = Grid<std::int32_t>;

/// Single-channel intensity slice normalized to [0, 1]. `channels` > 1 means the
/// intensity plane is logically replicated; the pixels are stored once.
struct ImageSlice {
  Grid<double> pixels;
  std::string slice_id;
  int channels = 1;

  int height() const noexcept { return pixels.height(); }
  int width() const noexcept { return pixels.width(); }

  friend bool operator==(const ImageSlice&, const ImageSlice&) = default;
};

inline std::size_t foreground_count(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.values()) n += v != 0;
  return n;
}

inline bool is_binary(const Mask& m) {
  for (auto v : m.values())
    if (v > 1) return false;
  return true;
}

}  // namespace densemp
