#pragma once

#include <cstdint>
#include <filesystem>

#include "densemp/grid.hpp"

namespace densemp {

/// Magic word of the raw float grid format: little-endian int32 {magic, H, W} followed by
/// H*W little-endian float32 values in row-major order.
inline constexpr std::int32_t kRawFloatMagic = 0x46504D44;  // "DMPF"

/// Reads a grayscale PNG (8 or 16 bit) or a raw float grid; the format is detected from the
/// file signature. Values are returned unscaled (PNG: 0..255 or 0..65535).
Grid<double> read_intensity(const std::filesystem::path& path);

void write_raw_float(const std::filesystem::path& path, const Grid<double>& grid);

/// 8-bit grayscale PNG; values are clamped to [0,1] and scaled by 255.
void write_png_unit(const std::filesystem::path& path, const Grid<double>& grid);
void write_png_u8(const std::filesystem::path& path, const Grid<std::uint8_t>& grid);
void write_png_u16(const std::filesystem::path& path, const Grid<std::uint16_t>& grid);

/// Reads a PNG that stores small integer labels (masks, annotation maps).
LabelMap read_label_png(const std::filesystem::path& path);
Mask read_mask_png(const std::filesystem::path& path);
/// Masks are written as 0/255 so they are viewable; read_mask_png maps any nonzero to 1.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

/// Bilinear resampling with half-pixel centers and edge clamping.
Grid<double> resize_bilinear(const Grid<double>& src, int out_height, int out_width);

/// Per-slice min-max normalization to [0,1]. Zero dynamic range yields all zeros.
Grid<double> minmax_normalize(const Grid<double>& src);

}  // namespace densemp
