#include "densemp/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace densemp {
namespace {

static_assert(std::endian::native == std::endian::little, "raw float I/O assumes a little-endian host");

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

bool has_png_signature(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<unsigned char, 8> sig{};
  in.read(reinterpret_cast<char*>(sig.data()), sig.size());
  return in.gcount() == 8 && png_sig_cmp(sig.data(), 0, 8) == 0;
}

struct PngPixels {
  int height = 0;
  int width = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> values;
};

[[noreturn]] void png_error_fn(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// Decodes to a single gray channel. libpng reports errors via longjmp: every object with a
// destructor is declared before setjmp so the jump never skips one.
PngPixels decode_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  PngPixels out;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode " + path.string() + ": " + err);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  depth = png_get_bit_depth(png, info);
  out.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * out.height);
  rows.resize(out.height);
  for (int r = 0; r < out.height; ++r) rows[r] = buffer.data() + rowbytes * r;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t channels = rowbytes / (static_cast<std::size_t>(out.width) * (depth == 16 ? 2 : 1));
  out.values.resize(static_cast<std::size_t>(out.height) * out.width);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      const std::size_t px = static_cast<std::size_t>(c) * channels;
      std::uint16_t v;
      if (depth == 16) {
        std::memcpy(&v, rows[r] + 2 * px, 2);
      } else {
        v = rows[r][px];
      }
      out.values[static_cast<std::size_t>(r) * out.width + c] = v;
    }
  }
  return out;
}

void encode_png(const std::filesystem::path& path, int height, int width, int depth,
                const std::vector<unsigned char>& bytes) {
  auto file = open_file(path, "wb");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  const std::size_t rowbytes = static_cast<std::size_t>(width) * (depth == 16 ? 2 : 1);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r) rows[r] = const_cast<unsigned char*>(bytes.data() + rowbytes * r);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode " + path.string() + ": " + err);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // No timestamps or text chunks: identical pixels give identical files.
  png_write_info(png, info);
  if (depth == 16) png_set_swap(png);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Grid<double> read_intensity(const std::filesystem::path& path) {
  if (has_png_signature(path)) {
    auto png = decode_png(path);
    Grid<double> g(png.height, png.width);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = png.values[i];
    return g;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<std::int32_t, 3> header{};
  in.read(reinterpret_cast<char*>(header.data()), sizeof(header));
  if (!in || header[0] != kRawFloatMagic) throw IoError(path.string() + " is neither PNG nor a raw float grid");
  if (header[1] <= 0 || header[2] <= 0) throw IoError(path.string() + ": bad raw grid dimensions");
  std::vector<float> raw(static_cast<std::size_t>(header[1]) * header[2]);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!in) throw IoError(path.string() + ": truncated raw grid");
  Grid<double> g(header[1], header[2]);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!std::isfinite(raw[i])) throw IoError(path.string() + ": non-finite value in raw grid");
    g[i] = raw[i];
  }
  return g;
}

void write_raw_float(const std::filesystem::path& path, const Grid<double>& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::array<std::int32_t, 3> header{kRawFloatMagic, grid.height(), grid.width()};
  out.write(reinterpret_cast<const char*>(header.data()), sizeof(header));
  std::vector<float> raw(grid.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<float>(grid[i]);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_png_unit(const std::filesystem::path& path, const Grid<double>& grid) {
  std::vector<unsigned char> bytes(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(grid[i], 0.0, 1.0) * 255.0));
  encode_png(path, grid.height(), grid.width(), 8, bytes);
}

void write_png_u8(const std::filesystem::path& path, const Grid<std::uint8_t>& grid) {
  encode_png(path, grid.height(), grid.width(), 8, grid.storage());
}

void write_png_u16(const std::filesystem::path& path, const Grid<std::uint16_t>& grid) {
  std::vector<unsigned char> bytes(grid.size() * 2);
  std::memcpy(bytes.data(), grid.storage().data(), bytes.size());
  encode_png(path, grid.height(), grid.width(), 16, bytes);
}

LabelMap read_label_png(const std::filesystem::path& path) {
  if (!has_png_signature(path)) throw IoError(path.string() + " is not a PNG");
  auto png = decode_png(path);
  LabelMap g(png.height, png.width);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = png.values[i];
  return g;
}

Mask read_mask_png(const std::filesystem::path& path) {
  auto labels = read_label_png(path);
  Mask m(labels.height(), labels.width());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = labels[i] != 0;
  return m;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
  Grid<std::uint8_t> g(mask.height(), mask.width());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = mask[i] ? 255 : 0;
  write_png_u8(path, g);
}

Grid<double> resize_bilinear(const Grid<double>& src, int out_height, int out_width) {
  if (out_height <= 0 || out_width <= 0) throw ArgumentError("resize target must be positive");
  if (src.empty()) throw ArgumentError("cannot resize an empty grid");
  if (src.height() == out_height && src.width() == out_width) return src;
  const double sy = static_cast<double>(src.height()) / out_height;
  const double sx = static_cast<double>(src.width()) / out_width;
  Grid<double> out(out_height, out_width);
  for (int r = 0; r < out_height; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height() - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double fy = y - y0;
    for (int c = 0; c < out_width; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width() - 1));
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double fx = x - x0;
      const double top = src(y0, x0) * (1.0 - fx) + src(y0, x1) * fx;
      const double bottom = src(y1, x0) * (1.0 - fx) + src(y1, x1) * fx;
      out(r, c) = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

Grid<double> minmax_normalize(const Grid<double>& src) {
  Grid<double> out(src.height(), src.width(), 0.0);
  if (src.empty()) return out;
  const auto [lo, hi] = std::minmax_element(src.values().begin(), src.values().end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = std::clamp((src[i] - *lo) / range, 0.0, 1.0);
  return out;
}

}  // namespace densemp
