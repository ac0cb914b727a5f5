#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "graspstn/geometry.hpp"

namespace graspstn {

/// Interleaved 8-bit image, row-major.
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int x, int y, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(int x, int y, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

/// 16-bit single-channel image (depth rasters).
struct ImageU16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> pixels;
};

/// Decode a PNG into 3-channel RGB (grayscale and RGBA are converted).
ImageU8 read_png_rgb8(const std::filesystem::path& path);

/// Decode a 16-bit grayscale PNG.
ImageU16 read_png_gray16(const std::filesystem::path& path);

void write_png_rgb8(const std::filesystem::path& path, const ImageU8& image);
void write_png_gray16(const std::filesystem::path& path, const ImageU16& image);

struct Rgb {
  std::uint8_t r, g, b;
};

void draw_line(ImageU8& image, double x0, double y0, double x1, double y1,
               Rgb color, int thickness = 1);

void draw_disc(ImageU8& image, double cx, double cy, double radius, Rgb color);

/// Grasp rectangle overlay: plate edges (p1p2, p3p4) in `plate`, opening
/// edges in `opening`, center dot in `plate`.
void draw_grasp_rect(ImageU8& image, const GraspRect& rect, Rgb plate,
                     Rgb opening, int thickness = 2);

}  // namespace graspstn
