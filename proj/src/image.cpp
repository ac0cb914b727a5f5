#include "graspstn/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "graspstn/error.hpp"

// Minimal PNG codec over zlib: 8-bit gray/RGB/RGBA and 16-bit gray,
// non-interlaced. Covers the Cornell dataset images and everything this
// project writes; anything else is rejected with a clear error.

namespace graspstn {

namespace {

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a,
                                        '\n'};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t len,
                       std::uint32_t seed = 0) {
  return static_cast<std::uint32_t>(
      ::crc32(seed, reinterpret_cast<const Bytef*>(data),
              static_cast<uInt>(len)));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) |
         static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32(out, crc32_of(out.data() + crc_start, out.size() - crc_start));
}

std::vector<std::uint8_t> zlib_deflate(const std::vector<std::uint8_t>& raw) {
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> out(bound);
  if (compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK) {
    throw IoError("png: deflate failed");
  }
  out.resize(bound);
  return out;
}

std::vector<std::uint8_t> zlib_inflate(const std::vector<std::uint8_t>& comp,
                                       std::size_t expected) {
  std::vector<std::uint8_t> out(expected);
  uLongf len = static_cast<uLongf>(expected);
  const int rc = uncompress(out.data(), &len, comp.data(),
                            static_cast<uLong>(comp.size()));
  if (rc != Z_OK || len != expected) {
    throw IoError("png: inflate failed or size mismatch");
  }
  return out;
}

std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

struct Decoded {
  int width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint8_t> data;  // de-filtered scanlines, big-endian 16-bit
};

Decoded decode_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("png: cannot open " + path.string());
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (file.size() < 8 || std::memcmp(file.data(), kSignature, 8) != 0) {
    throw IoError("png: bad signature in " + path.string());
  }

  Decoded d;
  int color_type = -1, interlace = -1;
  std::vector<std::uint8_t> idat;
  std::vector<std::uint8_t> palette;
  std::size_t pos = 8;
  while (pos + 8 <= file.size()) {
    const std::uint32_t len = get_u32(file.data() + pos);
    if (pos + 12 + len > file.size()) throw IoError("png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
    const std::uint8_t* payload = file.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("png: bad IHDR");
      d.width = static_cast<int>(get_u32(payload));
      d.height = static_cast<int>(get_u32(payload + 4));
      d.bit_depth = payload[8];
      color_type = payload[9];
      interlace = payload[12];
    } else if (std::memcmp(type, "PLTE", 4) == 0) {
      palette.assign(payload, payload + len);
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (d.width <= 0 || d.height <= 0) throw IoError("png: missing IHDR");
  if (interlace != 0) throw IoError("png: interlaced images unsupported");

  switch (color_type) {
    case 0: d.channels = 1; break;
    case 2: d.channels = 3; break;
    case 3: d.channels = 1; break;  // palette indices, expanded below
    case 4: d.channels = 2; break;
    case 6: d.channels = 4; break;
    default: throw IoError("png: unsupported color type");
  }
  if (d.bit_depth != 8 && d.bit_depth != 16) {
    throw IoError("png: only 8/16-bit depths supported");
  }
  if (color_type == 3 && d.bit_depth != 8) {
    throw IoError("png: palette images must be 8-bit");
  }

  const int bpp = d.channels * d.bit_depth / 8;  // bytes per pixel
  const std::size_t stride = static_cast<std::size_t>(d.width) * bpp;
  const std::size_t expected = (stride + 1) * static_cast<std::size_t>(d.height);
  std::vector<std::uint8_t> raw = zlib_inflate(idat, expected);

  d.data.resize(stride * static_cast<std::size_t>(d.height));
  std::vector<std::uint8_t> prev(stride, 0);
  for (int y = 0; y < d.height; ++y) {
    const std::uint8_t filter = raw[(stride + 1) * y];
    const std::uint8_t* src = raw.data() + (stride + 1) * y + 1;
    std::uint8_t* dst = d.data.data() + stride * y;
    for (std::size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<std::size_t>(bpp) ? dst[i - bpp] : 0;
      const int b = prev[i];
      const int c = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError("png: bad filter type");
      }
      dst[i] = static_cast<std::uint8_t>(v);
    }
    std::memcpy(prev.data(), dst, stride);
  }

  if (color_type == 3) {
    // expand palette to RGB
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(d.width) *
                                  d.height * 3);
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      const std::size_t pi = static_cast<std::size_t>(d.data[i]) * 3;
      if (pi + 2 >= palette.size()) throw IoError("png: palette overrun");
      rgb[i * 3 + 0] = palette[pi + 0];
      rgb[i * 3 + 1] = palette[pi + 1];
      rgb[i * 3 + 2] = palette[pi + 2];
    }
    d.data = std::move(rgb);
    d.channels = 3;
  }
  return d;
}

void write_png(const std::filesystem::path& path, int width, int height,
               int channels, int bit_depth,
               const std::vector<std::uint8_t>& scanline_data) {
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(static_cast<std::uint8_t>(bit_depth));
  ihdr.push_back(channels == 3 ? 2 : 0);  // RGB or grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);

  const std::size_t stride =
      static_cast<std::size_t>(width) * channels * bit_depth / 8;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), scanline_data.begin() + stride * y,
               scanline_data.begin() + stride * (y + 1));
  }

  std::vector<std::uint8_t> out(kSignature, kSignature + 8);
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", zlib_deflate(raw));
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("png: cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
}

}  // namespace

ImageU8 read_png_rgb8(const std::filesystem::path& path) {
  Decoded d = decode_png(path);
  if (d.bit_depth != 8) {
    throw IoError("png: expected 8-bit image in " + path.string());
  }
  ImageU8 img;
  img.width = d.width;
  img.height = d.height;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(d.width) * d.height * 3);
  const std::size_t n = static_cast<std::size_t>(d.width) * d.height;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint8_t r, g, b;
    switch (d.channels) {
      case 1: r = g = b = d.data[i]; break;
      case 2: r = g = b = d.data[i * 2]; break;
      case 3:
        r = d.data[i * 3];
        g = d.data[i * 3 + 1];
        b = d.data[i * 3 + 2];
        break;
      default:
        r = d.data[i * 4];
        g = d.data[i * 4 + 1];
        b = d.data[i * 4 + 2];
        break;
    }
    img.pixels[i * 3] = r;
    img.pixels[i * 3 + 1] = g;
    img.pixels[i * 3 + 2] = b;
  }
  return img;
}

ImageU16 read_png_gray16(const std::filesystem::path& path) {
  Decoded d = decode_png(path);
  if (d.bit_depth != 16 || d.channels != 1) {
    throw IoError("png: expected 16-bit grayscale in " + path.string());
  }
  ImageU16 img;
  img.width = d.width;
  img.height = d.height;
  img.pixels.resize(static_cast<std::size_t>(d.width) * d.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<std::uint16_t>((d.data[i * 2] << 8) |
                                               d.data[i * 2 + 1]);
  }
  return img;
}

void write_png_rgb8(const std::filesystem::path& path, const ImageU8& image) {
  if (image.channels != 3) throw ContractError("write_png_rgb8: need RGB");
  write_png(path, image.width, image.height, 3, 8, image.pixels);
}

void write_png_gray16(const std::filesystem::path& path,
                      const ImageU16& image) {
  std::vector<std::uint8_t> be(image.pixels.size() * 2);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    be[i * 2] = static_cast<std::uint8_t>(image.pixels[i] >> 8);
    be[i * 2 + 1] = static_cast<std::uint8_t>(image.pixels[i] & 0xff);
  }
  write_png(path, image.width, image.height, 1, 16, be);
}

void draw_disc(ImageU8& image, double cx, double cy, double radius, Rgb color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x1 = std::min(image.width - 1, static_cast<int>(std::ceil(cx + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y1 = std::min(image.height - 1, static_cast<int>(std::ceil(cy + radius)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= radius * radius) {
        image.at(x, y, 0) = color.r;
        image.at(x, y, 1) = color.g;
        image.at(x, y, 2) = color.b;
      }
    }
  }
}

void draw_line(ImageU8& image, double x0, double y0, double x1, double y1,
               Rgb color, int thickness) {
  const double dx = x1 - x0, dy = y1 - y0;
  const double len = std::hypot(dx, dy);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
  const double r = std::max(0.5, thickness / 2.0);
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    draw_disc(image, x0 + t * dx, y0 + t * dy, r, color);
  }
}

void draw_grasp_rect(ImageU8& image, const GraspRect& rect, Rgb plate,
                     Rgb opening, int thickness) {
  const auto c = rect_corners(rect);
  draw_line(image, c[0].x(), c[0].y(), c[1].x(), c[1].y(), plate, thickness);
  draw_line(image, c[2].x(), c[2].y(), c[3].x(), c[3].y(), plate, thickness);
  draw_line(image, c[1].x(), c[1].y(), c[2].x(), c[2].y(), opening, thickness);
  draw_line(image, c[3].x(), c[3].y(), c[0].x(), c[0].y(), opening, thickness);
  draw_disc(image, rect.x, rect.y, std::max(2.0, thickness + 1.0), plate);
}

}  // namespace graspstn
