#include "graspstn/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "graspstn/error.hpp"
#include "graspstn/image.hpp"
#include "graspstn/rng.hpp"

namespace graspstn {

namespace {

constexpr double kDegToRad = 0.017453292519943295;

struct Bar {
  double cx, cy, angle_deg, length, width;

  bool contains(double x, double y) const {
    const double th = angle_deg * kDegToRad;
    const double c = std::cos(th), s = std::sin(th);
    const double rx = x - cx, ry = y - cy;
    const double along = rx * c + ry * s;
    const double across = -rx * s + ry * c;
    return std::abs(along) <= length / 2 && std::abs(across) <= width / 2;
  }
};

void write_rect_file(const std::filesystem::path& path,
                     const std::vector<GraspRect>& rects) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("fixture: cannot write " + path.string());
  out.setf(std::ios::fixed);
  out.precision(4);
  for (const auto& r : rects) {
    for (const auto& p : rect_corners(r)) {
      out << p.x() << " " << p.y() << "\n";
    }
  }
}

void write_pointcloud(const std::filesystem::path& path,
                      const std::vector<float>& depth, int width, int height) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("fixture: cannot write " + path.string());
  long points = 0;
  for (float d : depth) {
    if (std::isfinite(d)) ++points;
  }
  out << "# .PCD v.7 - Point Cloud Data file format\n";
  out << "VERSION .7\nFIELDS x y z rgb index\nSIZE 4 4 4 4 4\n";
  out << "TYPE F F F F U\nCOUNT 1 1 1 1 1\n";
  out << "WIDTH " << points << "\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\n";
  out << "POINTS " << points << "\nDATA ascii\n";
  out.setf(std::ios::fixed);
  out.precision(6);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const float z = depth[static_cast<std::size_t>(y) * width + x];
      if (!std::isfinite(z)) continue;  // hole: point absent, like real scans
      out << (x - width / 2) * 0.001 << " " << (y - height / 2) * 0.001 << " "
          << z << " 0 " << (static_cast<long>(y) * width + x) << "\n";
    }
  }
}

}  // namespace

std::vector<FixtureItem> write_fixture_dataset(const std::filesystem::path& dir,
                                               const FixtureOptions& options) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Rng root(options.seed);

  const int W = options.width, H = options.height;
  std::vector<FixtureItem> items;

  for (int i = 0; i < options.items; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    char id[16];
    std::snprintf(id, sizeof(id), "pcd%04d", 100 + i);

    // object: one rotated bar near the crop center
    const double angles[] = {0, 30, -45, 60, -30, 75, -60, 15};
    Bar bar;
    bar.cx = W / 2.0 + rng.uniform(-45.0, 45.0);
    bar.cy = H / 2.0 + rng.uniform(-40.0, 40.0);
    bar.angle_deg = angles[i % 8] + rng.uniform(-4.0, 4.0);
    bar.length = rng.uniform(170.0, 230.0);
    bar.width = rng.uniform(30.0, 48.0);

    // RGB: near-white table, saturated bar
    ImageU8 rgb;
    rgb.width = W;
    rgb.height = H;
    rgb.channels = 3;
    rgb.pixels.resize(static_cast<std::size_t>(W) * H * 3);
    const double bar_color[3] = {rng.uniform(0.1, 0.7), rng.uniform(0.1, 0.7),
                                 rng.uniform(0.1, 0.7)};
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        for (int c = 0; c < 3; ++c) {
          double v = bar.contains(x, y)
                         ? bar_color[c] + rng.normal(0.0, 0.015)
                         : 0.96 + rng.normal(0.0, 0.01);
          v = std::clamp(v, 0.0, 1.0);
          rgb.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v * 255));
        }
      }
    }
    write_png_rgb8(dir / (std::string(id) + "r.png"), rgb);

    // depth: tilted table plane, bar raised toward the camera
    std::vector<float> depth(static_cast<std::size_t>(W) * H);
    const double tilt_x = rng.uniform(-2e-5, 2e-5);
    const double tilt_y = rng.uniform(-2e-5, 2e-5);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double z = 0.95 + tilt_x * x + tilt_y * y + rng.normal(0.0, 1.5e-4);
        if (bar.contains(x, y)) z -= 0.035;
        depth[static_cast<std::size_t>(y) * W + x] = static_cast<float>(z);
      }
    }
    const bool pointcloud = !options.mixed_depth || (i % 2 == 0);
    if (pointcloud) {
      for (int hole = 0; hole < options.depth_holes; ++hole) {
        const int hx = rng.uniform_int(1, W - 2);
        const int hy = rng.uniform_int(1, H - 2);
        depth[static_cast<std::size_t>(hy) * W + hx] =
            std::numeric_limits<float>::quiet_NaN();
      }
      write_pointcloud(dir / (std::string(id) + ".txt"), depth, W, H);
    } else {
      ImageU16 dimg;
      dimg.width = W;
      dimg.height = H;
      dimg.pixels.resize(depth.size());
      for (std::size_t p = 0; p < depth.size(); ++p) {
        dimg.pixels[p] = static_cast<std::uint16_t>(
            std::lround(std::clamp(depth[p] * 1000.0f, 1.0f, 65535.0f)));
      }
      write_png_gray16(dir / (std::string(id) + "d.png"), dimg);
    }

    // ground truth: grasps across the bar; plate direction = bar axis
    FixtureItem item;
    item.id = id;
    const double th = bar.angle_deg * kDegToRad;
    const double ux = std::cos(th), uy = std::sin(th);
    const int n_pos = 2 + (i % 4);  // 2..5 exercises slot masking/overflow
    for (int g = 0; g < n_pos; ++g) {
      const double t = (n_pos == 1) ? 0.0
                                    : -0.27 + 0.54 * g / (n_pos - 1);
      GraspRect r;
      r.x = bar.cx + t * bar.length * ux;
      r.y = bar.cy + t * bar.length * uy;
      r.theta_deg = normalize_theta_deg(bar.angle_deg);
      r.h = 44.0;                  // plate length along the bar
      r.w = bar.width + 26.0;      // opening spans the bar width
      item.positives.push_back(r);
    }
    // negatives: grasp along the bar axis (plates perpendicular), and one
    // patch of empty table
    GraspRect bad1;
    bad1.x = bar.cx;
    bad1.y = bar.cy;
    bad1.theta_deg = normalize_theta_deg(bar.angle_deg + 90.0);
    bad1.h = 44.0;
    bad1.w = 60.0;
    item.negatives.push_back(bad1);
    GraspRect bad2;
    const double side = (bar.cy < H / 2.0) ? 1.0 : -1.0;
    bad2.x = bar.cx - 150.0 * uy;
    bad2.y = std::clamp(bar.cy + side * 150.0 * ux + 120.0 * side, 60.0,
                        H - 60.0);
    bad2.x = std::clamp(bad2.x, 140.0, W - 140.0);
    bad2.theta_deg = normalize_theta_deg(rng.uniform(-90.0, 90.0));
    bad2.h = 44.0;
    bad2.w = 60.0;
    item.negatives.push_back(bad2);

    write_rect_file(dir / (std::string(id) + "cpos.txt"), item.positives);
    write_rect_file(dir / (std::string(id) + "cneg.txt"), item.negatives);
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace graspstn
