#include "graspstn/cornell.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "graspstn/error.hpp"
#include "graspstn/rng.hpp"
#include "json.hpp"

namespace graspstn {

namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

bool finite2(const Eigen::Vector2d& p) {
  return std::isfinite(p.x()) && std::isfinite(p.y());
}

void warn(std::vector<std::string>* warnings, const std::string& msg) {
  if (warnings) warnings->push_back(msg);
}

}  // namespace

void MultiModalImage::validate() const {
  if (data.size() != static_cast<std::size_t>(kChannels) * kSize * kSize) {
    throw ContractError("MultiModalImage: wrong buffer size");
  }
  const std::size_t plane = static_cast<std::size_t>(kSize) * kSize;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw ContractError("MultiModalImage: non-finite value");
    }
    if (i < 3 * plane && (data[i] < 0.0f || data[i] > 1.0f)) {
      throw ContractError("MultiModalImage: RGB outside [0,1]");
    }
  }
  const float* nx = data.data() + 4 * plane;
  const float* ny = data.data() + 5 * plane;
  const float* nz = data.data() + 6 * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    const float n2 = nx[i] * nx[i] + ny[i] * ny[i] + nz[i] * nz[i];
    if (std::abs(std::sqrt(n2) - 1.0f) > 1e-6f) {
      throw ContractError("MultiModalImage: normal not unit length");
    }
  }
  const float* depth = data.data() + 3 * plane;
  double mean = 0;
  for (std::size_t i = 0; i < plane; ++i) mean += depth[i];
  mean /= static_cast<double>(plane);
  if (std::abs(mean) > 1e-2) {
    throw ContractError("MultiModalImage: depth channel not zero-mean");
  }
}

std::vector<GraspRect> parse_rect_file(const std::filesystem::path& path,
                                       int* rects_skipped,
                                       std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw IoError("parse_rect_file: cannot open " + path.string());

  std::vector<Eigen::Vector2d> points;
  std::vector<bool> valid;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string xs, ys;
    ls >> xs >> ys;
    double x = kNaN, y = kNaN;
    bool ok = !xs.empty() && !ys.empty();
    if (ok) {
      try {
        x = std::stod(xs);
        y = std::stod(ys);
      } catch (const std::exception&) {
        ok = false;  // "NaN" parses via stod, anything else falls here
      }
    }
    if (!ok) {
      warn(warnings, path.filename().string() + ":" + std::to_string(line_no) +
                         ": unparseable corner line");
    }
    points.emplace_back(x, y);
    valid.push_back(ok);
  }

  std::vector<GraspRect> rects;
  const std::size_t groups = points.size() / 4;
  if (points.size() % 4 != 0) {
    warn(warnings, path.filename().string() + ": trailing partial rectangle (" +
                       std::to_string(points.size() % 4) + " lines) rejected");
    if (rects_skipped) ++*rects_skipped;
  }
  for (std::size_t g = 0; g < groups; ++g) {
    std::array<Eigen::Vector2d, 4> corners;
    bool ok = true;
    for (int i = 0; i < 4; ++i) {
      corners[static_cast<std::size_t>(i)] = points[g * 4 + i];
      ok = ok && valid[g * 4 + i] && finite2(points[g * 4 + i]);
    }
    if (!ok) {
      warn(warnings, path.filename().string() + ": rectangle " +
                         std::to_string(g + 1) + " has invalid coordinates");
      if (rects_skipped) ++*rects_skipped;
      continue;
    }
    try {
      rects.push_back(rect_from_corners(corners));
    } catch (const Error&) {
      warn(warnings, path.filename().string() + ": rectangle " +
                         std::to_string(g + 1) + " is degenerate");
      if (rects_skipped) ++*rects_skipped;
    }
  }
  return rects;
}

Tensor<float> depth_from_pointcloud(const std::filesystem::path& path,
                                    int width, int height) {
  std::ifstream in(path);
  if (!in) throw IoError("depth_from_pointcloud: cannot open " + path.string());

  Tensor<float> depth = Tensor<float>::filled(
      Shape{static_cast<Index>(height), static_cast<Index>(width)}, kNaN);
  auto& v = depth.mutable_array();

  std::string line;
  bool in_data = false;
  while (std::getline(in, line)) {
    if (!in_data) {
      if (line.rfind("DATA", 0) == 0) in_data = true;
      continue;
    }
    std::istringstream ls(line);
    double x, y, z, rgb;
    long index;
    if (!(ls >> x >> y >> z >> rgb >> index)) continue;
    if (index < 0 || index >= static_cast<long>(width) * height) continue;
    if (!std::isfinite(z)) continue;
    v[static_cast<Index>(index)] = static_cast<float>(z);
  }
  if (!in_data) {
    throw IoError("depth_from_pointcloud: no DATA section in " + path.string());
  }
  return depth;
}

Tensor<float> depth_from_png16(const std::filesystem::path& path) {
  ImageU16 img = read_png_gray16(path);
  Tensor<float> depth = Tensor<float>::zeros(
      Shape{static_cast<Index>(img.height), static_cast<Index>(img.width)});
  auto& v = depth.mutable_array();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    // stored millimeters; 0 encodes a hole
    v[static_cast<Index>(i)] =
        img.pixels[i] == 0 ? kNaN : static_cast<float>(img.pixels[i]) / 1000.0f;
  }
  return depth;
}

void fill_depth_holes(Tensor<float>& depth) {
  const Index h = depth.dim(0), w = depth.dim(1);
  auto& v = depth.mutable_array();

  std::vector<Index> holes;
  for (Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) holes.push_back(i);
  }
  if (holes.empty()) return;
  if (static_cast<Index>(holes.size()) == v.size()) {
    throw ContractError("fill_depth_holes: no valid depth pixels");
  }

  std::vector<float> filled(holes.size());
  for (std::size_t hi = 0; hi < holes.size(); ++hi) {
    const Index r0 = holes[hi] / w, c0 = holes[hi] % w;
    long best_d2 = -1;
    Index best_r = 0, best_c = 0;
    // expanding Chebyshev rings; keep scanning until the ring lower bound
    // exceeds the best Euclidean distance found
    for (Index ring = 1; ring < std::max(h, w); ++ring) {
      if (best_d2 >= 0 && static_cast<long>(ring) * ring > best_d2) break;
      const Index rlo = std::max<Index>(0, r0 - ring);
      const Index rhi = std::min<Index>(h - 1, r0 + ring);
      const Index clo = std::max<Index>(0, c0 - ring);
      const Index chi = std::min<Index>(w - 1, c0 + ring);
      for (Index r = rlo; r <= rhi; ++r) {
        const bool edge_row = (r == r0 - ring || r == r0 + ring);
        const Index step = edge_row ? 1 : std::max<Index>(1, chi - clo);
        for (Index c = clo; c <= chi; c += step) {
          if (!edge_row && c != clo && c != chi) continue;
          const float val = v[r * w + c];
          if (!std::isfinite(val)) continue;
          const long dr = r - r0, dc = c - c0;
          const long d2 = dr * dr + dc * dc;
          if (best_d2 < 0 || d2 < best_d2 ||
              (d2 == best_d2 && (r < best_r || (r == best_r && c < best_c)))) {
            best_d2 = d2;
            best_r = r;
            best_c = c;
          }
        }
      }
    }
    filled[hi] = v[best_r * w + best_c];
  }
  for (std::size_t hi = 0; hi < holes.size(); ++hi) v[holes[hi]] = filled[hi];
}

template <typename T>
Tensor<T> surface_normals(const Tensor<T>& depth) {
  if (depth.rank() != 2) throw ShapeError("surface_normals: depth [H,W]");
  if (!depth.all_finite()) {
    throw ContractError("surface_normals: depth contains holes");
  }
  const Index h = depth.dim(0), w = depth.dim(1);
  Tensor<T> out = Tensor<T>::zeros(Shape{3, h, w});
  auto& n = out.mutable_array();
  const auto& z = depth.array();
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Index xm = x > 0 ? x - 1 : x, xp = x < w - 1 ? x + 1 : x;
      const Index ym = y > 0 ? y - 1 : y, yp = y < h - 1 ? y + 1 : y;
      const T dzdx = (z[y * w + xp] - z[y * w + xm]) / static_cast<T>(xp - xm);
      const T dzdy = (z[yp * w + x] - z[ym * w + x]) / static_cast<T>(yp - ym);
      const T inv = T(1) / std::sqrt(dzdx * dzdx + dzdy * dzdy + T(1));
      n[0 * h * w + y * w + x] = -dzdx * inv;
      n[1 * h * w + y * w + x] = -dzdy * inv;
      n[2 * h * w + y * w + x] = inv;
    }
  }
  return out;
}

template Tensor<float> surface_normals<float>(const Tensor<float>&);
template Tensor<double> surface_normals<double>(const Tensor<double>&);

GraspSample preprocess(const ImageU8& raw_rgb, const Tensor<float>& raw_depth,
                       std::vector<GraspRect> positives,
                       std::vector<GraspRect> negatives,
                       const std::string& source_id) {
  constexpr int S = MultiModalImage::kSize;
  if (raw_rgb.width < S || raw_rgb.height < S) {
    throw ContractError("preprocess: image smaller than 400x400");
  }
  if (raw_depth.dim(0) != raw_rgb.height || raw_depth.dim(1) != raw_rgb.width) {
    throw ShapeError("preprocess: depth/RGB size mismatch");
  }
  const int cx = (raw_rgb.width - S) / 2;
  const int cy = (raw_rgb.height - S) / 2;

  GraspSample sample;
  sample.image.source_id = source_id;
  sample.image.crop_x = cx;
  sample.image.crop_y = cy;
  sample.image.data.assign(
      static_cast<std::size_t>(MultiModalImage::kChannels) * S * S, 0.0f);

  // RGB -> [0,1]
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      for (int c = 0; c < 3; ++c) {
        sample.image.at(c, y, x) =
            static_cast<float>(raw_rgb.at(cx + x, cy + y, c)) / 255.0f;
      }
    }
  }

  // depth crop, hole fill, normals from raw units, then normalization
  Tensor<float> depth = Tensor<float>::zeros(Shape{S, S});
  {
    auto& d = depth.mutable_array();
    const auto& rd = raw_depth.array();
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        d[y * S + x] = rd[(cy + y) * raw_rgb.width + (cx + x)];
      }
    }
  }
  fill_depth_holes(depth);
  // normals from millimeter-scale depth: meter units give ~1e-3 slopes per
  // pixel and a normal map that is flat everywhere
  Tensor<float> depth_mm = Tensor<float>::zeros(Shape{S, S});
  depth_mm.mutable_array() = depth.array() * 1000.0f;
  Tensor<float> normals = surface_normals(depth_mm);

  double mean = 0;
  for (Index i = 0; i < depth.size(); ++i) mean += depth[i];
  mean /= static_cast<double>(depth.size());
  double var = 0;
  for (Index i = 0; i < depth.size(); ++i) {
    const double d = depth[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(depth.size());
  double std_dev = std::sqrt(var);
  if (std_dev < 1e-8) std_dev = 1.0;  // near-constant depth (backgrounds)

  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      sample.image.at(3, y, x) =
          static_cast<float>((depth[y * S + x] - mean) / std_dev);
      for (int c = 0; c < 3; ++c) {
        sample.image.at(4 + c, y, x) = normals[(c * S + y) * S + x];
      }
    }
  }

  auto translate = [&](std::vector<GraspRect>& rects) {
    std::vector<GraspRect> kept;
    for (GraspRect r : rects) {
      r.x -= cx;
      r.y -= cy;
      if (r.x < 0 || r.x >= S || r.y < 0 || r.y >= S) continue;  // center out
      kept.push_back(r);
    }
    rects = std::move(kept);
  };
  translate(positives);
  translate(negatives);
  sample.positives = std::move(positives);
  sample.negatives = std::move(negatives);
  return sample;
}

std::vector<GraspSample> make_background_patches(int n, std::uint64_t seed) {
  constexpr int S = MultiModalImage::kSize;
  std::vector<GraspSample> out;
  out.reserve(static_cast<std::size_t>(std::max(0, n)));
  Rng root(seed);
  for (int i = 0; i < n; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    ImageU8 rgb;
    rgb.width = S;
    rgb.height = S;
    rgb.channels = 3;
    rgb.pixels.resize(static_cast<std::size_t>(S) * S * 3);
    const double base[3] = {rng.uniform(0.92, 1.0), rng.uniform(0.92, 1.0),
                            rng.uniform(0.92, 1.0)};
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double v =
              std::clamp(base[c] + rng.normal(0.0, 0.01), 0.0, 1.0);
          rgb.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
    Tensor<float> depth = Tensor<float>::zeros(Shape{S, S});
    const double zbase = rng.uniform(0.9, 1.1);
    for (Index p = 0; p < depth.size(); ++p) {
      depth.mutable_array()[p] =
          static_cast<float>(zbase + rng.normal(0.0, 2e-4));
    }
    GraspSample sample = preprocess(rgb, depth, {}, {},
                                    "background" + std::to_string(i));
    sample.is_background = true;
    out.push_back(std::move(sample));
  }
  return out;
}

LoadResult load_cornell(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) {
    throw IoError("load_cornell: not a directory: " + root.string());
  }

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("pcd", 0) != 0) continue;
    // an item is named by its image (pcdNNNNr.png) or annotations
    if (name.size() > 5 && name.substr(name.size() - 5) == "r.png") {
      ids.push_back(name.substr(0, name.size() - 5));
    } else if (name.size() > 8 && name.substr(name.size() - 8) == "cpos.txt") {
      ids.push_back(name.substr(0, name.size() - 8));
    }
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  LoadResult result;
  for (const std::string& id : ids) {
    const fs::path rgb_path = root / (id + "r.png");
    const fs::path pc_path = root / (id + ".txt");
    const fs::path d_path = root / (id + "d.png");
    const fs::path pos_path = root / (id + "cpos.txt");
    const fs::path neg_path = root / (id + "cneg.txt");

    if (!fs::exists(rgb_path)) {
      throw IoError("load_cornell: missing image " + rgb_path.string());
    }
    if (!fs::exists(pos_path) || !(fs::exists(pc_path) || fs::exists(d_path))) {
      result.report.items_skipped++;
      result.report.warnings.push_back(id + ": missing annotation or depth");
      continue;
    }

    try {
      ImageU8 rgb = read_png_rgb8(rgb_path);
      Tensor<float> depth = fs::exists(pc_path)
                                ? depth_from_pointcloud(pc_path, rgb.width,
                                                        rgb.height)
                                : depth_from_png16(d_path);
      std::vector<GraspRect> pos = parse_rect_file(
          pos_path, &result.report.rects_skipped, &result.report.warnings);
      std::vector<GraspRect> neg;
      if (fs::exists(neg_path)) {
        neg = parse_rect_file(neg_path, &result.report.rects_skipped,
                              &result.report.warnings);
      }
      GraspSample sample = preprocess(rgb, depth, pos, neg, id);
      result.report.positives += static_cast<long>(sample.positives.size());
      result.report.negatives += static_cast<long>(sample.negatives.size());
      result.samples.push_back(std::move(sample));
      result.report.images_loaded++;
    } catch (const IoError& e) {
      result.report.items_skipped++;
      result.report.warnings.push_back(id + ": " + e.what());
    } catch (const ContractError& e) {
      result.report.items_skipped++;
      result.report.warnings.push_back(id + ": " + e.what());
    }
  }
  return result;
}

DatasetSplit split_imagewise(const std::vector<GraspSample>& samples,
                             double ratio_train, std::uint64_t seed) {
  if (samples.size() < 2) {
    throw ContractError("split_imagewise: need at least 2 samples");
  }
  if (!(ratio_train > 0.0) || !(ratio_train < 1.0)) {
    throw ContractError("split_imagewise: ratio must lie in (0,1)");
  }

  // unique source ids, keeping every sample of one image on one side
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.image.source_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  Rng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) {  // Fisher-Yates
    const std::size_t j =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(ids[i - 1], ids[j]);
  }

  const auto n_train = static_cast<std::size_t>(std::floor(
      static_cast<double>(ids.size()) * ratio_train + 1e-9));
  DatasetSplit split;
  split.seed = seed;
  split.train_ids.assign(ids.begin(), ids.begin() + n_train);
  split.test_ids.assign(ids.begin() + n_train, ids.end());
  return split;
}

std::vector<std::size_t> select_samples(const std::vector<GraspSample>& samples,
                                        const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (std::find(ids.begin(), ids.end(), samples[i].image.source_id) !=
        ids.end()) {
      out.push_back(i);
    }
  }
  return out;
}

namespace {

nlohmann::json rects_to_json(const std::vector<GraspRect>& rects) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rects) {
    arr.push_back({r.x, r.y, r.theta_deg, r.w, r.h});
  }
  return arr;
}

std::vector<GraspRect> rects_from_json(const nlohmann::json& arr) {
  std::vector<GraspRect> out;
  for (const auto& e : arr) {
    out.push_back(GraspRect{e[0].get<double>(), e[1].get<double>(),
                            e[2].get<double>(), e[3].get<double>(),
                            e[4].get<double>()});
  }
  return out;
}

}  // namespace

void save_cache(const std::filesystem::path& dir,
                const std::vector<GraspSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["version"] = 1;
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::string file = "sample" + std::to_string(i) + ".bin";
    nlohmann::json e;
    e["id"] = s.image.source_id;
    e["file"] = file;
    e["crop"] = {s.image.crop_x, s.image.crop_y};
    e["is_background"] = s.is_background;
    e["positives"] = rects_to_json(s.positives);
    e["negatives"] = rects_to_json(s.negatives);
    entries.push_back(e);

    std::ofstream bin(dir / file, std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("save_cache: cannot write " + (dir / file).string());
    static_assert(sizeof(float) == 4);
    bin.write(reinterpret_cast<const char*>(s.image.data.data()),
              static_cast<std::streamsize>(s.image.data.size() * 4));
  }
  manifest["samples"] = entries;
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw IoError("save_cache: cannot write manifest");
  mf << manifest.dump(2) << "\n";
}

std::vector<GraspSample> load_cache(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("load_cache: missing manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.at("version").get<int>() != 1) {
    throw ArtifactMismatchError("load_cache: unsupported cache version");
  }
  std::vector<GraspSample> samples;
  for (const auto& e : manifest.at("samples")) {
    GraspSample s;
    s.image.source_id = e.at("id").get<std::string>();
    s.image.crop_x = e.at("crop")[0].get<int>();
    s.image.crop_y = e.at("crop")[1].get<int>();
    s.is_background = e.at("is_background").get<bool>();
    s.positives = rects_from_json(e.at("positives"));
    s.negatives = rects_from_json(e.at("negatives"));
    const std::size_t count = static_cast<std::size_t>(
        MultiModalImage::kChannels) * MultiModalImage::kSize *
        MultiModalImage::kSize;
    s.image.data.resize(count);
    std::ifstream bin(dir / e.at("file").get<std::string>(), std::ios::binary);
    if (!bin) throw IoError("load_cache: missing sample file");
    bin.read(reinterpret_cast<char*>(s.image.data.data()),
             static_cast<std::streamsize>(count * 4));
    if (static_cast<std::size_t>(bin.gcount()) != count * 4) {
      throw IoError("load_cache: truncated sample file");
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace graspstn
