#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "graspstn/geometry.hpp"
#include "graspstn/image.hpp"
#include "graspstn/tensor.hpp"

namespace graspstn {

/// Preprocessed 7-channel stack (R, G, B, depth, nx, ny, nz) at 400x400.
/// RGB in [0,1]; depth zero-mean unit-std over the crop; normals unit norm.
struct MultiModalImage {
  static constexpr int kSize = 400;
  static constexpr int kChannels = 7;

  std::vector<float> data;  // [channel][y][x]
  std::string source_id;
  int crop_x = 0;
  int crop_y = 0;

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * kSize + y) * kSize + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * kSize + y) * kSize + x];
  }

  /// Enforce the type invariants; throws ContractError on violation.
  void validate() const;

  template <typename T>
  Tensor<T> to_tensor() const {
    Tensor<T> t = Tensor<T>::zeros(Shape{1, kChannels, kSize, kSize});
    auto& v = t.mutable_array();
    for (std::size_t i = 0; i < data.size(); ++i) {
      v[static_cast<Index>(i)] = static_cast<T>(data[i]);
    }
    return t;
  }
};

/// One dataset record: image stack plus labeled grasp rectangles (crop-space
/// pixel coordinates).
struct GraspSample {
  MultiModalImage image;
  std::vector<GraspRect> positives;
  std::vector<GraspRect> negatives;
  bool is_background = false;
};

struct LoadReport {
  int images_loaded = 0;
  int items_skipped = 0;
  int rects_skipped = 0;
  long positives = 0;
  long negatives = 0;
  std::vector<std::string> warnings;
};

struct LoadResult {
  std::vector<GraspSample> samples;
  LoadReport report;
};

struct DatasetSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::uint64_t seed = 0;
};

/// Parse a Cornell rectangle file: four "x y" lines per rectangle, corner
/// order per the plate convention (p1->p2 is a gripper plate). Rectangles
/// with non-finite or degenerate corners are skipped with a warning; a
/// trailing partial group is rejected.
std::vector<GraspRect> parse_rect_file(const std::filesystem::path& path,
                                       int* rects_skipped = nullptr,
                                       std::vector<std::string>* warnings = nullptr);

/// Rasterize a Cornell point-cloud text file ("x y z rgb index" rows) into
/// a depth map via the per-point row/col index; missing points become NaN.
Tensor<float> depth_from_pointcloud(const std::filesystem::path& path,
                                    int width = 640, int height = 480);

/// Read a pre-rasterized 16-bit depth PNG (value = millimeters).
Tensor<float> depth_from_png16(const std::filesystem::path& path);

/// Replace NaN holes by the nearest valid pixel (Euclidean distance; ties by
/// smaller row, then smaller column).
void fill_depth_holes(Tensor<float>& depth);

/// Per-pixel normal of a hole-free depth map: normalize((-dz/dx, -dz/dy, 1))
/// with central differences (one-sided at borders). Output [3,H,W].
template <typename T>
Tensor<T> surface_normals(const Tensor<T>& depth);

/// Center-crop to 400x400, translate rectangles into crop coordinates,
/// hole-fill depth, derive normals, and normalize all channels.
GraspSample preprocess(const ImageU8& raw_rgb, const Tensor<float>& raw_depth,
                       std::vector<GraspRect> positives,
                       std::vector<GraspRect> negatives,
                       const std::string& source_id);

/// Near-white classifier negatives: n samples with empty positives and
/// is_background set, bit-reproducible for a given seed.
std::vector<GraspSample> make_background_patches(int n, std::uint64_t seed);

/// Load a Cornell-format directory (pcdNNNNr.png + point cloud or 16-bit
/// depth + cpos/cneg annotation files), sorted by item id.
LoadResult load_cornell(const std::filesystem::path& root);

/// Deterministic image-wise split: floor(n * ratio_train) samples train.
DatasetSplit split_imagewise(const std::vector<GraspSample>& samples,
                             double ratio_train, std::uint64_t seed);

/// Materialize sample indices for one side of a split.
std::vector<std::size_t> select_samples(const std::vector<GraspSample>& samples,
                                        const std::vector<std::string>& ids);

/// Preprocessed archive: manifest.json plus per-sample float32 tensors.
/// Reload is bit-exact.
void save_cache(const std::filesystem::path& dir,
                const std::vector<GraspSample>& samples);
std::vector<GraspSample> load_cache(const std::filesystem::path& dir);

}  // namespace graspstn
