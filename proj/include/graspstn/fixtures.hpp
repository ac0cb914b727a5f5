#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "graspstn/geometry.hpp"

namespace graspstn {

struct FixtureOptions {
  int items = 8;
  std::uint64_t seed = 7;
  int width = 640;
  int height = 480;
  int depth_holes = 12;       // NaN holes sprinkled per point-cloud item
  bool mixed_depth = true;    // alternate point-cloud text / 16-bit PNG depth
};

struct FixtureItem {
  std::string id;
  std::vector<GraspRect> positives;  // raw (uncropped) image coordinates
  std::vector<GraspRect> negatives;
};

/// Write a synthetic Cornell-format dataset: per item an RGB PNG of a
/// rotated colored bar on a near-white table, a depth source, and
/// cpos/cneg rectangle files. Deterministic for a given seed.
std::vector<FixtureItem> write_fixture_dataset(
    const std::filesystem::path& dir, const FixtureOptions& options = {});

}  // namespace graspstn
