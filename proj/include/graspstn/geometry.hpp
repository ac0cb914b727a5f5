#pragma once

#include <Eigen/Core>

#include <array>
#include <span>

namespace graspstn {

/// Five-dimensional grasp configuration in image pixel coordinates
/// (x right, y down). `w` is the gripper opening, `h` the plate length,
/// `theta_deg` the plate direction in [-90, 90).
struct GraspRect {
  double x = 0;
  double y = 0;
  double theta_deg = 0;
  double w = 0;
  double h = 0;
};

/// Throws ContractError unless w > 0, h > 0, theta in [-90, 90), all finite.
void validate_rect(const GraspRect& r);

/// Wrap any angle into [-90, 90) modulo the rectangle's 180-degree symmetry.
double normalize_theta_deg(double theta_deg);

/// Ordered corners: edge p1->p2 is a gripper plate of length h at angle
/// theta (counter-clockwise from +x in y-down coordinates); |p2->p3| = w.
std::array<Eigen::Vector2d, 4> rect_corners(const GraspRect& r);

/// Refit (x, y, theta, w, h) from four ordered corners.
GraspRect rect_from_corners(const std::array<Eigen::Vector2d, 4>& corners);

/// Intersection-over-union of two rotated rectangles via convex polygon
/// clipping (Sutherland-Hodgman) and shoelace areas.
double jaccard(const GraspRect& a, const GraspRect& b);

/// Orientation difference in degrees, in [0, 90], modulo plate symmetry.
double angle_diff(double t1_deg, double t2_deg);

struct SuccessResult {
  bool success = false;
  /// Ground truth maximizing jaccard among angle-qualified ones; -1 if no
  /// ground truth passes the angle test.
  int best_index = -1;
  double best_jaccard = 0.0;
};

/// Paper metric: success iff some ground truth has angle_diff < 30 (strict)
/// and jaccard > 0.25 (strict).
SuccessResult is_success(const GraspRect& pred,
                         std::span<const GraspRect> ground_truths);

}  // namespace graspstn
