#include "graspstn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "graspstn/error.hpp"

namespace graspstn {

namespace {

constexpr double kDegToRad = 0.017453292519943295;
constexpr double kRadToDeg = 57.29577951308232;

double shoelace_area(const std::vector<Eigen::Vector2d>& poly) {
  double s = 0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    s += p.x() * q.y() - q.x() * p.y();
  }
  return std::abs(s) * 0.5;
}

// Clip `subject` by the half-plane on the inner side of edge a->b of a
// convex clip polygon with counter-clockwise winding.
std::vector<Eigen::Vector2d> clip_edge(const std::vector<Eigen::Vector2d>& subject,
                                       const Eigen::Vector2d& a,
                                       const Eigen::Vector2d& b) {
  auto side = [&](const Eigen::Vector2d& p) {
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
  };
  std::vector<Eigen::Vector2d> out;
  const std::size_t n = subject.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector2d& cur = subject[i];
    const Eigen::Vector2d& prev = subject[(i + n - 1) % n];
    const double sc = side(cur), sp = side(prev);
    if (sc >= 0) {
      if (sp < 0) {
        const double t = sp / (sp - sc);
        out.push_back(prev + t * (cur - prev));
      }
      out.push_back(cur);
    } else if (sp >= 0) {
      const double t = sp / (sp - sc);
      out.push_back(prev + t * (cur - prev));
    }
  }
  return out;
}

// Ensure counter-clockwise winding (positive shoelace sum).
std::vector<Eigen::Vector2d> ccw(const std::array<Eigen::Vector2d, 4>& c) {
  double s = 0;
  for (int i = 0; i < 4; ++i) {
    s += c[i].x() * c[(i + 1) % 4].y() - c[(i + 1) % 4].x() * c[i].y();
  }
  std::vector<Eigen::Vector2d> out(c.begin(), c.end());
  if (s < 0) std::reverse(out.begin(), out.end());
  return out;
}

}  // namespace

void validate_rect(const GraspRect& r) {
  const bool finite = std::isfinite(r.x) && std::isfinite(r.y) &&
                      std::isfinite(r.theta_deg) && std::isfinite(r.w) &&
                      std::isfinite(r.h);
  if (!finite) throw ContractError("GraspRect: non-finite field");
  if (!(r.w > 0) || !(r.h > 0)) {
    throw ContractError("GraspRect: w and h must be positive");
  }
  if (r.theta_deg < -90.0 || r.theta_deg >= 90.0) {
    throw ContractError("GraspRect: theta must lie in [-90, 90)");
  }
}

double normalize_theta_deg(double theta_deg) {
  double t = std::fmod(theta_deg, 180.0);
  if (t < -90.0) t += 180.0;
  if (t >= 90.0) t -= 180.0;
  return t;
}

std::array<Eigen::Vector2d, 4> rect_corners(const GraspRect& r) {
  validate_rect(r);
  const double th = r.theta_deg * kDegToRad;
  const double c = std::cos(th), s = std::sin(th);
  const Eigen::Vector2d center(r.x, r.y);
  const Eigen::Vector2d along(c * r.h / 2, s * r.h / 2);   // plate direction
  const Eigen::Vector2d across(-s * r.w / 2, c * r.w / 2); // opening direction
  return {center - along - across, center + along - across,
          center + along + across, center - along + across};
}

GraspRect rect_from_corners(const std::array<Eigen::Vector2d, 4>& corners) {
  const Eigen::Vector2d center =
      (corners[0] + corners[1] + corners[2] + corners[3]) / 4.0;
  const Eigen::Vector2d plate = corners[1] - corners[0];
  const Eigen::Vector2d open = corners[2] - corners[1];
  GraspRect r;
  r.x = center.x();
  r.y = center.y();
  r.h = plate.norm();
  r.w = open.norm();
  r.theta_deg = normalize_theta_deg(std::atan2(plate.y(), plate.x()) * kRadToDeg);
  validate_rect(r);
  return r;
}

double jaccard(const GraspRect& a, const GraspRect& b) {
  validate_rect(a);
  validate_rect(b);
  const double area_a = a.w * a.h;
  const double area_b = b.w * b.h;

  std::vector<Eigen::Vector2d> poly = ccw(rect_corners(a));
  const std::vector<Eigen::Vector2d> clip = ccw(rect_corners(b));
  for (std::size_t i = 0; i < clip.size() && !poly.empty(); ++i) {
    poly = clip_edge(poly, clip[i], clip[(i + 1) % clip.size()]);
  }
  const double inter = poly.size() >= 3 ? shoelace_area(poly) : 0.0;
  const double uni = area_a + area_b - inter;
  return inter / uni;
}

double angle_diff(double t1_deg, double t2_deg) {
  double d = std::fmod(std::abs(t1_deg - t2_deg), 180.0);
  return std::min(d, 180.0 - d);
}

SuccessResult is_success(const GraspRect& pred,
                         std::span<const GraspRect> ground_truths) {
  if (ground_truths.empty()) {
    throw ContractError("is_success: empty ground-truth list");
  }
  validate_rect(pred);
  SuccessResult result;
  for (std::size_t i = 0; i < ground_truths.size(); ++i) {
    if (angle_diff(pred.theta_deg, ground_truths[i].theta_deg) >= 30.0) {
      continue;
    }
    const double j = jaccard(pred, ground_truths[i]);
    if (result.best_index < 0 || j > result.best_jaccard) {
      result.best_index = static_cast<int>(i);
      result.best_jaccard = j;
    }
  }
  result.success = result.best_index >= 0 && result.best_jaccard > 0.25;
  return result;
}

}  // namespace graspstn
