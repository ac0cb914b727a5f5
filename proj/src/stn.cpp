#include "graspstn/stn.hpp"

#include <cmath>

#include "graspstn/error.hpp"

namespace graspstn {

AffineTransform2D::Form AffineTransform2D::classify(double tol) const {
  const bool off_diag_zero = std::abs(a12) <= tol && std::abs(a21) <= tol;
  if (off_diag_zero && std::abs(a11 - 1) <= tol && std::abs(a22 - 1) <= tol) {
    return Form::Translation;
  }
  if (off_diag_zero && a11 > tol && a22 > tol) {
    return Form::ScaleTranslation;
  }
  const bool zero_shift = std::abs(a13) <= tol && std::abs(a23) <= tol;
  if (zero_shift && std::abs(a11 - a22) <= tol && std::abs(a12 + a21) <= tol &&
      std::abs(a11 * a11 + a21 * a21 - 1) <= tol) {
    return Form::Rotation;
  }
  return Form::General;
}

AffineTransform2D compose(const AffineTransform2D& outer,
                          const AffineTransform2D& inner) {
  return AffineTransform2D::from_homogeneous(outer.homogeneous() *
                                             inner.homogeneous());
}

AffineTransform2D compose_chain(std::span<const AffineTransform2D> chain) {
  AffineTransform2D t = AffineTransform2D::identity();
  for (const auto& link : chain) t = compose(t, link);
  return t;
}

GraspRect transform_to_grasp(std::span<const AffineTransform2D> chain,
                             double image_w, double image_h, double canonical_w,
                             double canonical_h) {
  for (const auto& t : chain) {
    if (!t.all_finite()) {
      throw NumericError("transform_to_grasp: non-finite transform in chain");
    }
    if (t.classify() == AffineTransform2D::Form::General) {
      throw ContractError(
          "transform_to_grasp: chain element is not translation, rotation or "
          "scale+translation");
    }
  }
  if (!(canonical_w > 0) || !(canonical_h > 0) || !(image_w > 0) ||
      !(image_h > 0)) {
    throw ContractError("transform_to_grasp: sizes must be positive");
  }

  const AffineTransform2D total = compose_chain(chain);

  // Canonical rectangle in final-patch normalized coordinates. Its plate
  // edge (length canonical_h) runs along +x, so the x half-extent is
  // canonical_h px and the y half-extent canonical_w px.
  const double ex = canonical_h / image_w;
  const double ey = canonical_w / image_h;
  const std::array<Eigen::Vector2d, 4> patch_corners = {
      Eigen::Vector2d(-ex, -ey), Eigen::Vector2d(ex, -ey),
      Eigen::Vector2d(ex, ey), Eigen::Vector2d(-ex, ey)};

  std::array<Eigen::Vector2d, 4> px_corners;
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector2d q = total.apply(patch_corners[i]);
    px_corners[i] = {(q.x() + 1) * image_w / 2, (q.y() + 1) * image_h / 2};
  }
  return rect_from_corners(px_corners);
}

}  // namespace graspstn
