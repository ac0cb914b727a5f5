#include "doctest.h"

#include <Eigen/Dense>

#include <cmath>

#include "graspstn/stn.hpp"
#include "support/oracles.hpp"

using namespace graspstn;
using oracles::max_fd_rel_error;
using oracles::random_tensor;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Homogeneous 3x3 per-point oracle.
Eigen::Vector2d apply_matrix(const AffineTransform2D& t, double x, double y) {
  Eigen::Matrix3d m = t.homogeneous();
  Eigen::Vector3d p = m * Eigen::Vector3d(x, y, 1.0);
  return {p.x(), p.y()};
}

}  // namespace

TEST_CASE("affine_grid: identity is the canonical lattice") {
  auto grid = affine_grid<double>(AffineTransform2D::identity(), 3, 3);
  const double want[3] = {-1.0, 0.0, 1.0};
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      CHECK(grid.coords.at({i, j, 0}) == want[j]);
      CHECK(grid.coords.at({i, j, 1}) == want[i]);
    }
  }
  // single-pixel output samples the center
  auto point = affine_grid<double>(AffineTransform2D::identity(), 1, 1);
  CHECK(point.coords.at({0, 0, 0}) == 0.0);
  CHECK(point.coords.at({0, 0, 1}) == 0.0);
}

TEST_CASE("affine_grid: translation shifts x uniformly") {
  auto base = affine_grid<double>(AffineTransform2D::identity(), 3, 3);
  auto moved = affine_grid<double>(AffineTransform2D::translation(0.5, 0.0), 3, 3);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      CHECK(moved.coords.at({i, j, 0}) ==
            doctest::Approx(base.coords.at({i, j, 0}) + 0.5).epsilon(1e-15));
      CHECK(moved.coords.at({i, j, 1}) == base.coords.at({i, j, 1}));
    }
  }
}

TEST_CASE("affine_grid: 90-degree rotation matches matrix oracle") {
  const AffineTransform2D rot{0, -1, 0, 1, 0, 0};
  auto grid = affine_grid<double>(rot, 3, 3);
  // corner (1,1) maps to (-1,1)
  CHECK(grid.coords.at({2, 2, 0}) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(grid.coords.at({2, 2, 1}) == doctest::Approx(1.0).epsilon(1e-12));
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 3; ++j) {
      const double x = -1.0 + j, y = -1.0 + i;
      const Eigen::Vector2d want = apply_matrix(rot, x, y);
      CHECK(grid.coords.at({i, j, 0}) == doctest::Approx(want.x()).epsilon(1e-12));
      CHECK(grid.coords.at({i, j, 1}) == doctest::Approx(want.y()).epsilon(1e-12));
    }
  }
}

TEST_CASE("affine_grid rejects bad inputs") {
  TensorD theta = TensorD::zeros(Shape{5});
  CHECK_THROWS_AS(affine_grid(theta, 2, 2), ShapeError);
  AffineTransform2D bad;
  bad.a13 = std::nan("");
  CHECK_THROWS_AS(affine_grid<double>(bad, 2, 2), NumericError);
  CHECK_THROWS_AS(affine_grid<double>(AffineTransform2D::identity(), 0, 2),
                  ContractError);
}

TEST_CASE("bilinear_sample: identity grid reproduces the input") {
  Rng rng(71);
  TensorD x = random_tensor(Shape{1, 3, 7, 9}, rng);
  auto grid = affine_grid<double>(AffineTransform2D::identity(), 7, 9);
  TensorD y = bilinear_sample(x, grid);
  REQUIRE(y.shape() == x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-12));
  }
}

TEST_CASE("bilinear_sample: midpoint interpolation and zero padding") {
  TensorD x = TensorD::from_list(Shape{1, 1, 1, 2}, {0.0, 1.0});
  TensorD theta = TensorD::zeros(Shape{6});  // every grid point -> (0, 0)
  auto grid = affine_grid(theta, 1, 1);
  CHECK(bilinear_sample(x, grid).value() == doctest::Approx(0.5).epsilon(1e-15));

  // far out of bounds reads zero
  auto off = affine_grid<double>(AffineTransform2D::translation(5.0, 0.0), 1, 1);
  CHECK(bilinear_sample(x, off).value() == 0.0);
}

TEST_CASE("bilinear_sample gradients match finite differences") {
  Rng rng(73);
  TensorD x = random_tensor(Shape{1, 3, 7, 7}, rng);
  // in-bounds grid, nudged off the pixel lattice where bilinear kinks
  TensorD gcoords = TensorD::zeros(Shape{4, 5, 2});
  for (Index i = 0; i < gcoords.size(); ++i) {
    double v = rng.uniform(-0.85, 0.85);
    const double px = (v + 1) * 3.0;  // unnormalized for W=H=7
    if (std::abs(px - std::round(px)) < 0.02) v += 0.03;
    gcoords.mutable_array()[i] = v;
  }

  CHECK(max_fd_rel_error({&x, &gcoords}, [&] {
          SamplingGrid<double> g{reshape(gcoords, Shape{4, 5, 2})};
          return mean_all(bilinear_sample(x, g));
        }) < 1e-4);
}

TEST_CASE("affine_grid gradients w.r.t. all six coefficients") {
  Rng rng(79);
  TensorD x = random_tensor(Shape{1, 2, 9, 9}, rng);
  TensorD theta = TensorD::from_list(
      Shape{6}, {0.64382, 0.14201, -0.05288, -0.12209, 0.74076, -0.02760});

  // the finite-difference fixture must not sit on the bilinear kinks
  {
    auto g = affine_grid(theta, 5, 5);
    for (Index i = 0; i < g.coords.size(); ++i) {
      const double px = (g.coords[i] + 1) * 4.0;
      REQUIRE(std::abs(px - std::round(px)) > 0.02);
    }
  }

  CHECK(max_fd_rel_error({&theta}, [&] {
          auto g = affine_grid(theta, 5, 5);
          return mean_all(bilinear_sample(x, g));
        }) < 1e-4);
}

TEST_CASE("sampling rejects non-finite grids and bad theta") {
  TensorD x = TensorD::ones(Shape{1, 1, 4, 4});
  TensorD bad_theta = TensorD::zeros(Shape{6});
  bad_theta.mutable_array()[2] = std::nan("");
  CHECK_THROWS_AS(affine_grid(bad_theta, 2, 2), NumericError);

  TensorD coords = TensorD::zeros(Shape{2, 2, 2});
  coords.mutable_array()[1] = std::numeric_limits<double>::infinity();
  SamplingGrid<double> grid{coords};
  CHECK_THROWS_AS(bilinear_sample(x, grid), NumericError);
}

TEST_CASE("compose: identity laws and translation additivity") {
  const AffineTransform2D t{0.9, -0.2, 0.3, 0.2, 0.9, -0.4};
  const AffineTransform2D id = AffineTransform2D::identity();
  auto check_eq = [](const AffineTransform2D& a, const AffineTransform2D& b) {
    CHECK(a.a11 == doctest::Approx(b.a11).epsilon(1e-15));
    CHECK(a.a12 == doctest::Approx(b.a12).epsilon(1e-15));
    CHECK(a.a13 == doctest::Approx(b.a13).epsilon(1e-15));
    CHECK(a.a21 == doctest::Approx(b.a21).epsilon(1e-15));
    CHECK(a.a22 == doctest::Approx(b.a22).epsilon(1e-15));
    CHECK(a.a23 == doctest::Approx(b.a23).epsilon(1e-15));
  };
  check_eq(compose(id, t), t);
  check_eq(compose(t, id), t);

  const auto sum = compose(AffineTransform2D::translation(0.2, 0.0),
                           AffineTransform2D::translation(0.3, 0.0));
  CHECK(sum.a13 == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sum.a23 == 0.0);
}

TEST_CASE("compose matches the homogeneous matrix product oracle") {
  const auto rot = AffineTransform2D::rotation(30.0 * kPi / 180.0);
  const auto scale = AffineTransform2D::scale_translation(0.5, 0.5, 0, 0);
  const auto got = compose(rot, scale);
  const Eigen::Matrix3d want = rot.homogeneous() * scale.homogeneous();
  CHECK(got.a11 == doctest::Approx(want(0, 0)).epsilon(1e-12));
  CHECK(got.a12 == doctest::Approx(want(0, 1)).epsilon(1e-12));
  CHECK(got.a13 == doctest::Approx(want(0, 2)).epsilon(1e-12));
  CHECK(got.a21 == doctest::Approx(want(1, 0)).epsilon(1e-12));
  CHECK(got.a22 == doctest::Approx(want(1, 1)).epsilon(1e-12));
  CHECK(got.a23 == doctest::Approx(want(1, 2)).epsilon(1e-12));
}

TEST_CASE("compose is associative") {
  Rng rng(83);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = AffineTransform2D::scale_translation(
        rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5), rng.uniform(-0.5, 0.5),
        rng.uniform(-0.5, 0.5));
    const auto b = AffineTransform2D::rotation(rng.uniform(-kPi, kPi));
    const auto c = AffineTransform2D::translation(rng.uniform(-0.5, 0.5),
                                                  rng.uniform(-0.5, 0.5));
    const auto lhs = compose(a, compose(b, c));
    const auto rhs = compose(compose(a, b), c);
    CHECK(lhs.a11 == doctest::Approx(rhs.a11).epsilon(1e-12));
    CHECK(lhs.a12 == doctest::Approx(rhs.a12).epsilon(1e-12));
    CHECK(lhs.a13 == doctest::Approx(rhs.a13).epsilon(1e-12));
    CHECK(lhs.a21 == doctest::Approx(rhs.a21).epsilon(1e-12));
    CHECK(lhs.a22 == doctest::Approx(rhs.a22).epsilon(1e-12));
    CHECK(lhs.a23 == doctest::Approx(rhs.a23).epsilon(1e-12));
  }
}

TEST_CASE("two-step sampling equals one-step through the composed transform") {
  // Smooth test image: bilinear upsampling of 4x4 noise.
  Rng rng(89);
  TensorD coarse = random_tensor(Shape{1, 1, 4, 4}, rng, 0.0, 1.0);
  auto up_grid = affine_grid<double>(AffineTransform2D::identity(), 64, 64);
  TensorD img = bilinear_sample(coarse, up_grid);

  const auto t1 = AffineTransform2D::scale_translation(0.6, 0.6, 0.1, -0.05);
  // rotation shrunk so the second stage never reads the zero-padded border
  // of the intermediate patch (padding is not transitive)
  const auto t2 =
      compose(AffineTransform2D::rotation(25.0 * kPi / 180.0),
              AffineTransform2D::scale_translation(0.65, 0.65, 0.0, 0.0));

  TensorD step1 = bilinear_sample(img, affine_grid<double>(t1, 64, 64));
  TensorD two_step = bilinear_sample(step1, affine_grid<double>(t2, 48, 48));
  TensorD one_step =
      bilinear_sample(img, affine_grid<double>(compose(t1, t2), 48, 48));

  double mean_abs = 0;
  for (Index i = 0; i < two_step.size(); ++i) {
    mean_abs += std::abs(two_step[i] - one_step[i]);
  }
  mean_abs /= static_cast<double>(two_step.size());
  CHECK(mean_abs < 1e-3);  // interpolation is not exactly transitive
}

TEST_CASE("transform_to_grasp: identity chain gives the canonical rectangle") {
  std::vector<AffineTransform2D> chain(3, AffineTransform2D::identity());
  GraspRect r = transform_to_grasp(chain, 400, 400, 100, 60);
  CHECK(r.x == 200.0);
  CHECK(r.y == 200.0);
  CHECK(r.theta_deg == 0.0);
  CHECK(r.w == doctest::Approx(100.0).epsilon(1e-15));
  CHECK(r.h == doctest::Approx(60.0).epsilon(1e-15));
}

TEST_CASE("transform_to_grasp: half-unit translation moves 100 px") {
  std::vector<AffineTransform2D> chain{AffineTransform2D::translation(0.5, 0)};
  GraspRect r = transform_to_grasp(chain, 400, 400, 100, 60);
  CHECK(r.x == doctest::Approx(300.0).epsilon(1e-13));
  CHECK(r.y == doctest::Approx(200.0).epsilon(1e-13));
  CHECK(r.theta_deg == doctest::Approx(0.0));
}

TEST_CASE("transform_to_grasp matches the corner-point oracle") {
  const double deg = kPi / 180.0;
  std::vector<AffineTransform2D> chain{
      AffineTransform2D::translation(0.2, -0.1),
      AffineTransform2D::rotation(40.0 * deg),
      AffineTransform2D::scale_translation(0.8, 1.2, 0.0, 0.0)};
  const double W = 400, H = 400, cw = 100, ch = 60;
  GraspRect got = transform_to_grasp(chain, W, H, cw, ch);

  // oracle: transform canonical corners with homogeneous products, refit
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  for (const auto& t : chain) m = m * t.homogeneous();
  const double ex = ch / W, ey = cw / H;
  std::array<Eigen::Vector2d, 4> px;
  const double sx[4] = {-1, 1, 1, -1}, sy[4] = {-1, -1, 1, 1};
  for (int i = 0; i < 4; ++i) {
    Eigen::Vector3d q = m * Eigen::Vector3d(sx[i] * ex, sy[i] * ey, 1.0);
    px[i] = {(q.x() + 1) * W / 2, (q.y() + 1) * H / 2};
  }
  GraspRect want = rect_from_corners(px);
  CHECK(got.x == doctest::Approx(want.x).epsilon(1e-9));
  CHECK(got.y == doctest::Approx(want.y).epsilon(1e-9));
  CHECK(got.theta_deg == doctest::Approx(want.theta_deg).epsilon(1e-9));
  CHECK(got.w == doctest::Approx(want.w).epsilon(1e-9));
  CHECK(got.h == doctest::Approx(want.h).epsilon(1e-9));
}

TEST_CASE("transform_to_grasp: rotation-only stage preserves w and h") {
  for (double ang : {-70.0, -30.0, 15.0, 45.0, 89.0}) {
    std::vector<AffineTransform2D> chain{
        AffineTransform2D::translation(0.1, 0.05),
        AffineTransform2D::rotation(ang * kPi / 180.0)};
    GraspRect r = transform_to_grasp(chain, 400, 400, 100, 60);
    CHECK(r.w == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(r.h == doctest::Approx(60.0).epsilon(1e-12));
    CHECK(r.theta_deg == doctest::Approx(ang).epsilon(1e-9));
  }
}

TEST_CASE("transform_to_grasp rejects a general affine in the chain") {
  AffineTransform2D shear;
  shear.a12 = 0.3;
  std::vector<AffineTransform2D> chain{shear};
  CHECK_THROWS_AS(transform_to_grasp(chain, 400, 400, 100, 60), ContractError);
}

TEST_CASE("theta builders produce the stage-restricted layouts") {
  auto tx = TensorD::scalar(0.25), ty = TensorD::scalar(-0.5);
  TensorD crop = theta_crop(tx, ty, 0.5);
  CHECK(crop[0] == 0.5);
  CHECK(crop[1] == 0.0);
  CHECK(crop[2] == 0.25);
  CHECK(crop[3] == 0.0);
  CHECK(crop[4] == 0.5);
  CHECK(crop[5] == -0.5);

  auto c = TensorD::scalar(std::cos(0.3)), s = TensorD::scalar(std::sin(0.3));
  TensorD rot = theta_rotation(c, s);
  CHECK(rot[0] == doctest::Approx(std::cos(0.3)));
  CHECK(rot[1] == doctest::Approx(-std::sin(0.3)));
  CHECK(rot[2] == 0.0);
  CHECK(rot[3] == doctest::Approx(std::sin(0.3)));
  CHECK(rot[4] == doctest::Approx(std::cos(0.3)));
  CHECK(rot[5] == 0.0);
}
