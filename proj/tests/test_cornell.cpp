#include "doctest.h"

#include <Eigen/Geometry>
#include <zlib.h>

#include <cmath>
#include <fstream>
#include <set>

#include "graspstn/cornell.hpp"
#include "graspstn/fixtures.hpp"
#include "graspstn/rng.hpp"
#include "support/tmpdir.hpp"

#include <unistd.h>

using namespace graspstn;

TEST_CASE("parse_rect_file: axis-aligned example") {
  testutil::TmpDir tmp("rect");
  const auto path = tmp.path() / "r.txt";
  std::ofstream(path) << "0 0\n4 0\n4 2\n0 2\n";
  auto rects = parse_rect_file(path);
  REQUIRE(rects.size() == 1);
  CHECK(rects[0].x == doctest::Approx(2.0));
  CHECK(rects[0].y == doctest::Approx(1.0));
  CHECK(rects[0].theta_deg == doctest::Approx(0.0));
  CHECK(rects[0].w == doctest::Approx(2.0));
  CHECK(rects[0].h == doctest::Approx(4.0));
}

TEST_CASE("parse_rect_file: empty file, NaN lines, partial groups") {
  testutil::TmpDir tmp("rect2");

  const auto empty = tmp.path() / "empty.txt";
  std::ofstream(empty) << "";
  CHECK(parse_rect_file(empty).empty());

  const auto nan_file = tmp.path() / "nan.txt";
  std::ofstream(nan_file) << "0 0\n4 0\n4 2\n0 2\n"
                          << "NaN NaN\nNaN NaN\nNaN NaN\nNaN NaN\n";
  int skipped = 0;
  std::vector<std::string> warnings;
  auto rects = parse_rect_file(nan_file, &skipped, &warnings);
  CHECK(rects.size() == 1);
  CHECK(skipped == 1);
  CHECK(warnings.size() == 1);

  const auto partial = tmp.path() / "partial.txt";
  std::ofstream(partial) << "0 0\n4 0\n4 2\n0 2\n10 10\n14 10\n";
  skipped = 0;
  rects = parse_rect_file(partial, &skipped);
  CHECK(rects.size() == 1);
  CHECK(skipped == 1);

  const auto garbage = tmp.path() / "garbage.txt";
  std::ofstream(garbage) << "0 0\nfour 0\n4 2\n0 2\n";
  skipped = 0;
  rects = parse_rect_file(garbage, &skipped);
  CHECK(rects.empty());
  CHECK(skipped == 1);
}

TEST_CASE("parse_rect_file: corner round-trip for rotated squares") {
  testutil::TmpDir tmp("rect3");
  const auto path = tmp.path() / "two.txt";
  GraspRect a{50, 60, 0, 10, 10};
  GraspRect b{80, 90, 45, 12, 12};
  {
    std::ofstream out(path);
    out.precision(10);
    for (const auto& r : {a, b}) {
      for (const auto& p : rect_corners(r)) out << p.x() << " " << p.y() << "\n";
    }
  }
  auto rects = parse_rect_file(path);
  REQUIRE(rects.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    const GraspRect& want = i == 0 ? a : b;
    auto got_corners = rect_corners(rects[i]);
    auto want_corners = rect_corners(want);
    for (int k = 0; k < 4; ++k) {
      CHECK(got_corners[k].x() == doctest::Approx(want_corners[k].x()).epsilon(1e-6));
      CHECK(got_corners[k].y() == doctest::Approx(want_corners[k].y()).epsilon(1e-6));
    }
  }
}

TEST_CASE("surface_normals: plane, ramp, and cross-product oracle") {
  // constant depth -> (0,0,1)
  Tensor<double> flat = Tensor<double>::filled(Shape{8, 8}, 1.25);
  Tensor<double> n = surface_normals(flat);
  for (Index y = 0; y < 8; ++y) {
    for (Index x = 0; x < 8; ++x) {
      CHECK(n.at({0, y, x}) == 0.0);
      CHECK(n.at({1, y, x}) == 0.0);
      CHECK(n.at({2, y, x}) == 1.0);
    }
  }

  // ramp z = x: every normal (-1, 0, 1)/sqrt(2), borders included
  Tensor<double> ramp = Tensor<double>::zeros(Shape{6, 6});
  for (Index y = 0; y < 6; ++y) {
    for (Index x = 0; x < 6; ++x) ramp.mutable_array()[y * 6 + x] = x;
  }
  n = surface_normals(ramp);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (Index y = 0; y < 6; ++y) {
    for (Index x = 0; x < 6; ++x) {
      CHECK(n.at({0, y, x}) == doctest::Approx(-inv_sqrt2).epsilon(1e-12));
      CHECK(n.at({1, y, x}) == doctest::Approx(0.0));
      CHECK(n.at({2, y, x}) == doctest::Approx(inv_sqrt2).epsilon(1e-12));
    }
  }

  // smooth random surface vs cross-product-of-tangents oracle
  Rng rng(211);
  Tensor<double> coarse = Tensor<double>::zeros(Shape{4, 4});
  for (Index i = 0; i < 16; ++i) coarse.mutable_array()[i] = rng.uniform(0, 1);
  // bilinear upsample to 16x16
  Tensor<double> z = Tensor<double>::zeros(Shape{16, 16});
  for (Index y = 0; y < 16; ++y) {
    for (Index x = 0; x < 16; ++x) {
      const double fy = y / 5.0, fx = x / 5.0;
      const Index y0 = std::min<Index>(2, static_cast<Index>(fy));
      const Index x0 = std::min<Index>(2, static_cast<Index>(fx));
      const double ay = fy - y0, ax = fx - x0;
      z.mutable_array()[y * 16 + x] =
          (1 - ay) * ((1 - ax) * coarse[y0 * 4 + x0] +
                      ax * coarse[y0 * 4 + x0 + 1]) +
          ay * ((1 - ax) * coarse[(y0 + 1) * 4 + x0] +
                ax * coarse[(y0 + 1) * 4 + x0 + 1]);
    }
  }
  n = surface_normals(z);
  for (Index y = 1; y < 15; ++y) {
    for (Index x = 1; x < 15; ++x) {
      // tangents tx = (1, 0, dz/dx), ty = (0, 1, dz/dy); normal = tx x ty
      const double dzdx = (z[y * 16 + x + 1] - z[y * 16 + x - 1]) / 2.0;
      const double dzdy = (z[(y + 1) * 16 + x] - z[(y - 1) * 16 + x]) / 2.0;
      Eigen::Vector3d cross =
          Eigen::Vector3d(1, 0, dzdx).cross(Eigen::Vector3d(0, 1, dzdy));
      cross.normalize();  // (-dzdx, -dzdy, 1) direction, z toward camera
      CHECK(n.at({0, y, x}) == doctest::Approx(cross.x()).epsilon(1e-6));
      CHECK(n.at({1, y, x}) == doctest::Approx(cross.y()).epsilon(1e-6));
      CHECK(n.at({2, y, x}) == doctest::Approx(cross.z()).epsilon(1e-6));
    }
  }
}

TEST_CASE("depth_from_pointcloud parses headers and flags bad files") {
  testutil::TmpDir tmp("pcd");
  const auto good = tmp.path() / "good.txt";
  std::ofstream(good) << "# .PCD v.7\nVERSION .7\nFIELDS x y z rgb index\n"
                      << "WIDTH 3\nHEIGHT 1\nPOINTS 3\nDATA ascii\n"
                      << "0.1 0.2 0.95 0 0\n"
                      << "0.1 0.2 0.97 0 5\n"
                      << "0.1 0.2 0.99 0 11\n";
  Tensor<float> d = depth_from_pointcloud(good, 4, 3);
  CHECK(d.at({0, 0}) == doctest::Approx(0.95f));
  CHECK(d.at({1, 1}) == doctest::Approx(0.97f));
  CHECK(d.at({2, 3}) == doctest::Approx(0.99f));
  CHECK_FALSE(std::isfinite(d.at({0, 1})));  // unlisted points are holes

  const auto headerless = tmp.path() / "bad.txt";
  std::ofstream(headerless) << "0.1 0.2 0.95 0 0\n";
  CHECK_THROWS_AS(depth_from_pointcloud(headerless, 4, 3), IoError);
  CHECK_THROWS_AS(depth_from_pointcloud(tmp.path() / "missing.txt", 4, 3),
                  IoError);
}

TEST_CASE("fill_depth_holes matches a brute-force nearest-neighbor oracle") {
  Rng rng(223);
  Tensor<float> depth = Tensor<float>::zeros(Shape{24, 30});
  for (Index i = 0; i < depth.size(); ++i) {
    depth.mutable_array()[i] = static_cast<float>(rng.uniform(0.5, 1.5));
  }
  Tensor<float> holey = depth.detach();
  std::vector<Index> holes;
  for (int k = 0; k < 40; ++k) {
    const Index r = rng.uniform_int(0, 23), c = rng.uniform_int(0, 29);
    holey.mutable_array()[r * 30 + c] = std::nanf("");
  }
  // a 3-pixel contiguous hole as in the documented example
  holey.mutable_array()[5 * 30 + 7] = std::nanf("");
  holey.mutable_array()[5 * 30 + 8] = std::nanf("");
  holey.mutable_array()[5 * 30 + 9] = std::nanf("");
  for (Index i = 0; i < holey.size(); ++i) {
    if (!std::isfinite(holey[i])) holes.push_back(i);
  }

  Tensor<float> before = holey.detach();
  fill_depth_holes(holey);
  CHECK(holey.all_finite());

  for (Index hole : holes) {
    const Index r0 = hole / 30, c0 = hole % 30;
    // brute force over all valid pixels with the documented tie rule
    long best_d2 = -1;
    Index br = 0, bc = 0;
    for (Index r = 0; r < 24; ++r) {
      for (Index c = 0; c < 30; ++c) {
        if (!std::isfinite(before[r * 30 + c])) continue;
        const long d2 = (r - r0) * (r - r0) + (c - c0) * (c - c0);
        if (best_d2 < 0 || d2 < best_d2 ||
            (d2 == best_d2 && (r < br || (r == br && c < bc)))) {
          best_d2 = d2;
          br = r;
          bc = c;
        }
      }
    }
    CHECK(holey[hole] == before[br * 30 + bc]);
  }
}

TEST_CASE("preprocess: crop offsets, rect translation, degenerate depth") {
  ImageU8 rgb;
  rgb.width = 640;
  rgb.height = 480;
  rgb.channels = 3;
  rgb.pixels.assign(static_cast<std::size_t>(640) * 480 * 3, 128);
  Tensor<float> depth = Tensor<float>::filled(Shape{480, 640}, 1.0f);

  std::vector<GraspRect> pos{GraspRect{320, 240, 10, 20, 30},
                             GraspRect{30, 30, 0, 10, 10}};  // center outside
  GraspSample s = preprocess(rgb, depth, pos, {}, "item");

  CHECK(s.image.crop_x == 120);
  CHECK(s.image.crop_y == 40);
  REQUIRE(s.positives.size() == 1);
  CHECK(s.positives[0].x == doctest::Approx(200.0));
  CHECK(s.positives[0].y == doctest::Approx(200.0));

  // constant depth -> normalized all zeros (std guarded to 1)
  for (int y = 0; y < 400; y += 37) {
    for (int x = 0; x < 400; x += 41) {
      CHECK(s.image.at(3, y, x) == 0.0f);
      CHECK(s.image.at(6, y, x) == 1.0f);
    }
  }
  s.image.validate();

  ImageU8 small;
  small.width = 200;
  small.height = 480;
  small.channels = 3;
  small.pixels.assign(static_cast<std::size_t>(200) * 480 * 3, 0);
  CHECK_THROWS_AS(
      preprocess(small, Tensor<float>::zeros(Shape{480, 200}), {}, {}, "x"),
      ContractError);
}

TEST_CASE("make_background_patches: white, reproducible, valid") {
  auto patches = make_background_patches(0, 5);
  CHECK(patches.empty());

  auto a = make_background_patches(10, 7);
  auto b = make_background_patches(10, 7);
  REQUIRE(a.size() == 10);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].is_background);
    CHECK(a[i].positives.empty());
    a[i].image.validate();
    CHECK(a[i].image.data == b[i].image.data);  // bit-exact reproducibility
    for (int c = 0; c < 3; ++c) {
      double mean = 0;
      for (int y = 0; y < 400; ++y) {
        for (int x = 0; x < 400; ++x) mean += a[i].image.at(c, y, x);
      }
      mean /= 400.0 * 400.0;
      CHECK(mean >= 0.9);
    }
  }
  auto c = make_background_patches(10, 8);
  CHECK(c[0].image.data != a[0].image.data);
}

TEST_CASE("fixture dataset round-trips through load_cornell") {
  testutil::TmpDir tmp("fixture");
  FixtureOptions opt;
  opt.items = 4;
  opt.seed = 99;
  auto items = write_fixture_dataset(tmp.path(), opt);
  REQUIRE(items.size() == 4);

  LoadResult lr = load_cornell(tmp.path());
  CHECK(lr.report.images_loaded == 4);
  CHECK(lr.report.items_skipped == 0);
  CHECK(lr.report.rects_skipped == 0);
  REQUIRE(lr.samples.size() == 4);

  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = lr.samples[i];
    CHECK(s.image.source_id == items[i].id);
    s.image.validate();
    CHECK(s.positives.size() == items[i].positives.size());
    CHECK(s.negatives.size() == items[i].negatives.size());
    // crop-translated ground truth matches the generator's rectangles
    for (std::size_t g = 0; g < s.positives.size(); ++g) {
      CHECK(s.positives[g].x ==
            doctest::Approx(items[i].positives[g].x - s.image.crop_x)
                .epsilon(1e-3));
      CHECK(s.positives[g].y ==
            doctest::Approx(items[i].positives[g].y - s.image.crop_y)
                .epsilon(1e-3));
      CHECK(angle_diff(s.positives[g].theta_deg,
                       items[i].positives[g].theta_deg) < 0.01);
    }
  }

  SUBCASE("empty directory loads zero samples") {
    testutil::TmpDir empty("empty");
    LoadResult er = load_cornell(empty.path());
    CHECK(er.samples.empty());
    CHECK(er.report.images_loaded == 0);
  }

  SUBCASE("missing image for an annotated item is a hard error") {
    std::filesystem::remove(tmp.path() / (items[0].id + "r.png"));
    CHECK_THROWS_AS(load_cornell(tmp.path()), IoError);
  }

  SUBCASE("NaN rectangle in a positive file is skipped with a warning") {
    std::ofstream app(tmp.path() / (items[1].id + "cpos.txt"), std::ios::app);
    app << "NaN NaN\nNaN NaN\nNaN NaN\nNaN NaN\n";
    app.close();
    LoadResult lr2 = load_cornell(tmp.path());
    CHECK(lr2.report.images_loaded == 4);
    CHECK(lr2.report.rects_skipped == 1);
    CHECK(lr2.samples[1].positives.size() == items[1].positives.size());
  }

  SUBCASE("missing annotation file skips the item with a warning") {
    std::filesystem::remove(tmp.path() / (items[2].id + "cpos.txt"));
    LoadResult lr3 = load_cornell(tmp.path());
    CHECK(lr3.report.images_loaded == 3);
    CHECK(lr3.report.items_skipped == 1);
  }
}

TEST_CASE("split_imagewise: determinism, counts, purity") {
  auto make_samples = [](int n) {
    std::vector<GraspSample> samples(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      samples[static_cast<std::size_t>(i)].image.source_id =
          "pcd" + std::to_string(1000 + i);
    }
    return samples;
  };

  SUBCASE("paper-scale arithmetic: 855 -> 684/171") {
    auto samples = make_samples(855);
    DatasetSplit split = split_imagewise(samples, 0.8, 42);
    CHECK(split.train_ids.size() == 684);
    CHECK(split.test_ids.size() == 171);
  }

  SUBCASE("10 samples: always 8/2, seed changes membership") {
    auto samples = make_samples(10);
    DatasetSplit s1 = split_imagewise(samples, 0.8, 1);
    DatasetSplit s2 = split_imagewise(samples, 0.8, 2);
    DatasetSplit s1b = split_imagewise(samples, 0.8, 1);
    CHECK(s1.train_ids.size() == 8);
    CHECK(s1.test_ids.size() == 2);
    CHECK(s2.train_ids.size() == 8);
    CHECK(s1.train_ids == s1b.train_ids);
    CHECK(s1.test_ids == s1b.test_ids);
    CHECK(s1.test_ids != s2.test_ids);
  }

  SUBCASE("purity and determinism across 100 seeds") {
    auto samples = make_samples(23);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      DatasetSplit s = split_imagewise(samples, 0.8, seed);
      std::set<std::string> train(s.train_ids.begin(), s.train_ids.end());
      std::set<std::string> test(s.test_ids.begin(), s.test_ids.end());
      CHECK(train.size() + test.size() == 23);
      for (const auto& id : test) CHECK(train.count(id) == 0);
    }
  }

  SUBCASE("contract errors") {
    auto samples = make_samples(1);
    CHECK_THROWS_AS(split_imagewise(samples, 0.8, 1), ContractError);
    auto ok = make_samples(5);
    CHECK_THROWS_AS(split_imagewise(ok, 1.0, 1), ContractError);
  }
}

TEST_CASE("cache round-trip is bit-exact") {
  testutil::TmpDir tmp("cache");
  FixtureOptions opt;
  opt.items = 2;
  opt.seed = 31;
  write_fixture_dataset(tmp.path() / "data", opt);
  LoadResult lr = load_cornell(tmp.path() / "data");
  REQUIRE(lr.samples.size() == 2);

  save_cache(tmp.path() / "cache", lr.samples);
  auto reloaded = load_cache(tmp.path() / "cache");
  REQUIRE(reloaded.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(reloaded[i].image.source_id == lr.samples[i].image.source_id);
    CHECK(reloaded[i].image.data == lr.samples[i].image.data);
    REQUIRE(reloaded[i].positives.size() == lr.samples[i].positives.size());
    for (std::size_t g = 0; g < reloaded[i].positives.size(); ++g) {
      CHECK(reloaded[i].positives[g].x == lr.samples[i].positives[g].x);
      CHECK(reloaded[i].positives[g].theta_deg ==
            lr.samples[i].positives[g].theta_deg);
      CHECK(reloaded[i].positives[g].w == lr.samples[i].positives[g].w);
    }
  }
}

TEST_CASE("png decoder handles all scanline filter types") {
  // foreign encoders filter adaptively; hand-build a stream using every
  // filter type and check the de-filtered pixels
  testutil::TmpDir tmp("pngf");
  const int w = 5, h = 5, bpp = 3;
  Rng rng(733);
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(w) * h * bpp);
  for (auto& p : pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));

  auto paeth = [](int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
  };

  // raw filtered stream: one filter type per row (0,1,2,3,4)
  std::vector<std::uint8_t> raw;
  const int stride = w * bpp;
  for (int y = 0; y < h; ++y) {
    const int f = y % 5;
    raw.push_back(static_cast<std::uint8_t>(f));
    for (int i = 0; i < stride; ++i) {
      const int cur = pixels[static_cast<std::size_t>(y * stride + i)];
      const int left = i >= bpp ? pixels[static_cast<std::size_t>(y * stride + i - bpp)] : 0;
      const int up = y > 0 ? pixels[static_cast<std::size_t>((y - 1) * stride + i)] : 0;
      const int ul = (y > 0 && i >= bpp)
                         ? pixels[static_cast<std::size_t>((y - 1) * stride + i - bpp)]
                         : 0;
      int v = cur;
      switch (f) {
        case 1: v = cur - left; break;
        case 2: v = cur - up; break;
        case 3: v = cur - (left + up) / 2; break;
        case 4: v = cur - paeth(left, up, ul); break;
        default: break;
      }
      raw.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
  }

  // wrap in minimal PNG chunks (zlib-compressed IDAT)
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  REQUIRE(compress2(comp.data(), &comp_len, raw.data(),
                    static_cast<uLong>(raw.size()), 6) == Z_OK);
  comp.resize(comp_len);

  std::vector<std::uint8_t> file = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  auto put_u32 = [&](std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
  };
  auto chunk = [&](const char type[4], const std::vector<std::uint8_t>& payload) {
    put_u32(file, static_cast<std::uint32_t>(payload.size()));
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), payload.begin(), payload.end());
    file.insert(file.end(), body.begin(), body.end());
    put_u32(file, static_cast<std::uint32_t>(
                      crc32(0, body.data(), static_cast<uInt>(body.size()))));
  };
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, w);
  put_u32(ihdr, h);
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB, no interlace
  chunk("IHDR", ihdr);
  chunk("IDAT", comp);
  chunk("IEND", {});

  const auto path = tmp.path() / "filtered.png";
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(file.data()),
             static_cast<std::streamsize>(file.size()));

  ImageU8 decoded = read_png_rgb8(path);
  REQUIRE(decoded.width == w);
  REQUIRE(decoded.height == h);
  CHECK(decoded.pixels == pixels);
}

TEST_CASE("grasp overlay drawing: plate and opening edges are distinct") {
  ImageU8 canvas;
  canvas.width = 200;
  canvas.height = 200;
  canvas.channels = 3;
  canvas.pixels.assign(static_cast<std::size_t>(200) * 200 * 3, 255);

  GraspRect r{100, 100, 30, 40, 60};
  const Rgb plate{0, 200, 0}, opening{230, 200, 0};
  draw_grasp_rect(canvas, r, plate, opening, 2);

  auto pixel_is = [&](const Eigen::Vector2d& p, Rgb c) {
    const int x = static_cast<int>(std::lround(p.x()));
    const int y = static_cast<int>(std::lround(p.y()));
    return canvas.at(x, y, 0) == c.r && canvas.at(x, y, 1) == c.g &&
           canvas.at(x, y, 2) == c.b;
  };
  const auto corners = rect_corners(r);
  CHECK(pixel_is((corners[0] + corners[1]) / 2, plate));    // plate edge p1p2
  CHECK(pixel_is((corners[2] + corners[3]) / 2, plate));    // plate edge p3p4
  CHECK(pixel_is((corners[1] + corners[2]) / 2, opening));  // opening edge
  CHECK(pixel_is((corners[3] + corners[0]) / 2, opening));
  CHECK(pixel_is({100, 100}, plate));  // center marker
  // untouched background stays white
  CHECK(canvas.at(5, 5, 0) == 255);
}

TEST_CASE("png round-trip: rgb8 and gray16") {
  testutil::TmpDir tmp("png");
  Rng rng(501);
  ImageU8 img;
  img.width = 37;
  img.height = 23;
  img.channels = 3;
  img.pixels.resize(static_cast<std::size_t>(37) * 23 * 3);
  for (auto& p : img.pixels) {
    p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  }
  write_png_rgb8(tmp.path() / "t.png", img);
  ImageU8 back = read_png_rgb8(tmp.path() / "t.png");
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.pixels == img.pixels);

  ImageU16 d;
  d.width = 31;
  d.height = 19;
  d.pixels.resize(static_cast<std::size_t>(31) * 19);
  for (auto& p : d.pixels) {
    p = static_cast<std::uint16_t>(rng.uniform_int(0, 65535));
  }
  write_png_gray16(tmp.path() / "d.png", d);
  ImageU16 dback = read_png_gray16(tmp.path() / "d.png");
  CHECK(dback.pixels == d.pixels);
}
