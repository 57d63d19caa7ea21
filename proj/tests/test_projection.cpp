#include <catch2/catch_amalgamated.hpp>

#include "hodiff/camera.hpp"
#include "oracles.hpp"

using namespace hodiff;

namespace {

Camera test_camera(int size = 32) {
  Camera cam;
  cam.width = cam.height = size;
  cam.fx = cam.fy = float(size) * 1.2f;
  cam.cx = cam.cy = float(size) / 2.0f;
  return cam;
}

Camera rotated_camera(int size = 32) {
  Camera cam = test_camera(size);
  cam.wrist_to_camera.R = axis_angle_to_matrix(Vec3<float>(0.2f, -0.4f, 0.1f));
  cam.wrist_to_camera.t = Vec3<float>(0.03f, -0.05f, 0.35f);
  return cam;
}

PointCloud cloud_from(const std::vector<Vec3<float>>& pts) {
  PointCloud pc = PointCloud::zeros(int(pts.size()));
  for (size_t i = 0; i < pts.size(); ++i) pc.set_row(int(i), pts[i]);
  return pc;
}

// Brute-force rasterizer: per pixel, scan every point.
template <typename S>
std::vector<int> naive_rasterize(const PointCloudT<S>& pc, const CameraT<S>& cam, S radius) {
  std::vector<int> map(size_t(cam.height) * cam.width, -1);
  std::vector<double> best(size_t(cam.height) * cam.width, 1e300);
  for (int r = 0; r < cam.height; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      for (int i = 0; i < pc.count(); ++i) {
        const Vec3<S> p = cam.wrist_to_camera.apply(pc.row(i));
        if (!(p.z() > cam.near_plane)) continue;
        const double u = cam.fx * p.x() / p.z() + cam.cx;
        const double v = cam.fy * p.y() / p.z() + cam.cy;
        if (!(u >= 0 && u < cam.width && v >= 0 && v < cam.height)) continue;
        const double du = (c + 0.5) - u;
        const double dv = (r + 0.5) - v;
        const bool covers = (int(std::floor(u)) == c && int(std::floor(v)) == r) ||
                            du * du + dv * dv <= double(radius) * radius;
        if (!covers) continue;
        const size_t k = size_t(r) * cam.width + c;
        if (double(p.z()) < best[k]) {
          best[k] = p.z();
          map[k] = i;
        }
      }
    }
  }
  return map;
}

}  // namespace

TEST_CASE("project_ndc: optical axis point lands on the principal pixel") {
  Camera cam = test_camera(64);
  auto out = project_ndc(cloud_from({{0.0f, 0.0f, 1.0f}}), cam);
  REQUIRE(out.on_image[0] == 1);
  CHECK(out.ndc.at(0, 0) == Catch::Approx(0.0f).margin(1e-6));
  CHECK(out.ndc.at(0, 1) == Catch::Approx(0.0f).margin(1e-6));
  CHECK(out.pixel[0][0] == 32);
  CHECK(out.pixel[0][1] == 32);
  CHECK(out.depth[0] == Catch::Approx(1.0f));
}

TEST_CASE("project_ndc: behind-camera point is flagged outside, not thrown") {
  Camera cam = test_camera();
  auto out = project_ndc(cloud_from({{0.0f, 0.0f, -1.0f}, {0.0f, 0.0f, 0.5f}}), cam);
  CHECK(out.on_image[0] == 0);
  CHECK(out.pixel[0][0] == -1);
  CHECK(out.ndc.at(0, 0) == kOutsideNdc<float>);
  CHECK(out.on_image[1] == 1);
}

TEST_CASE("project_ndc matches scalar pinhole transcription with extrinsics") {
  Camera cam = rotated_camera(48);
  Rng rng(88);
  PointCloud pc = PointCloud::zeros(40);
  for (int i = 0; i < 40; ++i)
    pc.set_row(i, Vec3<float>(float(rng.uniform(-0.2, 0.2)), float(rng.uniform(-0.2, 0.2)),
                              float(rng.uniform(-0.2, 0.2))));
  auto out = project_ndc(pc, cam);
  for (int i = 0; i < 40; ++i) {
    // Independent transcription of the pinhole model.
    Eigen::Vector3d p = (cam.wrist_to_camera.R.cast<double>() * pc.row(i).cast<double>() +
                         cam.wrist_to_camera.t.cast<double>());
    if (p.z() <= cam.near_plane) {
      CHECK(out.on_image[i] == 0);
      continue;
    }
    const double u = cam.fx * p.x() / p.z() + cam.cx;
    const double v = cam.fy * p.y() / p.z() + cam.cy;
    const bool inside = u >= 0 && u < cam.width && v >= 0 && v < cam.height;
    REQUIRE(out.on_image[i] == (inside ? 1 : 0));
    if (inside) {
      CHECK(out.ndc.at(i, 0) == Catch::Approx(2.0 * u / cam.width - 1.0).margin(1e-5));
      CHECK(out.ndc.at(i, 1) == Catch::Approx(2.0 * v / cam.height - 1.0).margin(1e-5));
      CHECK(out.depth[i] == Catch::Approx(p.z()).margin(1e-6));
    }
  }
}

TEST_CASE("rasterize: z-test keeps the nearer point") {
  Camera cam = test_camera(16);
  // Same ray, different depths.
  auto map = rasterize(cloud_from({{0.0f, 0.0f, 1.0f}, {0.0f, 0.0f, 0.5f}}), cam, 0.0f);
  CHECK(map.at(8, 8) == 1);
  CHECK(map.depth_at(8, 8) == Catch::Approx(0.5f));
}

TEST_CASE("rasterize: zero radius covers exactly the containing pixel") {
  Camera cam = test_camera(16);
  auto map = rasterize(cloud_from({{0.013f, -0.004f, 0.9f}}), cam, 0.0f);
  int covered = 0;
  for (int v : map.idx)
    if (v >= 0) ++covered;
  CHECK(covered == 1);
  const auto pr = cam.project(Vec3<float>(0.013f, -0.004f, 0.9f));
  CHECK(map.at(int(std::floor(pr.v)), int(std::floor(pr.u))) == 0);
}

TEST_CASE("rasterize matches the brute-force per-pixel oracle") {
  for (uint64_t seed : {4ull, 5ull, 6ull, 7ull}) {
    Rng rng(seed);
    Camera cam = rotated_camera(24);
    PointCloud pc = PointCloud::zeros(32);
    for (int i = 0; i < 32; ++i)
      pc.set_row(i, Vec3<float>(float(rng.uniform(-0.15, 0.15)), float(rng.uniform(-0.15, 0.15)),
                                float(rng.uniform(-0.1, 0.2))));
    const float radius = float(rng.uniform(0.0, 2.5));
    auto got = rasterize(pc, cam, radius);
    auto want = naive_rasterize(pc, cam, radius);
    REQUIRE(got.idx == want);
  }
}

TEST_CASE("lookup_features: constant map returns the constant on-image") {
  TensorF fmap({8, 8, 3});
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      for (int k = 0; k < 3; ++k) fmap.at(r, c, k) = 2.5f - float(k);
  TensorF ndc = TensorF::from_rows({{0.0f, 0.0f}, {-0.6f, 0.4f}, {5.0f, 0.0f}});
  auto out = lookup_features(fmap, ndc);
  for (int k = 0; k < 3; ++k) {
    CHECK(out.at(0, k) == Catch::Approx(2.5f - k));
    CHECK(out.at(1, k) == Catch::Approx(2.5f - k));
    CHECK(out.at(2, k) == 0.0f);  // off-image row zero-filled
  }
}

TEST_CASE("lookup_features: pixel center hits that pixel exactly") {
  const int W = 8, H = 8;
  TensorF fmap({H, W, 1});
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) fmap.at(r, c, 0) = float(10 * r + c);
  // Center of pixel (row 3, col 5) is u = 5.5, v = 3.5.
  TensorF ndc({1, 2});
  ndc.at(0, 0) = 2.0f * 5.5f / W - 1.0f;
  ndc.at(0, 1) = 2.0f * 3.5f / H - 1.0f;
  auto out = lookup_features(fmap, ndc);
  CHECK(out.at(0, 0) == Catch::Approx(35.0f));
}

TEST_CASE("lookup_features: cell midpoint equals the 4-neighbor mean") {
  const int W = 6, H = 6;
  Rng rng(123);
  TensorF fmap({H, W, 2});
  for (auto& v : fmap.data) v = float(rng.normal());
  // Midpoint between centers of pixels (2,2),(2,3),(3,2),(3,3): u = 3.0, v = 3.0.
  TensorF ndc({1, 2});
  ndc.at(0, 0) = 2.0f * 3.0f / W - 1.0f;
  ndc.at(0, 1) = 2.0f * 3.0f / H - 1.0f;
  auto out = lookup_features(fmap, ndc);
  for (int k = 0; k < 2; ++k) {
    const float manual = 0.25f * (fmap.at(2, 2, k) + fmap.at(2, 3, k) + fmap.at(3, 2, k) +
                                  fmap.at(3, 3, k));
    CHECK(out.at(0, k) == Catch::Approx(manual).margin(1e-6));
  }
}

TEST_CASE("lookup_features is linear in the feature map") {
  Rng rng(321);
  TensorF f1({5, 5, 4}), f2({5, 5, 4});
  for (auto& v : f1.data) v = float(rng.normal());
  for (auto& v : f2.data) v = float(rng.normal());
  TensorF ndc({10, 2});
  for (auto& v : ndc.data) v = float(rng.uniform(-1.3, 1.3));  // some rows off-image
  const float a = 0.7f, b = -1.9f;
  TensorF mix({5, 5, 4});
  for (size_t i = 0; i < mix.size(); ++i) mix.data[i] = a * f1.data[i] + b * f2.data[i];
  auto lhs = lookup_features(mix, ndc);
  auto r1 = lookup_features(f1, ndc);
  auto r2 = lookup_features(f2, ndc);
  for (size_t i = 0; i < lhs.size(); ++i)
    CHECK(lhs.data[i] == Catch::Approx(a * r1.data[i] + b * r2.data[i]).margin(1e-5));
}

TEST_CASE("soft_mask: no points gives an all-zero mask") {
  Camera cam = test_camera(12);
  auto mask = soft_mask(PointCloud::zeros(0), cam, 1.0f);
  for (float v : mask.data) CHECK(v == 0.0f);
}

TEST_CASE("soft_mask: a point on a pixel center saturates that pixel") {
  Camera cam = test_camera(16);
  // A point that projects exactly onto the center of pixel (8,8): u = v = 8.5.
  const float z = 1.0f;
  const float x = (8.5f - cam.cx) * z / cam.fx;
  const float y = (8.5f - cam.cy) * z / cam.fy;
  auto mask = soft_mask(cloud_from({{x, y, z}}), cam, 1.0f);
  CHECK(mask.at(8, 8) == Catch::Approx(1.0f).margin(1e-6));
  CHECK(mask.at(0, 0) == Catch::Approx(0.0f).margin(1e-6));
}

TEST_CASE("soft_mask is translation consistent") {
  Camera cam = test_camera(24);
  Rng rng(55);
  std::vector<Vec3<float>> pts;
  const float z = 0.8f;
  for (int i = 0; i < 12; ++i)
    pts.push_back(Vec3<float>(float(rng.uniform(-0.05, 0.05)), float(rng.uniform(-0.05, 0.05)), z));
  auto base = soft_mask(cloud_from(pts), cam, 1.0f);
  // One pixel of camera-plane offset at depth z.
  const float dx = z / cam.fx;
  for (auto& p : pts) p.x() += dx;
  auto shifted = soft_mask(cloud_from(pts), cam, 1.0f);
  for (int r = 0; r < 24; ++r)
    for (int c = 1; c < 24; ++c)
      CHECK(shifted.at(r, c) == Catch::Approx(base.at(r, c - 1)).margin(1e-5));
}
