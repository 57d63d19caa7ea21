#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "hodiff/geometry.hpp"
#include "hodiff/tensor.hpp"

namespace hodiff {

/// Pinhole camera. Continuous pixel coordinates put the center of pixel
/// (col i, row j) at (i + 0.5, j + 0.5); NDC maps [0,W) x [0,H) to [-1,1)^2.
template <typename S>
struct CameraT {
  S fx = S(70), fy = S(70);
  S cx = S(32), cy = S(32);
  int width = 64, height = 64;
  RigidTransform<S> wrist_to_camera;
  S near_plane = S(1e-4);

  struct Projected {
    S u = S(0), v = S(0);  // continuous pixel coords
    S depth = S(0);        // camera-frame z (meters)
    bool ok = false;       // depth > near and inside image
    bool in_front = false; // depth > near (may still be off-image)
  };

  Projected project(const Vec3<S>& p_wrist) const {
    Projected out;
    const Vec3<S> pc = wrist_to_camera.apply(p_wrist);
    out.depth = pc.z();
    if (!(pc.z() > near_plane)) return out;
    out.in_front = true;
    out.u = fx * pc.x() / pc.z() + cx;
    out.v = fy * pc.y() / pc.z() + cy;
    out.ok = out.u >= S(0) && out.u < S(width) && out.v >= S(0) && out.v < S(height);
    return out;
  }

  Vec2<S> uv_to_ndc(S u, S v) const {
    return Vec2<S>(S(2) * u / S(width) - S(1), S(2) * v / S(height) - S(1));
  }
  Vec2<S> ndc_to_uv(S nx, S ny) const {
    return Vec2<S>((nx + S(1)) * S(width) / S(2), (ny + S(1)) * S(height) / S(2));
  }
};

/// NDC value used for rows that project behind the camera or off the image.
/// Outside [-1,1]^2 by construction, so downstream lookups zero-fill them.
template <typename S>
constexpr S kOutsideNdc = S(-2);

template <typename S>
struct ProjectedPoints {
  Tensor<S> ndc;                          // M x 2, kOutsideNdc rows when not rendered
  std::vector<S> depth;                   // camera-frame z
  std::vector<std::array<int, 2>> pixel;  // {-1,-1} when off-image
  std::vector<uint8_t> on_image;

  int count() const { return ndc.dims.empty() ? 0 : ndc.rows(); }
};

template <typename S>
ProjectedPoints<S> project_ndc(const PointCloudT<S>& points, const CameraT<S>& cam) {
  const int n = points.count();
  ProjectedPoints<S> out;
  out.ndc = Tensor<S>({n, 2});
  out.depth.resize(n);
  out.pixel.assign(n, {-1, -1});
  out.on_image.assign(n, 0);
  for (int i = 0; i < n; ++i) {
    const auto pr = cam.project(points.row(i));
    out.depth[i] = pr.depth;
    if (pr.ok) {
      const Vec2<S> ndc = cam.uv_to_ndc(pr.u, pr.v);
      out.ndc.at(i, 0) = ndc.x();
      out.ndc.at(i, 1) = ndc.y();
      out.pixel[i] = {static_cast<int>(std::floor(pr.u)), static_cast<int>(std::floor(pr.v))};
      out.on_image[i] = 1;
    } else {
      out.ndc.at(i, 0) = kOutsideNdc<S>;
      out.ndc.at(i, 1) = kOutsideNdc<S>;
    }
  }
  return out;
}

/// Per-pixel nearest point. idx is -1 where nothing splats.
template <typename S>
struct RasterIndexMap {
  int height = 0, width = 0;
  std::vector<int> idx;
  std::vector<S> depth;

  int at(int row, int col) const { return idx[static_cast<size_t>(row) * width + col]; }
  S depth_at(int row, int col) const { return depth[static_cast<size_t>(row) * width + col]; }
};

/// Z-buffer splatting: each point covers its containing pixel plus any pixel
/// whose center lies within radius_px of the projection. Nearest depth wins,
/// ties go to the lower point index.
template <typename S>
RasterIndexMap<S> rasterize(const PointCloudT<S>& points, const CameraT<S>& cam, S radius_px) {
  if (radius_px < S(0)) throw std::invalid_argument("rasterize: radius_px must be >= 0");
  RasterIndexMap<S> map;
  map.height = cam.height;
  map.width = cam.width;
  map.idx.assign(static_cast<size_t>(cam.height) * cam.width, -1);
  map.depth.assign(static_cast<size_t>(cam.height) * cam.width, std::numeric_limits<S>::infinity());

  const int n = points.count();
  for (int i = 0; i < n; ++i) {
    const auto pr = cam.project(points.row(i));
    if (!pr.ok) continue;
    const int c0 = std::max(0, static_cast<int>(std::floor(pr.u - radius_px)));
    const int c1 = std::min(cam.width - 1, static_cast<int>(std::floor(pr.u + radius_px)));
    const int r0 = std::max(0, static_cast<int>(std::floor(pr.v - radius_px)));
    const int r1 = std::min(cam.height - 1, static_cast<int>(std::floor(pr.v + radius_px)));
    const int own_c = static_cast<int>(std::floor(pr.u));
    const int own_r = static_cast<int>(std::floor(pr.v));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const S du = (S(c) + S(0.5)) - pr.u;
        const S dv = (S(r) + S(0.5)) - pr.v;
        const bool covered = (r == own_r && c == own_c) || du * du + dv * dv <= radius_px * radius_px;
        if (!covered) continue;
        const size_t k = static_cast<size_t>(r) * cam.width + c;
        if (pr.depth < map.depth[k]) {
          map.depth[k] = pr.depth;
          map.idx[k] = i;
        }
      }
    }
  }
  return map;
}

/// Bilinear weights at continuous pixel coords; corner indices are clamped
/// (replicate) for on-image samples near the border.
template <typename S>
struct BilinearTap {
  int col[2], row[2];
  S w[4];  // (r0,c0), (r0,c1), (r1,c0), (r1,c1)
};

template <typename S>
BilinearTap<S> bilinear_tap(S u, S v, int width, int height) {
  const S x = u - S(0.5);
  const S y = v - S(0.5);
  const S fx = std::floor(x);
  const S fy = std::floor(y);
  const S ax = x - fx;
  const S ay = y - fy;
  BilinearTap<S> tap;
  tap.col[0] = std::clamp(static_cast<int>(fx), 0, width - 1);
  tap.col[1] = std::clamp(static_cast<int>(fx) + 1, 0, width - 1);
  tap.row[0] = std::clamp(static_cast<int>(fy), 0, height - 1);
  tap.row[1] = std::clamp(static_cast<int>(fy) + 1, 0, height - 1);
  tap.w[0] = (S(1) - ay) * (S(1) - ax);
  tap.w[1] = (S(1) - ay) * ax;
  tap.w[2] = ay * (S(1) - ax);
  tap.w[3] = ay * ax;
  return tap;
}

/// Bilinear interpolation of an H x W x C map at NDC locations. Rows outside
/// [-1,1)^2 (including the behind-camera sentinel) come back all-zero.
template <typename S>
Tensor<S> lookup_features(const Tensor<S>& fmap, const Tensor<S>& ndc) {
  if (fmap.rank() != 3) throw std::invalid_argument("lookup_features: fmap must be H x W x C");
  const int H = fmap.dims[0], W = fmap.dims[1], C = fmap.dims[2];
  const int m = ndc.rows();
  Tensor<S> out({m, C});
  for (int i = 0; i < m; ++i) {
    const S u = (ndc.at(i, 0) + S(1)) * S(W) / S(2);
    const S v = (ndc.at(i, 1) + S(1)) * S(H) / S(2);
    if (!(u >= S(0) && u < S(W) && v >= S(0) && v < S(H))) continue;
    const auto tap = bilinear_tap(u, v, W, H);
    for (int k = 0; k < 4; ++k) {
      const int r = tap.row[k / 2], c = tap.col[k % 2];
      const S w = tap.w[k];
      if (w == S(0)) continue;
      for (int ch = 0; ch < C; ++ch) out.at(i, ch) += w * fmap.at(r, c, ch);
    }
  }
  return out;
}

/// Gaussian splat contributions are negligible past a few sigma; this cutoff
/// bounds the per-point pixel window for both the forward pass and gradients.
inline constexpr double kSoftMaskCutoffSigmas = 6.0;

/// Differentiable silhouette: mask(px) = 1 - prod_p (1 - exp(-d^2 / 2 sigma^2))
/// over points in front of the camera (including off-image ones, whose tails
/// can still reach the frame).
template <typename S>
Tensor<S> soft_mask(const PointCloudT<S>& points, const CameraT<S>& cam, S sigma_px) {
  if (!(sigma_px > S(0))) throw std::invalid_argument("soft_mask: sigma_px must be > 0");
  const int H = cam.height, W = cam.width;
  Tensor<S> keep({H, W});
  keep.fill(S(1));  // running prod (1 - g)
  const S inv_two_sigma2 = S(1) / (S(2) * sigma_px * sigma_px);
  const S radius = static_cast<S>(kSoftMaskCutoffSigmas) * sigma_px;
  for (int i = 0; i < points.count(); ++i) {
    const auto pr = cam.project(points.row(i));
    if (!pr.in_front) continue;
    const int c0 = std::max(0, static_cast<int>(std::floor(pr.u - radius)));
    const int c1 = std::min(W - 1, static_cast<int>(std::floor(pr.u + radius)));
    const int r0 = std::max(0, static_cast<int>(std::floor(pr.v - radius)));
    const int r1 = std::min(H - 1, static_cast<int>(std::floor(pr.v + radius)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const S du = (S(c) + S(0.5)) - pr.u;
        const S dv = (S(r) + S(0.5)) - pr.v;
        const S g = std::exp(-(du * du + dv * dv) * inv_two_sigma2);
        keep.at(r, c) *= (S(1) - g);
      }
    }
  }
  Tensor<S> mask({H, W});
  for (size_t k = 0; k < mask.size(); ++k) mask.data[k] = S(1) - keep.data[k];
  return mask;
}

using Camera = CameraT<float>;

}  // namespace hodiff
