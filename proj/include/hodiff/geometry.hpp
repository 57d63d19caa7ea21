#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "hodiff/tensor.hpp"

namespace hodiff {

template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Vec2 = Eigen::Matrix<S, 2, 1>;
template <typename S>
using Mat3 = Eigen::Matrix<S, 3, 3>;

enum class Frame { wrist, camera };

/// N x 3 point set in meters. Wrist frame is the canonical frame for all
/// object clouds and centroids.
template <typename S>
struct PointCloudT {
  Tensor<S> points;  // N x 3
  Frame frame = Frame::wrist;

  PointCloudT() = default;
  PointCloudT(Tensor<S> pts, Frame f) : points(std::move(pts)), frame(f) { validate(); }

  static PointCloudT zeros(int n, Frame f = Frame::wrist) {
    return PointCloudT(Tensor<S>({n, 3}), f);
  }

  int count() const { return points.dims.empty() ? 0 : points.rows(); }

  Vec3<S> row(int i) const {
    return Vec3<S>(points.at(i, 0), points.at(i, 1), points.at(i, 2));
  }
  void set_row(int i, const Vec3<S>& p) {
    points.at(i, 0) = p.x();
    points.at(i, 1) = p.y();
    points.at(i, 2) = p.z();
  }

  Vec3<S> centroid() const {
    // Accumulate in double: centroids feed re-centering steps whose error
    // budget is 1e-5 in single precision over hundreds of steps.
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    const int n = count();
    for (int i = 0; i < n; ++i)
      acc += Eigen::Vector3d(points.at(i, 0), points.at(i, 1), points.at(i, 2));
    acc /= std::max(1, n);
    return acc.template cast<S>();
  }

  void translate(const Vec3<S>& d) {
    const int n = count();
    for (int i = 0; i < n; ++i) {
      points.at(i, 0) += d.x();
      points.at(i, 1) += d.y();
      points.at(i, 2) += d.z();
    }
  }

  /// Rigidly move the centroid to `target` keeping the shape.
  void recenter(const Vec3<S>& target) { translate(target - centroid()); }

  void validate() const {
    if (points.rank() != 2 || points.cols() != 3)
      throw std::invalid_argument("point cloud must be N x 3, got " + shape_str(points));
    if (!points.all_finite()) throw std::invalid_argument("point cloud has non-finite values");
  }
};

/// Rodrigues formula. Magnitude of `aa` is the rotation angle (radians).
template <typename S>
Mat3<S> axis_angle_to_matrix(const Vec3<S>& aa) {
  const S theta = aa.norm();
  if (theta < S(1e-12)) return Mat3<S>::Identity();
  const Vec3<S> k = aa / theta;
  Mat3<S> kx;
  kx << S(0), -k.z(), k.y(), k.z(), S(0), -k.x(), -k.y(), k.x(), S(0);
  return Mat3<S>::Identity() + std::sin(theta) * kx + (S(1) - std::cos(theta)) * (kx * kx);
}

/// Rigid transform x -> R x + t.
template <typename S>
struct RigidTransform {
  Mat3<S> R = Mat3<S>::Identity();
  Vec3<S> t = Vec3<S>::Zero();

  Vec3<S> apply(const Vec3<S>& x) const { return R * x + t; }
  RigidTransform inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
  RigidTransform compose(const RigidTransform& inner) const {
    // (*this) after inner: x -> R (R_i x + t_i) + t
    return {R * inner.R, R * inner.t + t};
  }
};

using PointCloud = PointCloudT<float>;

}  // namespace hodiff
