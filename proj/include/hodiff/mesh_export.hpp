#pragma once

// Visualization-only surface export: an oriented splat disk per point, normals
// from local PCA. Good enough to eyeball reconstructions in a mesh viewer; not
// part of any metric path.

#include <fstream>

#include "hodiff/metrics.hpp"

namespace hodiff {

inline void export_splat_mesh(const PointCloud& cloud, const std::string& obj_path,
                              float radius_m = 0.004f, int fan = 6) {
  if (cloud.count() < 4) throw std::invalid_argument("export_splat_mesh: need at least 4 points");
  std::ofstream f(obj_path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + obj_path);

  // k-nearest by brute force; clouds here are small.
  const int k = std::min(8, cloud.count() - 1);
  int vert_base = 1;
  for (int i = 0; i < cloud.count(); ++i) {
    const Vec3<float> p = cloud.row(i);
    std::vector<std::pair<float, int>> dist;
    for (int j = 0; j < cloud.count(); ++j)
      if (j != i) dist.emplace_back((cloud.row(j) - p).squaredNorm(), j);
    std::nth_element(dist.begin(), dist.begin() + k - 1, dist.end());

    Vec3<float> mean = Vec3<float>::Zero();
    for (int n = 0; n < k; ++n) mean += cloud.row(dist[size_t(n)].second);
    mean /= float(k);
    Mat3<float> cov = Mat3<float>::Zero();
    for (int n = 0; n < k; ++n) {
      const Vec3<float> d = cloud.row(dist[size_t(n)].second) - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3<float>> eig(cov);
    const Vec3<float> normal = eig.eigenvectors().col(0);  // smallest eigenvalue

    Vec3<float> u = normal.cross(Vec3<float>(0, 0, 1));
    if (u.norm() < 1e-4f) u = normal.cross(Vec3<float>(0, 1, 0));
    u.normalize();
    const Vec3<float> v = normal.cross(u);
    f << "v " << p.x() << " " << p.y() << " " << p.z() << "\n";
    for (int s = 0; s < fan; ++s) {
      const float a = 2.0f * float(M_PI) * float(s) / float(fan);
      const Vec3<float> q = p + radius_m * (std::cos(a) * u + std::sin(a) * v);
      f << "v " << q.x() << " " << q.y() << " " << q.z() << "\n";
    }
    for (int s = 0; s < fan; ++s)
      f << "f " << vert_base << " " << vert_base + 1 + s << " " << vert_base + 1 + (s + 1) % fan
        << "\n";
    vert_base += fan + 1;
  }
}

}  // namespace hodiff
