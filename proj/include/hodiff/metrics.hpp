#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hodiff/geometry.hpp"

namespace hodiff {

/// Static kd-tree over an N x 3 cloud for nearest-neighbor queries.
template <typename S>
class KdTree3 {
 public:
  explicit KdTree3(const PointCloudT<S>& cloud) : pts_(cloud.points) {
    if (cloud.count() < 1) throw std::invalid_argument("kd-tree: empty cloud");
    index_.resize(cloud.count());
    std::iota(index_.begin(), index_.end(), 0);
    nodes_.reserve(2 * cloud.count() / kLeafSize + 2);
    root_ = build(0, cloud.count());
  }

  /// Returns (index, squared distance) of the closest point.
  std::pair<int, double> nearest(const Vec3<S>& q) const {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, q, best, best_d2);
    return {best, best_d2};
  }

 private:
  static constexpr int kLeafSize = 8;
  struct Node {
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into index_
    int axis = 0;
    double split = 0;
  };

  Tensor<S> pts_;
  std::vector<int> index_;
  std::vector<Node> nodes_;
  int root_ = -1;

  double coord(int i, int axis) const { return double(pts_.at(i, axis)); }

  int build(int begin, int end) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(node);
      return int(nodes_.size()) - 1;
    }
    // Split on the widest axis at the median.
    double lo[3] = {1e300, 1e300, 1e300}, hi[3] = {-1e300, -1e300, -1e300};
    for (int k = begin; k < end; ++k)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], coord(index_[k], a));
        hi[a] = std::max(hi[a], coord(index_[k], a));
      }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
    const int mid = (begin + end) / 2;
    std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                     [&](int a, int b) { return coord(a, axis) < coord(b, axis); });
    node.axis = axis;
    node.split = coord(index_[mid], axis);
    const int self = int(nodes_.size());
    nodes_.push_back(node);
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[self].left = l;
    nodes_[self].right = r;
    return self;
  }

  void search(int ni, const Vec3<S>& q, int& best, double& best_d2) const {
    const Node& node = nodes_[ni];
    if (node.left < 0) {
      for (int k = node.begin; k < node.end; ++k) {
        const int i = index_[k];
        const double dx = coord(i, 0) - double(q.x());
        const double dy = coord(i, 1) - double(q.y());
        const double dz = coord(i, 2) - double(q.z());
        const double d2 = dx * dx + dy * dy + dz * dz;
        if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
          best_d2 = d2;
          best = i;
        }
      }
      return;
    }
    const double dq = double(q[node.axis]) - node.split;
    search(dq <= 0 ? node.left : node.right, q, best, best_d2);
    if (dq * dq <= best_d2) search(dq <= 0 ? node.right : node.left, q, best, best_d2);
  }
};

/// Symmetric squared Chamfer distance in mm^2: mean over A of the squared
/// nearest distance to B, plus the mirrored term. Clouds are in meters.
/// (Convention: squared distances, sum of the two directional means; echoed
/// in every report header since the literature varies.)
template <typename S>
double chamfer(const PointCloudT<S>& a, const PointCloudT<S>& b) {
  if (a.count() < 1 || b.count() < 1) throw std::invalid_argument("chamfer: empty cloud");
  auto directional = [](const PointCloudT<S>& from, const PointCloudT<S>& to) {
    KdTree3<S> tree(to);
    double acc = 0;
    for (int i = 0; i < from.count(); ++i) acc += tree.nearest(from.row(i)).second;
    return acc / double(from.count());
  };
  return (directional(a, b) + directional(b, a)) * 1e6;  // m^2 -> mm^2
}

/// F-score at threshold tau (mm): harmonic mean of precision (fraction of
/// predicted points within tau of ground truth) and recall (mirrored).
template <typename S>
double fscore(const PointCloudT<S>& pred, const PointCloudT<S>& gt, double tau_mm) {
  if (pred.count() < 1 || gt.count() < 1) throw std::invalid_argument("fscore: empty cloud");
  const double tau2_m = (tau_mm * 1e-3) * (tau_mm * 1e-3);
  auto within = [&](const PointCloudT<S>& from, const PointCloudT<S>& to) {
    KdTree3<S> tree(to);
    int hits = 0;
    for (int i = 0; i < from.count(); ++i)
      if (tree.nearest(from.row(i)).second <= tau2_m) ++hits;
    return double(hits) / double(from.count());
  };
  const double precision = within(pred, gt);
  const double recall = within(gt, pred);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

// -- reports ------------------------------------------------------------------

inline constexpr int kReportFormatVersion = 1;
inline constexpr const char* kChamferConvention =
    "squared distances in mm^2, sum of both directional means";

struct SampleMetrics {
  int sample_id = 0;
  double cd = 0, f5 = 0, f10 = 0;
  double visibility = 0;
};

struct BinStats {
  bool empty = true;
  int count = 0;
  double cd = 0, f5 = 0, f10 = 0;
};

struct EvalReport {
  std::vector<SampleMetrics> per_sample;
  double mean_cd = 0, mean_f5 = 0, mean_f10 = 0;
  std::array<BinStats, 10> visibility_bins;  // width 0.1
  std::optional<double> oracle_k;            // k when best-of-k selection was used

  static EvalReport from_samples(std::vector<SampleMetrics> samples) {
    EvalReport r;
    r.per_sample = std::move(samples);
    if (r.per_sample.empty()) return r;
    for (const auto& s : r.per_sample) {
      r.mean_cd += s.cd;
      r.mean_f5 += s.f5;
      r.mean_f10 += s.f10;
      int bin = std::clamp(int(s.visibility * 10.0), 0, 9);
      auto& b = r.visibility_bins[bin];
      b.empty = false;
      b.count += 1;
      b.cd += s.cd;
      b.f5 += s.f5;
      b.f10 += s.f10;
    }
    const double n = double(r.per_sample.size());
    r.mean_cd /= n;
    r.mean_f5 /= n;
    r.mean_f10 /= n;
    for (auto& b : r.visibility_bins)
      if (!b.empty) {
        b.cd /= b.count;
        b.f5 /= b.count;
        b.f10 /= b.count;
      }
    return r;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format_version"] = kReportFormatVersion;
    j["chamfer_convention"] = kChamferConvention;
    j["aggregate"] = {{"cd_mm2", mean_cd}, {"f5", mean_f5}, {"f10", mean_f10},
                      {"samples", per_sample.size()}};
    if (oracle_k) j["oracle_k"] = *oracle_k;
    for (int i = 0; i < 10; ++i) {
      nlohmann::json b;
      b["visibility_lo"] = i / 10.0;
      b["visibility_hi"] = (i + 1) / 10.0;
      if (visibility_bins[i].empty) {
        b["empty"] = true;
      } else {
        b["empty"] = false;
        b["count"] = visibility_bins[i].count;
        b["cd_mm2"] = visibility_bins[i].cd;
        b["f5"] = visibility_bins[i].f5;
        b["f10"] = visibility_bins[i].f10;
      }
      j["visibility_bins"].push_back(b);
    }
    for (const auto& s : per_sample)
      j["per_sample"].push_back({{"id", s.sample_id},
                                 {"cd_mm2", s.cd},
                                 {"f5", s.f5},
                                 {"f10", s.f10},
                                 {"visibility", s.visibility}});
    return j;
  }

  std::string to_csv() const {
    std::string csv = "sample_id,cd_mm2,f5,f10,visibility\n";
    char buf[160];
    for (const auto& s : per_sample) {
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g\n", s.sample_id, s.cd, s.f5, s.f10,
                    s.visibility);
      csv += buf;
    }
    return csv;
  }
};

/// Score one prediction set against ground truth.
template <typename S>
SampleMetrics evaluate_sample(int id, const PointCloudT<S>& pred, const PointCloudT<S>& gt,
                              double visibility) {
  SampleMetrics m;
  m.sample_id = id;
  m.cd = chamfer(pred, gt);
  m.f5 = fscore(pred, gt, 5.0);
  m.f10 = fscore(pred, gt, 10.0);
  m.visibility = visibility;
  return m;
}

/// Best-of-k selection: keep the prediction maximizing F-5; ties break to
/// higher F-10, then lower CD, then the lowest index.
template <typename S>
SampleMetrics oracle_select(int id, const std::vector<PointCloudT<S>>& predictions,
                            const PointCloudT<S>& gt, double visibility) {
  if (predictions.empty()) throw std::invalid_argument("oracle_select: no predictions");
  SampleMetrics best;
  bool first = true;
  for (size_t k = 0; k < predictions.size(); ++k) {
    SampleMetrics m = evaluate_sample(id, predictions[k], gt, visibility);
    const bool better =
        first || m.f5 > best.f5 ||
        (m.f5 == best.f5 && (m.f10 > best.f10 || (m.f10 == best.f10 && m.cd < best.cd)));
    if (better) {
      best = m;
      first = false;
    }
  }
  return best;
}

}  // namespace hodiff
