#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "hodiff/geometry.hpp"
#include "hodiff/rng.hpp"
#include "hodiff/tensor.hpp"

namespace hodiff {

inline constexpr int kHandJoints = 15;  // articulated joints, wrist root excluded
inline constexpr int kHandNodes = kHandJoints + 1;
inline constexpr int kArticulationDim = kHandJoints * 3;

/// Kinematic tree plus a rigid-skinned vertex template. Node 0 is the wrist
/// root; nodes 1..15 are the articulated joints in the fixed order
/// thumb -> pinky, proximal -> distal.
template <typename S>
struct HandTemplateT {
  std::array<int, kHandNodes> parent{};            // parent[0] == -1
  std::array<Vec3<S>, kHandNodes> rest_offsets{};  // joint position in parent frame
  Tensor<S> vertices_rest;                         // N_H x 3, wrist frame
  std::vector<int> vertex_joint;                   // owning node per vertex, in [0,15]
  std::vector<std::string> joint_order;            // recorded labels, index = node id

  int vertex_count() const { return vertices_rest.dims.empty() ? 0 : vertices_rest.rows(); }

  /// Joint positions in the wrist frame at the rest pose.
  std::array<Vec3<S>, kHandNodes> rest_positions() const {
    std::array<Vec3<S>, kHandNodes> pos{};
    pos[0] = Vec3<S>::Zero();
    for (int j = 1; j < kHandNodes; ++j) pos[j] = pos[parent[j]] + rest_offsets[j];
    return pos;
  }

  void validate() const {
    if (parent[0] != -1) throw std::invalid_argument("hand template: node 0 must be the root");
    for (int j = 1; j < kHandNodes; ++j) {
      // Walk to the root; more than kHandNodes hops means a cycle.
      int cur = j, hops = 0;
      while (cur != 0) {
        if (cur < 0 || cur >= kHandNodes || hops++ > kHandNodes)
          throw std::invalid_argument("hand template: parent array is not a rooted tree");
        cur = parent[cur];
      }
      if (!rest_offsets[j].allFinite())
        throw std::invalid_argument("hand template: non-finite rest offset");
    }
    if (vertices_rest.rank() != 2 || vertices_rest.cols() != 3)
      throw std::invalid_argument("hand template: vertices must be N x 3");
    if (static_cast<int>(vertex_joint.size()) != vertex_count())
      throw std::invalid_argument("hand template: vertex_joint size mismatch");
    std::array<int, kHandNodes> owned{};
    for (int v : vertex_joint) {
      if (v < 0 || v >= kHandNodes) throw std::invalid_argument("hand template: bad vertex joint id");
      owned[v]++;
    }
    for (int j = 0; j < kHandNodes; ++j)
      if (owned[j] == 0)
        throw std::invalid_argument("hand template: joint " + std::to_string(j) + " owns no vertex");
  }
};

/// 45-DoF articulation (axis-angle per joint) plus the wrist-to-camera pose.
template <typename S>
struct HandPoseT {
  Tensor<S> joint_rotations{std::vector<int>{kHandJoints, 3}};  // axis-angle, radians
  RigidTransform<S> wrist_to_camera;

  Vec3<S> axis_angle(int joint) const {  // joint in [1,15]
    return Vec3<S>(joint_rotations.at(joint - 1, 0), joint_rotations.at(joint - 1, 1),
                   joint_rotations.at(joint - 1, 2));
  }

  void validate() const {
    if (!joint_rotations.all_finite()) throw std::invalid_argument("hand pose: non-finite rotation");
    for (int j = 1; j <= kHandJoints; ++j)
      if (axis_angle(j).norm() > S(M_PI) + S(1e-6))
        throw std::invalid_argument("hand pose: axis-angle magnitude exceeds pi");
    const Mat3<S> RtR =
        wrist_to_camera.R.transpose() * wrist_to_camera.R - Mat3<S>::Identity();
    if (RtR.cwiseAbs().maxCoeff() > S(1e-5))
      throw std::invalid_argument("hand pose: wrist_to_camera rotation not orthonormal");
  }
};

/// Wrist -> joint transforms for the 15 articulated joints (root excluded).
template <typename S>
struct JointFramesT {
  std::vector<RigidTransform<S>> wrist_to_joint;  // size 15, index j-1

  int count() const { return static_cast<int>(wrist_to_joint.size()); }
};

/// Compose parent chains. Returns wrist->joint transforms; the wrist itself is
/// the identity and is excluded.
template <typename S>
JointFramesT<S> forward_kinematics(const HandTemplateT<S>& tmpl, const HandPoseT<S>& pose) {
  tmpl.validate();
  // joint -> wrist first (natural composition order), then invert.
  std::array<RigidTransform<S>, kHandNodes> to_wrist;
  to_wrist[0] = RigidTransform<S>{};
  for (int j = 1; j < kHandNodes; ++j) {
    RigidTransform<S> local{axis_angle_to_matrix(pose.axis_angle(j)), tmpl.rest_offsets[j]};
    to_wrist[j] = to_wrist[tmpl.parent[j]].compose(local);
  }
  JointFramesT<S> frames;
  frames.wrist_to_joint.resize(kHandJoints);
  for (int j = 1; j < kHandNodes; ++j) frames.wrist_to_joint[j - 1] = to_wrist[j].inverse();
  return frames;
}

/// Rigid skinning: every template vertex rides its owning joint's frame.
template <typename S>
PointCloudT<S> hand_vertices(const HandTemplateT<S>& tmpl, const HandPoseT<S>& pose) {
  const JointFramesT<S> frames = forward_kinematics(tmpl, pose);
  const auto rest_pos = tmpl.rest_positions();
  const int n = tmpl.vertex_count();
  PointCloudT<S> out = PointCloudT<S>::zeros(n, Frame::wrist);
  for (int i = 0; i < n; ++i) {
    const int j = tmpl.vertex_joint[i];
    Vec3<S> rest(tmpl.vertices_rest.at(i, 0), tmpl.vertices_rest.at(i, 1),
                 tmpl.vertices_rest.at(i, 2));
    if (j == 0) {
      out.set_row(i, rest);
    } else {
      const Vec3<S> local = rest - rest_pos[j];  // joint-local coords at rest
      out.set_row(i, frames.wrist_to_joint[j - 1].inverse().apply(local));
    }
  }
  return out;
}

/// Express every point in all 15 joint frames and concatenate: N x 45.
template <typename S>
Tensor<S> articulation_embedding(const PointCloudT<S>& points, const JointFramesT<S>& frames) {
  if (frames.count() != kHandJoints)
    throw std::invalid_argument("articulation_embedding: expected 15 joint frames, got " +
                                std::to_string(frames.count()));
  const int n = points.count();
  Tensor<S> out({n, kArticulationDim});
  for (int i = 0; i < n; ++i) {
    const Vec3<S> x = points.row(i);
    for (int j = 0; j < kHandJoints; ++j) {
      const Vec3<S> y = frames.wrist_to_joint[j].apply(x);
      out.at(i, 3 * j + 0) = y.x();
      out.at(i, 3 * j + 1) = y.y();
      out.at(i, 3 * j + 2) = y.z();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Template container: JSON sidecar + raw little-endian float32 vertex block.

inline constexpr int kHandTemplateFormatVersion = 1;

namespace detail {
inline uint32_t crc32_of(const void* data, size_t n) {
  return static_cast<uint32_t>(
      ::crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}
}  // namespace detail

template <typename S>
void save_hand_template(const HandTemplateT<S>& tmpl, const std::string& json_path,
                        const std::string& blob_path) {
  tmpl.validate();
  const Tensor<float> verts = tmpl.vertices_rest.template cast<float>();
  {
    std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
    if (!blob) throw std::runtime_error("cannot write " + blob_path);
    blob.write(reinterpret_cast<const char*>(verts.data.data()),
               static_cast<std::streamsize>(verts.data.size() * sizeof(float)));
  }
  nlohmann::json j;
  j["format_version"] = kHandTemplateFormatVersion;
  j["parents"] = tmpl.parent;
  for (const auto& o : tmpl.rest_offsets)
    j["rest_offsets"].push_back({o.x(), o.y(), o.z()});
  j["joint_order"] = tmpl.joint_order;
  j["vertex_joint"] = tmpl.vertex_joint;
  j["vertex_count"] = tmpl.vertex_count();
  j["vertex_blob"] = blob_path.substr(blob_path.find_last_of('/') + 1);
  j["vertex_blob_crc32"] =
      detail::crc32_of(verts.data.data(), verts.data.size() * sizeof(float));
  std::ofstream out(json_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + json_path);
  out << j.dump(2) << "\n";
}

template <typename S>
HandTemplateT<S> load_hand_template(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("cannot read " + json_path);
  nlohmann::json j;
  in >> j;
  if (j.at("format_version").get<int>() != kHandTemplateFormatVersion)
    throw std::runtime_error("hand template: unsupported format version");
  HandTemplateT<S> tmpl;
  const auto parents = j.at("parents").get<std::vector<int>>();
  if (parents.size() != kHandNodes) throw std::runtime_error("hand template: bad parent count");
  std::copy(parents.begin(), parents.end(), tmpl.parent.begin());
  const auto offsets = j.at("rest_offsets");
  for (int i = 0; i < kHandNodes; ++i)
    tmpl.rest_offsets[i] = Vec3<S>(offsets.at(i).at(0).get<double>(),
                                   offsets.at(i).at(1).get<double>(),
                                   offsets.at(i).at(2).get<double>());
  tmpl.joint_order = j.at("joint_order").get<std::vector<std::string>>();
  tmpl.vertex_joint = j.at("vertex_joint").get<std::vector<int>>();
  const int n = j.at("vertex_count").get<int>();

  const std::string dir = json_path.find('/') == std::string::npos
                              ? std::string()
                              : json_path.substr(0, json_path.find_last_of('/') + 1);
  const std::string blob_path = dir + j.at("vertex_blob").get<std::string>();
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot read " + blob_path);
  std::vector<float> raw(static_cast<size_t>(n) * 3);
  blob.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (blob.gcount() != static_cast<std::streamsize>(raw.size() * sizeof(float)))
    throw std::runtime_error("hand template: vertex blob truncated: " + blob_path);
  const uint32_t crc = detail::crc32_of(raw.data(), raw.size() * sizeof(float));
  if (crc != j.at("vertex_blob_crc32").get<uint32_t>())
    throw std::runtime_error("hand template: vertex blob checksum mismatch: " + blob_path);
  Tensor<float> verts({n, 3});
  verts.data = std::move(raw);
  tmpl.vertices_rest = verts.template cast<S>();
  tmpl.validate();
  return tmpl;
}

// ---------------------------------------------------------------------------
// Procedural default template: palm block plus five 3-segment fingers with
// capsule-sampled vertices. Millimeter numbers are loosely adult-hand sized.

namespace detail {

template <typename S>
struct FingerSpec {
  Vec3<S> base;          // first joint position on the palm, wrist frame
  Vec3<S> dir;           // rest direction (unit)
  std::array<S, 3> len;  // segment lengths
  S radius;
};

template <typename S>
std::array<FingerSpec<S>, 5> finger_specs() {
  auto mk = [](S bx, S by, S bz, S dx, S dy, S dz, S l1, S l2, S l3, S r) {
    FingerSpec<S> f;
    f.base = Vec3<S>(bx, by, bz);
    f.dir = Vec3<S>(dx, dy, dz).normalized();
    f.len = {l1, l2, l3};
    f.radius = r;
    return f;
  };
  // Order: thumb, index, middle, ring, pinky.
  return {
      mk(S(-0.040), S(0.030), S(0.006), S(-0.55), S(0.78), S(0.29), S(0.034), S(0.028), S(0.023), S(0.0095)),
      mk(S(-0.028), S(0.088), S(0.000), S(-0.08), S(0.99), S(0.08), S(0.034), S(0.025), S(0.019), S(0.0080)),
      mk(S(-0.009), S(0.093), S(0.000), S(0.00), S(1.00), S(0.06), S(0.038), S(0.028), S(0.021), S(0.0082)),
      mk(S(0.010), S(0.091), S(0.000), S(0.07), S(0.99), S(0.06), S(0.035), S(0.026), S(0.020), S(0.0078)),
      mk(S(0.029), S(0.084), S(0.000), S(0.16), S(0.98), S(0.07), S(0.027), S(0.020), S(0.016), S(0.0066))};
}

}  // namespace detail

/// Build the stand-in hand used across the project. Deterministic in
/// (n_vertices, seed). Fingers rest along +y, palm normal is +z; curling a
/// joint about +x folds its finger toward +z.
template <typename S>
HandTemplateT<S> make_default_hand_template(int n_vertices = 256, uint64_t seed = 7041) {
  if (n_vertices < kHandNodes) throw std::invalid_argument("hand template needs >= 16 vertices");
  HandTemplateT<S> tmpl;
  tmpl.parent[0] = -1;
  tmpl.rest_offsets[0] = Vec3<S>::Zero();
  tmpl.joint_order = {"wrist"};
  const auto fingers = detail::finger_specs<S>();
  static const char* names[5] = {"thumb", "index", "middle", "ring", "pinky"};
  for (int f = 0; f < 5; ++f) {
    for (int s = 0; s < 3; ++s) {
      const int node = 1 + f * 3 + s;
      tmpl.parent[node] = s == 0 ? 0 : node - 1;
      tmpl.rest_offsets[node] =
          s == 0 ? fingers[f].base : Vec3<S>(fingers[f].dir * fingers[f].len[s - 1]);
      tmpl.joint_order.push_back(std::string(names[f]) + "_" + std::to_string(s + 1));
    }
  }

  Rng rng(seed, 11);
  const int palm_count = std::max(1, n_vertices / 4);
  const int per_joint = std::max(1, (n_vertices - palm_count) / kHandJoints);
  const int total = palm_count + per_joint * kHandJoints;
  tmpl.vertices_rest = Tensor<S>({total, 3});
  tmpl.vertex_joint.resize(total);

  int row = 0;
  for (int i = 0; i < palm_count; ++i, ++row) {
    tmpl.vertices_rest.at(row, 0) = static_cast<S>(rng.uniform(-0.034, 0.034));
    tmpl.vertices_rest.at(row, 1) = static_cast<S>(rng.uniform(0.002, 0.088));
    tmpl.vertices_rest.at(row, 2) = static_cast<S>(rng.uniform(-0.013, 0.013));
    tmpl.vertex_joint[row] = 0;
  }
  const auto rest_pos = tmpl.rest_positions();
  for (int f = 0; f < 5; ++f) {
    for (int s = 0; s < 3; ++s) {
      const int node = 1 + f * 3 + s;
      const Vec3<S> a = rest_pos[node];
      const S seg_len = fingers[f].len[s];
      const Vec3<S> axis = fingers[f].dir;
      // Orthonormal ring basis around the segment axis.
      Vec3<S> n1 = axis.cross(Vec3<S>(0, 0, 1));
      if (n1.norm() < S(1e-3)) n1 = axis.cross(Vec3<S>(1, 0, 0));
      n1.normalize();
      const Vec3<S> n2 = axis.cross(n1).normalized();
      for (int i = 0; i < per_joint; ++i, ++row) {
        const S along = static_cast<S>(rng.uniform(0.05, 0.98)) * seg_len;
        const S phi = static_cast<S>(rng.uniform(0.0, 2.0 * M_PI));
        const Vec3<S> p = a + axis * along +
                          fingers[f].radius * (std::cos(phi) * n1 + std::sin(phi) * n2);
        tmpl.vertices_rest.at(row, 0) = p.x();
        tmpl.vertices_rest.at(row, 1) = p.y();
        tmpl.vertices_rest.at(row, 2) = p.z();
        tmpl.vertex_joint[row] = node;
      }
    }
  }
  tmpl.validate();
  return tmpl;
}

using HandTemplate = HandTemplateT<float>;
using HandPose = HandPoseT<float>;
using JointFrames = JointFramesT<float>;

}  // namespace hodiff
