#pragma once

#include <array>
#include <optional>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hodiff/camera.hpp"
#include "hodiff/hand.hpp"
#include "hodiff/png_io.hpp"
#include "hodiff/rng.hpp"

namespace hodiff {

enum class ObjectCategory { box, cylinder, sphere, capsule };

inline const char* to_string(ObjectCategory c) {
  switch (c) {
    case ObjectCategory::box: return "box";
    case ObjectCategory::cylinder: return "cylinder";
    case ObjectCategory::sphere: return "sphere";
    case ObjectCategory::capsule: return "capsule";
  }
  return "?";
}

inline ObjectCategory category_from_string(const std::string& s) {
  if (s == "box") return ObjectCategory::box;
  if (s == "cylinder") return ObjectCategory::cylinder;
  if (s == "sphere") return ObjectCategory::sphere;
  if (s == "capsule") return ObjectCategory::capsule;
  throw std::invalid_argument("unknown category: " + s);
}

/// Procedural object: canonical axis +y in the object frame, rotated and
/// placed in the wrist frame. dims: box half-extents; cylinder/capsule
/// (radius, half-height, -); sphere (radius, -, -).
struct ObjectShape {
  ObjectCategory category = ObjectCategory::box;
  Vec3<float> dims = Vec3<float>(0.02f, 0.02f, 0.02f);
  Mat3<float> rotation = Mat3<float>::Identity();  // object -> wrist
  Vec3<float> position = Vec3<float>::Zero();      // nominal center, wrist frame

  /// Signed distance in meters, query point in the wrist frame.
  float sdf(const Vec3<float>& p_wrist) const {
    const Vec3<float> p = rotation.transpose() * (p_wrist - position);
    switch (category) {
      case ObjectCategory::box: {
        const Vec3<float> q = p.cwiseAbs() - dims;
        const Vec3<float> qp = q.cwiseMax(0.0f);
        return qp.norm() + std::min(q.maxCoeff(), 0.0f);
      }
      case ObjectCategory::sphere:
        return p.norm() - dims.x();
      case ObjectCategory::cylinder: {
        const float dxz = std::hypot(p.x(), p.z()) - dims.x();
        const float dy = std::abs(p.y()) - dims.y();
        const float ox = std::max(dxz, 0.0f), oy = std::max(dy, 0.0f);
        return std::min(std::max(dxz, dy), 0.0f) + std::hypot(ox, oy);
      }
      case ObjectCategory::capsule: {
        const float cy = std::clamp(p.y(), -dims.y(), dims.y());
        return Vec3<float>(p.x(), p.y() - cy, p.z()).norm() - dims.x();
      }
    }
    return 0.0f;
  }

  /// Uniform-ish surface sample, returned in the wrist frame.
  Vec3<float> sample_surface(Rng& rng) const {
    Vec3<float> p;
    switch (category) {
      case ObjectCategory::box: {
        const Vec3<float>& b = dims;
        const float ax = b.y() * b.z(), ay = b.x() * b.z(), az = b.x() * b.y();
        const float pick = float(rng.uniform()) * (ax + ay + az);
        const float sgn = rng.uniform() < 0.5 ? -1.0f : 1.0f;
        const float u = float(rng.uniform() * 2.0 - 1.0), v = float(rng.uniform() * 2.0 - 1.0);
        if (pick < ax)
          p = Vec3<float>(sgn * b.x(), u * b.y(), v * b.z());
        else if (pick < ax + ay)
          p = Vec3<float>(u * b.x(), sgn * b.y(), v * b.z());
        else
          p = Vec3<float>(u * b.x(), v * b.y(), sgn * b.z());
        break;
      }
      case ObjectCategory::sphere: {
        p = random_direction(rng) * dims.x();
        break;
      }
      case ObjectCategory::cylinder: {
        const float r = dims.x(), hh = dims.y();
        const float side = 2.0f * float(M_PI) * r * 2.0f * hh;
        const float caps = 2.0f * float(M_PI) * r * r;
        if (rng.uniform() * (side + caps) < side) {
          const float phi = float(rng.uniform(0.0, 2.0 * M_PI));
          p = Vec3<float>(r * std::cos(phi), float(rng.uniform(-hh, hh)), r * std::sin(phi));
        } else {
          const float rr = r * std::sqrt(float(rng.uniform()));
          const float phi = float(rng.uniform(0.0, 2.0 * M_PI));
          const float sgn = rng.uniform() < 0.5 ? -1.0f : 1.0f;
          p = Vec3<float>(rr * std::cos(phi), sgn * hh, rr * std::sin(phi));
        }
        break;
      }
      case ObjectCategory::capsule: {
        const float r = dims.x(), hh = dims.y();
        const float side = 2.0f * float(M_PI) * r * 2.0f * hh;
        const float ends = 4.0f * float(M_PI) * r * r;
        if (rng.uniform() * (side + ends) < side) {
          const float phi = float(rng.uniform(0.0, 2.0 * M_PI));
          p = Vec3<float>(r * std::cos(phi), float(rng.uniform(-hh, hh)), r * std::sin(phi));
        } else {
          const Vec3<float> d = random_direction(rng);
          p = d * r + Vec3<float>(0.0f, d.y() >= 0.0f ? hh : -hh, 0.0f);
        }
        break;
      }
    }
    return rotation * p + position;
  }

  /// Axis-aligned bounding box diagonal (meters), for error budgets.
  float bbox_diagonal() const {
    switch (category) {
      case ObjectCategory::box: return 2.0f * dims.norm();
      case ObjectCategory::sphere: return 2.0f * dims.x() * std::sqrt(3.0f);
      case ObjectCategory::cylinder:
        return 2.0f * Vec3<float>(dims.x(), dims.y(), dims.x()).norm();
      case ObjectCategory::capsule:
        return 2.0f * Vec3<float>(dims.x(), dims.y() + dims.x(), dims.x()).norm();
    }
    return 0.0f;
  }

  static Vec3<float> random_direction(Rng& rng) {
    while (true) {
      Vec3<float> v(float(rng.normal()), float(rng.normal()), float(rng.normal()));
      const float n = v.norm();
      if (n > 1e-6f) return v / n;
    }
  }
};

struct DatasetConfig {
  int n_points = 256;
  int n_hand_vertices = 256;
  int image_size = 64;
  float splat_radius_px = 1.6f;
  uint64_t seed = 0;
  int n_train = 0, n_val = 0, n_test = 0;

  nlohmann::json to_json() const {
    return {{"n_points", n_points},       {"n_hand_vertices", n_hand_vertices},
            {"image_size", image_size},   {"splat_radius_px", splat_radius_px},
            {"seed", seed},               {"n_train", n_train},
            {"n_val", n_val},             {"n_test", n_test}};
  }
  static DatasetConfig from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.n_points = j.at("n_points");
    c.n_hand_vertices = j.at("n_hand_vertices");
    c.image_size = j.at("image_size");
    c.splat_radius_px = j.at("splat_radius_px");
    c.seed = j.at("seed");
    c.n_train = j.at("n_train");
    c.n_val = j.at("n_val");
    c.n_test = j.at("n_test");
    return c;
  }
};

/// One dataset record. The wrist frame is canonical; the camera carries the
/// wrist-to-camera pose shared with the hand pose.
struct SceneSample {
  int id = 0;
  ObjectCategory category = ObjectCategory::box;
  TensorF image;  // H x W x 3 in [0,1], exactly k/255 per channel
  PointCloud x0;
  Vec3<float> centroid = Vec3<float>::Zero();
  Vec2<float> centroid_ndc = Vec2<float>::Zero();
  HandPose pose;
  Camera camera;
  float visibility = 0.0f;
  float bbox_diagonal = 0.0f;
};

/// Fraction of object points that land on-image and whose pixel is not
/// covered by a strictly nearer hand splat (5 mm surface slack). Object
/// self-overwrites do not count: a solid object would otherwise never exceed
/// ~50% visibility and the occlusion-stratified bins could not populate.
inline float visibility_ratio(const PointCloud& object, const PointCloud& hand,
                              const Camera& cam, float radius_px) {
  const auto proj = project_ndc(object, cam);
  std::optional<RasterIndexMap<float>> hand_map;
  if (hand.count() > 0) hand_map = rasterize(hand, cam, radius_px);
  int visible = 0;
  for (int i = 0; i < object.count(); ++i) {
    if (!proj.on_image[i]) continue;
    const auto px = proj.pixel[i];
    const bool hand_blocks = hand_map && hand_map->at(px[1], px[0]) >= 0 &&
                             hand_map->depth_at(px[1], px[0]) < proj.depth[i] - 0.005f;
    if (!hand_blocks) ++visible;
  }
  return object.count() > 0 ? float(visible) / float(object.count()) : 0.0f;
}

namespace detail {

inline Camera sample_camera(Rng& rng, int image_size) {
  Camera cam;
  cam.width = cam.height = image_size;
  cam.fx = cam.fy = 1.15f * float(image_size);
  cam.cx = cam.cy = float(image_size) / 2.0f;

  const Vec3<float> look_at(0.0f, 0.06f, 0.02f);
  const float azimuth = float(rng.uniform(0.0, 2.0 * M_PI));
  const float elevation = float(rng.uniform(-1.0, 1.1));
  const float dist = float(rng.uniform(0.30, 0.42));
  const Vec3<float> dir(std::cos(elevation) * std::cos(azimuth),
                        std::cos(elevation) * std::sin(azimuth), std::sin(elevation));
  const Vec3<float> pos = look_at + dist * dir;

  const Vec3<float> forward = (look_at - pos).normalized();
  Vec3<float> up(0.0f, 0.0f, 1.0f);
  if (std::abs(forward.dot(up)) > 0.98f) up = Vec3<float>(0.0f, 1.0f, 0.0f);
  const Vec3<float> right = forward.cross(up).normalized();
  const Vec3<float> down = forward.cross(right);
  Mat3<float> cam_to_wrist;
  cam_to_wrist.col(0) = right;
  cam_to_wrist.col(1) = down;
  cam_to_wrist.col(2) = forward;
  cam.wrist_to_camera.R = cam_to_wrist.transpose();
  cam.wrist_to_camera.t = -(cam_to_wrist.transpose() * pos);
  return cam;
}

inline ObjectShape sample_shape(Rng& rng, ObjectCategory cat) {
  ObjectShape shape;
  shape.category = cat;
  switch (cat) {
    case ObjectCategory::box:
      shape.dims = Vec3<float>(float(rng.uniform(0.016, 0.034)), float(rng.uniform(0.016, 0.040)),
                               float(rng.uniform(0.012, 0.026)));
      break;
    case ObjectCategory::sphere:
      shape.dims = Vec3<float>(float(rng.uniform(0.018, 0.034)), 0.0f, 0.0f);
      break;
    case ObjectCategory::cylinder:
      shape.dims = Vec3<float>(float(rng.uniform(0.013, 0.026)), float(rng.uniform(0.022, 0.046)),
                               0.0f);
      break;
    case ObjectCategory::capsule:
      shape.dims = Vec3<float>(float(rng.uniform(0.011, 0.022)), float(rng.uniform(0.016, 0.036)),
                               0.0f);
      break;
  }
  const Vec3<float> axis = ObjectShape::random_direction(rng);
  shape.rotation = axis_angle_to_matrix(Vec3<float>(axis * float(rng.uniform(0.0, M_PI))));
  return shape;
}

/// Curl one finger until its tip touches the object surface. Returns false if
/// the finger starts inside the object (a failed grasp).
inline bool curl_finger(const HandTemplate& tmpl, const ObjectShape& shape, int finger,
                        HandPose& pose) {
  const int base = 1 + 3 * finger;
  const Vec3<float> dir = tmpl.rest_offsets[base + 1].normalized();
  Vec3<float> axis = dir.cross(Vec3<float>(0.0f, 0.0f, 1.0f));
  if (axis.norm() < 1e-5f) axis = Vec3<float>(1.0f, 0.0f, 0.0f);
  axis.normalize();
  const float tip_len = tmpl.rest_offsets[base + 2].norm();
  static const float weights[3] = {1.0f, 0.8f, 0.6f};
  const float touch = 0.002f;

  auto tip_at = [&](float theta) {
    for (int s = 0; s < 3; ++s) {
      const Vec3<float> aa = axis * (theta * weights[s]);
      pose.joint_rotations.at(base - 1 + s, 0) = aa.x();
      pose.joint_rotations.at(base - 1 + s, 1) = aa.y();
      pose.joint_rotations.at(base - 1 + s, 2) = aa.z();
    }
    const auto frames = forward_kinematics(tmpl, pose);
    return frames.wrist_to_joint[base + 2 - 1].inverse().apply(Vec3<float>(dir * tip_len));
  };

  if (shape.sdf(tip_at(0.0f)) < -touch) return false;
  for (float theta = 0.0f; theta <= 1.5f; theta += 0.05f) {
    if (shape.sdf(tip_at(theta)) <= touch) return true;
  }
  return true;  // wraps fully without contact; an open grasp is still valid
}

struct BackgroundField {
  std::array<float, 3> base;
  std::array<float, 12> coef;  // per channel: fx, fy, phase, amplitude

  static BackgroundField sample(Rng& rng) {
    BackgroundField b;
    for (int c = 0; c < 3; ++c) {
      b.base[c] = float(rng.uniform(0.15, 0.45));
      b.coef[c * 4 + 0] = float(rng.uniform(1.0, 6.0));
      b.coef[c * 4 + 1] = float(rng.uniform(1.0, 6.0));
      b.coef[c * 4 + 2] = float(rng.uniform(0.0, 2.0 * M_PI));
      b.coef[c * 4 + 3] = float(rng.uniform(0.04, 0.14));
    }
    return b;
  }

  float at(int c, float x, float y) const {
    return base[c] +
           coef[c * 4 + 3] *
               std::sin(coef[c * 4 + 0] * x + coef[c * 4 + 1] * y + coef[c * 4 + 2]);
  }
};

}  // namespace detail

/// Procedurally build one hand-object scene with full ground truth. The
/// image is a flat-shaded splat render with a textured noise background,
/// quantized to 8 bits so disk round-trips are bit-exact.
inline SceneSample generate_scene(Rng& rng, ObjectCategory category, const DatasetConfig& cfg,
                                  const HandTemplate& tmpl) {
  SceneSample s;
  s.category = category;

  ObjectShape shape;
  HandPose pose;
  bool grasped = false;
  for (int dims_try = 0; dims_try < 50 && !grasped; ++dims_try) {
    shape = detail::sample_shape(rng, category);
    for (int place_try = 0; place_try < 20 && !grasped; ++place_try) {
      shape.position = Vec3<float>(float(rng.uniform(-0.012, 0.012)), float(rng.uniform(0.030, 0.070)),
                                   float(rng.uniform(0.028, 0.055)));
      pose = HandPose{};
      grasped = true;
      for (int f = 0; f < 5 && grasped; ++f)
        grasped = detail::curl_finger(tmpl, shape, f, pose);
    }
  }
  if (!grasped) throw std::runtime_error("generate_scene: grasp sampling failed repeatedly");

  s.x0 = PointCloud::zeros(cfg.n_points);
  for (int i = 0; i < cfg.n_points; ++i) s.x0.set_row(i, shape.sample_surface(rng));
  s.centroid = s.x0.centroid();
  s.bbox_diagonal = shape.bbox_diagonal();

  s.camera = detail::sample_camera(rng, cfg.image_size);
  pose.wrist_to_camera = s.camera.wrist_to_camera;
  s.pose = pose;

  const auto centroid_proj = s.camera.project(s.centroid);
  const Vec2<float> ndc = s.camera.uv_to_ndc(centroid_proj.u, centroid_proj.v);
  s.centroid_ndc = ndc;

  const PointCloud hand = hand_vertices(tmpl, pose);
  s.visibility = visibility_ratio(s.x0, hand, s.camera, cfg.splat_radius_px);

  // Flat-shaded render: object and hand splats z-tested together over a
  // procedural background.
  PointCloud joint = PointCloud::zeros(cfg.n_points + hand.count());
  for (int i = 0; i < cfg.n_points; ++i) joint.set_row(i, s.x0.row(i));
  for (int i = 0; i < hand.count(); ++i) joint.set_row(cfg.n_points + i, hand.row(i));
  const auto map = rasterize(joint, s.camera, cfg.splat_radius_px);

  static const float object_base[4][3] = {{0.75f, 0.25f, 0.20f},
                                          {0.20f, 0.45f, 0.80f},
                                          {0.25f, 0.70f, 0.30f},
                                          {0.80f, 0.70f, 0.25f}};
  float tint[3];
  for (float& t : tint) t = float(rng.uniform(-0.08, 0.08));
  const auto bg = detail::BackgroundField::sample(rng);

  float dmin = 1e9f, dmax = -1e9f;
  for (size_t k = 0; k < map.idx.size(); ++k)
    if (map.idx[k] >= 0) {
      dmin = std::min(dmin, map.depth[k]);
      dmax = std::max(dmax, map.depth[k]);
    }
  const float drange = std::max(dmax - dmin, 1e-6f);

  const int hw = cfg.image_size;
  s.image = TensorF({hw, hw, 3});
  std::vector<uint8_t> quantized(size_t(hw) * hw * 3);
  for (int r = 0; r < hw; ++r) {
    for (int c = 0; c < hw; ++c) {
      float rgb[3];
      const int idx = map.at(r, c);
      if (idx < 0) {
        for (int ch = 0; ch < 3; ++ch)
          rgb[ch] = bg.at(ch, float(c) / float(hw), float(r) / float(hw));
      } else {
        const float shade =
            std::clamp(1.05f - 0.45f * (map.depth_at(r, c) - dmin) / drange, 0.55f, 1.05f);
        if (idx < cfg.n_points) {
          const float* base = object_base[int(s.category)];
          for (int ch = 0; ch < 3; ++ch) rgb[ch] = (base[ch] + tint[ch]) * shade;
        } else {
          const float skin[3] = {0.82f, 0.62f, 0.52f};
          for (int ch = 0; ch < 3; ++ch) rgb[ch] = skin[ch] * shade;
        }
      }
      for (int ch = 0; ch < 3; ++ch) {
        const int q = std::clamp(int(std::lround(std::clamp(rgb[ch], 0.0f, 1.0f) * 255.0f)), 0, 255);
        quantized[(size_t(r) * hw + c) * 3 + ch] = uint8_t(q);
        s.image.at(r, c, ch) = float(q) / 255.0f;
      }
    }
  }
  return s;
}

/// Deterministic per-sample generator: (seed, id) fully determine the bytes.
inline SceneSample generate_sample(const DatasetConfig& cfg, const HandTemplate& tmpl, int id) {
  Rng base(cfg.seed, 17);
  Rng rng = base.split(uint64_t(id) + 1);
  const ObjectCategory cat = ObjectCategory(id % 4);
  SceneSample s = generate_scene(rng, cat, cfg, tmpl);
  s.id = id;
  return s;
}

// -- on-disk container ---------------------------------------------------------

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetSplits {
  std::vector<int> train, val, test;
};

namespace detail {

inline std::string sample_prefix(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06d", id);
  return buf;
}

inline void atomic_write(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + tmp);
    f.write(bytes.data(), std::streamsize(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

inline void atomic_write(const std::string& path, const std::vector<uint8_t>& bytes) {
  atomic_write(path, std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace detail

inline void write_sample(const SceneSample& s, const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string prefix = (fs::path(dir) / detail::sample_prefix(s.id)).string();

  // Float32 blob: object points.
  std::string blob(reinterpret_cast<const char*>(s.x0.points.data.data()),
                   s.x0.points.data.size() * sizeof(float));
  detail::atomic_write(prefix + ".bin", blob);

  std::vector<uint8_t> rgb(size_t(s.image.dims[0]) * s.image.dims[1] * 3);
  for (size_t k = 0; k < rgb.size(); ++k)
    rgb[k] = uint8_t(std::lround(s.image.data[k] * 255.0f));
  detail::atomic_write(prefix + ".png",
                       png::encode_rgb8(rgb, s.image.dims[1], s.image.dims[0]));

  nlohmann::json j;
  j["id"] = s.id;
  j["category"] = to_string(s.category);
  j["n_points"] = s.x0.count();
  j["centroid"] = {double(s.centroid.x()), double(s.centroid.y()), double(s.centroid.z())};
  j["centroid_ndc"] = {double(s.centroid_ndc.x()), double(s.centroid_ndc.y())};
  j["visibility"] = double(s.visibility);
  j["bbox_diagonal"] = double(s.bbox_diagonal);
  std::vector<double> rot(s.pose.joint_rotations.data.begin(), s.pose.joint_rotations.data.end());
  j["joint_rotations"] = rot;
  std::vector<double> R, t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) R.push_back(double(s.camera.wrist_to_camera.R(r, c)));
  for (int r = 0; r < 3; ++r) t.push_back(double(s.camera.wrist_to_camera.t[r]));
  j["wrist_to_camera"] = {{"R", R}, {"t", t}};
  j["camera"] = {{"fx", double(s.camera.fx)},
                 {"fy", double(s.camera.fy)},
                 {"cx", double(s.camera.cx)},
                 {"cy", double(s.camera.cy)},
                 {"width", s.camera.width},
                 {"height", s.camera.height}};
  j["blob"] = detail::sample_prefix(s.id) + ".bin";
  j["blob_crc32"] = hodiff::detail::crc32_of(blob.data(), blob.size());
  j["image"] = detail::sample_prefix(s.id) + ".png";
  detail::atomic_write(prefix + ".json", j.dump(2) + "\n");
}

inline SceneSample read_sample(const std::string& dir, int id) {
  namespace fs = std::filesystem;
  const std::string prefix = (fs::path(dir) / detail::sample_prefix(id)).string();
  std::ifstream jf(prefix + ".json");
  if (!jf) throw std::runtime_error("dataset: missing sample file " + prefix + ".json");
  nlohmann::json j;
  jf >> j;

  SceneSample s;
  s.id = j.at("id");
  s.category = category_from_string(j.at("category"));
  s.visibility = float(j.at("visibility").get<double>());
  s.bbox_diagonal = float(j.at("bbox_diagonal").get<double>());
  const auto cen = j.at("centroid");
  s.centroid = Vec3<float>(float(cen.at(0).get<double>()), float(cen.at(1).get<double>()),
                           float(cen.at(2).get<double>()));
  const auto c2 = j.at("centroid_ndc");
  s.centroid_ndc = Vec2<float>(float(c2.at(0).get<double>()), float(c2.at(1).get<double>()));

  const auto rot = j.at("joint_rotations").get<std::vector<double>>();
  if (rot.size() != size_t(kHandJoints) * 3)
    throw std::runtime_error("dataset: bad joint rotation count in " + prefix);
  for (size_t k = 0; k < rot.size(); ++k) s.pose.joint_rotations.data[k] = float(rot[k]);

  const auto cam = j.at("camera");
  s.camera.fx = float(cam.at("fx").get<double>());
  s.camera.fy = float(cam.at("fy").get<double>());
  s.camera.cx = float(cam.at("cx").get<double>());
  s.camera.cy = float(cam.at("cy").get<double>());
  s.camera.width = cam.at("width");
  s.camera.height = cam.at("height");
  const auto w2c = j.at("wrist_to_camera");
  const auto R = w2c.at("R").get<std::vector<double>>();
  const auto t = w2c.at("t").get<std::vector<double>>();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) s.camera.wrist_to_camera.R(r, c) = float(R[size_t(r) * 3 + c]);
  for (int r = 0; r < 3; ++r) s.camera.wrist_to_camera.t[r] = float(t[size_t(r)]);
  s.pose.wrist_to_camera = s.camera.wrist_to_camera;

  const int n = j.at("n_points");
  std::ifstream bf(prefix + ".bin", std::ios::binary);
  if (!bf) throw std::runtime_error("dataset: missing blob " + prefix + ".bin");
  std::vector<float> raw(size_t(n) * 3);
  bf.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size() * sizeof(float)));
  if (bf.gcount() != std::streamsize(raw.size() * sizeof(float)))
    throw std::runtime_error("dataset: truncated blob " + prefix + ".bin");
  const uint32_t crc = hodiff::detail::crc32_of(raw.data(), raw.size() * sizeof(float));
  if (crc != j.at("blob_crc32").get<uint32_t>())
    throw std::runtime_error("dataset: checksum mismatch in " + detail::sample_prefix(id));
  s.x0.points = TensorF({n, 3});
  s.x0.points.data = std::move(raw);

  int w = 0, h = 0;
  const auto rgb = png::decode_rgb8(png::read_file(prefix + ".png"), w, h);
  s.image = TensorF({h, w, 3});
  for (size_t k = 0; k < rgb.size(); ++k) s.image.data[k] = float(rgb[k]) / 255.0f;
  return s;
}

inline void write_dataset_index(const std::string& dir, const DatasetConfig& cfg,
                                const DatasetSplits& splits) {
  nlohmann::json j;
  j["format_version"] = kDatasetFormatVersion;
  j["config"] = cfg.to_json();
  j["splits"] = {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}};
  j["hand_template"] = "hand_template.json";
  detail::atomic_write((std::filesystem::path(dir) / "index.json").string(), j.dump(2) + "\n");
}

struct Dataset {
  DatasetConfig config;
  DatasetSplits splits;
  HandTemplate hand_template;
  std::vector<SceneSample> samples;  // indexed by id

  const SceneSample& sample(int id) const {
    if (id < 0 || id >= int(samples.size()))
      throw std::out_of_range("dataset: sample id " + std::to_string(id));
    return samples[size_t(id)];
  }
};

inline Dataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string index_path = (fs::path(dir) / "index.json").string();
  std::ifstream f(index_path);
  if (!f) throw std::runtime_error("dataset: missing index " + index_path);
  nlohmann::json j;
  f >> j;
  if (j.at("format_version").get<int>() != kDatasetFormatVersion)
    throw std::runtime_error("dataset: unsupported format version");
  Dataset ds;
  ds.config = DatasetConfig::from_json(j.at("config"));
  ds.splits.train = j.at("splits").at("train").get<std::vector<int>>();
  ds.splits.val = j.at("splits").at("val").get<std::vector<int>>();
  ds.splits.test = j.at("splits").at("test").get<std::vector<int>>();
  ds.hand_template = load_hand_template<float>(
      (fs::path(dir) / j.at("hand_template").get<std::string>()).string());

  const int total = ds.config.n_train + ds.config.n_val + ds.config.n_test;
  ds.samples.reserve(size_t(total));
  for (int id = 0; id < total; ++id) ds.samples.push_back(read_sample(dir, id));
  return ds;
}

}  // namespace hodiff
