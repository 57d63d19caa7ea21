#include <catch2/catch_amalgamated.hpp>

#include "hodiff/denoiser.hpp"
#include "hodiff/training.hpp"
#include "oracles.hpp"

using namespace hodiff;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig cfg;
  cfg.image_size = 16;
  cfg.feature_channels = 4;
  cfg.latent_channels = 8;
  cfg.time_dim = 8;
  cfg.hidden = 8;
  cfg.encoder_channels = {4, 4, 4};
  return cfg;
}

template <typename S>
CameraT<S> tiny_camera(int size = 16) {
  CameraT<S> cam;
  cam.width = cam.height = size;
  cam.fx = cam.fy = S(size) * S(1.25);
  cam.cx = cam.cy = S(size) / S(2);
  cam.wrist_to_camera.t = Vec3<S>(S(0), S(0), S(0.4));
  return cam;
}

template <typename S>
PointCloudT<S> random_cloud(int n, uint64_t seed, S scale = S(0.05)) {
  Rng rng(seed);
  PointCloudT<S> pc = PointCloudT<S>::zeros(n);
  for (auto& v : pc.points.data) v = static_cast<S>(rng.normal()) * scale;
  return pc;
}

template <typename S>
Tensor<S> random_image(int size, uint64_t seed) {
  Rng rng(seed);
  Tensor<S> img({size, size, 3});
  for (auto& v : img.data) v = static_cast<S>(rng.uniform());
  return img;
}

template <typename S>
JointFramesT<S> random_frames(uint64_t seed) {
  Rng rng(seed);
  JointFramesT<S> f;
  f.wrist_to_joint.resize(kHandJoints);
  for (auto& rt : f.wrist_to_joint) {
    const Vec3<S> axis =
        Vec3<S>(S(rng.normal()), S(rng.normal()), S(rng.normal())).normalized();
    rt.R = axis_angle_to_matrix(Vec3<S>(axis * S(rng.uniform(0.0, 1.0))));
    rt.t = Vec3<S>(S(rng.normal()) * S(0.05), S(rng.normal()) * S(0.05), S(rng.normal()) * S(0.05));
  }
  return f;
}

}  // namespace

TEST_CASE("encode_image: zero image with zero weights gives a zero map; shape is HxWxC") {
  auto cfg = tiny_config();
  auto params = init_denoiser_params<float>(cfg, 1);
  for (auto& name : params.order) params.get(name).fill(0.0f);
  TensorF img({16, 16, 3});
  auto fmap = encode_image_infer(params, cfg, img);
  REQUIRE(fmap.dims == std::vector<int>({16, 16, 4}));
  for (float v : fmap.data) CHECK(v == 0.0f);

  auto params2 = init_denoiser_params<float>(cfg, 2);
  auto fmap2 = encode_image_infer(params2, cfg, random_image<float>(16, 3));
  REQUIRE(fmap2.dims == std::vector<int>({16, 16, 4}));

  TensorF bad({8, 8, 3});
  CHECK_THROWS(encode_image_infer(params2, cfg, bad));
}

TEST_CASE("encode_image gradient wrt input pixels matches finite differences") {
  auto cfg = tiny_config();
  auto params = init_denoiser_params<double>(cfg, 7);
  Rng rng(8);
  auto probe = Tensor<double>::randn({16, 16, 4}, rng);
  const auto img0 = random_image<double>(16, 9);

  Graph<double> g;
  auto bound = bind_params(g, params, false);
  auto img = g.leaf(img0, true);
  auto out = g.dot_const(encode_image(g, bound, cfg, img), probe);
  g.backward(out);
  const auto analytic = g.grad(img).data;

  auto f = [&](const std::vector<double>& flat) {
    Tensor<double> it = img0;
    it.data = flat;
    Graph<double> g2;
    auto b2 = bind_params(g2, params, false);
    return g2.scalar(g2.dot_const(encode_image(g2, b2, cfg, g2.leaf(it, true)), probe));
  };
  auto fd = oracle::central_diff(f, img0.data, 1e-6);
  CHECK(oracle::max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("denoise: zero weights produce zero noise prediction") {
  auto cfg = tiny_config();
  auto params = init_denoiser_params<float>(cfg, 11);
  for (auto& name : params.order) params.get(name).fill(0.0f);
  auto xt = random_cloud<float>(6, 12);
  auto hand = random_cloud<float>(4, 13);
  auto cam = tiny_camera<float>();
  auto frames = random_frames<float>(14);
  TensorF fmap({16, 16, 4});
  AblationFlags flags;
  auto cond = build_condition(xt, hand, frames, fmap, cam, flags, 4);
  auto eps = denoise_infer(params, cfg, xt, 3, cond);
  REQUIRE(eps.dims == std::vector<int>({6, 3}));
  for (float v : eps.data) CHECK(v == 0.0f);
}

TEST_CASE("denoise is equivariant under object point permutation") {
  for (bool dual : {true, false}) {
    auto cfg = tiny_config();
    cfg.dual_stream = dual;
    auto params = init_denoiser_params<float>(cfg, 21);
    auto cam = tiny_camera<float>();
    auto frames = random_frames<float>(22);
    auto hand = random_cloud<float>(5, 23);
    auto fmap = encode_image_infer(params, cfg, random_image<float>(16, 24));
    auto xt = random_cloud<float>(7, 25);
    AblationFlags flags;
    auto cond = build_condition(xt, hand, frames, fmap, cam, flags, 4);
    auto eps = denoise_infer(params, cfg, xt, 5, cond);

    std::vector<int> perm = {6, 2, 0, 4, 1, 5, 3};
    PointCloud shuffled = PointCloud::zeros(7);
    for (int i = 0; i < 7; ++i) shuffled.set_row(i, xt.row(perm[i]));
    auto cond2 = build_condition(shuffled, hand, frames, fmap, cam, flags, 4);
    auto eps2 = denoise_infer(params, cfg, shuffled, 5, cond2);
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 3; ++j) CHECK(eps2.at(i, j) == eps.at(perm[i], j));
  }
}

TEST_CASE("denoise rejects mismatched condition shapes with named diagnostics") {
  auto cfg = tiny_config();
  auto params = init_denoiser_params<float>(cfg, 31);
  auto xt = random_cloud<float>(6, 32);
  ConditionBundle<float> cond;
  cond.object_count = 6;
  cond.hand_points = PointCloud::zeros(0);
  cond.geometric = TensorF({6, 45});
  cond.semantic = TensorF({6, 3});  // wrong width
  try {
    denoise_infer(params, cfg, xt, 1, cond);
    FAIL("expected shape rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("semantic") != std::string::npos);
  }
  cond.semantic = TensorF({6, cfg.semantic_width()});
  cond.geometric = TensorF({6, 44});
  CHECK_THROWS_AS(denoise_infer(params, cfg, xt, 1, cond), std::invalid_argument);
}

TEST_CASE("denoise end-to-end gradient matches finite differences",
          "[slow]") {
  auto cfg = tiny_config();
  auto params = init_denoiser_params<double>(cfg, 41);
  const auto img = random_image<double>(16, 42);
  const auto xt = random_cloud<double>(4, 43);
  const auto hand = random_cloud<double>(4, 44);
  const auto cam = tiny_camera<double>();
  const auto frames = random_frames<double>(45);
  Rng rng(46);
  const auto probe = Tensor<double>::randn({4, 3}, rng);

  // Analytic gradient, flattened in registration order.
  std::vector<double> analytic;
  {
    Graph<double> g;
    auto bound = bind_params(g, params, true);
    auto fmap = encode_image(g, bound, cfg, g.leaf(img));
    auto semantic = semantic_embedding_var(g, fmap, xt, hand, cam);
    ConditionBundle<double> cond;
    cond.object_count = 4;
    cond.hand_points = hand;
    cond.geometric = articulation_embedding(xt, frames);
    auto eps = denoise_var(g, bound, cfg, xt, 5, semantic, cond);
    auto out = g.dot_const(eps, probe);
    g.backward(out);
    for (const auto& name : params.order) {
      const auto& gt = g.grad(bound.at(name));
      analytic.insert(analytic.end(), gt.data.begin(), gt.data.end());
    }
  }

  // Finite differences over the flattened parameter vector.
  std::vector<double> flat;
  for (const auto& name : params.order)
    flat.insert(flat.end(), params.get(name).data.begin(), params.get(name).data.end());
  auto f = [&](const std::vector<double>& x) {
    ParamStore<double> ps = params;
    size_t off = 0;
    for (const auto& name : ps.order) {
      auto& t = ps.get(name);
      std::copy(x.begin() + off, x.begin() + off + t.size(), t.data.begin());
      off += t.size();
    }
    Graph<double> g;
    auto bound = bind_params(g, ps, true);
    auto fmap = encode_image(g, bound, cfg, g.leaf(img));
    auto semantic = semantic_embedding_var(g, fmap, xt, hand, cam);
    ConditionBundle<double> cond;
    cond.object_count = 4;
    cond.hand_points = hand;
    cond.geometric = articulation_embedding(xt, frames);
    auto eps = denoise_var(g, bound, cfg, xt, 5, semantic, cond);
    return g.scalar(g.dot_const(eps, probe));
  };
  auto fd = oracle::central_diff(f, flat, 1e-5);
  CHECK(oracle::max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("ablation flag combinations all yield N x 3 predictions") {
  auto base_xt = random_cloud<float>(5, 51);
  auto hand = random_cloud<float>(4, 52);
  auto cam = tiny_camera<float>();
  auto frames = random_frames<float>(53);
  for (const char* row : {"A0", "B0", "C0", "D0", "D1", "D2", "E0", "E1", "F0"}) {
    AblationFlags flags = ablation_row(row);
    auto cfg = tiny_config();
    cfg.dual_stream = flags.dual_stream;
    auto params = init_denoiser_params<float>(cfg, 54);
    auto fmap = flags.semantic ? encode_image_infer(params, cfg, random_image<float>(16, 55))
                               : TensorF();
    PointCloud h = flags.hand_rows_active() ? hand : PointCloud::zeros(0);
    auto cond = build_condition(base_xt, h, frames, fmap, cam, flags, 4);
    auto eps = denoise_infer(params, cfg, base_xt, 2, cond);
    REQUIRE(eps.dims == std::vector<int>({5, 3}));
  }
}

TEST_CASE("loss_denoise examples and oracle") {
  TensorF a({3, 3}), b({3, 3});
  Rng rng(61);
  for (auto& v : a.data) v = float(rng.normal());
  CHECK(loss_denoise(a, a) == 0.0f);

  TensorF zero({2, 3}), ones({2, 3});
  ones.fill(1.0f);
  CHECK(loss_denoise(zero, ones) == Catch::Approx(1.0f));

  for (auto& v : b.data) v = float(rng.normal());
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    acc += d * d;
  }
  CHECK(loss_denoise(a, b) == Catch::Approx(acc / 9.0).margin(1e-6));
}

TEST_CASE("loss_mask: identical clouds give zero; disjoint clouds add their masses") {
  auto cam = tiny_camera<float>();
  auto a = random_cloud<float>(6, 62, 0.02f);
  CHECK(loss_mask(a, a, cam, 1.0f) == 0.0f);

  // Two tight blobs projecting to opposite image halves, far enough apart
  // that the Gaussian tails do not meet.
  PointCloud left = PointCloud::zeros(3), right = PointCloud::zeros(3);
  for (int i = 0; i < 3; ++i) {
    left.set_row(i, Vec3<float>(-0.1f, 0.0f, 0.0f + 0.002f * float(i)));
    right.set_row(i, Vec3<float>(0.1f, 0.0f, 0.002f * float(i)));
  }
  const auto ml = soft_mask(left, cam, 1.0f);
  const auto mr = soft_mask(right, cam, 1.0f);
  double mass = 0;
  for (float v : ml.data) mass += v;
  for (float v : mr.data) mass += v;
  CHECK(loss_mask(left, right, cam, 1.0f) ==
        Catch::Approx(mass / double(ml.size())).margin(1e-5));
}

TEST_CASE("loss_mask gradient wrt predicted points matches finite differences") {
  auto cam = tiny_camera<double>();
  const auto ref = random_cloud<double>(5, 63, 0.03);
  const auto ref_mask = soft_mask(ref, cam, 1.2);
  const auto pred0 = random_cloud<double>(5, 64, 0.03);

  Graph<double> g;
  auto p = g.leaf(pred0.points, true);
  auto lm = g.l1_mean(g.soft_mask(p, cam, 1.2), g.leaf(ref_mask));
  g.backward(lm);
  const auto analytic = g.grad(p).data;

  auto f = [&](const std::vector<double>& flat) {
    Tensor<double> pts = pred0.points;
    pts.data = flat;
    Graph<double> g2;
    auto pv = g2.leaf(pts, true);
    return g2.scalar(g2.l1_mean(g2.soft_mask(pv, cam, 1.2), g2.leaf(ref_mask)));
  };
  auto fd = oracle::central_diff(f, pred0.points.data, 1e-7);
  CHECK(oracle::max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("loss_overall is the weighted sum") {
  CHECK(loss_overall(0.7f, 123.0f, 0.0f) == 0.7f);
  CHECK(loss_overall(1.0f, 1.0f, 0.5f) == Catch::Approx(1.5f));
  Rng rng(65);
  const float ld = float(rng.uniform()), lm = float(rng.uniform()), w = float(rng.uniform());
  CHECK(loss_overall(ld, lm, w) == Catch::Approx(ld + w * lm));
}

namespace {

struct SceneFixture {
  PointCloudT<float> x0, hand;
  TensorF image;
  JointFramesT<float> frames;
  CameraT<float> cam;
  Vec3<float> centroid;

  explicit SceneFixture(uint64_t seed, int points = 8) {
    x0 = random_cloud<float>(points, seed, 0.03f);
    // Shift the object into the camera view with a definite centroid.
    for (int i = 0; i < x0.count(); ++i)
      x0.set_row(i, x0.row(i) + Vec3<float>(0.02f, 0.01f, 0.05f));
    centroid = x0.centroid();
    hand = random_cloud<float>(6, seed + 1, 0.04f);
    image = random_image<float>(16, seed + 2);
    frames = random_frames<float>(seed + 3);
    cam = tiny_camera<float>();
  }

  TrainSample<float> view() const {
    TrainSample<float> s;
    s.x0 = &x0;
    s.centroid = centroid;
    s.image = &image;
    s.hand = &hand;
    s.frames = &frames;
    s.camera = &cam;
    return s;
  }
};

}  // namespace

TEST_CASE("train_step with lr=0 leaves parameters bitwise unchanged") {
  auto cfg = tiny_config();
  auto params = init_denoiser_params<float>(cfg, 71);
  const auto before = params;
  AdamOptimizer<float> opt(0.0f);
  TrainConfig tc;
  tc.batch = 2;
  SceneFixture s1(100), s2(101);
  auto sched = make_schedule(10, 1e-3, 0.1);
  Rng rng(72);
  train_step(params, opt, cfg, {s1.view(), s2.view()}, sched, tc, rng);
  for (const auto& name : params.order)
    REQUIRE(params.get(name).data == before.tensors.at(name).data);
}

TEST_CASE("train_step is deterministic given the seed") {
  auto cfg = tiny_config();
  auto sched = make_schedule(10, 1e-3, 0.1);
  SceneFixture s1(103), s2(104);
  TrainConfig tc;
  tc.batch = 2;
  std::vector<float> curve1, curve2;
  for (auto* curve : {&curve1, &curve2}) {
    auto params = init_denoiser_params<float>(cfg, 73);
    AdamOptimizer<float> opt(1e-3f);
    Rng rng(74);
    for (int i = 0; i < 3; ++i)
      curve->push_back(train_step(params, opt, cfg, {s1.view(), s2.view()}, sched, tc, rng).loss);
  }
  REQUIRE(curve1 == curve2);
}

TEST_CASE("train_step drives the denoise loss down on one overfit sample", "[slow]") {
  auto cfg = tiny_config();
  cfg.hidden = 32;
  cfg.latent_channels = 32;
  auto params = init_denoiser_params<float>(cfg, 75);
  AdamOptimizer<float> opt(8e-3f);
  TrainConfig tc;
  tc.batch = 4;
  tc.flags.mask_loss = false;
  SceneFixture scene(105, /*points=*/4);
  auto sched = make_schedule(5, 1e-3, 0.01);
  Rng rng(76);
  double tail = 0;
  int tail_n = 0;
  const auto v = scene.view();
  for (int i = 0; i < 2000; ++i) {
    if (i == 1200) opt.set_lr(1.6e-3f);  // settle after the fast phase
    if (i == 1700) opt.set_lr(4e-4f);
    auto stats = train_step(params, opt, cfg, {v, v, v, v}, sched, tc, rng);
    if (i >= 1900) {
      tail += stats.denoise;
      ++tail_n;
    }
  }
  CHECK(tail / tail_n < 0.05);
}
