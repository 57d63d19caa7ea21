#pragma once

#include <algorithm>
#include <array>
#include <vector>

#include "hodiff/autodiff.hpp"
#include "hodiff/camera.hpp"
#include "hodiff/nn.hpp"

namespace hodiff {

/// Hand-constrained centroid predictor: PointNet-style hand encoder plus a
/// small CNN image encoder feeding two parallel heads (3D wrist frame, 2D NDC).
struct CentroidNetConfig {
  int image_size = 64;
  int point_hidden = 64;
  int point_feature = 128;  // pooled hand feature width
  int image_feature = 64;
  int head_hidden = 64;
  std::array<int, 3> encoder_channels = {8, 16, 32};
};

template <typename S>
ParamStore<S> init_centroid_params(const CentroidNetConfig& cfg, uint64_t seed) {
  ParamStore<S> p;
  Rng rng(seed, 5);
  add_linear(p, "pt.l1", 3, cfg.point_hidden, rng);
  add_linear(p, "pt.l2", cfg.point_hidden, cfg.point_feature, rng);
  const auto [e1, e2, e3] = cfg.encoder_channels;
  add_conv(p, "img.c1", 3, 3, 3, e1, rng);
  add_conv(p, "img.c2", 3, 3, e1, e2, rng);
  add_conv(p, "img.c3", 3, 3, e2, e3, rng);
  add_linear(p, "img.fc", e3, cfg.image_feature, rng);
  const int joint = cfg.point_feature + cfg.image_feature;
  add_linear(p, "head3d.l1", joint, cfg.head_hidden, rng);
  add_linear(p, "head3d.l2", cfg.head_hidden, 3, rng);
  add_linear(p, "head2d.l1", joint, cfg.head_hidden, rng);
  add_linear(p, "head2d.l2", cfg.head_hidden, 2, rng);
  return p;
}

template <typename S>
struct CentroidPredictionVars {
  typename Graph<S>::Var pred3d;  // 1 x 3, wrist frame
  typename Graph<S>::Var pred2d;  // 1 x 2, NDC
};

template <typename S>
CentroidPredictionVars<S> predict_centroid_var(Graph<S>& g, const BoundParams<S>& p,
                                               const CentroidNetConfig& cfg,
                                               typename Graph<S>::Var image,
                                               const PointCloudT<S>& hand) {
  if (hand.count() < 1) throw std::invalid_argument("predict_centroid: empty hand cloud");
  const auto& I = g.val(image);
  if (I.rank() != 3 || I.dims[0] != cfg.image_size || I.dims[1] != cfg.image_size ||
      I.dims[2] != 3)
    throw std::invalid_argument("predict_centroid: bad image shape " + shape_str(I));

  auto pts = g.leaf(hand.points);
  auto h = linear_silu(g, p, "pt.l1", pts);
  h = linear_silu(g, p, "pt.l2", h);
  auto hand_feat = g.maxpool_rows(h);  // 1 x point_feature

  auto e = conv_silu(g, p, "img.c1", image, 2);
  e = conv_silu(g, p, "img.c2", e, 2);
  e = conv_silu(g, p, "img.c3", e, 2);
  auto img_feat = linear_silu(g, p, "img.fc", g.avgpool_all(e));

  auto joint = g.concat_cols(hand_feat, img_feat);
  CentroidPredictionVars<S> out;
  out.pred3d = linear(g, p, "head3d.l2", linear_silu(g, p, "head3d.l1", joint));
  out.pred2d = linear(g, p, "head2d.l2", linear_silu(g, p, "head2d.l1", joint));
  return out;
}

template <typename S>
struct CentroidPrediction {
  Vec3<S> m3d;
  Vec2<S> m2d;
};

template <typename S>
CentroidPrediction<S> predict_centroid(const ParamStore<S>& params, const CentroidNetConfig& cfg,
                                       const Tensor<S>& image, const PointCloudT<S>& hand) {
  Graph<S> g;
  auto bound = bind_params(g, params, /*trainable=*/false);
  auto vars = predict_centroid_var(g, bound, cfg, g.leaf(image), hand);
  const auto& p3 = g.val(vars.pred3d);
  const auto& p2 = g.val(vars.pred2d);
  return {Vec3<S>(p3.data[0], p3.data[1], p3.data[2]), Vec2<S>(p2.data[0], p2.data[1])};
}

/// || M3d - pred3d || + lambda1 || M2d - pred2d || + lambda2 || P(pred3d) - pred2d ||.
/// If pred3d sits behind the near plane the projection term is dropped and
/// `degenerate_count` (when given) is incremented.
template <typename S>
typename Graph<S>::Var centroid_loss_var(Graph<S>& g, const Vec3<S>& M3d, const Vec2<S>& M2d,
                                         typename Graph<S>::Var pred3d,
                                         typename Graph<S>::Var pred2d, const CameraT<S>& cam,
                                         S lambda1, S lambda2, int* degenerate_count = nullptr) {
  Tensor<S> m3({1, 3});
  m3.data = {M3d.x(), M3d.y(), M3d.z()};
  Tensor<S> m2({1, 2});
  m2.data = {M2d.x(), M2d.y()};

  auto loss = g.norm2(g.sub(pred3d, g.leaf(m3)));
  loss = g.add(loss, g.scale(g.norm2(g.sub(pred2d, g.leaf(m2))), lambda1));

  const auto& p3 = g.val(pred3d);
  const Vec3<S> cam_pt = cam.wrist_to_camera.apply(Vec3<S>(p3.data[0], p3.data[1], p3.data[2]));
  if (cam_pt.z() > cam.near_plane) {
    auto proj = g.project_point_ndc(pred3d, cam);
    loss = g.add(loss, g.scale(g.norm2(g.sub(proj, pred2d)), lambda2));
  } else if (degenerate_count) {
    ++*degenerate_count;
  }
  return loss;
}

/// Plain-value loss evaluation (spec operation; used by tests and reporting).
template <typename S>
S centroid_loss(const Vec3<S>& M3d, const Vec2<S>& M2d, const Vec3<S>& pred3d,
                const Vec2<S>& pred2d, const CameraT<S>& cam, S lambda1, S lambda2,
                int* degenerate_count = nullptr) {
  Graph<S> g;
  Tensor<S> p3({1, 3});
  p3.data = {pred3d.x(), pred3d.y(), pred3d.z()};
  Tensor<S> p2({1, 2});
  p2.data = {pred2d.x(), pred2d.y()};
  auto v3 = g.leaf(p3, true);
  auto v2 = g.leaf(p2, true);
  return g.scalar(centroid_loss_var(g, M3d, M2d, v3, v2, cam, lambda1, lambda2, degenerate_count));
}

template <typename S>
struct CentroidSample {
  const Tensor<S>* image = nullptr;
  const PointCloudT<S>* hand = nullptr;
  Vec3<S> m3d = Vec3<S>::Zero();
  Vec2<S> m2d = Vec2<S>::Zero();
  const CameraT<S>* camera = nullptr;
};

/// One supervised update; returns the mean loss over the batch.
template <typename S>
S centroid_train_step(ParamStore<S>& params, AdamOptimizer<S>& opt, const CentroidNetConfig& cfg,
                      const std::vector<CentroidSample<S>>& batch, S lambda1, S lambda2,
                      int* degenerate_count = nullptr) {
  if (batch.empty()) throw std::invalid_argument("centroid_train_step: empty batch");
  GradAccum<S> acc;
  S total = S(0);
  for (const auto& s : batch) {
    Graph<S> g;
    auto bound = bind_params(g, params, /*trainable=*/true);
    auto pred = predict_centroid_var(g, bound, cfg, g.leaf(*s.image), *s.hand);
    auto loss = centroid_loss_var(g, s.m3d, s.m2d, pred.pred3d, pred.pred2d, *s.camera, lambda1,
                                  lambda2, degenerate_count);
    g.backward(loss);
    acc.add_from(g, params, bound);
    total += g.scalar(loss);
    if (!std::isfinite(double(g.scalar(loss))))
      throw std::runtime_error("centroid_train_step: non-finite loss");
  }
  acc.scale(S(1) / S(batch.size()));
  opt.step(params, acc.grads);
  return total / S(batch.size());
}

}  // namespace hodiff
