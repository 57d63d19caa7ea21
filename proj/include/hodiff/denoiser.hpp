#pragma once

#include <array>
#include <string>

#include "hodiff/autodiff.hpp"
#include "hodiff/conditioning.hpp"
#include "hodiff/diffusion.hpp"
#include "hodiff/nn.hpp"

namespace hodiff {

/// Dual-stream conditional denoiser dimensions. The per-point streams are
/// row-count agnostic; only the image encoder is tied to a resolution.
struct DenoiserConfig {
  int image_size = 64;
  int feature_channels = 32;  // C: encoder output channels
  int latent_channels = 128;  // S: per-stream feature width
  int time_dim = 64;          // D_t
  int hidden = 128;           // stream MLP width
  std::array<int, 3> encoder_channels = {16, 32, 32};
  std::array<int, 4> encoder_strides = {1, 2, 2, 1};
  bool dual_stream = true;
  // The diffusion state and every 3D coordinate fed to the network are in
  // units of coord_scale meters, so desk-scale shapes sit at unit variance
  // where the noise schedule expects them. Projections stay metric.
  double coord_scale = 0.05;

  int semantic_width() const { return feature_channels + 1; }
  int stream1_in() const { return 3 + semantic_width() + time_dim; }
  int stream2_in() const { return 3 + kArticulationDim + time_dim; }
  int single_in() const { return 3 + semantic_width() + kArticulationDim + time_dim; }
};

template <typename S>
ParamStore<S> init_denoiser_params(const DenoiserConfig& cfg, uint64_t seed) {
  ParamStore<S> p;
  Rng rng(seed, 3);
  const auto [e1, e2, e3] = cfg.encoder_channels;
  add_conv(p, "enc.c1", 3, 3, 3, e1, rng);
  add_conv(p, "enc.c2", 3, 3, e1, e2, rng);
  add_conv(p, "enc.c3", 3, 3, e2, e3, rng);
  add_conv(p, "enc.c4", 3, 3, e3, cfg.feature_channels, rng);
  auto add_stream = [&](const std::string& prefix, int in) {
    add_linear(p, prefix + ".l1", in, cfg.hidden, rng);
    add_linear(p, prefix + ".l2", cfg.hidden, cfg.hidden, rng);
    add_linear(p, prefix + ".l3", 2 * cfg.hidden, cfg.hidden, rng);
    add_linear(p, prefix + ".l4", cfg.hidden, cfg.latent_channels, rng);
  };
  if (cfg.dual_stream) {
    add_stream("s1", cfg.stream1_in());
    add_stream("s2", cfg.stream2_in());
    add_linear(p, "fuse.l1", 2 * cfg.latent_channels, cfg.hidden, rng);
  } else {
    add_stream("ss", cfg.single_in());
    add_linear(p, "fuse.l1", cfg.latent_channels, cfg.hidden, rng);
  }
  add_linear(p, "fuse.l2", cfg.hidden, cfg.hidden, rng);
  add_linear(p, "fuse.l3", cfg.hidden, 3, rng);
  return p;
}

/// Four conv stages (strides 1,2,2,1), bilinearly upsampled from the
/// coarsest stage back to input resolution: H x W x C, pixel-aligned.
template <typename S>
typename Graph<S>::Var encode_image(Graph<S>& g, const BoundParams<S>& p,
                                    const DenoiserConfig& cfg, typename Graph<S>::Var image) {
  const auto& I = g.val(image);
  if (I.rank() != 3 || I.dims[0] != cfg.image_size || I.dims[1] != cfg.image_size ||
      I.dims[2] != 3)
    throw std::invalid_argument("encode_image: expected " + std::to_string(cfg.image_size) + "x" +
                                std::to_string(cfg.image_size) + "x3 image, got " + shape_str(I));
  auto h = conv_silu(g, p, "enc.c1", image, cfg.encoder_strides[0]);
  h = conv_silu(g, p, "enc.c2", h, cfg.encoder_strides[1]);
  h = conv_silu(g, p, "enc.c3", h, cfg.encoder_strides[2]);
  h = conv_silu(g, p, "enc.c4", h, cfg.encoder_strides[3]);
  return g.upsample_bilinear(h, cfg.image_size, cfg.image_size);
}

template <typename S>
Tensor<S> encode_image_infer(const ParamStore<S>& params, const DenoiserConfig& cfg,
                             const Tensor<S>& image) {
  Graph<S> g;
  BoundParams<S> p;
  for (const auto& name : params.order)
    if (name.rfind("enc.", 0) == 0) p.vars.emplace(name, g.leaf(params.tensors.at(name)));
  return g.val(encode_image(g, p, cfg, g.leaf(image)));
}

namespace detail {

template <typename S>
typename Graph<S>::Var stream_forward(Graph<S>& g, const BoundParams<S>& p,
                                      const std::string& prefix, typename Graph<S>::Var in,
                                      int rows) {
  auto h1 = linear_silu(g, p, prefix + ".l1", in);
  auto h2 = linear_silu(g, p, prefix + ".l2", h1);
  auto ctx = g.tile_rows(g.maxpool_rows(h2), rows);
  auto h3 = linear_silu(g, p, prefix + ".l3", g.concat_cols(h2, ctx));
  return linear(g, p, prefix + ".l4", h3);
}

template <typename S>
typename Graph<S>::Var fuse_head(Graph<S>& g, const BoundParams<S>& p,
                                 typename Graph<S>::Var feats) {
  auto h = linear_silu(g, p, "fuse.l1", feats);
  h = linear_silu(g, p, "fuse.l2", h);
  return linear(g, p, "fuse.l3", h);
}

template <typename S>
Tensor<S> stack_points(const PointCloudT<S>& object, const PointCloudT<S>& hand) {
  Tensor<S> out({object.count() + hand.count(), 3});
  for (int i = 0; i < object.count(); ++i)
    for (int j = 0; j < 3; ++j) out.at(i, j) = object.points.at(i, j);
  for (int i = 0; i < hand.count(); ++i)
    for (int j = 0; j < 3; ++j) out.at(object.count() + i, j) = hand.points.at(i, j);
  return out;
}

}  // namespace detail

/// Noise prediction head. `xt` is the diffusion state in coord_scale units;
/// the condition bundle is in meters (hand rows and joint-frame coordinates
/// are rescaled here so the network sees one unit system). `semantic` is a
/// graph var so training can push gradients into the image encoder.
template <typename S>
typename Graph<S>::Var denoise_var(Graph<S>& g, const BoundParams<S>& p,
                                   const DenoiserConfig& cfg, const PointCloudT<S>& xt, int t,
                                   typename Graph<S>::Var semantic,
                                   const ConditionBundle<S>& cond) {
  const int n = cond.object_count;
  const int nh = cond.hand_points.count();
  if (xt.count() != n)
    throw std::invalid_argument("denoise: X_t rows " + std::to_string(xt.count()) +
                                " != condition object_count " + std::to_string(n));
  const auto& sem = g.val(semantic);
  if (sem.rows() != n + nh || sem.cols() != cfg.semantic_width())
    throw std::invalid_argument("denoise: semantic shape " + shape_str(sem) + ", expected (" +
                                std::to_string(n + nh) + "," +
                                std::to_string(cfg.semantic_width()) + ")");
  if (cond.geometric.rows() != n || cond.geometric.cols() != kArticulationDim)
    throw std::invalid_argument("denoise: geometric shape " + shape_str(cond.geometric) +
                                ", expected (" + std::to_string(n) + ",45)");

  const S inv_scale = S(1) / static_cast<S>(cfg.coord_scale);
  PointCloudT<S> hand_scaled = cond.hand_points;
  for (auto& v : hand_scaled.points.data) v *= inv_scale;

  auto pts_all = g.leaf(detail::stack_points(xt, hand_scaled));
  auto temb_all = g.tile_rows(g.leaf(time_embedding<S>(t, cfg.time_dim)), n + nh);
  Tensor<S> geo = cond.geometric;
  for (auto& v : geo.data) v *= inv_scale;

  if (cfg.dual_stream) {
    auto in1 = g.concat_cols(g.concat_cols(pts_all, semantic), temb_all);
    auto f1 = detail::stream_forward(g, p, "s1", in1, n + nh);
    auto f1_obj = g.slice_rows(f1, 0, n);

    auto pts_obj = g.slice_rows(pts_all, 0, n);
    auto temb_obj = g.slice_rows(temb_all, 0, n);
    auto in2 = g.concat_cols(g.concat_cols(pts_obj, g.leaf(geo)), temb_obj);
    auto f2 = detail::stream_forward(g, p, "s2", in2, n);
    return detail::fuse_head(g, p, g.concat_cols(f1_obj, f2));
  }

  // Single-stream: concatenate both embeddings; hand rows carry zero
  // geometric columns.
  Tensor<S> geo_all({n + nh, kArticulationDim});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < kArticulationDim; ++c) geo_all.at(i, c) = geo.at(i, c);
  auto in = g.concat_cols(
      g.concat_cols(g.concat_cols(pts_all, semantic), g.leaf(geo_all)), temb_all);
  auto f = detail::stream_forward(g, p, "ss", in, n + nh);
  return detail::fuse_head(g, p, g.slice_rows(f, 0, n));
}

/// Inference path: same graph builder, parameters bound without gradients.
template <typename S>
Tensor<S> denoise_infer(const ParamStore<S>& params, const DenoiserConfig& cfg,
                        const PointCloudT<S>& xt, int t, const ConditionBundle<S>& cond) {
  Graph<S> g;
  BoundParams<S> p;
  for (const auto& name : params.order)
    if (name.rfind("enc.", 0) != 0) p.vars.emplace(name, g.leaf(params.tensors.at(name)));
  auto semantic = g.leaf(cond.semantic);
  return g.val(denoise_var(g, p, cfg, xt, t, semantic, cond));
}

// -- losses -------------------------------------------------------------------

/// MSE between applied and predicted noise.
template <typename S>
S loss_denoise(const Tensor<S>& eps, const Tensor<S>& eps_pred) {
  if (!eps.same_shape(eps_pred)) throw std::invalid_argument("loss_denoise: shape mismatch");
  double acc = 0;
  for (size_t i = 0; i < eps.size(); ++i) {
    const double d = double(eps.data[i]) - double(eps_pred.data[i]);
    acc += d * d;
  }
  return static_cast<S>(acc / double(eps.size()));
}

/// Mean absolute difference between the two soft silhouettes.
template <typename S>
S loss_mask(const PointCloudT<S>& x_ref, const PointCloudT<S>& x_pred, const CameraT<S>& cam,
            S sigma_px) {
  const Tensor<S> a = soft_mask(x_ref, cam, sigma_px);
  const Tensor<S> b = soft_mask(x_pred, cam, sigma_px);
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) acc += std::abs(double(a.data[i]) - double(b.data[i]));
  return static_cast<S>(acc / double(a.size()));
}

template <typename S>
S loss_overall(S ld, S lm, S eta1) {
  return ld + eta1 * lm;
}

}  // namespace hodiff
