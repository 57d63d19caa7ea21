#pragma once

#include <string>
#include <vector>

#include "hodiff/denoiser.hpp"
#include "hodiff/diffusion.hpp"
#include "hodiff/flags.hpp"

namespace hodiff {

/// Non-owning view of one dataset record, everything in the wrist frame.
template <typename S>
struct TrainSample {
  const PointCloudT<S>* x0 = nullptr;
  Vec3<S> centroid = Vec3<S>::Zero();
  const Tensor<S>* image = nullptr;  // H x W x 3 in [0,1]
  const PointCloudT<S>* hand = nullptr;
  const JointFramesT<S>* frames = nullptr;
  const CameraT<S>* camera = nullptr;
  const Tensor<S>* ref_mask = nullptr;  // optional cached soft mask of x0
};

struct TrainConfig {
  double lr = 1e-3;
  int batch = 2;
  int steps = 20000;
  double eta1 = 0.1;      // mask loss weight
  double sigma_px = 1.0;  // soft mask width
  AblationFlags flags;
  uint64_t seed = 0;
};

template <typename S>
struct TrainStepStats {
  S loss = S(0);
  S denoise = S(0);
  S mask = S(0);
};

/// One optimizer update over a batch: draw t and noise per sample, form X_t,
/// build conditions, predict the noise, accumulate the weighted loss gradient
/// in sample order, and step Adam once.
template <typename S>
TrainStepStats<S> train_step(ParamStore<S>& params, AdamOptimizer<S>& opt,
                             const DenoiserConfig& cfg,
                             const std::vector<TrainSample<S>>& batch,
                             const NoiseSchedule& sched, const TrainConfig& tc, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const AblationFlags& flags = tc.flags;
  GradAccum<S> acc;
  TrainStepStats<S> stats;

  const S scale = static_cast<S>(cfg.coord_scale);
  const S inv_scale = S(1) / scale;

  for (size_t si = 0; si < batch.size(); ++si) {
    const TrainSample<S>& s = batch[si];
    const int n = s.x0->count();
    const int t = 1 + static_cast<int>(rng.uniform_int(static_cast<uint32_t>(sched.T)));

    // Diffusion runs in coord_scale units; conditions are built in meters.
    PointCloudT<S> x0 = *s.x0;
    for (auto& v : x0.points.data) v *= inv_scale;
    const Vec3<S> centroid_scaled = s.centroid * inv_scale;

    PointCloudT<S> eps;
    PointCloudT<S> xt;
    if (flags.centroid_fixing) {
      eps = sample_zero_mean_noise<S>(n, rng);
      xt = forward_diffuse(x0, centroid_scaled, t, sched, eps);
    } else {
      // Plain DDPM forward: raw Gaussian noise, no centering anywhere.
      eps = PointCloudT<S>::zeros(n, x0.frame);
      for (auto& v : eps.points.data) v = static_cast<S>(rng.normal());
      const S a = static_cast<S>(std::sqrt(sched.alpha_bar(t)));
      const S b = static_cast<S>(std::sqrt(1.0 - sched.alpha_bar(t)));
      xt = PointCloudT<S>::zeros(n, x0.frame);
      for (size_t i = 0; i < xt.points.size(); ++i)
        xt.points.data[i] = a * x0.points.data[i] + b * eps.points.data[i];
    }
    PointCloudT<S> xt_m = xt;  // meters, for projection and joint frames
    for (auto& v : xt_m.points.data) v *= scale;

    const PointCloudT<S> hand =
        flags.hand_rows_active() ? *s.hand : PointCloudT<S>::zeros(0, Frame::wrist);

    Graph<S> g;
    const bool use_encoder = flags.semantic;
    std::function<bool(const std::string&)> filter;
    if (!use_encoder)
      filter = [](const std::string& name) { return name.rfind("enc.", 0) != 0; };
    auto bound = bind_params<S>(g, params, /*trainable=*/true, filter);

    ConditionBundle<S> cond;
    cond.object_count = n;
    cond.hand_points = hand;
    cond.geometric = flags.geometric ? articulation_embedding(xt_m, *s.frames)
                                     : Tensor<S>({n, kArticulationDim});
    typename Graph<S>::Var semantic;
    if (use_encoder) {
      auto fmap = encode_image(g, bound, cfg, g.leaf(*s.image));
      semantic = semantic_embedding_var(g, fmap, xt_m, hand, *s.camera);
    } else {
      semantic = g.leaf(Tensor<S>({n + hand.count(), cfg.semantic_width()}));
    }

    auto eps_pred = denoise_var(g, bound, cfg, xt, t, semantic, cond);
    auto ld = g.mse(g.leaf(eps.points), eps_pred);
    auto loss = ld;
    if (flags.mask_loss) {
      // Soft-silhouette regularizer between the re-centered ground truth and
      // the X_0 estimate implied by the current noise prediction (meters).
      const S a = static_cast<S>(std::sqrt(sched.alpha_bar(t)));
      const S b = static_cast<S>(std::sqrt(1.0 - sched.alpha_bar(t)));
      auto x0hat = g.scale(g.sub(g.leaf(xt.points), g.scale(eps_pred, b)), scale / a);
      auto mask_pred = g.soft_mask(x0hat, *s.camera, static_cast<S>(tc.sigma_px));
      Tensor<S> mask_ref;
      if (s.ref_mask) {
        mask_ref = *s.ref_mask;
      } else {
        PointCloudT<S> ref = *s.x0;
        ref.recenter(s.centroid);
        mask_ref = soft_mask(ref, *s.camera, static_cast<S>(tc.sigma_px));
      }
      auto lm = g.l1_mean(mask_pred, g.leaf(mask_ref));
      loss = g.add(ld, g.scale(lm, static_cast<S>(tc.eta1)));
      stats.mask += g.scalar(lm);
    }
    g.backward(loss);
    acc.add_from(g, params, bound);
    stats.denoise += g.scalar(ld);
    stats.loss += g.scalar(loss);

    if (!std::isfinite(double(g.scalar(loss))))
      throw std::runtime_error("train_step: non-finite loss (sample " + std::to_string(si) +
                               ", t=" + std::to_string(t) +
                               ", denoise=" + std::to_string(double(g.scalar(ld))) + ")");
  }

  const S inv = S(1) / S(batch.size());
  acc.scale(inv);
  stats.loss *= inv;
  stats.denoise *= inv;
  stats.mask *= inv;
  opt.step(params, acc.grads);
  return stats;
}

/// Denoiser closure for the reverse sampler. The sampler state is in
/// coord_scale units; conditions are rebuilt per step from the metric X_t.
/// The image feature map is fixed per scene and computed once by the caller.
template <typename S>
std::function<Tensor<S>(const PointCloudT<S>&, int)> make_denoiser_fn(
    const ParamStore<S>& params, const DenoiserConfig& cfg, const AblationFlags& flags,
    const Tensor<S>& fmap, const PointCloudT<S>& hand, const JointFramesT<S>& frames,
    const CameraT<S>& cam) {
  const PointCloudT<S> active_hand =
      flags.hand_rows_active() ? hand : PointCloudT<S>::zeros(0, Frame::wrist);
  return [&params, cfg, flags, fmap, active_hand, &frames, cam](const PointCloudT<S>& xt,
                                                                int t) {
    PointCloudT<S> xt_m = xt;
    for (auto& v : xt_m.points.data) v *= static_cast<S>(cfg.coord_scale);
    ConditionBundle<S> cond =
        build_condition(xt_m, active_hand, frames, fmap, cam, flags, cfg.feature_channels);
    return denoise_infer(params, cfg, xt, t, cond);
  };
}

}  // namespace hodiff
