#pragma once

#include <stdexcept>

#include "hodiff/autodiff.hpp"
#include "hodiff/camera.hpp"
#include "hodiff/flags.hpp"
#include "hodiff/hand.hpp"

namespace hodiff {

/// Both condition streams for one (X_t, t): per-point image features with an
/// object/hand flag channel, and the joint-frame coordinates of the object
/// points. Disabled streams are zero tensors of the same shape, so the
/// denoiser wiring is identical across ablations.
template <typename S>
struct ConditionBundle {
  Tensor<S> semantic;           // (N + N_H) x (C + 1)
  Tensor<S> geometric;          // N x 45
  PointCloudT<S> hand_points;   // N_H x 3 (possibly zero rows)
  int object_count = 0;
};

namespace detail {

/// NDC rows for [object; hand] in one matrix.
template <typename S>
Tensor<S> stacked_ndc(const PointCloudT<S>& object, const PointCloudT<S>& hand,
                      const CameraT<S>& cam) {
  const int n = object.count(), nh = hand.count();
  Tensor<S> ndc({n + nh, 2});
  const auto po = project_ndc(object, cam);
  for (int i = 0; i < n; ++i) {
    ndc.at(i, 0) = po.ndc.at(i, 0);
    ndc.at(i, 1) = po.ndc.at(i, 1);
  }
  if (nh > 0) {
    const auto ph = project_ndc(hand, cam);
    for (int i = 0; i < nh; ++i) {
      ndc.at(n + i, 0) = ph.ndc.at(i, 0);
      ndc.at(n + i, 1) = ph.ndc.at(i, 1);
    }
  }
  return ndc;
}

/// The extra channel: 0 for object rows, 1 for hand rows.
template <typename S>
Tensor<S> flag_column(int n_object, int n_hand) {
  Tensor<S> col({n_object + n_hand, 1});
  for (int i = 0; i < n_hand; ++i) col.at(n_object + i, 0) = S(1);
  return col;
}

}  // namespace detail

/// Pixel-aligned semantic embedding: project [X_t; X_H], gather image
/// features per point, append the object/hand flag channel.
template <typename S>
Tensor<S> semantic_embedding(const PointCloudT<S>& object, const PointCloudT<S>& hand,
                             const Tensor<S>& fmap, const CameraT<S>& cam) {
  if (fmap.rank() != 3) throw std::invalid_argument("semantic_embedding: fmap must be H x W x C");
  if (fmap.dims[0] != cam.height || fmap.dims[1] != cam.width)
    throw std::invalid_argument("semantic_embedding: fmap resolution does not match the camera");
  const int n = object.count(), nh = hand.count();
  const Tensor<S> ndc = detail::stacked_ndc(object, hand, cam);
  const Tensor<S> feats = lookup_features(fmap, ndc);
  const Tensor<S> flag = detail::flag_column<S>(n, nh);
  Tensor<S> out({n + nh, fmap.dims[2] + 1});
  for (int i = 0; i < n + nh; ++i) {
    for (int c = 0; c < fmap.dims[2]; ++c) out.at(i, c) = feats.at(i, c);
    out.at(i, fmap.dims[2]) = flag.at(i, 0);
  }
  return out;
}

/// Graph variant used in training: gradient flows into fmap (the image
/// encoder); point positions are data.
template <typename S>
typename Graph<S>::Var semantic_embedding_var(Graph<S>& g, typename Graph<S>::Var fmap,
                                              const PointCloudT<S>& object,
                                              const PointCloudT<S>& hand,
                                              const CameraT<S>& cam) {
  const Tensor<S> ndc = detail::stacked_ndc(object, hand, cam);
  auto feats = g.bilinear_gather(fmap, ndc);
  auto flag = g.leaf(detail::flag_column<S>(object.count(), hand.count()));
  return g.concat_cols(feats, flag);
}

/// Assemble both streams honoring the ablation switches. `feature_channels`
/// fixes the semantic width when the stream is disabled (the image encoder
/// may not even run then).
template <typename S>
ConditionBundle<S> build_condition(const PointCloudT<S>& object, const PointCloudT<S>& hand,
                                   const JointFramesT<S>& frames, const Tensor<S>& fmap,
                                   const CameraT<S>& cam, const AblationFlags& flags,
                                   int feature_channels) {
  ConditionBundle<S> cond;
  cond.object_count = object.count();
  cond.hand_points = hand;
  if (flags.semantic) {
    cond.semantic = semantic_embedding(object, hand, fmap, cam);
    if (cond.semantic.cols() != feature_channels + 1)
      throw std::invalid_argument("build_condition: configured C does not match fmap");
  } else {
    cond.semantic = Tensor<S>({object.count() + hand.count(), feature_channels + 1});
  }
  cond.geometric = flags.geometric ? articulation_embedding(object, frames)
                                   : Tensor<S>({object.count(), kArticulationDim});
  return cond;
}

}  // namespace hodiff
