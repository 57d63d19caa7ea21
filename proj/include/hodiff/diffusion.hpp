#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hodiff/geometry.hpp"
#include "hodiff/rng.hpp"
#include "hodiff/tensor.hpp"

namespace hodiff {

enum class SigmaMode { beta, beta_tilde };
enum class ScheduleKind { linear };

/// Variance schedule tables for t = 1..T. Stored in double so the cumulative
/// product stays consistent to 1e-12 relative.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // beta_t,   index t-1
  std::vector<double> alphas;      // 1 - beta_t
  std::vector<double> alpha_bars;  // prod_{s<=t} alpha_s
  SigmaMode sigma_mode = SigmaMode::beta;

  double beta(int t) const { return betas.at(check(t) - 1); }
  double alpha(int t) const { return alphas.at(check(t) - 1); }
  double alpha_bar(int t) const { return alpha_bars.at(check(t) - 1); }

  /// Reverse-process noise scale sigma_t.
  double sigma(int t) const {
    check(t);
    if (sigma_mode == SigmaMode::beta) return std::sqrt(beta(t));
    const double ab_prev = t > 1 ? alpha_bar(t - 1) : 1.0;
    return std::sqrt((1.0 - ab_prev) / (1.0 - alpha_bar(t)) * beta(t));
  }

  int check(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("timestep " + std::to_string(t) + " outside [1," + std::to_string(T) + "]");
    return t;
  }

  void validate() const {
    if (T < 1 || static_cast<int>(betas.size()) != T) throw std::invalid_argument("schedule: bad T");
    double running = 1.0;
    double prev_bar = 2.0;
    for (int i = 0; i < T; ++i) {
      if (!(betas[i] > 0.0 && betas[i] < 1.0)) throw std::invalid_argument("schedule: beta out of (0,1)");
      running *= alphas[i];
      const double rel = std::abs(alpha_bars[i] - running) / running;
      if (rel > 1e-12) throw std::invalid_argument("schedule: alpha_bar inconsistent with product");
      if (alpha_bars[i] >= prev_bar) throw std::invalid_argument("schedule: alpha_bar not strictly decreasing");
      prev_bar = alpha_bars[i];
    }
  }
};

inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end,
                                   ScheduleKind kind = ScheduleKind::linear,
                                   SigmaMode sigma_mode = SigmaMode::beta) {
  if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  (void)kind;  // single kind for now
  NoiseSchedule s;
  s.T = T;
  s.sigma_mode = sigma_mode;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  double running = 1.0;
  for (int i = 0; i < T; ++i) {
    s.betas[i] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / double(T - 1);
    s.alphas[i] = 1.0 - s.betas[i];
    running *= s.alphas[i];
    s.alpha_bars[i] = running;
  }
  s.validate();
  return s;
}

/// i.i.d. standard normal rows with the per-axis sample mean subtracted, so
/// the draw is exactly zero-mean.
template <typename S>
PointCloudT<S> sample_zero_mean_noise(int n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("zero-mean noise needs N >= 2");
  PointCloudT<S> eps = PointCloudT<S>::zeros(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) eps.points.at(i, j) = static_cast<S>(rng.normal());
  eps.recenter(Vec3<S>::Zero());
  return eps;
}

/// X_t = sqrt(abar_t) * (X0 - mean(X0) + M) + sqrt(1 - abar_t) * eps.
/// The cloud is re-centered to the target centroid M before noising; eps must
/// come from sample_zero_mean_noise. mean(X_t) is sqrt(abar_t) * M.
template <typename S>
PointCloudT<S> forward_diffuse(const PointCloudT<S>& x0, const Vec3<S>& M, int t,
                               const NoiseSchedule& sched, const PointCloudT<S>& eps) {
  sched.check(t);
  if (x0.count() < 2) throw std::invalid_argument("forward_diffuse: need N >= 2");
  if (!x0.points.same_shape(eps.points))
    throw std::invalid_argument("forward_diffuse: X0 " + shape_str(x0.points) + " vs eps " +
                                shape_str(eps.points));
  const S a = static_cast<S>(std::sqrt(sched.alpha_bar(t)));
  const S b = static_cast<S>(std::sqrt(1.0 - sched.alpha_bar(t)));
  const Vec3<S> shift = M - x0.centroid();
  PointCloudT<S> xt = PointCloudT<S>::zeros(x0.count(), x0.frame);
  for (int i = 0; i < x0.count(); ++i)
    for (int j = 0; j < 3; ++j)
      xt.points.at(i, j) = a * (x0.points.at(i, j) + shift[j]) + b * eps.points.at(i, j);
  return xt;
}

/// One centroid-fixed reverse step:
///   eps0   = eps_pred - mean(eps_pred)
///   mu     = (X_t - (1-alpha_t)/sqrt(1-abar_t) * eps0) / sqrt(alpha_t)
///   X_{t-1}= mu + sigma_t * z            (z zero-mean, omitted at t = 1)
///   X_{t-1}= X_{t-1} - mean(X_{t-1}) + M_hat
template <typename S>
PointCloudT<S> reverse_step(const PointCloudT<S>& xt, const Tensor<S>& eps_pred, int t,
                            const NoiseSchedule& sched, const Vec3<S>& M_hat, Rng& rng) {
  sched.check(t);
  if (xt.count() < 2) throw std::invalid_argument("reverse_step: need N >= 2");
  if (!xt.points.same_shape(eps_pred))
    throw std::invalid_argument("reverse_step: shape mismatch");
  if (!eps_pred.all_finite()) throw std::invalid_argument("reverse_step: NaN in eps_pred");

  const int n = xt.count();
  Vec3<S> eps_mean = Vec3<S>::Zero();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) eps_mean[j] += eps_pred.at(i, j);
  eps_mean /= S(n);

  const S coef = static_cast<S>((1.0 - sched.alpha(t)) / std::sqrt(1.0 - sched.alpha_bar(t)));
  const S inv_sqrt_alpha = static_cast<S>(1.0 / std::sqrt(sched.alpha(t)));
  PointCloudT<S> prev = PointCloudT<S>::zeros(n, xt.frame);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j)
      prev.points.at(i, j) =
          (xt.points.at(i, j) - coef * (eps_pred.at(i, j) - eps_mean[j])) * inv_sqrt_alpha;

  if (t > 1) {
    const S sigma = static_cast<S>(sched.sigma(t));
    PointCloudT<S> z = sample_zero_mean_noise<S>(n, rng);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 3; ++j) prev.points.at(i, j) += sigma * z.points.at(i, j);
  }
  prev.recenter(M_hat);
  return prev;
}

/// Plain DDPM reverse step without any centroid correction. Used by the
/// centroid-fixing-off ablation; the spec'd sampler path uses reverse_step.
template <typename S>
PointCloudT<S> reverse_step_free(const PointCloudT<S>& xt, const Tensor<S>& eps_pred, int t,
                                 const NoiseSchedule& sched, Rng& rng) {
  sched.check(t);
  if (!xt.points.same_shape(eps_pred))
    throw std::invalid_argument("reverse_step_free: shape mismatch");
  if (!eps_pred.all_finite()) throw std::invalid_argument("reverse_step_free: NaN in eps_pred");
  const int n = xt.count();
  const S coef = static_cast<S>((1.0 - sched.alpha(t)) / std::sqrt(1.0 - sched.alpha_bar(t)));
  const S inv_sqrt_alpha = static_cast<S>(1.0 / std::sqrt(sched.alpha(t)));
  PointCloudT<S> prev = PointCloudT<S>::zeros(n, xt.frame);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j)
      prev.points.at(i, j) = (xt.points.at(i, j) - coef * eps_pred.at(i, j)) * inv_sqrt_alpha;
  if (t > 1) {
    const S sigma = static_cast<S>(sched.sigma(t));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 3; ++j) prev.points.at(i, j) += sigma * static_cast<S>(rng.normal());
  }
  return prev;
}

/// Invert the forward reparameterization: X0_hat = (X_t - sqrt(1-abar_t) * eps) / sqrt(abar_t).
template <typename S>
PointCloudT<S> estimate_x0(const PointCloudT<S>& xt, const Tensor<S>& eps_pred, int t,
                           const NoiseSchedule& sched) {
  sched.check(t);
  if (!xt.points.same_shape(eps_pred)) throw std::invalid_argument("estimate_x0: shape mismatch");
  const double ab = sched.alpha_bar(t);
  if (ab < 1e-8) throw std::invalid_argument("estimate_x0: alpha_bar below 1e-8 is singular");
  const S inv_a = static_cast<S>(1.0 / std::sqrt(ab));
  const S b = static_cast<S>(std::sqrt(1.0 - ab));
  PointCloudT<S> x0 = PointCloudT<S>::zeros(xt.count(), xt.frame);
  for (int i = 0; i < xt.count(); ++i)
    for (int j = 0; j < 3; ++j)
      x0.points.at(i, j) = (xt.points.at(i, j) - b * eps_pred.at(i, j)) * inv_a;
  return x0;
}

template <typename S>
struct SampleOptions {
  bool centroid_lock = true;  // false: anchor X_T only, then run free reverse steps
  std::function<void(int, const PointCloudT<S>&)> on_step;  // called after each step with t-1
};

/// Full reverse chain. X_T is zero-mean noise anchored at M_hat, then each
/// step re-centers at M_hat (centroid lock). Deterministic given the seed.
template <typename S>
PointCloudT<S> sample(const std::function<Tensor<S>(const PointCloudT<S>&, int)>& denoiser_fn,
                      const Vec3<S>& M_hat, const NoiseSchedule& sched, int n, Rng& rng,
                      const SampleOptions<S>& opt = {}) {
  PointCloudT<S> x = sample_zero_mean_noise<S>(n, rng);
  if (opt.centroid_lock) {
    x.recenter(M_hat);
  } else {
    // Raw Gaussian start shifted to the anchor; no per-step correction after.
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 3; ++j) x.points.at(i, j) += M_hat[j];
  }
  if (opt.on_step) opt.on_step(sched.T, x);
  for (int t = sched.T; t >= 1; --t) {
    Tensor<S> eps_pred = denoiser_fn(x, t);
    if (!eps_pred.all_finite())
      throw std::runtime_error("sample: non-finite denoiser output at step t=" + std::to_string(t));
    x = opt.centroid_lock ? reverse_step(x, eps_pred, t, sched, M_hat, rng)
                          : reverse_step_free(x, eps_pred, t, sched, rng);
    if (!x.points.all_finite())
      throw std::runtime_error("sample: non-finite state at step t=" + std::to_string(t - 1));
    if (opt.on_step) opt.on_step(t - 1, x);
  }
  return x;
}

}  // namespace hodiff
