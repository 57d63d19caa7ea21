#pragma once

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "hodiff/centroid_net.hpp"
#include "hodiff/dataset.hpp"
#include "hodiff/denoiser.hpp"
#include "hodiff/diffusion.hpp"
#include "hodiff/flags.hpp"
#include "hodiff/training.hpp"

namespace hodiff {

inline constexpr int kConfigFormatVersion = 1;
inline constexpr const char* kCodeVersion = "hodiff 0.1.0";

struct ScheduleConfig {
  int T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  SigmaMode sigma_mode = SigmaMode::beta;

  NoiseSchedule make() const {
    return make_schedule(T, beta_start, beta_end, ScheduleKind::linear, sigma_mode);
  }
};

struct CentroidTrainConfig {
  int steps = 6000;
  int batch = 8;
  double lr = 1e-3;
  double lambda1 = 1.0;
  double lambda2 = 0.1;
};

/// Whole-experiment configuration: dataset, schedule, model dims, training
/// recipes, sampling, and the ablation switches. Serialized as JSON with
/// strict key checking (see docs/config_schema.md).
struct ExperimentConfig {
  uint64_t seed = 0;
  DatasetConfig dataset;
  ScheduleConfig schedule;
  DenoiserConfig model;
  CentroidNetConfig centroid_model;
  TrainConfig train;
  CentroidTrainConfig centroid_train;
  int sample_k = 1;
  AblationFlags flags;

  void validate() const {
    if (dataset.n_points < 2) throw std::invalid_argument("config: dataset.n_points must be >= 2");
    if (dataset.n_hand_vertices < kHandNodes)
      throw std::invalid_argument("config: dataset.n_hand_vertices must be >= 16");
    if (dataset.image_size < 8 || dataset.image_size > 512)
      throw std::invalid_argument("config: dataset.image_size out of [8,512]");
    if (dataset.n_train < 0 || dataset.n_val < 0 || dataset.n_test < 0)
      throw std::invalid_argument("config: split sizes must be nonnegative");
    if (schedule.T < 1) throw std::invalid_argument("config: schedule.T must be >= 1");
    if (!(schedule.beta_start > 0.0) || !(schedule.beta_end < 1.0) ||
        schedule.beta_start > schedule.beta_end)
      throw std::invalid_argument("config: need 0 < beta_start <= beta_end < 1");
    if (train.eta1 < 0.0) throw std::invalid_argument("config: train.eta1 must be >= 0");
    if (train.batch < 1 || train.steps < 0)
      throw std::invalid_argument("config: bad train.batch/steps");
    if (!(train.sigma_px > 0.0)) throw std::invalid_argument("config: train.sigma_px must be > 0");
    if (centroid_train.lambda1 < 0.0 || centroid_train.lambda2 < 0.0)
      throw std::invalid_argument("config: centroid lambdas must be >= 0");
    if (sample_k < 1) throw std::invalid_argument("config: sample.k must be >= 1");
    if (model.time_dim % 2 != 0) throw std::invalid_argument("config: model.time_dim must be even");
    if (!(model.coord_scale > 0.0))
      throw std::invalid_argument("config: model.coord_scale_m must be > 0");
  }

  /// Denoiser dims bound to the dataset resolution and the ablation mode.
  DenoiserConfig denoiser_config() const {
    DenoiserConfig c = model;
    c.image_size = dataset.image_size;
    c.dual_stream = flags.dual_stream;
    return c;
  }
  CentroidNetConfig centroid_config() const {
    CentroidNetConfig c = centroid_model;
    c.image_size = dataset.image_size;
    return c;
  }
  TrainConfig train_config() const {
    TrainConfig t = train;
    t.flags = flags;
    t.seed = seed;
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format_version"] = kConfigFormatVersion;
    j["seed"] = seed;
    j["dataset"] = dataset.to_json();
    j["schedule"] = {{"T", schedule.T},
                     {"beta_start", schedule.beta_start},
                     {"beta_end", schedule.beta_end},
                     {"sigma_mode", schedule.sigma_mode == SigmaMode::beta ? "beta" : "beta_tilde"}};
    j["model"] = {{"feature_channels", model.feature_channels},
                  {"latent_channels", model.latent_channels},
                  {"time_dim", model.time_dim},
                  {"hidden", model.hidden},
                  {"encoder_channels", model.encoder_channels},
                  {"encoder_strides", model.encoder_strides},
                  {"coord_scale_m", model.coord_scale}};
    j["centroid_model"] = {{"point_hidden", centroid_model.point_hidden},
                           {"point_feature", centroid_model.point_feature},
                           {"image_feature", centroid_model.image_feature},
                           {"head_hidden", centroid_model.head_hidden},
                           {"encoder_channels", centroid_model.encoder_channels}};
    j["train"] = {{"steps", train.steps},
                  {"batch", train.batch},
                  {"lr", train.lr},
                  {"eta1", train.eta1},
                  {"sigma_px", train.sigma_px}};
    j["centroid_train"] = {{"steps", centroid_train.steps},
                           {"batch", centroid_train.batch},
                           {"lr", centroid_train.lr},
                           {"lambda1", centroid_train.lambda1},
                           {"lambda2", centroid_train.lambda2}};
    j["sample"] = {{"k", sample_k}};
    j["flags"] = {{"centroid_fixing", flags.centroid_fixing},
                  {"centroid_source", to_string(flags.centroid_source)},
                  {"semantic", flags.semantic},
                  {"geometric", flags.geometric},
                  {"dual_stream", flags.dual_stream},
                  {"mask_loss", flags.mask_loss}};
    return j;
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "format_version", "seed",           "dataset", "schedule",       "model",
        "centroid_model", "train",          "sample",  "centroid_train", "flags"};
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!known.count(it.key()))
        throw std::invalid_argument("config: unknown key '" + it.key() + "'");
    if (j.at("format_version").get<int>() != kConfigFormatVersion)
      throw std::invalid_argument("config: unsupported format_version");

    ExperimentConfig c;
    c.seed = j.at("seed").get<uint64_t>();
    c.dataset = DatasetConfig::from_json(j.at("dataset"));
    const auto& sj = j.at("schedule");
    c.schedule.T = sj.at("T");
    c.schedule.beta_start = sj.at("beta_start");
    c.schedule.beta_end = sj.at("beta_end");
    const std::string sm = sj.value("sigma_mode", "beta");
    if (sm == "beta")
      c.schedule.sigma_mode = SigmaMode::beta;
    else if (sm == "beta_tilde")
      c.schedule.sigma_mode = SigmaMode::beta_tilde;
    else
      throw std::invalid_argument("config: sigma_mode must be beta or beta_tilde");

    const auto& mj = j.at("model");
    c.model.feature_channels = mj.at("feature_channels");
    c.model.latent_channels = mj.at("latent_channels");
    c.model.time_dim = mj.at("time_dim");
    c.model.hidden = mj.at("hidden");
    c.model.coord_scale = mj.value("coord_scale_m", 0.05);
    const auto ec = mj.at("encoder_channels").get<std::vector<int>>();
    if (ec.size() != 3) throw std::invalid_argument("config: model.encoder_channels needs 3 values");
    c.model.encoder_channels = {ec[0], ec[1], ec[2]};
    if (mj.contains("encoder_strides")) {
      const auto es = mj.at("encoder_strides").get<std::vector<int>>();
      if (es.size() != 4) throw std::invalid_argument("config: model.encoder_strides needs 4 values");
      for (int s : es)
        if (s != 1 && s != 2) throw std::invalid_argument("config: encoder strides must be 1 or 2");
      c.model.encoder_strides = {es[0], es[1], es[2], es[3]};
    }

    const auto& cj = j.at("centroid_model");
    c.centroid_model.point_hidden = cj.at("point_hidden");
    c.centroid_model.point_feature = cj.at("point_feature");
    c.centroid_model.image_feature = cj.at("image_feature");
    c.centroid_model.head_hidden = cj.at("head_hidden");
    const auto cec = cj.at("encoder_channels").get<std::vector<int>>();
    if (cec.size() != 3)
      throw std::invalid_argument("config: centroid_model.encoder_channels needs 3 values");
    c.centroid_model.encoder_channels = {cec[0], cec[1], cec[2]};

    const auto& tj = j.at("train");
    c.train.steps = tj.at("steps");
    c.train.batch = tj.at("batch");
    c.train.lr = tj.at("lr");
    c.train.eta1 = tj.at("eta1");
    c.train.sigma_px = tj.at("sigma_px");

    const auto& ctj = j.at("centroid_train");
    c.centroid_train.steps = ctj.at("steps");
    c.centroid_train.batch = ctj.at("batch");
    c.centroid_train.lr = ctj.at("lr");
    c.centroid_train.lambda1 = ctj.at("lambda1");
    c.centroid_train.lambda2 = ctj.at("lambda2");

    c.sample_k = j.at("sample").at("k");

    const auto& fj = j.at("flags");
    c.flags.centroid_fixing = fj.at("centroid_fixing");
    c.flags.centroid_source = centroid_source_from_string(fj.at("centroid_source"));
    c.flags.semantic = fj.at("semantic");
    c.flags.geometric = fj.at("geometric");
    c.flags.dual_stream = fj.at("dual_stream");
    c.flags.mask_loss = fj.at("mask_loss");

    c.validate();
    return c;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config " + path);
    nlohmann::json j;
    f >> j;
    return from_json(j);
  }

  /// Apply an ablation row, keeping everything else fixed.
  ExperimentConfig with_row(const std::string& row) const {
    ExperimentConfig c = *this;
    c.flags = ablation_row(row);
    return c;
  }
};

}  // namespace hodiff
