#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include "hodiff/checkpoint.hpp"
#include "hodiff/config.hpp"
#include "hodiff/dataset.hpp"
#include "hodiff/metrics.hpp"
#include "hodiff/training.hpp"

namespace hodiff {

namespace fs = std::filesystem;

/// Run independent tasks on a small worker pool. Results must be written to
/// pre-sized slots so the outcome does not depend on scheduling.
inline void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::mutex err_mutex;
  std::exception_ptr first_error;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline int default_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 2 : int(hw);
}

/// Refuse to clobber existing non-empty outputs unless forced.
inline void prepare_output_dir(const std::string& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force)
      throw std::runtime_error("output directory exists and is not empty (use --force): " + dir);
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

/// Every command drops a manifest beside its outputs. Timestamps and wall
/// time live here and only here; reports stay byte-reproducible.
inline void write_manifest(const std::string& dir, const std::string& command,
                           const nlohmann::json& config_echo, uint64_t seed, double wall_seconds) {
  nlohmann::json j;
  j["command"] = command;
  j["code_version"] = kCodeVersion;
  j["seed"] = seed;
  j["config"] = config_echo;
  j["wall_seconds"] = wall_seconds;
  const auto now = std::chrono::system_clock::now();
  j["timestamp_unix"] = std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
  std::ofstream f(fs::path(dir) / "manifest.json", std::ios::trunc);
  f << j.dump(2) << "\n";
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// -- dataset -----------------------------------------------------------------

inline void cmd_generate_data(const ExperimentConfig& cfg, const std::string& dir, bool force,
                              int workers = 0) {
  cfg.validate();
  Stopwatch watch;
  prepare_output_dir(dir, force);
  if (workers <= 0) workers = default_workers();

  const auto tmpl = make_default_hand_template<float>(cfg.dataset.n_hand_vertices);
  save_hand_template(tmpl, (fs::path(dir) / "hand_template.json").string(),
                     (fs::path(dir) / "hand_template.verts.f32").string());

  const int total = cfg.dataset.n_train + cfg.dataset.n_val + cfg.dataset.n_test;
  parallel_for(total, workers, [&](int id) {
    write_sample(generate_sample(cfg.dataset, tmpl, id), dir);
  });

  DatasetSplits splits;
  for (int id = 0; id < cfg.dataset.n_train; ++id) splits.train.push_back(id);
  for (int id = 0; id < cfg.dataset.n_val; ++id) splits.val.push_back(cfg.dataset.n_train + id);
  for (int id = 0; id < cfg.dataset.n_test; ++id)
    splits.test.push_back(cfg.dataset.n_train + cfg.dataset.n_val + id);
  write_dataset_index(dir, cfg.dataset, splits);
  write_manifest(dir, "generate-data", cfg.to_json(), cfg.dataset.seed, watch.seconds());
}

// -- shared views ---------------------------------------------------------------

/// Posed per-sample data derived once from a dataset.
struct PosedScenes {
  const Dataset* dataset = nullptr;
  std::vector<PointCloud> hands;       // posed hand vertices per sample id
  std::vector<JointFrames> frames;     // FK frames per sample id
  std::vector<TensorF> ref_masks;      // optional, per sample id (may be empty)

  static PosedScenes build(const Dataset& ds, bool with_masks, double sigma_px) {
    PosedScenes out;
    out.dataset = &ds;
    out.hands.resize(ds.samples.size());
    out.frames.resize(ds.samples.size());
    if (with_masks) out.ref_masks.resize(ds.samples.size());
    for (size_t i = 0; i < ds.samples.size(); ++i) {
      const auto& s = ds.samples[i];
      out.frames[i] = forward_kinematics(ds.hand_template, s.pose);
      out.hands[i] = hand_vertices(ds.hand_template, s.pose);
      if (with_masks) {
        PointCloud ref = s.x0;
        ref.recenter(s.centroid);
        out.ref_masks[i] = soft_mask(ref, s.camera, float(sigma_px));
      }
    }
    return out;
  }

  TrainSample<float> view(int id) const {
    const auto& s = dataset->sample(id);
    TrainSample<float> v;
    v.x0 = &s.x0;
    v.centroid = s.centroid;
    v.image = &s.image;
    v.hand = &hands[size_t(id)];
    v.frames = &frames[size_t(id)];
    v.camera = &s.camera;
    if (!ref_masks.empty()) v.ref_mask = &ref_masks[size_t(id)];
    return v;
  }
};

// -- centroid training -----------------------------------------------------------

struct CentroidEvalStats {
  double median_error_m = 0;
  double mean_bbox_diagonal_m = 0;
  int degenerate_projections = 0;
};

inline CentroidEvalStats eval_centroid(const ParamStore<float>& params,
                                       const CentroidNetConfig& ccfg, const Dataset& ds,
                                       const PosedScenes& posed, const std::vector<int>& ids) {
  CentroidEvalStats stats;
  if (ids.empty()) return stats;
  std::vector<double> errs(ids.size());
  double diag = 0;
  for (size_t k = 0; k < ids.size(); ++k) {
    const auto& s = ds.sample(ids[k]);
    const auto pred = predict_centroid(params, ccfg, s.image, posed.hands[size_t(ids[k])]);
    errs[k] = double((pred.m3d - s.centroid).norm());
    diag += s.bbox_diagonal;
  }
  std::nth_element(errs.begin(), errs.begin() + errs.size() / 2, errs.end());
  stats.median_error_m = errs[errs.size() / 2];
  stats.mean_bbox_diagonal_m = diag / double(ids.size());
  return stats;
}

inline CentroidEvalStats cmd_train_centroid(const ExperimentConfig& cfg,
                                            const std::string& dataset_dir,
                                            const std::string& out_dir, bool force,
                                            std::ostream* log = nullptr) {
  cfg.validate();
  Stopwatch watch;
  prepare_output_dir(out_dir, force);
  const Dataset ds = read_dataset(dataset_dir);
  const auto posed = PosedScenes::build(ds, false, cfg.train.sigma_px);
  const auto ccfg = cfg.centroid_config();

  auto params = init_centroid_params<float>(ccfg, cfg.seed ^ 0xC3A7ull);
  AdamOptimizer<float> opt(float(cfg.centroid_train.lr));
  Rng rng(cfg.seed, 29);
  const auto& train_ids = ds.splits.train;
  if (train_ids.empty()) throw std::runtime_error("train-centroid: empty train split");
  const std::vector<int>& holdout = ds.splits.val.empty() ? ds.splits.test : ds.splits.val;

  nlohmann::json history = nlohmann::json::array();
  const int steps_per_epoch = std::max(1, int(train_ids.size()) / cfg.centroid_train.batch);
  int degenerate = 0;
  for (int step = 0; step < cfg.centroid_train.steps; ++step) {
    if (step == int(cfg.centroid_train.steps * 0.8)) opt.set_lr(float(cfg.centroid_train.lr) * 0.3f);
    std::vector<CentroidSample<float>> batch;
    for (int b = 0; b < cfg.centroid_train.batch; ++b) {
      const int id = train_ids[rng.uniform_int(uint32_t(train_ids.size()))];
      const auto& s = ds.sample(id);
      CentroidSample<float> cs;
      cs.image = &s.image;
      cs.hand = &posed.hands[size_t(id)];
      cs.m3d = s.centroid;
      cs.m2d = s.centroid_ndc;
      cs.camera = &s.camera;
      batch.push_back(cs);
    }
    const float loss = centroid_train_step(params, opt, ccfg, batch,
                                           float(cfg.centroid_train.lambda1),
                                           float(cfg.centroid_train.lambda2), &degenerate);
    if ((step + 1) % steps_per_epoch == 0 || step + 1 == cfg.centroid_train.steps) {
      const auto stats = eval_centroid(params, ccfg, ds, posed, holdout);
      history.push_back({{"step", step + 1},
                         {"loss", loss},
                         {"holdout_median_error_m", stats.median_error_m}});
      if (log)
        *log << "centroid step " << step + 1 << " loss " << loss << " holdout median "
             << stats.median_error_m * 1e3 << " mm\n";
    }
  }

  save_checkpoint(params, "centroid", cfg.to_json(),
                  (fs::path(out_dir) / "centroid.ckpt.json").string(),
                  (fs::path(out_dir) / "centroid.ckpt.f32").string());
  {
    nlohmann::json lj;
    lj["history"] = history;
    lj["degenerate_projections"] = degenerate;
    std::ofstream f(fs::path(out_dir) / "training_log.json", std::ios::trunc);
    f << lj.dump(2) << "\n";
  }
  write_manifest(out_dir, "train-centroid", cfg.to_json(), cfg.seed, watch.seconds());
  auto final_stats = eval_centroid(params, ccfg, ds, posed, ds.splits.test);
  final_stats.degenerate_projections = degenerate;
  return final_stats;
}

// -- diffusion training ------------------------------------------------------------

inline void cmd_train_diffusion(const ExperimentConfig& cfg, const std::string& dataset_dir,
                                const std::string& out_dir, bool force,
                                std::ostream* log = nullptr) {
  cfg.validate();
  Stopwatch watch;
  prepare_output_dir(out_dir, force);
  const Dataset ds = read_dataset(dataset_dir);
  const auto posed = PosedScenes::build(ds, cfg.flags.mask_loss, cfg.train.sigma_px);
  const auto dcfg = cfg.denoiser_config();
  const auto sched = cfg.schedule.make();

  auto params = init_denoiser_params<float>(dcfg, cfg.seed ^ 0xD1FFull);
  AdamOptimizer<float> opt(float(cfg.train.lr));
  TrainConfig tc = cfg.train_config();
  Rng rng(cfg.seed, 31);
  const auto& train_ids = ds.splits.train;
  if (train_ids.empty()) throw std::runtime_error("train-diffusion: empty train split");

  nlohmann::json history = nlohmann::json::array();
  double window_loss = 0, window_denoise = 0;
  int window_n = 0;
  for (int step = 0; step < cfg.train.steps; ++step) {
    if (step == int(cfg.train.steps * 0.8)) opt.set_lr(float(cfg.train.lr) * 0.3f);
    std::vector<TrainSample<float>> batch;
    for (int b = 0; b < cfg.train.batch; ++b)
      batch.push_back(posed.view(train_ids[rng.uniform_int(uint32_t(train_ids.size()))]));
    const auto stats = train_step(params, opt, dcfg, batch, sched, tc, rng);
    window_loss += stats.loss;
    window_denoise += stats.denoise;
    ++window_n;
    if ((step + 1) % 1000 == 0 || step + 1 == cfg.train.steps) {
      history.push_back({{"step", step + 1},
                         {"loss", window_loss / window_n},
                         {"denoise", window_denoise / window_n}});
      if (log)
        *log << "diffusion step " << step + 1 << " loss " << window_loss / window_n << "\n";
      window_loss = window_denoise = 0;
      window_n = 0;
    }
  }
  if (!params.all_finite()) throw std::runtime_error("train-diffusion: non-finite parameters");

  save_checkpoint(params, "denoiser", cfg.to_json(),
                  (fs::path(out_dir) / "denoiser.ckpt.json").string(),
                  (fs::path(out_dir) / "denoiser.ckpt.f32").string());
  {
    nlohmann::json lj;
    lj["history"] = history;
    std::ofstream f(fs::path(out_dir) / "training_log.json", std::ios::trunc);
    f << lj.dump(2) << "\n";
  }
  write_manifest(out_dir, "train-diffusion", cfg.to_json(), cfg.seed, watch.seconds());
}

// -- sampling ---------------------------------------------------------------------

inline std::vector<int> split_ids(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.splits.train;
  if (split == "val") return ds.splits.val;
  if (split == "test") return ds.splits.test;
  throw std::invalid_argument("unknown split: " + split);
}

inline std::string prediction_name(int id, int k) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "pred_%06d_k%02d.bin", id, k);
  return buf;
}

/// Reconstruct `k` clouds per sample of the split and write them as float32
/// blobs plus an index. The centroid source and the per-step lock follow the
/// ablation flags.
inline void cmd_sample(const ExperimentConfig& cfg, const std::string& dataset_dir,
                       const std::string& diffusion_ckpt, const std::string& centroid_ckpt,
                       const std::string& split, int k, const std::string& out_dir, bool force,
                       int workers = 0, std::ostream* log = nullptr) {
  cfg.validate();
  Stopwatch watch;
  prepare_output_dir(out_dir, force);
  if (workers <= 0) workers = default_workers();
  const Dataset ds = read_dataset(dataset_dir);
  const auto posed = PosedScenes::build(ds, false, cfg.train.sigma_px);
  const auto dcfg = cfg.denoiser_config();
  const auto sched = cfg.schedule.make();

  const auto params = load_checkpoint<float>(diffusion_ckpt, "denoiser");
  std::optional<ParamStore<float>> centroid_params;
  const auto ccfg = cfg.centroid_config();
  if (cfg.flags.centroid_source == CentroidSource::predicted) {
    if (centroid_ckpt.empty())
      throw std::runtime_error("sample: centroid_source=predicted needs a centroid checkpoint");
    centroid_params = load_checkpoint<float>(centroid_ckpt, "centroid");
  }

  const auto ids = split_ids(ds, split);
  if (ids.empty()) throw std::runtime_error("sample: split '" + split + "' is empty");

  parallel_for(int(ids.size()), workers, [&](int task) {
    const int id = ids[size_t(task)];
    const auto& s = ds.sample(id);
    Vec3<float> m_hat = Vec3<float>::Zero();
    switch (cfg.flags.centroid_source) {
      case CentroidSource::predicted:
        m_hat = predict_centroid(*centroid_params, ccfg, s.image, posed.hands[size_t(id)]).m3d;
        break;
      case CentroidSource::ground_truth:
        m_hat = s.centroid;
        break;
      case CentroidSource::none:
        break;  // reverse chain starts at the wrist origin
    }
    const TensorF fmap = cfg.flags.semantic ? encode_image_infer(params, dcfg, s.image) : TensorF();
    const auto fn = make_denoiser_fn(params, dcfg, cfg.flags, fmap, posed.hands[size_t(id)],
                                     posed.frames[size_t(id)], s.camera);
    SampleOptions<float> opt;
    opt.centroid_lock = cfg.flags.centroid_fixing;
    const float scale = float(dcfg.coord_scale);
    const Vec3<float> m_hat_scaled = m_hat / scale;
    for (int rep = 0; rep < k; ++rep) {
      Rng rng = Rng(cfg.seed, 23).split(uint64_t(id) * 1024 + uint64_t(rep));
      PointCloud cloud = sample<float>(fn, m_hat_scaled, sched, cfg.dataset.n_points, rng, opt);
      for (auto& v : cloud.points.data) v *= scale;  // back to meters
      std::ofstream f(fs::path(out_dir) / prediction_name(id, rep), std::ios::binary);
      f.write(reinterpret_cast<const char*>(cloud.points.data.data()),
              std::streamsize(cloud.points.data.size() * sizeof(float)));
    }
    if (log && task % 32 == 0) *log << "sampled " << task << "/" << ids.size() << "\n";
  });

  nlohmann::json j;
  j["split"] = split;
  j["k"] = k;
  j["ids"] = ids;
  j["n_points"] = cfg.dataset.n_points;
  j["diffusion_checkpoint"] = diffusion_ckpt;
  j["centroid_checkpoint"] = centroid_ckpt;
  j["flags"] = cfg.to_json()["flags"];
  std::ofstream f(fs::path(out_dir) / "predictions.json", std::ios::trunc);
  f << j.dump(2) << "\n";
  write_manifest(out_dir, "sample", cfg.to_json(), cfg.seed, watch.seconds());
}

// -- evaluation --------------------------------------------------------------------

struct EvaluationOutput {
  EvalReport plain;
  std::optional<EvalReport> oracle;
};

inline PointCloud read_prediction(const std::string& dir, int id, int rep, int n_points) {
  const std::string path = (fs::path(dir) / prediction_name(id, rep)).string();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("evaluate: missing prediction " + path);
  PointCloud pc = PointCloud::zeros(n_points);
  f.read(reinterpret_cast<char*>(pc.points.data.data()),
         std::streamsize(pc.points.data.size() * sizeof(float)));
  if (f.gcount() != std::streamsize(pc.points.data.size() * sizeof(float)))
    throw std::runtime_error("evaluate: truncated prediction " + path);
  return pc;
}

inline EvaluationOutput cmd_evaluate(const ExperimentConfig& cfg, const std::string& dataset_dir,
                                     const std::string& predictions_dir,
                                     const std::string& out_dir, bool force, int workers = 0) {
  cfg.validate();
  Stopwatch watch;
  prepare_output_dir(out_dir, force);
  if (workers <= 0) workers = default_workers();
  const Dataset ds = read_dataset(dataset_dir);

  nlohmann::json pj;
  {
    std::ifstream f(fs::path(predictions_dir) / "predictions.json");
    if (!f) throw std::runtime_error("evaluate: missing predictions.json in " + predictions_dir);
    f >> pj;
  }
  const auto ids = pj.at("ids").get<std::vector<int>>();
  const int k = pj.at("k");
  const int n_points = pj.at("n_points");

  std::vector<SampleMetrics> plain(ids.size());
  std::vector<SampleMetrics> oracle(ids.size());
  parallel_for(int(ids.size()), workers, [&](int task) {
    const int id = ids[size_t(task)];
    const auto& s = ds.sample(id);
    std::vector<PointCloud> preds;
    for (int rep = 0; rep < k; ++rep)
      preds.push_back(read_prediction(predictions_dir, id, rep, n_points));
    plain[size_t(task)] = evaluate_sample(id, preds[0], s.x0, double(s.visibility));
    if (k > 1) oracle[size_t(task)] = oracle_select(id, preds, s.x0, double(s.visibility));
  });

  EvaluationOutput out;
  out.plain = EvalReport::from_samples(plain);
  {
    std::ofstream f(fs::path(out_dir) / "report.json", std::ios::trunc);
    f << out.plain.to_json().dump(2) << "\n";
    std::ofstream c(fs::path(out_dir) / "report.csv", std::ios::trunc);
    c << out.plain.to_csv();
  }
  if (k > 1) {
    EvalReport orep = EvalReport::from_samples(oracle);
    orep.oracle_k = k;
    out.oracle = orep;
    std::ofstream f(fs::path(out_dir) / "oracle_report.json", std::ios::trunc);
    f << orep.to_json().dump(2) << "\n";
    std::ofstream c(fs::path(out_dir) / "oracle_report.csv", std::ios::trunc);
    c << orep.to_csv();
  }
  write_manifest(out_dir, "evaluate", cfg.to_json(), cfg.seed, watch.seconds());
  return out;
}

// -- ablation grid -------------------------------------------------------------------

struct AblationCell {
  std::string row;
  uint64_t seed = 0;
  double f5 = 0, f10 = 0, cd = 0;
};

struct AblationResult {
  std::vector<AblationCell> cells;
  std::map<std::string, std::array<double, 3>> row_means;  // row -> {f5, f10, cd}
  nlohmann::json trends;
};

/// Training-relevant key: rows differing only in sampling-time flags share a
/// trained model (E1 reuses D0's training, F0 reuses E0's).
inline std::string training_key(const AblationFlags& f, uint64_t seed) {
  nlohmann::json j = {{"fixing", f.centroid_fixing}, {"semantic", f.semantic},
                      {"geometric", f.geometric},   {"dual", f.dual_stream},
                      {"mask", f.mask_loss},        {"seed", seed}};
  return j.dump();
}

inline AblationResult cmd_ablation(const ExperimentConfig& base,
                                   const std::vector<std::string>& rows, int n_seeds,
                                   const std::string& dataset_dir, const std::string& out_dir,
                                   bool force, int workers = 0, std::ostream* log = nullptr) {
  base.validate();
  Stopwatch watch;
  prepare_output_dir(out_dir, force);
  if (workers <= 0) workers = default_workers();

  if (!fs::exists(fs::path(dataset_dir) / "index.json")) {
    if (log) *log << "generating dataset at " << dataset_dir << "\n";
    cmd_generate_data(base, dataset_dir, /*force=*/true, workers);
  }

  // Unique training recipes across (row, seed), then shared checkpoints.
  struct TrainTask {
    ExperimentConfig cfg;
    std::string dir;
  };
  std::map<std::string, TrainTask> trainings;
  bool need_centroid = false;
  std::vector<std::pair<std::string, uint64_t>> grid;
  for (int si = 0; si < n_seeds; ++si) {
    const uint64_t seed = base.seed + uint64_t(si);
    for (const auto& row : rows) {
      grid.emplace_back(row, seed);
      ExperimentConfig cfg = base.with_row(row);
      cfg.seed = seed;
      if (cfg.flags.centroid_source == CentroidSource::predicted) need_centroid = true;
      const std::string key = training_key(cfg.flags, seed);
      if (!trainings.count(key)) {
        char name[64];
        std::snprintf(name, sizeof(name), "train_%s_s%d", row.c_str(), si);
        trainings[key] = {cfg, (fs::path(out_dir) / name).string()};
      }
    }
  }

  // Centroid networks, one per seed.
  std::map<uint64_t, std::string> centroid_ckpts;
  if (need_centroid) {
    std::vector<uint64_t> seeds;
    for (int si = 0; si < n_seeds; ++si) seeds.push_back(base.seed + uint64_t(si));
    parallel_for(int(seeds.size()), workers, [&](int i) {
      ExperimentConfig cfg = base;
      cfg.seed = seeds[size_t(i)];
      const std::string dir = (fs::path(out_dir) / ("centroid_s" + std::to_string(i))).string();
      cmd_train_centroid(cfg, dataset_dir, dir, true);
    });
    for (int si = 0; si < n_seeds; ++si)
      centroid_ckpts[base.seed + uint64_t(si)] =
          (fs::path(out_dir) / ("centroid_s" + std::to_string(si)) / "centroid.ckpt.json").string();
  }

  // Train the unique recipes in parallel (each is single-threaded).
  std::vector<TrainTask*> tasks;
  for (auto& [_, t] : trainings) tasks.push_back(&t);
  parallel_for(int(tasks.size()), workers, [&](int i) {
    if (log) *log << "training " << tasks[size_t(i)]->dir << "\n";
    cmd_train_diffusion(tasks[size_t(i)]->cfg, dataset_dir, tasks[size_t(i)]->dir, true);
  });

  // Sample and evaluate every grid cell.
  AblationResult result;
  result.cells.resize(grid.size());
  parallel_for(int(grid.size()), workers, [&](int gi) {
    const auto& [row, seed] = grid[size_t(gi)];
    ExperimentConfig cfg = base.with_row(row);
    cfg.seed = seed;
    const std::string key = training_key(cfg.flags, seed);
    const std::string ckpt =
        (fs::path(trainings.at(key).dir) / "denoiser.ckpt.json").string();
    const std::string cckpt = cfg.flags.centroid_source == CentroidSource::predicted
                                  ? centroid_ckpts.at(seed)
                                  : std::string();
    char cell[64];
    std::snprintf(cell, sizeof(cell), "cell_%s_s%llu", row.c_str(),
                  (unsigned long long)(seed - base.seed));
    const std::string sdir = (fs::path(out_dir) / (std::string(cell) + "_pred")).string();
    const std::string edir = (fs::path(out_dir) / (std::string(cell) + "_eval")).string();
    cmd_sample(cfg, dataset_dir, ckpt, cckpt, "test", 1, sdir, true, 1);
    const auto eval = cmd_evaluate(cfg, dataset_dir, sdir, edir, true, 1);
    result.cells[size_t(gi)] = {row, seed, eval.plain.mean_f5, eval.plain.mean_f10,
                                eval.plain.mean_cd};
    if (log)
      *log << "cell " << row << " seed " << seed << ": f5 " << eval.plain.mean_f5 << " f10 "
           << eval.plain.mean_f10 << " cd " << eval.plain.mean_cd << "\n";
  });

  for (const auto& row : rows) {
    std::array<double, 3> acc = {0, 0, 0};
    int n = 0;
    for (const auto& c : result.cells)
      if (c.row == row) {
        acc[0] += c.f5;
        acc[1] += c.f10;
        acc[2] += c.cd;
        ++n;
      }
    for (auto& v : acc) v /= std::max(1, n);
    result.row_means[row] = acc;
  }

  auto mean = [&](const std::string& row, int what) -> std::optional<double> {
    auto it = result.row_means.find(row);
    if (it == result.row_means.end()) return std::nullopt;
    return it->second[size_t(what)];
  };
  nlohmann::json trends;
  if (mean("D0", 1) && mean("E0", 1))
    trends["centroid_fixing_helps"] = *mean("D0", 1) >= *mean("E0", 1);
  if (mean("D0", 1) && mean("E1", 1)) {
    trends["predicted_centroid_helps"] = *mean("D0", 1) >= *mean("E1", 1);
    double worst_cd = 0;
    for (const auto& [row, m] : result.row_means) worst_cd = std::max(worst_cd, m[2]);
    trends["no_centroid_has_worst_cd"] = *mean("E1", 2) >= worst_cd;
  }
  if (mean("C0", 1) && mean("D1", 1) && mean("D2", 1) && mean("D0", 1)) {
    trends["semantic_helps"] = *mean("C0", 1) > *mean("D1", 1);
    trends["geometric_helps"] = *mean("C0", 1) > *mean("D2", 1);
    trends["each_embedding_beats_none"] =
        *mean("D1", 1) > *mean("D0", 1) && *mean("D2", 1) > *mean("D0", 1);
  }
  if (mean("B0", 1) && mean("C0", 1))
    trends["dual_stream_helps"] = *mean("B0", 1) >= *mean("C0", 1);
  if (mean("A0", 1) && mean("B0", 1))
    trends["mask_loss_helps"] = *mean("A0", 1) >= *mean("B0", 1);
  result.trends = trends;

  nlohmann::json rj;
  rj["format_version"] = kReportFormatVersion;
  rj["rows"] = rows;
  rj["n_seeds"] = n_seeds;
  for (const auto& c : result.cells)
    rj["cells"].push_back({{"row", c.row},
                           {"seed", c.seed},
                           {"f5", c.f5},
                           {"f10", c.f10},
                           {"cd_mm2", c.cd}});
  for (const auto& [row, m] : result.row_means)
    rj["row_means"][row] = {{"f5", m[0]}, {"f10", m[1]}, {"cd_mm2", m[2]}};
  rj["trends"] = trends;
  {
    std::ofstream f(fs::path(out_dir) / "ablation_report.json", std::ios::trunc);
    f << rj.dump(2) << "\n";
    std::ofstream c(fs::path(out_dir) / "ablation_report.csv", std::ios::trunc);
    c << "row,seed,f5,f10,cd_mm2\n";
    for (const auto& cell : result.cells)
      c << cell.row << "," << cell.seed << "," << cell.f5 << "," << cell.f10 << "," << cell.cd
        << "\n";
  }
  write_manifest(out_dir, "ablation", base.to_json(), base.seed, watch.seconds());
  return result;
}

}  // namespace hodiff
