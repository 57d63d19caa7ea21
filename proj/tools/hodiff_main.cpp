// Command-line front end: wires dataset generation, the two trainings,
// sampling, evaluation, the ablation grid and the mesh export into
// reproducible runs. Every command writes a manifest beside its outputs and
// fails with machine-readable JSON on stderr.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "hodiff/mesh_export.hpp"
#include "hodiff/pipeline.hpp"

using namespace hodiff;

namespace {

/// Relative output paths are resolved against HODIFF_OUTPUT_ROOT when set.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("HODIFF_OUTPUT_ROOT");
  if (!root || path.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(root) / path).string();
}

void emit_error(const std::string& type, const std::string& message) {
  nlohmann::json j;
  j["error"] = {{"type", type}, {"message", message}};
  std::cerr << j.dump() << std::endl;
}

struct CommonOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> row;
  bool force = false;
  int workers = 0;

  ExperimentConfig load() const {
    ExperimentConfig cfg = ExperimentConfig::load(config_path);
    if (row) cfg = cfg.with_row(*row);  // flag overrides config
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "experiment config JSON")->required();
  cmd->add_option("--seed", opts.seed, "override config seed");
  cmd->add_option("--row", opts.row, "apply an ablation row (A0,B0,C0,D0,D1,D2,E0,E1,F0)");
  cmd->add_flag("--force", opts.force, "overwrite existing outputs");
  cmd->add_option("--workers", opts.workers, "worker threads (default: hardware)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hand-held object reconstruction via centroid-fixed point cloud diffusion"};
  app.require_subcommand(1);

  CommonOpts gen_opts;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate-data", "procedurally build a dataset");
  add_common(gen, gen_opts);
  gen->add_option("--out", gen_out, "dataset directory")->required();

  CommonOpts tc_opts;
  std::string tc_data, tc_out;
  auto* tc = app.add_subcommand("train-centroid", "train the centroid prediction network");
  add_common(tc, tc_opts);
  tc->add_option("--dataset", tc_data, "dataset directory")->required();
  tc->add_option("--out", tc_out, "checkpoint directory")->required();

  CommonOpts td_opts;
  std::string td_data, td_out;
  auto* td = app.add_subcommand("train-diffusion", "train the conditional denoiser");
  add_common(td, td_opts);
  td->add_option("--dataset", td_data, "dataset directory")->required();
  td->add_option("--out", td_out, "checkpoint directory")->required();

  CommonOpts sm_opts;
  std::string sm_data, sm_ckpt, sm_cckpt, sm_split = "test", sm_out;
  int sm_k = 0;
  auto* sm = app.add_subcommand("sample", "reconstruct point clouds for a split");
  add_common(sm, sm_opts);
  sm->add_option("--dataset", sm_data, "dataset directory")->required();
  sm->add_option("--checkpoint", sm_ckpt, "denoiser checkpoint JSON")->required();
  sm->add_option("--centroid-checkpoint", sm_cckpt, "centroid checkpoint JSON");
  sm->add_option("--split", sm_split, "train|val|test");
  sm->add_option("--k", sm_k, "reconstructions per sample (default: config sample.k)");
  sm->add_option("--out", sm_out, "prediction directory")->required();

  CommonOpts ev_opts;
  std::string ev_data, ev_pred, ev_out;
  auto* ev = app.add_subcommand("evaluate", "score predictions against ground truth");
  add_common(ev, ev_opts);
  ev->add_option("--dataset", ev_data, "dataset directory")->required();
  ev->add_option("--predictions", ev_pred, "prediction directory")->required();
  ev->add_option("--out", ev_out, "report directory")->required();

  CommonOpts ab_opts;
  std::string ab_data, ab_out;
  std::vector<std::string> ab_rows = {"A0", "B0", "C0", "D0", "D1", "D2", "E0", "E1", "F0"};
  int ab_seeds = 3;
  auto* ab = app.add_subcommand("ablation", "run the row grid end to end");
  add_common(ab, ab_opts);
  ab->add_option("--dataset", ab_data, "dataset directory (generated when missing)")->required();
  ab->add_option("--out", ab_out, "grid output directory")->required();
  ab->add_option("--rows", ab_rows, "rows to run");
  ab->add_option("--seeds", ab_seeds, "seeds per row");

  CommonOpts mx_opts;
  std::string mx_pred, mx_out;
  int mx_id = 0, mx_rep = 0;
  double mx_radius = 0.004;
  auto* mx = app.add_subcommand("export-mesh", "splat-mesh OBJ export of a prediction");
  add_common(mx, mx_opts);
  mx->add_option("--predictions", mx_pred, "prediction directory")->required();
  mx->add_option("--id", mx_id, "sample id")->required();
  mx->add_option("--rep", mx_rep, "which of the k reconstructions");
  mx->add_option("--radius", mx_radius, "splat radius in meters");
  mx->add_option("--out", mx_out, "output OBJ path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      cmd_generate_data(gen_opts.load(), resolve_out(gen_out), gen_opts.force, gen_opts.workers);
    } else if (*tc) {
      const auto stats = cmd_train_centroid(tc_opts.load(), tc_data, resolve_out(tc_out),
                                            tc_opts.force, &std::cout);
      std::cout << "test median centroid error: " << stats.median_error_m * 1e3 << " mm\n";
    } else if (*td) {
      cmd_train_diffusion(td_opts.load(), td_data, resolve_out(td_out), td_opts.force,
                          &std::cout);
    } else if (*sm) {
      auto cfg = sm_opts.load();
      const int k = sm_k > 0 ? sm_k : cfg.sample_k;
      cmd_sample(cfg, sm_data, sm_ckpt, sm_cckpt, sm_split, k, resolve_out(sm_out), sm_opts.force,
                 sm_opts.workers, &std::cout);
    } else if (*ev) {
      const auto out = cmd_evaluate(ev_opts.load(), ev_data, ev_pred, resolve_out(ev_out),
                                    ev_opts.force, ev_opts.workers);
      std::cout << "f5 " << out.plain.mean_f5 << " f10 " << out.plain.mean_f10 << " cd "
                << out.plain.mean_cd << " mm^2\n";
      if (out.oracle)
        std::cout << "oracle f5 " << out.oracle->mean_f5 << " f10 " << out.oracle->mean_f10
                  << "\n";
    } else if (*ab) {
      const auto res = cmd_ablation(ab_opts.load(), ab_rows, ab_seeds, ab_data,
                                    resolve_out(ab_out), ab_opts.force, ab_opts.workers,
                                    &std::cout);
      std::cout << res.trends.dump(2) << "\n";
    } else if (*mx) {
      nlohmann::json pj;
      std::ifstream f(std::filesystem::path(mx_pred) / "predictions.json");
      if (!f) throw std::runtime_error("missing predictions.json in " + mx_pred);
      f >> pj;
      const auto cloud = read_prediction(mx_pred, mx_id, mx_rep, pj.at("n_points"));
      export_splat_mesh(cloud, resolve_out(mx_out), float(mx_radius));
    }
  } catch (const std::invalid_argument& e) {
    emit_error("config_error", e.what());
    return 2;
  } catch (const std::exception& e) {
    emit_error("runtime_error", e.what());
    return 1;
  }
  return 0;
}
