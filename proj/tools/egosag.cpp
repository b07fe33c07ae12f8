// Command-line entry point: train / eval / predict / synth-data subcommands
// over the egosag core library.
//
// Exit codes: 0 success, 2 configuration problem, 3 data problem,
// 4 numerical failure, 1 anything else.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "egosag/checkpoint.hpp"
#include "egosag/config.hpp"
#include "egosag/errors.hpp"
#include "egosag/io.hpp"
#include "egosag/metrics.hpp"
#include "egosag/synth.hpp"
#include "egosag/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Shared flags: every model-facing subcommand starts from a config file (or
// the built-in defaults) and may override a handful of fields from the
// command line.
struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string output_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path,
                  "JSON run configuration (defaults used when omitted)");
  cmd->add_option("--seed", opts.seed, "Override optim.seed");
  cmd->add_flag("--deterministic", opts.deterministic,
                "Force the deterministic execution path");
  cmd->add_option("--output", opts.output_dir, "Override the output directory");
}

egosag::RunConfig make_config(const CommonOpts& opts) {
  std::string text = "{}";
  if (!opts.config_path.empty()) {
    text = egosag::io::read_file_bytes(opts.config_path);
  }
  egosag::RunConfig cfg = egosag::run_config_from_json(text);
  if (opts.seed) cfg.optim.seed = *opts.seed;
  if (opts.deterministic) cfg.optim.deterministic = true;
  if (!opts.output_dir.empty()) cfg.output_dir = opts.output_dir;
  egosag::validate_run_config(cfg);
  return cfg;
}

void print_metrics(std::ostream& os, const std::string& label,
                   const egosag::MetricsReport& report, double clip_accuracy) {
  os << label << "\n"
     << egosag::metrics_to_table(report)
     << "clip classification accuracy: " << clip_accuracy * 100.0 << "%\n";
}

int cmd_train(const CommonOpts& opts) {
  egosag::RunConfig cfg = make_config(opts);
  egosag::TrainOutputs out = egosag::train_model(cfg, &std::cout);
  std::cout << "\ntraining finished after " << out.steps << " steps (loss "
            << out.first_loss << " -> " << out.final_loss << ")\n";
  print_metrics(std::cout, "train split:", out.train_metrics,
                out.train_clip_accuracy);
  if (out.has_val) {
    print_metrics(std::cout, "val split:", out.val_metrics,
                  out.val_clip_accuracy);
  }
  std::cout << "last checkpoint: " << out.last_checkpoint << "\n"
            << "best checkpoint: " << out.best_checkpoint << "\n"
            << "loss log:        " << out.log_path << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint_path,
             const std::string& manifest_path,
             const std::string& predictions_dir) {
  egosag::RunConfig cfg = make_config(opts);
  std::string manifest = manifest_path;
  if (manifest.empty()) manifest = cfg.data.val_manifest;
  if (manifest.empty()) manifest = cfg.data.manifest;
  if (manifest.empty()) {
    throw egosag::ConfigError(
        "eval: no manifest given (--manifest, data.val_manifest, or "
        "data.manifest)");
  }

  egosag::EvalOutcome outcome;
  if (!predictions_dir.empty()) {
    outcome = egosag::evaluate_predictions_dir(cfg.model, manifest,
                                               predictions_dir);
  } else {
    if (checkpoint_path.empty()) {
      throw egosag::ConfigError(
          "eval: --checkpoint is required unless --predictions is given");
    }
    outcome = egosag::evaluate_checkpoint(cfg, checkpoint_path, manifest);
  }

  json report = json::parse(egosag::metrics_to_json(outcome.report));
  report["clip_accuracy"] = outcome.clip_accuracy * 100.0;
  std::cout << report.dump(2) << "\n";
  print_metrics(std::cout, "summary:", outcome.report, outcome.clip_accuracy);

  fs::create_directories(cfg.output_dir);
  egosag::io::write_file_bytes(cfg.output_dir + "/report.json",
                               report.dump(2) + "\n");
  egosag::save_resolved_config(cfg, cfg.output_dir + "/config_resolved.json");
  std::cout << "report written to " << cfg.output_dir << "/report.json\n";
  return 0;
}

int cmd_predict(const CommonOpts& opts, const std::string& checkpoint_path,
                const std::string& scene_path, const std::string& sidecar_path,
                const std::string& clip_path, double tau, bool export_ply) {
  egosag::RunConfig cfg = make_config(opts);
  if (std::isnan(tau)) tau = cfg.loss.tau;

  egosag::PointCloudScene scene = egosag::io::load_scene_ply(scene_path);
  scene.scene_id = fs::path(scene_path).stem().string();
  if (!sidecar_path.empty()) {
    egosag::io::load_scene_sidecar(scene, sidecar_path);
  }
  const std::string scene_id = scene.scene_id;

  egosag::ParamRegistry reg(cfg.optim.seed);
  egosag::EgoSagModel model(reg, cfg.model);
  egosag::Checkpoint ckpt = egosag::load_checkpoint(
      checkpoint_path, egosag::config_hash(cfg));
  egosag::restore_params(reg, ckpt);

  egosag::ClipFeatures clip;
  const std::string ext = fs::path(clip_path).extension().string();
  std::string clip_id = fs::path(clip_path).stem().string();
  if (ext == ".egsc") {
    egosag::ClipBlock block = egosag::io::load_clip_block(clip_path);
    clip = model.encode_clip(block, -1, clip_id);
  } else if (ext == ".egsf") {
    egosag::io::ClipTokenRecord rec =
        egosag::io::load_clip_tokens(clip_path, clip_path + ".json");
    clip = egosag::ClipEncoder::from_tokens(rec.tokens, rec.affordance_id,
                                            rec.clip_id);
    clip_id = rec.clip_id;
  } else {
    throw egosag::ConfigError("predict: clip must be a .egsc or .egsf file, got \"" +
                              clip_path + "\"");
  }

  const egosag::ScenePack pack = egosag::build_scene_pack(scene, cfg.model);
  egosag::FinalPrediction pred = egosag::predict_pair(model, pack, clip, tau);
  const std::string dump =
      egosag::prediction_to_json(pred, scene_id, clip_id);

  fs::create_directories(cfg.output_dir);
  const std::string out_path =
      cfg.output_dir + "/" + egosag::prediction_filename(clip_id, scene_id);
  egosag::io::write_file_bytes(out_path, dump);
  std::cout << dump;
  std::cerr << "prediction written to " << out_path << "\n";

  if (export_ply) {
    egosag::PointCloudScene colored =
        egosag::recolor_predictions(scene, pred);
    const std::string ply_path = cfg.output_dir + "/" + clip_id + "__" +
                                 scene_id + ".ply";
    egosag::io::save_scene_ply(colored, ply_path);
    std::cerr << "highlighted cloud written to " << ply_path << "\n";
  }
  return 0;
}

int cmd_synth(const std::string& config_path, const std::string& output_dir,
              std::optional<std::uint64_t> seed, std::optional<int> scenes,
              std::optional<int> clips, bool tiny_preset) {
  egosag::synth::SynthConfig cfg;  // defaults are the tiny preset
  if (!config_path.empty()) {
    cfg = egosag::synth::load_synth_config(config_path);
  }
  (void)tiny_preset;  // accepted for symmetry; defaults already match
  if (seed) cfg.rng_seed = *seed;
  if (scenes) cfg.n_scenes = *scenes;
  if (clips) cfg.n_clips = *clips;
  egosag::synth::validate_synth_config(cfg);

  egosag::synth::GeneratedDataset out =
      egosag::synth::generate_dataset(cfg, output_dir);
  egosag::io::write_file_bytes(output_dir + "/synth_config.json",
                               egosag::synth::synth_config_to_json(cfg));
  std::cout << "wrote " << cfg.n_scenes << " scenes / " << cfg.n_clips
            << " clips under " << out.root << "\n"
            << "train manifest: " << out.train_manifest << " ("
            << out.n_train_pairs << " pairs)\n"
            << "val manifest:   " << out.val_manifest << " (" << out.n_val_pairs
            << " pairs)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene affordance grounding from egocentric interaction clips"};
  app.require_subcommand(1);

  CommonOpts train_opts;
  CLI::App* train = app.add_subcommand("train", "Optimize a model on a paired dataset");
  add_common(train, train_opts);

  CommonOpts eval_opts;
  std::string eval_checkpoint, eval_manifest, eval_predictions;
  CLI::App* eval = app.add_subcommand("eval", "Score a checkpoint or a directory of prediction dumps");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint to evaluate");
  eval->add_option("--manifest", eval_manifest,
                   "Dataset manifest (default: data.val_manifest, then data.manifest)");
  eval->add_option("--predictions", eval_predictions,
                   "Directory of prediction dumps to score instead of running the model");

  CommonOpts pred_opts;
  std::string pred_checkpoint, pred_scene, pred_sidecar, pred_clip;
  double pred_tau = std::numeric_limits<double>::quiet_NaN();
  bool pred_export_ply = false;
  CLI::App* predict = app.add_subcommand("predict", "Ground one clip in one scene");
  add_common(predict, pred_opts);
  predict->add_option("--checkpoint", pred_checkpoint, "Trained checkpoint")->required();
  predict->add_option("--scene", pred_scene, "Scene point cloud (.ply)")->required();
  predict->add_option("--sidecar", pred_sidecar, "Optional scene region sidecar (.json)");
  predict->add_option("--clip", pred_clip, "Interaction clip (.egsc) or token dump (.egsf)")->required();
  predict->add_option("--tau", pred_tau, "Score threshold (default: loss.tau from the config)");
  predict->add_flag("--export-ply", pred_export_ply, "Also write a highlight-colored copy of the scene");

  std::string synth_config, synth_output;
  std::optional<std::uint64_t> synth_seed;
  std::optional<int> synth_scenes, synth_clips;
  bool synth_tiny = false;
  CLI::App* synth = app.add_subcommand("synth-data", "Generate a synthetic paired dataset");
  synth->add_option("--config", synth_config, "Generator configuration (JSON)");
  synth->add_option("--output", synth_output, "Dataset root directory")->required();
  synth->add_option("--seed", synth_seed, "Override the generator seed");
  synth->add_option("--scenes", synth_scenes, "Override the scene count");
  synth->add_option("--clips", synth_clips, "Override the clip count");
  synth->add_flag("--preset-tiny", synth_tiny, "Use the built-in tiny preset (the default)");

  try {
    app.parse(argc, argv);
    if (*train) return cmd_train(train_opts);
    if (*eval) {
      return cmd_eval(eval_opts, eval_checkpoint, eval_manifest,
                      eval_predictions);
    }
    if (*predict) {
      return cmd_predict(pred_opts, pred_checkpoint, pred_scene, pred_sidecar,
                         pred_clip, pred_tau, pred_export_ply);
    }
    if (*synth) {
      return cmd_synth(synth_config, synth_output, synth_seed, synth_scenes,
                       synth_clips, synth_tiny);
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const egosag::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const egosag::ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const egosag::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const egosag::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const egosag::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
