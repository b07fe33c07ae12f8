#pragma once

// Optimization loop and inference entry points: AdamW over the parameter
// registry, per-sample gradient accumulation (no padding), JSON-line loss
// logging, best-by-val-mAP + last checkpointing, dataset evaluation, and
// single-pair prediction dumps.

#include <cstdint>
#include <map>
#include <ostream>
#include <string>

#include "egosag/checkpoint.hpp"
#include "egosag/config.hpp"
#include "egosag/dataset.hpp"
#include "egosag/metrics.hpp"
#include "egosag/model.hpp"

namespace egosag {

// Decoupled-weight-decay adaptive-moment optimizer with bias-corrected
// moments; operates on every parameter in the registry.
class AdamW {
 public:
  AdamW(ParamRegistry& reg, const OptimConfig& cfg);

  // Applies one update from the accumulated gradients (does not zero them).
  void step();
  std::uint64_t steps_done() const { return t_; }

  // Multiplier on the configured rate for the next update(s); the training
  // loop drives this from lr_schedule_scale each step.
  void set_lr_scale(double scale) { lr_scale_ = scale; }

  // Moments travel inside checkpoints under "opt.m:<param>" / "opt.v:<param>".
  void export_state(Checkpoint& ckpt) const;
  void import_state(const Checkpoint& ckpt);

 private:
  ParamRegistry* reg_;
  OptimConfig cfg_;
  std::map<std::string, ad::Mat> m_, v_;
  std::uint64_t t_ = 0;
  double lr_scale_ = 1.0;
};

// Rate multiplier for optimization step `step` (1-based) out of `budget`:
// linear ramp over warmup_steps, then flat ("constant") or half-cosine
// decay toward zero ("cosine").
double lr_schedule_scale(const OptimConfig& cfg, int step, int budget);

// Rescales all gradients so their global norm is at most max_norm (> 0);
// returns the pre-clip norm.
double clip_gradients(ParamRegistry& reg, double max_norm);

struct EvalOutcome {
  MetricsReport report;
  double clip_accuracy = 0.0;  // argmax class vs clip label, over samples
};

// Forward + filter every pair at threshold tau, then score against the
// ground-truth regions.
EvalOutcome run_eval(const EgoSagModel& model, const PairedDataset& data,
                     double tau);

struct TrainOutputs {
  std::string last_checkpoint;
  std::string best_checkpoint;
  std::string log_path;
  std::string resolved_config_path;
  int steps = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  bool has_val = false;
  double best_val_map = -1.0;
  MetricsReport train_metrics;
  double train_clip_accuracy = 0.0;
  MetricsReport val_metrics;
  double val_clip_accuracy = 0.0;
};

// Full training run per the config: writes output_dir/{config_resolved.json,
// train_log.jsonl, last.egcp, best.egcp}. `echo` mirrors log lines (CLI
// stdout). Throws NumericalError naming the batch's clip ids when the loss
// stops being finite.
TrainOutputs train_model(const RunConfig& cfg, std::ostream* echo = nullptr);

// Loads a checkpoint (architecture hash enforced) and evaluates a manifest.
EvalOutcome evaluate_checkpoint(const RunConfig& cfg,
                                const std::string& checkpoint_path,
                                const std::string& manifest_path);

// Single-pair inference for the predict workflow.
FinalPrediction predict_pair(const EgoSagModel& model, const ScenePack& pack,
                             const ClipFeatures& clip, double tau);

// Per-scene dump: {"scene_id", "clip_id", "affordance_id", "instances":
// [{"score", "point_indices"}, ...]}.
std::string prediction_to_json(const FinalPrediction& pred,
                               const std::string& scene_id,
                               const std::string& clip_id);
FinalPrediction prediction_from_json(const std::string& text,
                                     Eigen::Index n_points);

// Canonical dump filename for one pair inside a predictions directory.
std::string prediction_filename(const std::string& clip_id,
                                const std::string& scene_id);

// Scores externally produced dumps (one file per manifest pair, named by
// prediction_filename) against the manifest's ground truth — the fixture
// path: feeding the ground truth back as predictions must give 100s.
EvalOutcome evaluate_predictions_dir(const ModelConfig& model_cfg,
                                     const std::string& manifest_path,
                                     const std::string& predictions_dir);

// Copy of the scene with every predicted point recolored red.
PointCloudScene recolor_predictions(const PointCloudScene& scene,
                                    const FinalPrediction& pred);

}  // namespace egosag
