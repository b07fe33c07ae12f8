#pragma once

// Declarative run configuration: a typed tree with paper-default values,
// strict JSON loading (unknown keys rejected with their full path),
// environment-variable overrides (EGOSAG_SECTION__KEY), a stable hash of the
// architecture section for checkpoint compatibility, and resolved snapshots.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "egosag/losses.hpp"

namespace egosag {

struct ModelConfig {
  int channels = 512;        // shared embedding width C
  int queries = 50;          // instance queries Q
  int decoder_layers = 6;    // bilateral decoder depth L
  int heads = 8;             // decoder attention heads
  std::vector<int> level_widths = {32, 64, 128, 256, 512};  // U-Net schedule
  double voxel_size = 0.05;  // meters
  int superpoint_count = 64; // target regions per scene
  int n_classes = 17;
  int frames = 16;           // clip temporal resample length
  std::vector<int> clip_widths = {64, 128, 256};
  std::vector<std::array<int, 3>> clip_strides = {
      {2, 4, 4}, {2, 4, 4}, {1, 2, 2}};
  int isa_n_c = 64;          // intent-attention subregion count
  int isa_k = 16;            // neighbors per subregion
  int isa_heads = 4;
  double isa_r = -1.0;       // grouping radius; < 0 scales with level size
  bool with_isa = true;          // ablation: drop intent attention
  bool fused_decoder = false;    // ablation: single cross-attention fusion
  bool per_layer_supervision = true;  // ablation: losses on final layer only
};

struct LossConfig {
  double lambda_ce = 1.0;
  double lambda_mask = 0.5;
  double lambda_kl = 0.5;
  double lambda_con = 0.5;
  double zeta_bce = 2.0;
  double zeta_dice = 5.0;
  std::string dice_variant = "literal";  // or "standard"
  double tau = 0.5;  // inference score threshold
  double iou_threshold = 0.5;
  double binarize_threshold = 0.5;
};

struct OptimConfig {
  std::string algorithm = "adamw";
  double lr = 1e-4;                    // initial rate; see lr_schedule
  std::string lr_schedule = "constant";  // "constant" or "cosine" decay
  int warmup_steps = 0;                // linear ramp 0 -> lr over this many steps
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 0;     // used when steps == 0
  int steps = 300;    // optimization-step budget (takes precedence)
  int batch = 2;      // samples accumulated per optimization step
  std::uint64_t seed = 0;
  bool deterministic = false;
  int eval_every = 50;     // steps between val evaluations (0 = only final)
  double grad_clip = 10.0; // global-norm clip; 0 disables
};

struct DataConfig {
  std::string manifest;      // train manifest path
  std::string val_manifest;  // optional held-out manifest
  std::string encoder_mode = "raw";  // "raw" pixels or "features" files
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  OptimConfig optim;
  DataConfig data;
  std::string output_dir = "runs/run";
};

// Serialize the full tree (canonical key order, suitable for snapshots).
std::string run_config_to_json(const RunConfig& cfg);

// Parse JSON text over the defaults. Unknown keys, type mismatches, and
// invalid values raise ConfigError naming the key path. Environment
// variables EGOSAG_<SECTION>__<KEY> (e.g. EGOSAG_MODEL__CHANNELS,
// EGOSAG_OUTPUT_DIR) override both defaults and file values when
// `apply_env` is set.
RunConfig run_config_from_json(const std::string& text, bool apply_env = true);

// Load from a file (DataError MissingFile when absent), then as above.
RunConfig load_run_config(const std::string& path, bool apply_env = true);

// Range/value checks shared by every entry point; ConfigError with key path.
void validate_run_config(const RunConfig& cfg);

// FNV-1a over the canonical model-section JSON: two configs can exchange
// checkpoints iff their hashes agree. Loss/optim/data knobs stay free.
std::uint64_t config_hash(const RunConfig& cfg);

// Write the resolved tree next to run outputs.
void save_resolved_config(const RunConfig& cfg, const std::string& path);

LossWeights to_loss_weights(const LossConfig& cfg);

}  // namespace egosag
