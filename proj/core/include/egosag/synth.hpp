#pragma once

// Procedural paired-data generation: desk-scale rooms with labeled affordance
// regions, and short clips whose moving colored patch encodes the affordance
// class. Everything is a pure function of SynthConfig — fixed seed means
// byte-identical datasets — with independent derived rng streams per item.

#include <cstdint>
#include <string>
#include <vector>

#include "egosag/encoders.hpp"
#include "egosag/io.hpp"
#include "egosag/pointcloud.hpp"

namespace egosag::synth {

struct SynthConfig {
  int n_scenes = 8;
  int n_clips = 16;
  int points_per_scene = 640;
  int n_classes = 4;        // catalog supports up to 17
  int regions_min = 2;      // labeled regions per scene, inclusive bounds
  int regions_max = 3;
  double coord_noise = 0.02;   // meters of jitter on primitive surfaces
  double color_noise = 0.02;   // per-channel point color jitter
  double pixel_noise = 0.02;   // per-pixel clip noise amplitude
  int frames = 16;
  int frame_h = 32;
  int frame_w = 32;
  double val_fraction = 0.25;  // tail of scenes/clips held out
  std::uint64_t rng_seed = 7;
};

// Throws ParameterError on non-positive counts, an empty/oversized region
// range, an unsupported class count, or a val fraction outside [0, 1).
void validate_synth_config(const SynthConfig& cfg);

// Default affordance catalog (17 entries); presets use the first n_classes.
const std::vector<std::string>& affordance_names();

// Injective class → rgb color code in [0,1]^3, shared by scene regions and
// clip patches. Values already lie on the 1/255 storage grid.
std::array<double, 3> affordance_color(int affordance_id);

// Scene `index`: a room (floor + two walls) with 2–4 furniture pieces and
// regions_min..regions_max contiguous labeled regions painted with their
// class color. Region ρ carries class (index + 2ρ) mod n_classes, so every
// consecutive window of scenes covers all classes.
PointCloudScene generate_scene(const SynthConfig& cfg, int index);

// Clip `index` for a given class: a constant background plus a square patch
// in the class color moving with a class-determined velocity from an
// rng-chosen start, wrapping at the frame edges. At pixel_noise = 0 two
// clips of one class differ only in that start position.
ClipBlock generate_clip(const SynthConfig& cfg, int affordance_id, int index);

// Writes scenes/, clips/, manifest_train.json, and manifest_val.json under
// `root`. Pairs each clip with a same-split scene containing at least one
// region of the clip's class (round-robin over eligible scenes) and lists
// those regions as ground truth.
struct GeneratedDataset {
  std::string root;
  std::string train_manifest;
  std::string val_manifest;
  int n_train_pairs = 0;
  int n_val_pairs = 0;
};
GeneratedDataset generate_dataset(const SynthConfig& cfg,
                                  const std::string& root);

// JSON round trip for generator configs (snapshots; strict unknown-key
// checks like the run config).
std::string synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const std::string& text);
SynthConfig load_synth_config(const std::string& path);

// File layout shared with the dataset loader.
std::string scene_basename(int index);             // "scene_0003"
std::string clip_basename(int index);              // "clip_0007"
std::string scene_ply_path(const std::string& root, const std::string& id);
std::string scene_sidecar_path(const std::string& root, const std::string& id);
std::string clip_block_path(const std::string& root, const std::string& id);

}  // namespace egosag::synth
