#pragma once

// Full pipeline assembly: clip encoder + intention projector + intention-
// gated scene U-Net + superpoint pooling + bilateral query decoder, wired
// from a ModelConfig. Scene geometry (voxel grid, hierarchy, superpoints) is
// precomputed once per scene and shared across every pair that uses it.

#include <memory>
#include <string>
#include <vector>

#include "egosag/bqd.hpp"
#include "egosag/config.hpp"
#include "egosag/encoders.hpp"
#include "egosag/losses.hpp"
#include "egosag/pointcloud.hpp"
#include "egosag/sparse_grid.hpp"

namespace egosag {

struct ScenePack {
  PointCloudScene scene;
  VoxelGrid grid;
  GridHierarchy hier;
  SuperpointPartition sp;
};

// Validates the scene, voxelizes at cfg.voxel_size, builds the grid
// hierarchy matching the U-Net depth, and partitions into superpoints.
ScenePack build_scene_pack(const PointCloudScene& scene,
                           const ModelConfig& cfg);

// Clip-level label plus point- and superpoint-resolution target masks for
// the listed scene regions. All listed regions must carry one class.
SampleGroundTruth make_ground_truth(const ScenePack& pack,
                                    const std::vector<int>& region_indices);

class EgoSagModel {
 public:
  EgoSagModel(ParamRegistry& reg, const ModelConfig& cfg);

  // Raw-pixel path. Precomputed-token files go through
  // ClipEncoder::from_tokens instead (the dataset loader decides).
  ClipFeatures encode_clip(const ClipBlock& clip, int affordance_id = -1,
                           const std::string& clip_id = std::string()) const;

  // One prediction record per decoder layer (one in fused mode); masks are
  // at superpoint resolution, ready for the matching losses or filtering.
  std::vector<LayerPrediction> forward(const ScenePack& pack,
                                       const ClipFeatures& clip) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  ClipEncoder clip_encoder_;
  IntentionProjector intent_;
  SceneUNet unet_;
  BilateralQueryDecoder decoder_;
};

}  // namespace egosag
