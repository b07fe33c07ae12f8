#include "egosag/model.hpp"

#include "egosag/errors.hpp"

namespace egosag {
namespace {

ClipEncoderConfig clip_config(const ModelConfig& cfg) {
  ClipEncoderConfig c;
  c.model_width = cfg.channels;
  c.frames = cfg.frames;
  c.widths = cfg.clip_widths;
  c.strides = cfg.clip_strides;
  return c;
}

UNetConfig unet_config(const ModelConfig& cfg) {
  UNetConfig u;
  u.in_width = 3;
  u.model_width = cfg.channels;
  u.level_widths = cfg.level_widths;
  u.with_isa = cfg.with_isa;
  u.isa_n_c = cfg.isa_n_c;
  u.isa_k = cfg.isa_k;
  u.isa_heads = cfg.isa_heads;
  u.isa_r = cfg.isa_r;
  return u;
}

BQDConfig bqd_config(const ModelConfig& cfg) {
  BQDConfig b;
  b.width = cfg.channels;
  b.queries = cfg.queries;
  b.layers = cfg.decoder_layers;
  b.heads = cfg.heads;
  b.classes = cfg.n_classes;
  b.fused = cfg.fused_decoder;
  return b;
}

}  // namespace

ScenePack build_scene_pack(const PointCloudScene& scene,
                           const ModelConfig& cfg) {
  validate_scene(scene);
  ScenePack pack;
  pack.scene = scene;
  pack.grid = voxelize(scene, cfg.voxel_size);
  pack.hier =
      build_hierarchy(pack.grid, static_cast<int>(cfg.level_widths.size()));
  pack.sp = build_superpoints(scene, cfg.superpoint_count);
  return pack;
}

SampleGroundTruth make_ground_truth(const ScenePack& pack,
                                    const std::vector<int>& region_indices) {
  if (region_indices.empty()) {
    throw DataError(DataError::Kind::Corrupt,
                    "pair lists no ground-truth regions");
  }
  const auto n_regions = static_cast<int>(pack.scene.gt_masks.size());
  const Eigen::Index n = pack.scene.size();
  SampleGroundTruth gt;
  gt.point_masks.resize(n, static_cast<Eigen::Index>(region_indices.size()));
  for (size_t j = 0; j < region_indices.size(); ++j) {
    const int r = region_indices[j];
    if (r < 0 || r >= n_regions) {
      throw DataError(DataError::Kind::Corrupt,
                      "pair references region " + std::to_string(r) +
                          " but scene " + pack.scene.scene_id + " has " +
                          std::to_string(n_regions));
    }
    const int cls = pack.scene.gt_affordance_ids[static_cast<size_t>(r)];
    if (j == 0) {
      gt.affordance_class = cls;
    } else if (cls != gt.affordance_class) {
      throw DataError(DataError::Kind::Corrupt,
                      "pair mixes regions of classes " +
                          std::to_string(gt.affordance_class) + " and " +
                          std::to_string(cls) + " in scene " +
                          pack.scene.scene_id);
    }
    const auto& mask = pack.scene.gt_masks[static_cast<size_t>(r)];
    for (Eigen::Index p = 0; p < n; ++p) {
      gt.point_masks(p, static_cast<Eigen::Index>(j)) =
          mask[static_cast<size_t>(p)] ? 1.0 : 0.0;
    }
  }
  gt.sp_masks = pool_gt_masks(gt.point_masks, pack.sp);
  return gt;
}

EgoSagModel::EgoSagModel(ParamRegistry& reg, const ModelConfig& cfg)
    : cfg_(cfg),
      clip_encoder_(reg, "clip", clip_config(cfg)),
      intent_(reg, "intent", cfg.channels),
      unet_(reg, "unet", unet_config(cfg)),
      decoder_(reg, "decoder", bqd_config(cfg)) {}

ClipFeatures EgoSagModel::encode_clip(const ClipBlock& clip, int affordance_id,
                                      const std::string& clip_id) const {
  return clip_encoder_.encode_clip(clip, affordance_id, clip_id);
}

std::vector<LayerPrediction> EgoSagModel::forward(
    const ScenePack& pack, const ClipFeatures& clip) const {
  const ad::Tensor intent = intent_(clip);
  const SceneFeatures scene_feats =
      unet_.forward(pack.grid, pack.hier, pack.scene.coords, intent);
  const ad::Tensor f_sp =
      ad::group_mean_cols(scene_feats.per_point, pack.sp.assignment, pack.sp.M);
  return decoder_.forward(f_sp, clip);
}

}  // namespace egosag
