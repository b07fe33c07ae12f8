#include "egosag/dataset.hpp"

#include <filesystem>

#include "egosag/errors.hpp"
#include "egosag/synth.hpp"

namespace egosag {

PairedDataset::PairedDataset(const std::string& manifest_path,
                             const ModelConfig& model_cfg,
                             const std::string& encoder_mode) {
  if (encoder_mode != "raw" && encoder_mode != "features") {
    throw ConfigError("config: invalid value for \"data.encoder_mode\": "
                      "must be \"raw\" or \"features\"");
  }
  raw_mode_ = encoder_mode == "raw";
  manifest_ = io::load_manifest(manifest_path);
  root_ = std::filesystem::path(manifest_path).parent_path().string();
  if (root_.empty()) root_ = ".";

  std::map<std::string, std::shared_ptr<const ScenePack>> packs;
  for (const io::ManifestPair& pair : manifest_.pairs) {
    DatasetSample sample;
    sample.clip_id = pair.clip_id;
    sample.scene_id = pair.scene_id;
    sample.gt_region_indices = pair.gt_region_indices;

    auto it = packs.find(pair.scene_id);
    if (it == packs.end()) {
      const PointCloudScene scene =
          io::load_scene(synth::scene_ply_path(root_, pair.scene_id),
                         synth::scene_sidecar_path(root_, pair.scene_id));
      it = packs
               .emplace(pair.scene_id, std::make_shared<const ScenePack>(
                                           build_scene_pack(scene, model_cfg)))
               .first;
    }
    sample.pack = it->second;
    sample.gt = make_ground_truth(*sample.pack, pair.gt_region_indices);

    if (raw_mode_) {
      sample.clip =
          io::load_clip_block(synth::clip_block_path(root_, pair.clip_id));
    } else {
      const std::string base = root_ + "/clips/" + pair.clip_id;
      const io::ClipTokenRecord rec =
          io::load_clip_tokens(base + ".egsf", base + ".egsf.json");
      if (rec.tokens.rows() != model_cfg.channels) {
        throw DataError(
            DataError::Kind::Corrupt,
            base + ".egsf: token width " + std::to_string(rec.tokens.rows()) +
                " does not match model channels " +
                std::to_string(model_cfg.channels));
      }
      if (rec.affordance_id != sample.gt.affordance_class) {
        throw DataError(DataError::Kind::Corrupt,
                        base + ".egsf.json: clip class " +
                            std::to_string(rec.affordance_id) +
                            " disagrees with the paired regions' class " +
                            std::to_string(sample.gt.affordance_class));
      }
      sample.tokens = rec.tokens;
    }
    samples_.push_back(std::move(sample));
  }
}

ClipFeatures PairedDataset::clip_features(const EgoSagModel& model,
                                          size_t i) const {
  const DatasetSample& s = samples_.at(i);
  if (raw_mode_) {
    return model.encode_clip(s.clip, s.gt.affordance_class, s.clip_id);
  }
  return ClipEncoder::from_tokens(s.tokens, s.gt.affordance_class, s.clip_id);
}

}  // namespace egosag
