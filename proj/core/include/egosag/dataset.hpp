#pragma once

// Manifest-driven loading of paired training data. Scene geometry packs are
// built once per scene id and shared between pairs; clips arrive either as
// raw pixel blocks or as precomputed token files depending on encoder mode.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "egosag/io.hpp"
#include "egosag/model.hpp"

namespace egosag {

struct DatasetSample {
  std::string clip_id;
  std::string scene_id;
  std::shared_ptr<const ScenePack> pack;
  ClipBlock clip;   // raw mode (t == 0 otherwise)
  ad::Mat tokens;   // features mode (empty otherwise)
  SampleGroundTruth gt;
  std::vector<int> gt_region_indices;
};

class PairedDataset {
 public:
  // Loads every pair eagerly. Missing scene/clip files surface as
  // DataError{MissingFile} naming the path; inconsistent annotations as
  // DataError{Corrupt}.
  PairedDataset(const std::string& manifest_path, const ModelConfig& model_cfg,
                const std::string& encoder_mode = "raw");

  size_t size() const { return samples_.size(); }
  const DatasetSample& sample(size_t i) const { return samples_.at(i); }
  const io::DatasetManifest& manifest() const { return manifest_; }
  const std::string& root() const { return root_; }
  bool raw_mode() const { return raw_mode_; }

  // Clip features for a sample: encoded pixels in raw mode, wrapped tokens
  // in features mode.
  ClipFeatures clip_features(const EgoSagModel& model, size_t i) const;

 private:
  io::DatasetManifest manifest_;
  std::string root_;
  bool raw_mode_ = true;
  std::vector<DatasetSample> samples_;
};

}  // namespace egosag
