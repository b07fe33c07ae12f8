#pragma once

// Feature extraction for both input modalities.
//
//   ClipEncoder      — egocentric video block -> token grid F_V and its pooled
//                      summary, via temporal resampling to a fixed frame count
//                      and a small strided 3-D conv stack (or precomputed
//                      tokens loaded from file).
//   IntentionProjector — tokens -> one video-level intention vector F_I
//                      (1×1 projection followed by mean pooling).
//   SceneUNet        — voxelized point cloud -> per-point features F_S through
//                      a five-level sparse U-Net; every decoder level passes
//                      through an intention-gated reweighting layer.
//
// Feature matrices are channels × items; clip tokens are ordered
// t-major/row-major: token index = (t*H + y)*W + x.

#include <array>
#include <string>
#include <vector>

#include "egosag/isa.hpp"
#include "egosag/nn.hpp"
#include "egosag/pointcloud.hpp"
#include "egosag/sparse_grid.hpp"
#include "egosag/tensor.hpp"

namespace egosag {

// Raw video block of t frames at h×w, pixels in [0,1]. Column index
// (tt*h + y)*w + x holds the rgb of that pixel.
struct ClipBlock {
  int t = 0;
  int h = 0;
  int w = 0;
  ad::Mat pixels;  // 3 x (t*h*w)
};

struct ClipFeatures {
  ad::Tensor tokens;  // C x n_tokens
  ad::Tensor pooled;  // C x 1, arithmetic mean of tokens
  int affordance_id = -1;
  std::string clip_id;
};

struct ClipEncoderConfig {
  int model_width = 512;
  int frames = 16;  // temporal resampling target
  std::vector<int> widths = {64, 128, 256};
  // Per conv layer: (stride_t, stride_h, stride_w); kernel 3, padding 1,
  // output extent = ceil(in/stride).
  std::vector<std::array<int, 3>> strides = {{2, 4, 4}, {2, 4, 4}, {1, 2, 2}};
};

class ClipEncoder {
 public:
  ClipEncoder() = default;
  ClipEncoder(ParamRegistry& reg, const std::string& name, const ClipEncoderConfig& cfg);

  // Throws DomainError on an empty block or pixels outside [0,1].
  ClipFeatures encode_clip(const ClipBlock& clip, int affordance_id = -1,
                           const std::string& clip_id = std::string()) const;

  // Wraps externally produced tokens (precomputed encoder mode).
  static ClipFeatures from_tokens(const ad::Mat& tokens, int affordance_id,
                                  const std::string& clip_id);

  const ClipEncoderConfig& config() const { return cfg_; }
  // Token count produced for an input of the given spatial size.
  int token_count(int h, int w) const;

 private:
  ClipEncoderConfig cfg_;
  std::vector<Linear> convs_;
  std::vector<LayerNormModule> norms_;
  Linear proj_;
};

class IntentionProjector {
 public:
  IntentionProjector() = default;
  IntentionProjector(ParamRegistry& reg, const std::string& name, int width);

  // F_I: 1×1 learned projection of every token, then mean over tokens.
  ad::Tensor operator()(const ClipFeatures& feats) const;

 private:
  Linear proj_;
};

struct SceneFeatures {
  ad::Tensor per_point;  // model_width x N
  // Decoder outputs coarse→fine after intention reweighting; the last entry
  // is at full resolution with one column per point.
  std::vector<ad::Tensor> decoder_levels;
  std::vector<Coords> level_coords;  // positions matching each decoder level
};

struct UNetConfig {
  int in_width = 3;       // per-site input channels (color means)
  int model_width = 512;  // C of the per-point output head
  std::vector<int> level_widths = {32, 64, 128, 256, 512};
  bool linear_only = false;  // ablation: drop biases, norms, activations
  bool with_isa = true;      // ablation: skip the intention reweighting
  // Shared intention-layer settings; radius <= 0 auto-scales with the level
  // as 2 * voxel_size * 2^{grid level}.
  int isa_n_c = 64;
  int isa_k = 16;
  int isa_heads = 4;
  double isa_r = -1.0;
  ad::Reduce isa_reduce = ad::Reduce::Max;
};

class SceneUNet {
 public:
  SceneUNet() = default;
  SceneUNet(ParamRegistry& reg, const std::string& name, const UNetConfig& cfg);

  // `hier` must come from build_hierarchy(grid, levels()). `point_coords`
  // are the scene's N points (for the full-resolution output and its
  // positions). Throws ParameterError on width/level mismatches.
  SceneFeatures forward(const VoxelGrid& grid, const GridHierarchy& hier,
                        const Coords& point_coords, const ad::Tensor& intent) const;

  int levels() const { return static_cast<int>(cfg_.level_widths.size()); }
  const UNetConfig& config() const { return cfg_; }

 private:
  UNetConfig cfg_;
  ParamRegistry* reg_ = nullptr;  // for per-forward intention-layer setup
  std::string name_;
  Linear stem_;
  std::vector<Linear> down_, enc_ssc_, up_, dec_ssc_;
  LayerNormModule stem_norm_;
  std::vector<LayerNormModule> down_norm_, enc_norm_, dec_norm_;
  Linear head_;

  ad::Tensor block(const Linear& conv, const LayerNormModule& norm,
                   const ad::Tensor& x) const;
};

}  // namespace egosag
