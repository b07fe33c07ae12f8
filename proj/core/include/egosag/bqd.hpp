#pragma once

// Bilateral query decoder: L stacked layers in which a shared query bank
// attends separately to superpoint scene features (affordance branch) and
// clip tokens (interaction branch), merges both refinements, and emits one
// prediction record per layer for deep supervision.
//
// Every attention/FFN sub-block is a pre-norm residual: x + f(norm(x)).
// Prediction heads are shared across layers; attention and FFN weights are
// per layer.
//
// The `fused` configuration replaces the bilateral stack with one
// cross-attention block over the concatenated scene + clip tokens (the
// single-branch baseline) and emits exactly one record with q_v undefined.

#include <string>
#include <vector>

#include "egosag/encoders.hpp"
#include "egosag/nn.hpp"
#include "egosag/predictions.hpp"
#include "egosag/tensor.hpp"

namespace egosag {

struct BranchFeatures {
  ad::Tensor affordance;  // C x M (F_a)
  ad::Tensor mask;        // C x M (F_m)
};

struct BQDConfig {
  int width = 512;    // C
  int queries = 50;   // Q
  int layers = 6;     // L
  int heads = 8;
  int classes = 17;   // affordance categories (A)
  int ffn_hidden = 0; // 0 -> 2 * width
  bool fused = false; // single-branch ablation
};

class BilateralQueryDecoder {
 public:
  BilateralQueryDecoder() = default;
  BilateralQueryDecoder(ParamRegistry& reg, const std::string& name,
                        const BQDConfig& cfg);

  // f_sp: C x M superpoint-pooled scene features. Returns L records
  // (1 when fused). Throws ParameterError on width mismatches or M = 0.
  std::vector<LayerPrediction> forward(const ad::Tensor& f_sp,
                                       const ClipFeatures& clip) const;

  // Two independent perceptrons split F_sp into affordance / mask features.
  BranchFeatures project_branch_features(const ad::Tensor& f_sp) const;

  // One bilateral layer: (refined queries for the next layer, q_s, q_v).
  struct LayerOut {
    ad::Tensor next;
    ad::Tensor q_s;
    ad::Tensor q_v;
  };
  LayerOut layer(int l, const ad::Tensor& q, const BranchFeatures& branch,
                 const ad::Tensor& clip_tokens) const;

  // Shared heads: class logits from the query mean, per-superpoint sigmoid
  // masks, and cosine quality scores against the pooled clip feature.
  LayerPrediction predict_head(const ad::Tensor& next_q, const ad::Tensor& q_s,
                               const ad::Tensor& q_v, const ad::Tensor& f_m,
                               const ad::Tensor& clip_pooled) const;

  const ad::Tensor& queries() const { return *queries_; }
  const BQDConfig& config() const { return cfg_; }

 private:
  // One pre-norm residual unit: cross-attention, self-attention, FFN.
  struct Block {
    LayerNormModule cross_norm;
    MultiheadAttention cross;
    LayerNormModule self_norm;
    MultiheadAttention self;
    LayerNormModule ffn_norm;
    MLP2 ffn;
  };
  Block make_block(ParamRegistry& reg, const std::string& base) const;
  ad::Tensor run_block(const Block& b, const ad::Tensor& q, const ad::Tensor& kv) const;

  BQDConfig cfg_;
  ad::Tensor* queries_ = nullptr;  // owned by the registry
  MLP2 affordance_proj_, mask_proj_;
  std::vector<Block> scene_blocks_, video_blocks_;  // per layer
  std::vector<MLP2> merges_;                        // per layer, 2C -> C
  Block fuse_block_;                                // fused mode only
  Linear class_head_;
};

}  // namespace egosag
