#pragma once

// Interaction-guided spatial significance allocation. Each decoder level of
// the scene backbone passes its features through one of these layers: the
// level is condensed to a few sub-region descriptors (FPS + ball query +
// pooled neighborhood + shared MLP), those descriptors attend over a single
// intention token, the result is propagated back to every point of the
// level, and a sigmoid-gated residual folds it into the original features.
// The gate bias starts strongly negative so a fresh model is close to the
// identity and the backbone trains first.

#include <string>
#include <vector>

#include "egosag/nn.hpp"
#include "egosag/pointcloud.hpp"
#include "egosag/tensor.hpp"

namespace egosag {

struct ISALayerConfig {
  int n_c = 64;        // sub-region centroid count
  int k = 16;          // neighbors gathered per centroid
  double r = 0.2;      // ball-query radius (meters)
  int heads = 4;       // attention heads over the level width
  int level_width = 0; // channel count C_i of the hosting decoder level
  ad::Reduce reduce = ad::Reduce::Max;  // neighborhood pooling
  int k_interp = 3;    // neighbors when propagating descriptors back
};

// One per decoder level. `intent_width` is the channel count of the shared
// intention vector; a per-level projection maps it down to level_width.
class ISALayer {
 public:
  ISALayer() = default;
  // Throws ParameterError when the config is out of range (counts < 1,
  // radius ≤ 0, heads not dividing level_width).
  ISALayer(ParamRegistry& reg, const std::string& name, const ISALayerConfig& cfg,
           int intent_width);

  // Condenses the level to n_c sub-region descriptors. `centroids_out`, when
  // given, receives the selected point indices (FPS order).
  // Throws ParameterError when the level has fewer points than n_c.
  ad::Tensor group_subregions(const ad::Tensor& d, const Coords& coords,
                              std::vector<int>* centroids_out = nullptr) const;

  // Queries = descriptor columns, a single key/value token from the
  // projected intention vector (intent: intent_width×1).
  ad::Tensor intent_cross_attention(const ad::Tensor& g, const ad::Tensor& intent) const;

  // Full layer: d + gate(propagate(attend(group(d)))). Shape-preserving.
  ad::Tensor operator()(const ad::Tensor& d, const Coords& coords,
                        const ad::Tensor& intent) const;

  const ISALayerConfig& config() const { return cfg_; }

 private:
  ISALayerConfig cfg_;
  Linear intent_proj_;       // intent_width -> level_width
  MLP2 mlp_;                 // shared sub-region perceptron
  MultiheadAttention attn_;  // queries/kv at level_width
  ad::Tensor wg_, bg_, wf_;  // gate: sigmoid(Wg x + bg) ⊙ (Wf x)
};

}  // namespace egosag
