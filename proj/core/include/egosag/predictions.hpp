#pragma once

// Per-layer decoder output shared between the decoder, the losses, and
// inference. All fields are tape tensors so losses can differentiate
// through them.

#include "egosag/tensor.hpp"

namespace egosag {

struct LayerPrediction {
  ad::Tensor class_logits;  // A x 1 (affordance categories)
  ad::Tensor sp_masks;      // M x Q, sigmoid probabilities per query
  ad::Tensor scores;        // 1 x Q, quality scores in [-1, 1]
  ad::Tensor q_s;           // C x Q scene-branch queries
  ad::Tensor q_v;           // C x Q clip-branch queries; undefined when the
                            // decoder runs in single-branch (fused) mode
};

}  // namespace egosag
