#pragma once

// Training objective: assignment cost, Dice / BCE mask losses, score
// regression, KL alignment between the two query branches, multi-positive
// contrastive loss, and the weighted total with its exact breakdown.

#include <Eigen/Dense>
#include <vector>

#include "egosag/hungarian.hpp"
#include "egosag/pointcloud.hpp"
#include "egosag/predictions.hpp"
#include "egosag/tensor.hpp"

namespace egosag {

// The literal variant keeps the printed +1 inside the doubled numerator
// (perfect match on s active entries scores 1 - 2(s+1)/(2s+1), slightly
// negative); the standard variant is the usual smoothed Dice.
enum class DiceVariant { Literal, Standard };

struct LossWeights {
  double lambda_ce = 1.0;
  double lambda_mask = 0.5;
  double lambda_kl = 0.5;
  double lambda_con = 0.5;
  double zeta_bce = 2.0;   // assignment-cost BCE weight
  double zeta_dice = 5.0;  // assignment-cost Dice weight
  double iou_threshold = 0.5;       // contrastive positive/negative split
  double binarize_threshold = 0.5;  // mask binarization for IoU targets
  DiceVariant dice_variant = DiceVariant::Literal;
};

// ---- scalar reference forms (cost building, targets, oracle anchors) ----
double dice_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& gt,
                 DiceVariant variant = DiceVariant::Literal);
double bce_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& gt,
                double eps = 1e-6);
// |a AND b| / |a OR b| over binarized vectors; 0 when both are empty.
double mask_iou(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// C[i, j] = zeta_bce * BCE(pred_i, gt_j) + zeta_dice * Dice(pred_i, gt_j)
// over superpoint-resolution masks (M x Q predictions vs M x J targets).
ad::Mat matching_cost(const ad::Mat& sp_masks, const ad::Mat& gt_sp_masks,
                      double zeta_bce = 2.0, double zeta_dice = 5.0,
                      DiceVariant variant = DiceVariant::Literal);

// Majority vote per superpoint: > 50% of member points active.
ad::Mat pool_gt_masks(const ad::Mat& point_masks, const SuperpointPartition& sp);

// ---- differentiable pieces ----
ad::Tensor dice_loss_t(const ad::Tensor& pred_col, const Eigen::VectorXd& gt,
                       DiceVariant variant = DiceVariant::Literal);
// Mean over queries of KL(softmax(q_v[:, i]) || softmax(q_s[:, i])); the
// teacher q_v is treated as a constant (no gradient).
ad::Tensor loss_kl(const ad::Tensor& q_v, const ad::Tensor& q_s);

struct ConLoss {
  ad::Tensor value;
  bool degenerate = false;  // all-positive or all-negative: value pinned to 0
};
ConLoss loss_con(const ad::Tensor& scores, const Eigen::VectorXd& gt_iou,
                 double iou_threshold = 0.5);

// ---- per-sample assembly ----
struct SampleGroundTruth {
  int affordance_class = 0;  // clip-level label
  ad::Mat point_masks;       // N x J binary (0/1 as double)
  ad::Mat sp_masks;          // M x J majority-pooled
};

struct LayerLossTerms {
  ad::Tensor ce, bce, dice, score, mask, kl, con;
  MatchResult match;
  Eigen::VectorXd gt_iou;  // per query, the score-regression target
  bool con_degenerate = false;
  bool kl_absent = false;  // single-branch mode: no q_v
};

LayerLossTerms layer_losses(const LayerPrediction& pred,
                            const SampleGroundTruth& gt,
                            const SuperpointPartition& sp,
                            const LossWeights& w);

// ---- total objective ----
struct LossBreakdown {
  double ce = 0, bce = 0, dice = 0, score = 0, mask = 0, kl = 0, con = 0,
         total = 0;
  bool con_degenerate = false;
  bool kl_absent = false;
};

struct TotalLoss {
  ad::Tensor value;  // 1x1, differentiable
  LossBreakdown breakdown;
};

// Per-layer terms averaged uniformly, then combined with the lambda weights.
TotalLoss total_loss(const std::vector<LayerLossTerms>& layers,
                     const LossWeights& w);

}  // namespace egosag
