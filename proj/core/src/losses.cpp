#include "egosag/losses.hpp"

#include <algorithm>
#include <cmath>

#include "egosag/errors.hpp"

namespace egosag {

namespace {

using ad::Mat;
using ad::Tensor;

double dice_value(double xy, double sx, double sy, DiceVariant v) {
  if (v == DiceVariant::Literal) return 1.0 - 2.0 * (xy + 1.0) / (sx + sy + 1.0);
  return 1.0 - (2.0 * xy + 1.0) / (sx + sy + 1.0);
}

}  // namespace

double dice_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& gt,
                 DiceVariant variant) {
  if (pred.size() != gt.size())
    throw ParameterError("dice_loss: length mismatch " + std::to_string(pred.size()) +
                         " vs " + std::to_string(gt.size()));
  return dice_value(pred.dot(gt), pred.sum(), gt.sum(), variant);
}

double bce_loss(const Eigen::VectorXd& pred, const Eigen::VectorXd& gt, double eps) {
  if (pred.size() != gt.size()) throw ParameterError("bce_loss: length mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred(i), eps, 1.0 - eps);
    total += -gt(i) * std::log(p) - (1.0 - gt(i)) * std::log(1.0 - p);
  }
  return total / static_cast<double>(pred.size());
}

double mask_iou(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw ParameterError("mask_iou: length mismatch");
  double inter = 0.0, uni = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const bool av = a(i) != 0.0, bv = b(i) != 0.0;
    inter += (av && bv) ? 1.0 : 0.0;
    uni += (av || bv) ? 1.0 : 0.0;
  }
  return uni == 0.0 ? 0.0 : inter / uni;
}

Mat matching_cost(const Mat& sp_masks, const Mat& gt_sp_masks, double zeta_bce,
                  double zeta_dice, DiceVariant variant) {
  if (gt_sp_masks.cols() > 0 && sp_masks.rows() != gt_sp_masks.rows())
    throw ParameterError("matching_cost: superpoint count mismatch");
  Mat cost(sp_masks.cols(), gt_sp_masks.cols());
  for (Eigen::Index j = 0; j < gt_sp_masks.cols(); ++j)
    for (Eigen::Index i = 0; i < sp_masks.cols(); ++i)
      cost(i, j) = zeta_bce * bce_loss(sp_masks.col(i), gt_sp_masks.col(j)) +
                   zeta_dice * dice_loss(sp_masks.col(i), gt_sp_masks.col(j), variant);
  return cost;
}

Mat pool_gt_masks(const Mat& point_masks, const SuperpointPartition& sp) {
  if (point_masks.rows() != static_cast<Eigen::Index>(sp.assignment.size()))
    throw ParameterError("pool_gt_masks: point count mismatch");
  Mat pooled = Mat::Zero(sp.M, point_masks.cols());
  std::vector<double> counts(static_cast<size_t>(sp.M), 0.0);
  for (size_t p = 0; p < sp.assignment.size(); ++p) {
    counts[static_cast<size_t>(sp.assignment[p])] += 1.0;
    for (Eigen::Index j = 0; j < point_masks.cols(); ++j)
      pooled(sp.assignment[p], j) += point_masks(static_cast<Eigen::Index>(p), j);
  }
  for (int m = 0; m < sp.M; ++m)
    for (Eigen::Index j = 0; j < point_masks.cols(); ++j)
      pooled(m, j) = pooled(m, j) > 0.5 * counts[static_cast<size_t>(m)] ? 1.0 : 0.0;
  return pooled;
}

Tensor dice_loss_t(const Tensor& pred_col, const Eigen::VectorXd& gt,
                   DiceVariant variant) {
  if (pred_col.cols() != 1 || pred_col.rows() != gt.size())
    throw ParameterError("dice_loss_t: shape mismatch");
  const Tensor gt_t = Tensor::constant(gt);
  Tensor xy = sum_all(mul(pred_col, gt_t));
  Tensor denom = add_const(sum_all(pred_col), gt.sum() + 1.0);
  Tensor numer = variant == DiceVariant::Literal
                     ? scale(add_const(xy, 1.0), 2.0)
                     : add_const(scale(xy, 2.0), 1.0);
  return add_const(neg(ad::div(numer, denom)), 1.0);
}

Tensor loss_kl(const Tensor& q_v, const Tensor& q_s) {
  if (q_v.rows() != q_s.rows() || q_v.cols() != q_s.cols())
    throw ParameterError("loss_kl: shape mismatch");
  const Eigen::Index q = q_s.cols();
  // teacher distribution, plain matrix: no gradient flows through it
  Mat p = q_v.val();
  double entropy_side = 0.0;  // sum over queries of sum_c p log p
  for (Eigen::Index j = 0; j < q; ++j) {
    Eigen::VectorXd col = p.col(j);
    const double m = col.maxCoeff();
    col = (col.array() - m).exp();
    col /= col.sum();
    for (Eigen::Index c = 0; c < col.size(); ++c)
      entropy_side += col(c) > 0.0 ? col(c) * std::log(col(c)) : 0.0;
    p.col(j) = col;
  }
  Tensor cross = sum_all(mul(Tensor::constant(p), log_softmax_cols(q_s)));
  return scale(add_const(neg(cross), entropy_side), 1.0 / static_cast<double>(q));
}

ConLoss loss_con(const Tensor& scores, const Eigen::VectorXd& gt_iou,
                 double iou_threshold) {
  if (scores.rows() != 1 || scores.cols() != gt_iou.size())
    throw ParameterError("loss_con: expected 1 x Q scores matching gt_iou");
  std::vector<int> pos, neg;
  for (Eigen::Index i = 0; i < gt_iou.size(); ++i)
    (gt_iou(i) > iou_threshold ? pos : neg).push_back(static_cast<int>(i));
  if (pos.empty() || neg.empty())
    return {Tensor::constant(Mat::Zero(1, 1)), true};
  Tensor e = exp_t(scores);
  Tensor mp = mean_all(gather_cols(e, pos));
  Tensor mn = mean_all(gather_cols(e, neg));
  return {sub(log_t(add(mp, mn)), log_t(mp)), false};
}

LayerLossTerms layer_losses(const LayerPrediction& pred,
                            const SampleGroundTruth& gt,
                            const SuperpointPartition& sp,
                            const LossWeights& w) {
  LayerLossTerms out;
  const Eigen::Index q_count = pred.sp_masks.cols();
  const Eigen::Index j_count = gt.sp_masks.cols();

  // classification: cross-entropy of the layer's class logits against the
  // clip-level label
  if (gt.affordance_class < 0 || gt.affordance_class >= pred.class_logits.rows())
    throw ParameterError("layer_losses: affordance class " +
                         std::to_string(gt.affordance_class) + " out of range");
  out.ce = neg(slice_rows(log_softmax_cols(pred.class_logits), gt.affordance_class, 1));

  // assignment on the detached cost
  const Mat cost = matching_cost(pred.sp_masks.val(), gt.sp_masks, w.zeta_bce,
                                 w.zeta_dice, w.dice_variant);
  out.match = hungarian_assign(cost);

  // mask losses averaged over matched pairs
  if (out.match.pairs.empty()) {
    out.bce = Tensor::constant(Mat::Zero(1, 1));
    out.dice = Tensor::constant(Mat::Zero(1, 1));
  } else {
    Tensor bce_sum, dice_sum;
    for (const auto& [pi, gj] : out.match.pairs) {
      Tensor col = gather_cols(pred.sp_masks, {pi});
      const Eigen::VectorXd target = gt.sp_masks.col(gj);
      Tensor b = bce_mean(col, target);
      Tensor d = dice_loss_t(col, target, w.dice_variant);
      bce_sum = bce_sum.defined() ? add(bce_sum, b) : b;
      dice_sum = dice_sum.defined() ? add(dice_sum, d) : d;
    }
    const double inv = 1.0 / static_cast<double>(out.match.pairs.size());
    out.bce = scale(bce_sum, inv);
    out.dice = scale(dice_sum, inv);
  }

  // score regression: target is the IoU of the binarized expanded mask
  // against the matched gt (matched queries) or the best-overlapping gt
  // (unmatched queries; 0 when there is no overlap or no gt at all).
  out.gt_iou = Eigen::VectorXd::Zero(q_count);
  std::vector<int> matched_gt(static_cast<size_t>(q_count), -1);
  for (const auto& [pi, gj] : out.match.pairs) matched_gt[static_cast<size_t>(pi)] = gj;
  for (Eigen::Index i = 0; i < q_count; ++i) {
    Eigen::VectorXd sp_bin(sp.M);
    for (int m = 0; m < sp.M; ++m)
      sp_bin(m) = pred.sp_masks.val()(m, i) >= w.binarize_threshold ? 1.0 : 0.0;
    const Eigen::VectorXd point_pred = expand_mask(sp_bin, sp);
    if (matched_gt[static_cast<size_t>(i)] >= 0) {
      out.gt_iou(i) = mask_iou(point_pred, gt.point_masks.col(matched_gt[static_cast<size_t>(i)]));
    } else {
      double best = 0.0;
      for (Eigen::Index j = 0; j < j_count; ++j)
        best = std::max(best, mask_iou(point_pred, gt.point_masks.col(j)));
      out.gt_iou(i) = best;
    }
  }
  out.score = mean_all(square(sub(pred.scores,
                                  Tensor::constant(out.gt_iou.transpose()))));
  out.mask = add(add(out.bce, out.dice), out.score);

  // branch alignment (absent in single-branch mode)
  if (pred.q_v.defined()) {
    out.kl = loss_kl(pred.q_v, pred.q_s);
  } else {
    out.kl = Tensor::constant(Mat::Zero(1, 1));
    out.kl_absent = true;
  }

  auto con = loss_con(pred.scores, out.gt_iou, w.iou_threshold);
  out.con = con.value;
  out.con_degenerate = con.degenerate;
  return out;
}

TotalLoss total_loss(const std::vector<LayerLossTerms>& layers,
                     const LossWeights& w) {
  if (layers.empty()) throw ParameterError("total_loss: no layers");
  if (w.lambda_ce < 0 || w.lambda_mask < 0 || w.lambda_kl < 0 || w.lambda_con < 0)
    throw ParameterError("total_loss: negative loss weight");
  auto average = [&](auto pick) {
    Tensor sum;
    for (const auto& l : layers) {
      const Tensor& t = pick(l);
      sum = sum.defined() ? add(sum, t) : t;
    }
    return scale(sum, 1.0 / static_cast<double>(layers.size()));
  };
  Tensor ce = average([](const LayerLossTerms& l) -> const Tensor& { return l.ce; });
  Tensor mask = average([](const LayerLossTerms& l) -> const Tensor& { return l.mask; });
  Tensor kl = average([](const LayerLossTerms& l) -> const Tensor& { return l.kl; });
  Tensor con = average([](const LayerLossTerms& l) -> const Tensor& { return l.con; });
  Tensor total = add(add(add(scale(ce, w.lambda_ce), scale(mask, w.lambda_mask)),
                         scale(kl, w.lambda_kl)),
                     scale(con, w.lambda_con));

  TotalLoss out;
  out.value = total;
  auto avg_val = [&](auto pick) {
    double s = 0.0;
    for (const auto& l : layers) s += pick(l).val()(0, 0);
    return s / static_cast<double>(layers.size());
  };
  out.breakdown.ce = ce.val()(0, 0);
  out.breakdown.mask = mask.val()(0, 0);
  out.breakdown.kl = kl.val()(0, 0);
  out.breakdown.con = con.val()(0, 0);
  out.breakdown.bce = avg_val([](const LayerLossTerms& l) -> const Tensor& { return l.bce; });
  out.breakdown.dice = avg_val([](const LayerLossTerms& l) -> const Tensor& { return l.dice; });
  out.breakdown.score = avg_val([](const LayerLossTerms& l) -> const Tensor& { return l.score; });
  out.breakdown.total = total.val()(0, 0);
  for (const auto& l : layers) {
    out.breakdown.con_degenerate = out.breakdown.con_degenerate || l.con_degenerate;
    out.breakdown.kl_absent = out.breakdown.kl_absent || l.kl_absent;
  }
  return out;
}

}  // namespace egosag
