#include "egosag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "egosag/errors.hpp"
#include "egosag/losses.hpp"

namespace egosag {

FinalPrediction filter_predictions(const LayerPrediction& pred,
                                   const SuperpointPartition& sp, double tau,
                                   int top_k) {
  const Eigen::Index q_count = pred.sp_masks.cols();
  if (pred.scores.cols() != q_count)
    throw ParameterError("filter_predictions: scores/masks query count mismatch");
  if (pred.sp_masks.rows() != sp.M)
    throw ParameterError("filter_predictions: superpoint count mismatch");

  FinalPrediction out;
  Eigen::Index best_class;
  pred.class_logits.val().col(0).maxCoeff(&best_class);
  out.affordance_id = static_cast<int>(best_class);

  std::vector<int> order(static_cast<size_t>(q_count));
  for (Eigen::Index i = 0; i < q_count; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return pred.scores.val()(0, a) > pred.scores.val()(0, b);
  });
  if (top_k >= 0 && static_cast<int>(order.size()) > top_k) order.resize(static_cast<size_t>(top_k));

  for (int qi : order) {
    const double score = pred.scores.val()(0, qi);
    if (score < tau) continue;
    Eigen::VectorXd sp_bin(sp.M);
    for (int m = 0; m < sp.M; ++m)
      sp_bin(m) = pred.sp_masks.val()(m, qi) >= 0.5 ? 1.0 : 0.0;
    Eigen::VectorXd points = expand_mask(sp_bin, sp);
    if (points.sum() == 0.0) continue;  // empty masks carry no instance
    out.point_masks.push_back(std::move(points));
    out.scores.push_back(score);
  }
  return out;
}

namespace {

// One class at one IoU threshold: ranked greedy matching, all-point
// interpolated AP, final recall. IoUs come precomputed per ranked row as the
// (gt index, iou) candidates within the row's own sample.
struct RankedRow {
  double score;
  int sample, pred;
};

void eval_class_at(const std::vector<EvalSample>& samples,
                   const std::vector<RankedRow>& rows,
                   const std::vector<std::vector<std::vector<double>>>& iou_cache,
                   const std::vector<std::vector<int>>& class_gts, double t,
                   int total_gt, double* ap_out, double* rc_out) {
  std::vector<std::vector<bool>> gt_used(samples.size());
  for (size_t si = 0; si < samples.size(); ++si)
    gt_used[si].assign(samples[si].gt_classes.size(), false);

  const int k_total = static_cast<int>(rows.size());
  std::vector<int> tp_flags(static_cast<size_t>(k_total), 0);
  for (int k = 0; k < k_total; ++k) {
    const auto& row = rows[static_cast<size_t>(k)];
    int best_gt = -1;
    double best_iou = -1.0;
    for (int gi : class_gts[static_cast<size_t>(row.sample)]) {
      if (gt_used[static_cast<size_t>(row.sample)][static_cast<size_t>(gi)]) continue;
      const double iou =
          iou_cache[static_cast<size_t>(row.sample)][static_cast<size_t>(row.pred)][static_cast<size_t>(gi)];
      if (iou > best_iou) {
        best_iou = iou;
        best_gt = gi;
      }
    }
    if (best_gt >= 0 && best_iou >= t) {
      gt_used[static_cast<size_t>(row.sample)][static_cast<size_t>(best_gt)] = true;
      tp_flags[static_cast<size_t>(k)] = 1;
    }
  }

  // suffix-max interpolated precision
  std::vector<double> prec(static_cast<size_t>(k_total));
  int tp_cum = 0;
  for (int k = 0; k < k_total; ++k) {
    tp_cum += tp_flags[static_cast<size_t>(k)];
    prec[static_cast<size_t>(k)] = static_cast<double>(tp_cum) / (k + 1);
  }
  std::vector<double> maxp(static_cast<size_t>(k_total));
  double running = 0.0;
  for (int k = k_total - 1; k >= 0; --k) {
    running = std::max(running, prec[static_cast<size_t>(k)]);
    maxp[static_cast<size_t>(k)] = running;
  }
  double ap = 0.0;
  double prev_rec = 0.0;
  tp_cum = 0;
  for (int k = 0; k < k_total; ++k) {
    tp_cum += tp_flags[static_cast<size_t>(k)];
    const double rec = total_gt > 0 ? static_cast<double>(tp_cum) / total_gt : 0.0;
    ap += (rec - prev_rec) * maxp[static_cast<size_t>(k)];
    prev_rec = rec;
  }
  *ap_out = ap;
  *rc_out = total_gt > 0 ? static_cast<double>(tp_cum) / total_gt : 0.0;
}

}  // namespace

MetricsReport evaluate_dataset(const std::vector<EvalSample>& samples,
                               const MetricsConfig& config) {
  for (const auto& s : samples) {
    if (s.gt_masks.size() != s.gt_classes.size())
      throw ParameterError("evaluate_dataset: gt mask/class count mismatch");
    for (const auto& p : s.preds)
      for (const auto& g : s.gt_masks)
        if (p.mask.size() != g.size())
          throw ParameterError("evaluate_dataset: mask length mismatch within sample");
  }

  std::set<int> classes;
  for (const auto& s : samples)
    for (int c : s.gt_classes) classes.insert(config.class_aware ? c : 0);

  MetricsReport rep;
  if (classes.empty()) return rep;

  // IoU of every (pred, gt) pair within each sample, computed once
  std::vector<std::vector<std::vector<double>>> iou_cache(samples.size());
  for (size_t si = 0; si < samples.size(); ++si) {
    iou_cache[si].resize(samples[si].preds.size());
    for (size_t pi = 0; pi < samples[si].preds.size(); ++pi) {
      iou_cache[si][pi].resize(samples[si].gt_masks.size());
      for (size_t gi = 0; gi < samples[si].gt_masks.size(); ++gi)
        iou_cache[si][pi][gi] =
            mask_iou(samples[si].preds[pi].mask, samples[si].gt_masks[gi]);
    }
  }

  double sum_map = 0.0, sum_ap50 = 0.0, sum_ap25 = 0.0;
  double sum_mrc = 0.0, sum_rc50 = 0.0, sum_rc25 = 0.0;
  for (int cls : classes) {
    std::vector<RankedRow> rows;
    std::vector<std::vector<int>> class_gts(samples.size());
    int total_gt = 0;
    for (int si = 0; si < static_cast<int>(samples.size()); ++si) {
      const auto& s = samples[static_cast<size_t>(si)];
      for (int pi = 0; pi < static_cast<int>(s.preds.size()); ++pi)
        if (!config.class_aware || s.preds[static_cast<size_t>(pi)].affordance_id == cls)
          rows.push_back({s.preds[static_cast<size_t>(pi)].score, si, pi});
      for (int gi = 0; gi < static_cast<int>(s.gt_classes.size()); ++gi)
        if (!config.class_aware || s.gt_classes[static_cast<size_t>(gi)] == cls) {
          class_gts[static_cast<size_t>(si)].push_back(gi);
          ++total_gt;
        }
    }
    std::sort(rows.begin(), rows.end(), [](const RankedRow& a, const RankedRow& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.sample != b.sample) return a.sample < b.sample;
      return a.pred < b.pred;
    });

    double ap_acc = 0.0, rc_acc = 0.0;
    for (int i = 0; i < 10; ++i) {
      const double t = 0.50 + 0.05 * i;
      double ap, rc;
      eval_class_at(samples, rows, iou_cache, class_gts, t, total_gt, &ap, &rc);
      ap_acc += ap;
      rc_acc += rc;
    }
    const double class_ap = ap_acc / 10.0;
    const double class_rc = rc_acc / 10.0;
    rep.per_class_ap[cls] = 100.0 * class_ap;
    rep.per_class_rc[cls] = 100.0 * class_rc;
    sum_map += class_ap;
    sum_mrc += class_rc;
    double ap50, rc50, ap25, rc25;
    eval_class_at(samples, rows, iou_cache, class_gts, 0.50 + 0.05 * 0, total_gt,
                  &ap50, &rc50);
    eval_class_at(samples, rows, iou_cache, class_gts, 0.25, total_gt, &ap25, &rc25);
    sum_ap50 += ap50;
    sum_rc50 += rc50;
    sum_ap25 += ap25;
    sum_rc25 += rc25;
  }
  const double n = static_cast<double>(classes.size());
  rep.mAP = 100.0 * (sum_map / n);
  rep.AP50 = 100.0 * (sum_ap50 / n);
  rep.AP25 = 100.0 * (sum_ap25 / n);
  rep.mRC = 100.0 * (sum_mrc / n);
  rep.RC50 = 100.0 * (sum_rc50 / n);
  rep.RC25 = 100.0 * (sum_rc25 / n);
  return rep;
}

std::string metrics_to_json(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"mAP\":" << r.mAP << ",\"AP50\":" << r.AP50 << ",\"AP25\":" << r.AP25
     << ",\"mRC\":" << r.mRC << ",\"RC50\":" << r.RC50 << ",\"RC25\":" << r.RC25
     << ",\"per_class\":{";
  bool first = true;
  for (const auto& [cls, ap] : r.per_class_ap) {
    if (!first) os << ",";
    first = false;
    os << "\"" << cls << "\":{\"AP\":" << ap;
    const auto it = r.per_class_rc.find(cls);
    if (it != r.per_class_rc.end()) os << ",\"RC\":" << it->second;
    os << "}";
  }
  os << "}}";
  return os.str();
}

std::string metrics_to_table(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(2);
  os << std::fixed;
  os << "metric     value\n";
  os << "mAP   " << std::setw(10) << r.mAP << "\n";
  os << "AP50  " << std::setw(10) << r.AP50 << "\n";
  os << "AP25  " << std::setw(10) << r.AP25 << "\n";
  os << "mRC   " << std::setw(10) << r.mRC << "\n";
  os << "RC50  " << std::setw(10) << r.RC50 << "\n";
  os << "RC25  " << std::setw(10) << r.RC25 << "\n";
  for (const auto& [cls, ap] : r.per_class_ap)
    os << "class " << cls << " AP " << std::setw(6) << ap << "\n";
  return os.str();
}

}  // namespace egosag
