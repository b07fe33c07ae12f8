#pragma once

// Inference-side filtering and the six instance-detection metrics: mAP over
// IoU 0.50:0.05:0.95, AP50, AP25 and the matching recall trio, averaged per
// affordance class.

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "egosag/pointcloud.hpp"
#include "egosag/predictions.hpp"

namespace egosag {

struct FinalPrediction {
  std::vector<Eigen::VectorXd> point_masks;  // binary, one per kept query
  std::vector<double> scores;                // aligned, each >= tau
  int affordance_id = 0;                     // argmax of the class logits
};

// Queries sorted by score descending, optionally truncated to top_k (< 0
// disables), scores below tau dropped, superpoint masks binarized at 0.5 and
// expanded to points; empty masks dropped.
FinalPrediction filter_predictions(const LayerPrediction& pred,
                                   const SuperpointPartition& sp,
                                   double tau = 0.5, int top_k = -1);

// ---- dataset evaluation ----
struct EvalPrediction {
  Eigen::VectorXd mask;  // binary point mask
  double score = 0.0;
  int affordance_id = 0;
};

struct EvalSample {
  std::vector<EvalPrediction> preds;
  std::vector<Eigen::VectorXd> gt_masks;
  std::vector<int> gt_classes;
};

struct MetricsConfig {
  // Class-aware: a prediction only matches gt of its own class. The agnostic
  // mode collapses every class to one pool (ablation aid).
  bool class_aware = true;
};

struct MetricsReport {
  double mAP = 0.0, AP50 = 0.0, AP25 = 0.0;
  double mRC = 0.0, RC50 = 0.0, RC25 = 0.0;  // percentages in [0, 100]
  std::map<int, double> per_class_ap;  // mean over the 10 high thresholds
  std::map<int, double> per_class_rc;
};

// Pools predictions across samples per class, ranks by (score desc, sample,
// pred index), matches greedily (each gt at most once, to the max-IoU
// unmatched gt of the same sample with IoU >= t), and computes all-point
// interpolated AP plus final recall. Classes with zero gt are skipped.
MetricsReport evaluate_dataset(const std::vector<EvalSample>& samples,
                               const MetricsConfig& config = {});

// JSON form of the report (per_class keyed by class id as string).
std::string metrics_to_json(const MetricsReport& report);
// Fixed-width text table for terminal output.
std::string metrics_to_table(const MetricsReport& report);

}  // namespace egosag
