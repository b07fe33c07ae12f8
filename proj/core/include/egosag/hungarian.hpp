#pragma once

// Optimal assignment of predicted queries to ground-truth masks: minimizes
// total cost over injective matchings of size min(Q, J); among cost-optimal
// matchings returns the lexicographically smallest pair sequence (pairs
// ordered by pred index).

#include <utility>
#include <vector>

#include "egosag/tensor.hpp"

namespace egosag {

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (pred_query, gt_mask), pred ascending
  ad::Mat cost_matrix;                     // Q x J as given
  std::vector<int> unmatched_preds;
};

// Exact solver (subset DP over the smaller dimension); guards
// min(Q, J) <= 20. Non-finite cost entries are a domain error.
MatchResult hungarian_assign(const ad::Mat& cost);

}  // namespace egosag
