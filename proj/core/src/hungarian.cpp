#include "egosag/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "egosag/errors.hpp"

namespace egosag {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Minimum total cost of matching every element of the smaller of
// (preds, gts) injectively into the other, using the given index lists.
// Subset DP over the smaller side.
double min_completion_cost(const ad::Mat& cost, const std::vector<int>& preds,
                           const std::vector<int>& gts) {
  if (preds.empty() || gts.empty()) return 0.0;
  const bool preds_small = preds.size() <= gts.size();
  const std::vector<int>& small = preds_small ? preds : gts;
  const std::vector<int>& large = preds_small ? gts : preds;
  const int s = static_cast<int>(small.size());
  std::vector<double> dp(static_cast<size_t>(1) << s, kInf);
  dp[0] = 0.0;
  for (int li = 0; li < static_cast<int>(large.size()); ++li) {
    // process large elements in order; each may take one small element
    for (int mask = (1 << s) - 1; mask >= 0; --mask) {
      if (dp[static_cast<size_t>(mask)] == kInf) continue;
      for (int c = 0; c < s; ++c) {
        if (mask & (1 << c)) continue;
        const double e = preds_small ? cost(small[static_cast<size_t>(c)],
                                            large[static_cast<size_t>(li)])
                                     : cost(large[static_cast<size_t>(li)],
                                            small[static_cast<size_t>(c)]);
        auto& slot = dp[static_cast<size_t>(mask | (1 << c))];
        slot = std::min(slot, dp[static_cast<size_t>(mask)] + e);
      }
    }
  }
  return dp[(static_cast<size_t>(1) << s) - 1];
}

}  // namespace

MatchResult hungarian_assign(const ad::Mat& cost) {
  MatchResult result;
  result.cost_matrix = cost;
  const int q = static_cast<int>(cost.rows());
  const int j = static_cast<int>(cost.cols());
  if (q == 0 || j == 0) {
    for (int p = 0; p < q; ++p) result.unmatched_preds.push_back(p);
    return result;
  }
  if (!cost.allFinite()) throw DomainError("hungarian_assign: non-finite cost entry");
  if (std::min(q, j) > 20)
    throw ParameterError("hungarian_assign: min(Q, J) = " +
                         std::to_string(std::min(q, j)) +
                         " exceeds the exact-solver limit of 20");

  std::vector<int> all_preds(static_cast<size_t>(q)), all_gts(static_cast<size_t>(j));
  for (int p = 0; p < q; ++p) all_preds[static_cast<size_t>(p)] = p;
  for (int g = 0; g < j; ++g) all_gts[static_cast<size_t>(g)] = g;
  const double optimum = min_completion_cost(cost, all_preds, all_gts);
  const double eps = 1e-9 * (1.0 + std::abs(optimum));

  // Fix pairs greedily in ascending (pred, gt) order: a pair is kept when some
  // completion of the remainder still attains the optimum. This realizes the
  // lexicographically smallest optimal matching.
  std::vector<int> gts_left = all_gts;
  const int total_needed = std::min(q, j);
  double budget = optimum;
  int fixed = 0;
  for (int p = 0; p < q && fixed < total_needed; ++p) {
    std::vector<int> preds_after;
    for (int r = p + 1; r < q; ++r) preds_after.push_back(r);
    const int needed_after = total_needed - fixed - 1;
    bool took = false;
    if (static_cast<int>(preds_after.size()) >= needed_after) {
      for (size_t gi = 0; gi < gts_left.size(); ++gi) {
        const int g = gts_left[gi];
        std::vector<int> gts_minus;
        for (size_t t = 0; t < gts_left.size(); ++t)
          if (t != gi) gts_minus.push_back(gts_left[t]);
        if (static_cast<int>(std::min(preds_after.size(), gts_minus.size())) !=
            needed_after)
          continue;
        const double completion = min_completion_cost(cost, preds_after, gts_minus);
        if (cost(p, g) + completion <= budget + eps) {
          result.pairs.emplace_back(p, g);
          budget -= cost(p, g);
          gts_left = gts_minus;
          ++fixed;
          took = true;
          break;
        }
      }
    }
    if (!took) {
      if (q <= j)
        throw InternalError("hungarian_assign: failed to extend the optimal matching");
      result.unmatched_preds.push_back(p);
    }
  }
  for (int p = result.pairs.empty() ? 0 : result.pairs.back().first + 1; p < q; ++p)
    result.unmatched_preds.push_back(p);
  if (fixed != total_needed)
    throw InternalError("hungarian_assign: incomplete matching");
  return result;
}

}  // namespace egosag
