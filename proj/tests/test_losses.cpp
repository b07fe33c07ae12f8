#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "egosag/errors.hpp"
#include "egosag/losses.hpp"
#include "egosag/rng.hpp"
#include "oracles/fd.hpp"

using namespace egosag;
using ad::Mat;
using ad::Tensor;

namespace {
constexpr double kGradTol = 1e-3;
}

TEST_CASE("dice literal form, including its negative perfect-match value") {
  Eigen::VectorXd ones4 = Eigen::VectorXd::Ones(4);
  CHECK(dice_loss(ones4, ones4) == doctest::Approx(-1.0 / 9.0));
  Eigen::VectorXd a(2), b(2);
  a << 1, 0;
  b << 0, 1;
  CHECK(dice_loss(a, b) == doctest::Approx(1.0 / 3.0));
  Eigen::VectorXd z = Eigen::VectorXd::Zero(3);
  CHECK(dice_loss(z, z) == doctest::Approx(-1.0));
  // standard variant: perfect match on 4 actives scores exactly 0
  CHECK(dice_loss(ones4, ones4, DiceVariant::Standard) == doctest::Approx(0.0));
  Eigen::VectorXd wrong(3);
  CHECK_THROWS_AS(dice_loss(ones4, wrong), ParameterError);
}

TEST_CASE("dice is permutation-equivariant") {
  Rng rng(61);
  Eigen::VectorXd p(6), g(6);
  for (int i = 0; i < 6; ++i) {
    p(i) = rng.uniform();
    g(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  const double base = dice_loss(p, g);
  std::vector<int> perm{3, 1, 5, 0, 4, 2};
  Eigen::VectorXd pp(6), gp(6);
  for (int i = 0; i < 6; ++i) {
    pp(i) = p(perm[static_cast<size_t>(i)]);
    gp(i) = g(perm[static_cast<size_t>(i)]);
  }
  CHECK(dice_loss(pp, gp) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("differentiable dice matches the scalar form and finite differences") {
  Rng rng(62);
  Eigen::VectorXd gt(5);
  gt << 1, 0, 1, 1, 0;
  Mat logits(5, 1);
  for (int i = 0; i < 5; ++i) logits(i, 0) = rng.uniform(-1.0, 1.0);
  for (DiceVariant v : {DiceVariant::Literal, DiceVariant::Standard}) {
    Tensor probs = sigmoid(Tensor::constant(logits));
    Tensor d = dice_loss_t(probs, gt, v);
    CHECK(d.val()(0, 0) ==
          doctest::Approx(dice_loss(probs.val().col(0), gt, v)).epsilon(1e-12));
    CHECK(oracle::grad_check([&](const std::vector<Tensor>& p) {
            return dice_loss_t(sigmoid(p[0]), gt, v);
          }, {logits}) < kGradTol);
  }
}

TEST_CASE("matching cost prefers the matching-shaped pairs") {
  // 2x2 toy: pred 0 resembles gt 0, pred 1 resembles gt 1
  Mat preds(3, 2), gts(3, 2);
  preds << 0.9, 0.1, 0.8, 0.1, 0.1, 0.9;
  gts << 1, 0, 1, 0, 0, 1;
  Mat cost = matching_cost(preds, gts);
  CHECK(cost(0, 0) < cost(0, 1));
  CHECK(cost(1, 1) < cost(1, 0));
  CHECK(cost(0, 0) < cost(1, 0));

  // exact-match column: cost is zeta_dice * dice(gt, gt) plus the clamp-induced
  // BCE epsilon
  Mat exact = gts.col(0);
  Mat c2 = matching_cost(exact, gts.leftCols(1));
  const double eps_bce = bce_loss(gts.col(0), gts.col(0));
  CHECK(c2(0, 0) == doctest::Approx(2.0 * eps_bce + 5.0 * dice_loss(gts.col(0), gts.col(0))));
  CHECK(eps_bce < 1e-5);  // clamp keeps it tiny

  // no gt -> empty cost, no matching
  Mat none(3, 0);
  CHECK(matching_cost(preds, none).cols() == 0);
}

TEST_CASE("KL alignment: closed form, invariances, positivity, teacher stop") {
  // columns (0, ln 3) vs (0, 0): KL((1/4,3/4) || (1/2,1/2))
  Mat qv(2, 1), qs(2, 1);
  qv << 0.0, std::log(3.0);
  qs << 0.0, 0.0;
  const double expected = 0.25 * std::log(0.5) + 0.75 * std::log(1.5);
  Tensor kl = loss_kl(Tensor::constant(qv), Tensor::constant(qs));
  CHECK(kl.val()(0, 0) == doctest::Approx(expected).epsilon(1e-9));

  // identical -> 0; constant column shift -> 0
  Rng rng(63);
  Mat q(4, 3);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 4; ++i) q(i, j) = rng.uniform(-1.0, 1.0);
  CHECK(loss_kl(Tensor::constant(q), Tensor::constant(q)).val()(0, 0) ==
        doctest::Approx(0.0).epsilon(1e-12));
  Mat shifted = q;
  for (int j = 0; j < 3; ++j) shifted.col(j).array() += 0.7 * (j + 1);
  CHECK(loss_kl(Tensor::constant(q), Tensor::constant(shifted)).val()(0, 0) ==
        doctest::Approx(0.0).epsilon(1e-10));

  // nonnegative on random pairs
  for (int t = 0; t < 5; ++t) {
    Mat a(3, 2), b(3, 2);
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 3; ++i) {
        a(i, j) = rng.uniform(-2.0, 2.0);
        b(i, j) = rng.uniform(-2.0, 2.0);
      }
    CHECK(loss_kl(Tensor::constant(a), Tensor::constant(b)).val()(0, 0) >= -1e-12);
  }

  // gradient flows through the student only
  Mat qv2(3, 2), qs2(3, 2);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 3; ++i) {
      qv2(i, j) = rng.uniform(-1.0, 1.0);
      qs2(i, j) = rng.uniform(-1.0, 1.0);
    }
  Tensor teacher = Tensor::param(qv2);
  Tensor student = Tensor::param(qs2);
  loss_kl(teacher, student).backward();
  CHECK(teacher.grad().cwiseAbs().maxCoeff() == 0.0);
  CHECK(student.grad().cwiseAbs().maxCoeff() > 0.0);
  CHECK(oracle::grad_check([&](const std::vector<Tensor>& p) {
          return loss_kl(Tensor::constant(qv2), p[0]);
        }, {qs2}) < kGradTol);
}

TEST_CASE("contrastive loss: closed forms and degeneracy flags") {
  // all scores equal, one positive one negative -> ln 2
  Mat s(1, 2);
  s << 0.4, 0.4;
  Eigen::VectorXd iou(2);
  iou << 0.9, 0.1;
  auto r = loss_con(Tensor::constant(s), iou);
  CHECK_FALSE(r.degenerate);
  CHECK(r.value.val()(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // omega+ = {1}, omega- = {0, 0} -> log(1 + e) - 1
  Mat s2(1, 3);
  s2 << 1.0, 0.0, 0.0;
  Eigen::VectorXd iou2(3);
  iou2 << 0.8, 0.2, 0.3;
  auto r2 = loss_con(Tensor::constant(s2), iou2);
  CHECK(r2.value.val()(0, 0) == doctest::Approx(std::log(1.0 + std::exp(1.0)) - 1.0));

  // large positive score drives the loss toward 0
  Mat s3(1, 2);
  s3 << 30.0, 0.0;
  auto r3 = loss_con(Tensor::constant(s3), iou);
  CHECK(r3.value.val()(0, 0) < 1e-10);

  // all-positive and all-negative are flagged, not errors
  Eigen::VectorXd all_pos(2), all_neg(2);
  all_pos << 0.9, 0.8;
  all_neg << 0.1, 0.0;
  CHECK(loss_con(Tensor::constant(s), all_pos).degenerate);
  CHECK(loss_con(Tensor::constant(s), all_neg).degenerate);
  CHECK(loss_con(Tensor::constant(s), all_pos).value.val()(0, 0) == 0.0);
}

TEST_CASE("contrastive loss strictly decreases as a positive score rises") {
  Rng rng(64);
  Mat s(1, 4);
  s << 0.6, 0.2, -0.1, 0.3;
  Eigen::VectorXd iou(4);
  iou << 0.9, 0.7, 0.1, 0.2;  // two positives, two negatives
  auto base = loss_con(Tensor::constant(s), iou);
  for (int pos : {0, 1}) {
    Mat bumped = s;
    bumped(0, pos) += 0.05;
    auto r = loss_con(Tensor::constant(bumped), iou);
    CHECK(r.value.val()(0, 0) < base.value.val()(0, 0));
  }
  // and the analytic gradient agrees with finite differences
  CHECK(oracle::grad_check([&](const std::vector<Tensor>& p) {
          return loss_con(p[0], iou).value;
        }, {s}) < kGradTol);
}

TEST_CASE("total loss weighted combination and recomposition identity") {
  // single layer with pinned sub-terms: ce=1, mask=2, kl=0.4, con=0.6
  LayerLossTerms l;
  l.ce = Tensor::constant(Mat::Constant(1, 1, 1.0));
  l.bce = Tensor::constant(Mat::Constant(1, 1, 0.9));
  l.dice = Tensor::constant(Mat::Constant(1, 1, 0.6));
  l.score = Tensor::constant(Mat::Constant(1, 1, 0.5));
  l.mask = Tensor::constant(Mat::Constant(1, 1, 2.0));
  l.kl = Tensor::constant(Mat::Constant(1, 1, 0.4));
  l.con = Tensor::constant(Mat::Constant(1, 1, 0.6));
  LossWeights w;
  auto t = total_loss({l}, w);
  CHECK(t.breakdown.total == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(std::abs(t.breakdown.total -
                 (w.lambda_ce * t.breakdown.ce + w.lambda_mask * t.breakdown.mask +
                  w.lambda_kl * t.breakdown.kl + w.lambda_con * t.breakdown.con)) <
        1e-12);

  // zero losses -> zero total
  LayerLossTerms z;
  for (Tensor* f : {&z.ce, &z.bce, &z.dice, &z.score, &z.mask, &z.kl, &z.con})
    *f = Tensor::constant(Mat::Zero(1, 1));
  CHECK(total_loss({z}, w).breakdown.total == 0.0);

  // ce-only weighting
  LossWeights ce_only;
  ce_only.lambda_mask = ce_only.lambda_kl = ce_only.lambda_con = 0.0;
  CHECK(total_loss({l}, ce_only).breakdown.total == doctest::Approx(1.0));

  // two layers average uniformly
  auto t2 = total_loss({l, z}, w);
  CHECK(t2.breakdown.ce == doctest::Approx(0.5));
  CHECK(t2.breakdown.mask == doctest::Approx(1.0));
}

TEST_CASE("layer losses match a hand-computed toy instance") {
  // identity partition: 4 points = 4 superpoints, Q=2 queries, J=1 gt mask
  SuperpointPartition sp{{0, 1, 2, 3}, 4};
  SampleGroundTruth gt;
  gt.affordance_class = 0;
  gt.point_masks = Mat::Zero(4, 1);
  gt.point_masks(0, 0) = gt.point_masks(1, 0) = 1.0;
  gt.sp_masks = pool_gt_masks(gt.point_masks, sp);
  CHECK((gt.sp_masks - gt.point_masks).cwiseAbs().maxCoeff() == 0.0);

  Mat masks(4, 2);
  masks << 0.9, 0.2, 0.8, 0.3, 0.1, 0.6, 0.2, 0.5;
  Mat scores(1, 2);
  scores << 0.7, 0.4;
  LayerPrediction pred;
  pred.sp_masks = Tensor::constant(masks);
  pred.scores = Tensor::constant(scores);
  pred.class_logits = Tensor::constant(Mat::Zero(2, 1));
  Mat q(3, 2);
  q << 1, 2, 3, 4, 5, 6;
  pred.q_s = Tensor::constant(q);
  pred.q_v = Tensor::constant(q);

  LossWeights w;
  auto terms = layer_losses(pred, gt, sp, w);

  // matching: query 0 is the obvious winner for the single gt
  REQUIRE(terms.match.pairs.size() == 1);
  CHECK(terms.match.pairs[0] == std::make_pair(0, 0));
  CHECK(terms.match.unmatched_preds == std::vector<int>{1});

  // hand arithmetic
  const double bce0 = -(std::log(0.9) + std::log(0.8) + std::log(0.9) + std::log(0.8)) / 4.0;
  const double dice0 = 1.0 - 2.0 * (1.7 + 1.0) / (2.0 + 2.0 + 1.0);
  CHECK(terms.bce.val()(0, 0) == doctest::Approx(bce0).epsilon(1e-9));
  CHECK(terms.dice.val()(0, 0) == doctest::Approx(dice0).epsilon(1e-12));

  // targets: query 0 binarizes to the gt exactly (IoU 1), query 1 to its
  // complement (IoU 0)
  CHECK(terms.gt_iou(0) == doctest::Approx(1.0));
  CHECK(terms.gt_iou(1) == doctest::Approx(0.0));
  const double mse = (0.3 * 0.3 + 0.4 * 0.4) / 2.0;
  CHECK(terms.score.val()(0, 0) == doctest::Approx(mse).epsilon(1e-12));
  CHECK(terms.mask.val()(0, 0) ==
        doctest::Approx(bce0 + dice0 + mse).epsilon(1e-9));

  CHECK(terms.ce.val()(0, 0) == doctest::Approx(std::log(2.0)));
  CHECK(terms.kl.val()(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_FALSE(terms.kl_absent);

  const double con = std::log(std::exp(0.7) + std::exp(0.4)) - 0.7;
  CHECK_FALSE(terms.con_degenerate);
  CHECK(terms.con.val()(0, 0) == doctest::Approx(con).epsilon(1e-12));

  auto t = total_loss({terms}, w);
  const double expect_total = 1.0 * std::log(2.0) + 0.5 * (bce0 + dice0 + mse) +
                              0.5 * 0.0 + 0.5 * con;
  CHECK(t.breakdown.total == doctest::Approx(expect_total).epsilon(1e-9));
}

TEST_CASE("layer losses with no gt masks stay finite and degenerate cleanly") {
  SuperpointPartition sp{{0, 1, 2}, 3};
  SampleGroundTruth gt;
  gt.affordance_class = 1;
  gt.point_masks = Mat(3, 0);
  gt.sp_masks = Mat(3, 0);
  LayerPrediction pred;
  pred.sp_masks = Tensor::constant(Mat::Constant(3, 2, 0.7));
  pred.scores = Tensor::constant(Mat::Constant(1, 2, 0.2));
  pred.class_logits = Tensor::constant(Mat::Zero(3, 1));
  pred.q_s = Tensor::constant(Mat::Ones(2, 2));
  auto terms = layer_losses(pred, gt, sp, LossWeights{});
  CHECK(terms.match.pairs.empty());
  CHECK(terms.bce.val()(0, 0) == 0.0);
  CHECK(terms.dice.val()(0, 0) == 0.0);
  CHECK((terms.gt_iou.array() == 0.0).all());
  CHECK(terms.con_degenerate);
  CHECK(terms.kl_absent);  // no q_v supplied
  CHECK(std::isfinite(total_loss({terms}, LossWeights{}).breakdown.total));
}

TEST_CASE("full layer objective passes the finite-difference check") {
  // sp mask values kept away from the 0.5 binarization edge and costs well
  // separated so the detached matching is locally constant
  Rng rng(65);
  SuperpointPartition sp{{0, 0, 1, 1, 2}, 3};
  SampleGroundTruth gt;
  gt.affordance_class = 1;
  gt.point_masks = Mat::Zero(5, 2);
  gt.point_masks(0, 0) = gt.point_masks(1, 0) = 1.0;
  gt.point_masks(2, 1) = gt.point_masks(3, 1) = 1.0;
  gt.sp_masks = pool_gt_masks(gt.point_masks, sp);

  Mat mask_logits(3, 3);
  mask_logits << 2.0, -1.5, 0.8, -1.8, 1.9, 0.9, -1.2, -1.4, -1.6;
  Mat scores0(1, 3);
  scores0 << 0.6, 0.55, 0.1;
  Mat logits0(4, 1);
  logits0 << 0.3, -0.2, 0.5, 0.1;
  Mat qv0(4, 3), qs0(4, 3);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 4; ++i) {
      qv0(i, j) = rng.uniform(-1.0, 1.0);
      qs0(i, j) = rng.uniform(-1.0, 1.0);
    }

  auto build = [&](const std::vector<Tensor>& p) {
    LayerPrediction pred;
    pred.sp_masks = sigmoid(p[0]);
    pred.scores = p[1];
    pred.class_logits = p[2];
    pred.q_s = p[3];
    pred.q_v = Tensor::constant(qv0);  // teacher: no gradient by design
    auto terms = layer_losses(pred, gt, sp, LossWeights{});
    return total_loss({terms}, LossWeights{}).value;
  };
  CHECK(oracle::grad_check(build, {mask_logits, scores0, logits0, qs0}) < kGradTol);
}
