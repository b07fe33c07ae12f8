// Sparse hierarchy construction, the clip encoder, the intention projector,
// and the five-level scene backbone: structural invariants, degeneracy
// examples, linearity in the linear-only ablation, determinism, and finite
// differences over every parameter on a mini scene.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "egosag/encoders.hpp"
#include "egosag/errors.hpp"
#include "egosag/nn.hpp"
#include "egosag/pointcloud.hpp"
#include "egosag/rng.hpp"
#include "egosag/sparse_grid.hpp"
#include "egosag/tensor.hpp"

using egosag::build_hierarchy;
using egosag::ClipBlock;
using egosag::ClipEncoder;
using egosag::ClipEncoderConfig;
using egosag::Coords;
using egosag::GridHierarchy;
using egosag::IntentionProjector;
using egosag::ParamRegistry;
using egosag::PointCloudScene;
using egosag::SceneUNet;
using egosag::UNetConfig;
using egosag::VoxelGrid;
using egosag::ad::Tensor;
using Mat = Eigen::MatrixXd;

namespace {

PointCloudScene make_scene(egosag::Rng& rng, int n, double extent = 1.0) {
  PointCloudScene s;
  s.coords.resize(n, 3);
  s.colors.resize(n, 3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) {
      s.coords(i, j) = extent * rng.uniform(0.0, 1.0);
      s.colors(i, j) = rng.uniform(0.0, 1.0);
    }
  s.scene_id = "test";
  return s;
}

Mat random_mat(egosag::Rng& rng, int r, int c, double s = 1.0) {
  Mat m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = s * rng.normal();
  return m;
}

ClipBlock make_clip(egosag::Rng& rng, int t, int h, int w) {
  ClipBlock c;
  c.t = t;
  c.h = h;
  c.w = w;
  c.pixels.resize(3, static_cast<Eigen::Index>(t) * h * w);
  for (Eigen::Index j = 0; j < c.pixels.cols(); ++j)
    for (int i = 0; i < 3; ++i) c.pixels(i, j) = rng.uniform(0.0, 1.0);
  return c;
}

int floor_div2(int v) { return (v >= 0) ? v / 2 : -((-v + 1) / 2); }

UNetConfig tiny_unet_cfg() {
  UNetConfig cfg;
  cfg.in_width = 3;
  cfg.model_width = 4;
  cfg.level_widths = {2, 2, 3, 3, 4};
  cfg.isa_heads = 1;
  cfg.isa_n_c = 8;
  cfg.isa_k = 4;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------- hierarchy

TEST_CASE("hierarchy of a single-voxel scene keeps one site per level") {
  egosag::Rng rng(3);
  PointCloudScene s = make_scene(rng, 10, 0.05);  // everything inside one cell
  VoxelGrid grid = egosag::voxelize(s, 1.0);
  REQUIRE(grid.active_sites.size() == 1);
  GridHierarchy hier = build_hierarchy(grid, 5);
  REQUIRE(hier.levels.size() == 5);
  for (const auto& level : hier.levels) {
    CHECK(level.sites.size() == 1);
    CHECK(level.counts[0] == 10);
    // Only the center tap of the 3x3x3 window is occupied.
    for (int k = 0; k < 27; ++k)
      CHECK(level.neighbors(k, 0) == (k == egosag::neighbor_offset_index(0, 0, 0) ? 0 : -1));
  }
  for (std::size_t l = 0; l + 1 < hier.levels.size(); ++l) CHECK(hier.levels[l].parent[0] == 0);
}

TEST_CASE("hierarchy levels, parents, children, and neighbors agree with brute force") {
  egosag::Rng rng(7);
  PointCloudScene s = make_scene(rng, 80, 2.0);
  VoxelGrid grid = egosag::voxelize(s, 0.3);
  GridHierarchy hier = build_hierarchy(grid, 3);

  for (std::size_t l = 0; l + 1 < hier.levels.size(); ++l) {
    const auto& cur = hier.levels[l];
    const auto& next = hier.levels[l + 1];

    // Coarse site set = unique floor-halved keys of the fine level.
    std::set<std::array<int, 3>> want;
    for (const auto& k : cur.sites)
      want.insert({floor_div2(k[0]), floor_div2(k[1]), floor_div2(k[2])});
    std::set<std::array<int, 3>> got(next.sites.begin(), next.sites.end());
    CHECK(want == got);

    // parent[] points at the halved key; children inverts it at the right offset.
    for (std::size_t i = 0; i < cur.sites.size(); ++i) {
      const auto& key = cur.sites[i];
      const auto& pkey = next.sites[static_cast<std::size_t>(cur.parent[i])];
      CHECK(pkey[0] == floor_div2(key[0]));
      CHECK(pkey[1] == floor_div2(key[1]));
      CHECK(pkey[2] == floor_div2(key[2]));
      const int off = egosag::child_offset_index(key[0] - 2 * pkey[0], key[1] - 2 * pkey[1],
                                                 key[2] - 2 * pkey[2]);
      CHECK(next.children(off, cur.parent[i]) == static_cast<int>(i));
    }

    // Point counts are conserved level to level.
    int cur_total = 0, next_total = 0;
    for (int c : cur.counts) cur_total += c;
    for (int c : next.counts) next_total += c;
    CHECK(cur_total == next_total);
    CHECK(cur_total == 80);
  }

  // Neighbor matrices against an O(S^2) scan on every level.
  for (const auto& level : hier.levels) {
    const int s_count = static_cast<int>(level.sites.size());
    for (int i = 0; i < s_count; ++i)
      for (int j = 0; j < s_count; ++j) {
        const int dx = level.sites[j][0] - level.sites[i][0];
        const int dy = level.sites[j][1] - level.sites[i][1];
        const int dz = level.sites[j][2] - level.sites[i][2];
        if (std::abs(dx) <= 1 && std::abs(dy) <= 1 && std::abs(dz) <= 1)
          CHECK(level.neighbors(egosag::neighbor_offset_index(dx, dy, dz), i) == j);
      }
  }
}

TEST_CASE("hierarchy rejects an empty grid, naming the level") {
  VoxelGrid empty;
  empty.voxel_size = 0.1;
  empty.site_features.resize(3, 0);
  empty.site_coords.resize(3, 0);
  CHECK_THROWS_WITH_AS(build_hierarchy(empty, 3),
                       doctest::Contains("level 0"), egosag::DomainError);
}

// ------------------------------------------------------------- clip encoder

TEST_CASE("default stride schedule yields 196 tokens at 16x224x224") {
  ParamRegistry reg(11);
  ClipEncoderConfig cfg;
  cfg.model_width = 2;
  cfg.widths = {1, 1, 1};  // keep the full-scale pass cheap
  ClipEncoder enc(reg, "clip", cfg);
  CHECK(enc.token_count(224, 224) == 196);

  // A zero clip through the real pipeline: 196 tokens, all equal (the conv
  // stack is translation-invariant, so zero input leaves bias-only output).
  ClipBlock clip;
  clip.t = 16;
  clip.h = 224;
  clip.w = 224;
  clip.pixels = Mat::Zero(3, static_cast<Eigen::Index>(16) * 224 * 224);
  egosag::ClipFeatures feats = enc.encode_clip(clip, 3, "zero");
  REQUIRE(feats.tokens.cols() == 196);
  REQUIRE(feats.tokens.rows() == 2);
  CHECK(feats.affordance_id == 3);
  for (Eigen::Index j = 1; j < feats.tokens.cols(); ++j)
    CHECK((feats.tokens.val().col(j) - feats.tokens.val().col(0)).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("pooled clip feature equals the token mean") {
  ParamRegistry reg(13);
  ClipEncoderConfig cfg;
  cfg.model_width = 5;
  cfg.frames = 4;
  cfg.widths = {3, 4};
  cfg.strides = {{2, 2, 2}, {1, 2, 2}};
  ClipEncoder enc(reg, "clip", cfg);
  egosag::Rng rng(17);
  egosag::ClipFeatures feats = enc.encode_clip(make_clip(rng, 6, 8, 8));
  Eigen::VectorXd mean = feats.tokens.val().rowwise().mean();
  CHECK((feats.pooled.val().col(0) - mean).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(feats.pooled.rows() == 5);
}

TEST_CASE("clip encoder validates its input block") {
  ParamRegistry reg(19);
  ClipEncoderConfig cfg;
  cfg.model_width = 2;
  cfg.frames = 2;
  cfg.widths = {2};
  cfg.strides = {{1, 2, 2}};
  ClipEncoder enc(reg, "clip", cfg);

  ClipBlock empty;
  CHECK_THROWS_AS(enc.encode_clip(empty), egosag::DomainError);

  egosag::Rng rng(23);
  ClipBlock bad_range = make_clip(rng, 2, 4, 4);
  bad_range.pixels(0, 0) = 1.5;
  CHECK_THROWS_AS(enc.encode_clip(bad_range), egosag::DomainError);

  ClipBlock bad_shape = make_clip(rng, 2, 4, 4);
  bad_shape.t = 3;
  CHECK_THROWS_AS(enc.encode_clip(bad_shape), egosag::DomainError);
}

TEST_CASE("temporal resampling is transparent for temporally constant clips") {
  ParamRegistry reg(29);
  ClipEncoderConfig cfg;
  cfg.model_width = 3;
  cfg.frames = 8;
  cfg.widths = {2};
  cfg.strides = {{2, 2, 2}};
  ClipEncoder enc(reg, "clip", cfg);

  egosag::Rng rng(31);
  ClipBlock one = make_clip(rng, 1, 6, 6);
  ClipBlock three;
  three.t = 3;
  three.h = 6;
  three.w = 6;
  three.pixels.resize(3, 3 * 36);
  for (int f = 0; f < 3; ++f) three.pixels.middleCols(f * 36, 36) = one.pixels;

  Mat a = enc.encode_clip(one).tokens.val();
  Mat b = enc.encode_clip(three).tokens.val();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("precomputed token wrapping re-derives the pooled mean") {
  egosag::Rng rng(37);
  Mat tokens = random_mat(rng, 4, 9);
  egosag::ClipFeatures feats = ClipEncoder::from_tokens(tokens, 2, "pre");
  CHECK(feats.tokens.val() == tokens);
  CHECK((feats.pooled.val().col(0) - Eigen::VectorXd(tokens.rowwise().mean()))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK_THROWS_AS(ClipEncoder::from_tokens(Mat(4, 0), 0, "x"), egosag::DomainError);
}

TEST_CASE("clip encoder gradients match finite differences") {
  ParamRegistry reg(41);
  ClipEncoderConfig cfg;
  cfg.model_width = 2;
  cfg.frames = 4;
  cfg.widths = {2, 3};
  cfg.strides = {{2, 2, 2}, {1, 3, 3}};
  ClipEncoder enc(reg, "clip", cfg);
  egosag::Rng rng(43);
  const ClipBlock clip = make_clip(rng, 4, 6, 6);

  auto forward = [&]() {
    return egosag::ad::mean_all(egosag::ad::square(enc.encode_clip(clip).tokens));
  };
  reg.zero_grad_all();
  forward().backward();

  const double h = 1e-5;
  double worst = 0.0;
  for (const auto& name : reg.names()) {
    Tensor& p = reg.at(name);
    for (Eigen::Index c = 0; c < p.cols(); ++c)
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double orig = p.val()(r, c);
        p.mutable_val()(r, c) = orig + h;
        const double fp = forward().val()(0, 0);
        p.mutable_val()(r, c) = orig - h;
        const double fm = forward().val()(0, 0);
        p.mutable_val()(r, c) = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double an = p.grad()(r, c);
        worst = std::max(worst,
                         std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
      }
  }
  CHECK(worst < 1e-3);
}

// ------------------------------------------------------- intention projector

TEST_CASE("identity projector reduces intention to the token mean") {
  ParamRegistry reg(47);
  IntentionProjector proj(reg, "intent", 4);
  reg.at("intent.w").mutable_val() = Mat::Identity(4, 4);
  reg.at("intent.b").mutable_val().setZero();

  egosag::Rng rng(53);
  egosag::ClipFeatures feats = ClipEncoder::from_tokens(random_mat(rng, 4, 7), 0, "c");
  Mat f_i = proj(feats).val();
  CHECK((f_i.col(0) - Eigen::VectorXd(feats.tokens.val().rowwise().mean()))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("intention is invariant to token order and matches the direct oracle") {
  ParamRegistry reg(59);
  IntentionProjector proj(reg, "intent", 4);
  egosag::Rng rng(61);
  Mat tokens = random_mat(rng, 4, 6);

  Mat permuted(4, 6);
  const int order[6] = {5, 2, 0, 4, 1, 3};
  for (int j = 0; j < 6; ++j) permuted.col(j) = tokens.col(order[j]);

  Mat a = proj(ClipEncoder::from_tokens(tokens, 0, "a")).val();
  Mat b = proj(ClipEncoder::from_tokens(permuted, 0, "b")).val();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);

  // Direct recomputation: mean over columns of W*tokens + b.
  Mat projected = (reg.at("intent.w").val() * tokens).colwise() +
                  Eigen::VectorXd(reg.at("intent.b").val().col(0));
  CHECK((a.col(0) - Eigen::VectorXd(projected.rowwise().mean())).cwiseAbs().maxCoeff() <
        1e-12);
}

// ------------------------------------------------------------ scene backbone

TEST_CASE("single-voxel scene flows through all five levels to a C x N output") {
  egosag::Rng rng(67);
  PointCloudScene s = make_scene(rng, 12, 0.05);
  VoxelGrid grid = egosag::voxelize(s, 1.0);
  GridHierarchy hier = build_hierarchy(grid, 5);

  ParamRegistry reg(71);
  UNetConfig cfg = tiny_unet_cfg();
  SceneUNet unet(reg, "unet", cfg);
  Tensor intent = Tensor::constant(random_mat(rng, cfg.model_width, 1));
  egosag::SceneFeatures feats = unet.forward(grid, hier, s.coords, intent);

  REQUIRE(feats.per_point.rows() == cfg.model_width);
  REQUIRE(feats.per_point.cols() == 12);
  REQUIRE(feats.decoder_levels.size() == 5);
  CHECK(feats.decoder_levels.back().cols() == 12);
  for (std::size_t l = 0; l + 1 < feats.decoder_levels.size(); ++l)
    CHECK(feats.decoder_levels[l].cols() == 1);  // one site everywhere
  // All points share the voxel, hence the feature column.
  for (int j = 1; j < 12; ++j)
    CHECK((feats.per_point.val().col(j) - feats.per_point.val().col(0))
              .cwiseAbs()
              .maxCoeff() == 0.0);
}

TEST_CASE("closed intention gates reproduce the plain backbone exactly") {
  egosag::Rng rng(73);
  PointCloudScene s = make_scene(rng, 60, 1.5);
  VoxelGrid grid = egosag::voxelize(s, 0.25);
  GridHierarchy hier = build_hierarchy(grid, 5);

  UNetConfig with = tiny_unet_cfg();
  UNetConfig without = tiny_unet_cfg();
  without.with_isa = false;

  ParamRegistry reg_a(77);
  SceneUNet unet_a(reg_a, "unet", with);
  for (int l = 0; l < 5; ++l)
    reg_a.at("unet.isa" + std::to_string(l) + ".gate.bg").mutable_val().setConstant(-1e4);

  ParamRegistry reg_b(77);  // same seed: shared backbone weights by name
  SceneUNet unet_b(reg_b, "unet", without);

  Tensor intent = Tensor::constant(random_mat(rng, 4, 1));
  Mat a = unet_a.forward(grid, hier, s.coords, intent).per_point.val();
  Mat b = unet_b.forward(grid, hier, s.coords, intent).per_point.val();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("linear-only configuration is exactly homogeneous of degree one") {
  egosag::Rng rng(79);
  PointCloudScene s = make_scene(rng, 50, 1.0);
  VoxelGrid grid = egosag::voxelize(s, 0.3);
  GridHierarchy hier = build_hierarchy(grid, 5);

  UNetConfig cfg = tiny_unet_cfg();
  cfg.linear_only = true;
  cfg.with_isa = false;
  ParamRegistry reg(83);
  SceneUNet unet(reg, "unet", cfg);
  Tensor intent = Tensor::constant(Mat::Zero(4, 1));

  Mat once = unet.forward(grid, hier, s.coords, intent).per_point.val();

  VoxelGrid doubled = grid;
  doubled.site_features *= 2.0;
  Mat twice = unet.forward(doubled, hier, s.coords, intent).per_point.val();
  CHECK((twice - 2.0 * once).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("backbone forward is deterministic and validates its inputs") {
  egosag::Rng rng(89);
  PointCloudScene s = make_scene(rng, 40, 1.0);
  VoxelGrid grid = egosag::voxelize(s, 0.3);
  GridHierarchy hier = build_hierarchy(grid, 5);

  ParamRegistry reg(97);
  UNetConfig cfg = tiny_unet_cfg();
  SceneUNet unet(reg, "unet", cfg);
  Tensor intent = Tensor::constant(random_mat(rng, 4, 1));

  Mat a = unet.forward(grid, hier, s.coords, intent).per_point.val();
  Mat b = unet.forward(grid, hier, s.coords, intent).per_point.val();
  CHECK(a == b);  // bit-identical

  GridHierarchy wrong_levels = build_hierarchy(grid, 4);
  CHECK_THROWS_AS(unet.forward(grid, wrong_levels, s.coords, intent),
                  egosag::ParameterError);
  Tensor bad_intent = Tensor::constant(random_mat(rng, 3, 1));
  CHECK_THROWS_AS(unet.forward(grid, hier, s.coords, bad_intent), egosag::ParameterError);

  VoxelGrid with_coords = egosag::voxelize(s, 0.3, /*include_coords=*/true);
  CHECK_THROWS_AS(unet.forward(with_coords, hier, s.coords, intent),
                  egosag::ParameterError);
}

TEST_CASE("backbone gradients match finite differences on a mini scene") {
  egosag::Rng rng(101);
  PointCloudScene s = make_scene(rng, 48, 1.2);
  VoxelGrid grid = egosag::voxelize(s, 0.35);
  GridHierarchy hier = build_hierarchy(grid, 5);

  ParamRegistry reg(103);
  UNetConfig cfg = tiny_unet_cfg();
  SceneUNet unet(reg, "unet", cfg);
  const Mat intent_val = random_mat(rng, cfg.model_width, 1);

  auto forward = [&]() {
    return egosag::ad::mean_all(egosag::ad::square(
        unet.forward(grid, hier, s.coords, Tensor::constant(intent_val)).per_point));
  };
  reg.zero_grad_all();
  forward().backward();

  const double h = 1e-5;
  double worst = 0.0;
  for (const auto& name : reg.names()) {
    Tensor& p = reg.at(name);
    for (Eigen::Index c = 0; c < p.cols(); ++c)
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double orig = p.val()(r, c);
        p.mutable_val()(r, c) = orig + h;
        const double fp = forward().val()(0, 0);
        p.mutable_val()(r, c) = orig - h;
        const double fm = forward().val()(0, 0);
        p.mutable_val()(r, c) = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double an = p.grad()(r, c);
        worst = std::max(worst,
                         std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
      }
  }
  CHECK(worst < 1e-3);
}
