#include "egosag/bqd.hpp"

#include <string>

#include "egosag/errors.hpp"

namespace egosag {

BilateralQueryDecoder::Block BilateralQueryDecoder::make_block(
    ParamRegistry& reg, const std::string& base) const {
  Block b;
  const int c = cfg_.width;
  const int hidden = cfg_.ffn_hidden > 0 ? cfg_.ffn_hidden : 2 * c;
  b.cross_norm = LayerNormModule(reg, base + ".cross_norm", c);
  b.cross = MultiheadAttention(reg, base + ".cross", c, c, c, cfg_.heads, c);
  b.self_norm = LayerNormModule(reg, base + ".self_norm", c);
  b.self = MultiheadAttention(reg, base + ".self", c, c, c, cfg_.heads, c);
  b.ffn_norm = LayerNormModule(reg, base + ".ffn_norm", c);
  b.ffn = MLP2(reg, base + ".ffn", c, hidden, c);
  return b;
}

BilateralQueryDecoder::BilateralQueryDecoder(ParamRegistry& reg, const std::string& name,
                                             const BQDConfig& cfg)
    : cfg_(cfg) {
  if (cfg.width < 1 || cfg.queries < 1 || cfg.layers < 1 || cfg.classes < 1)
    throw ParameterError("query decoder needs positive width/queries/layers/classes");
  const int c = cfg.width;
  queries_ = &init_queries(reg, name + ".queries", c, cfg.queries);
  affordance_proj_ = MLP2(reg, name + ".affordance_proj", c, c, c);
  mask_proj_ = MLP2(reg, name + ".mask_proj", c, c, c);
  class_head_ = Linear(reg, name + ".class_head", c, cfg.classes);
  if (cfg.fused) {
    fuse_block_ = make_block(reg, name + ".fuse");
  } else {
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string base = name + ".layer" + std::to_string(l);
      scene_blocks_.push_back(make_block(reg, base + ".scene"));
      video_blocks_.push_back(make_block(reg, base + ".video"));
      merges_.emplace_back(reg, base + ".merge", 2 * c, c, c);
    }
  }
}

ad::Tensor BilateralQueryDecoder::run_block(const Block& b, const ad::Tensor& q,
                                            const ad::Tensor& kv) const {
  ad::Tensor x = ad::add(q, b.cross(b.cross_norm(q), kv));
  ad::Tensor normed = b.self_norm(x);
  x = ad::add(x, b.self(normed, normed));
  x = ad::add(x, b.ffn(b.ffn_norm(x)));
  return x;
}

BranchFeatures BilateralQueryDecoder::project_branch_features(
    const ad::Tensor& f_sp) const {
  if (f_sp.rows() != cfg_.width)
    throw ParameterError("superpoint features have width " + std::to_string(f_sp.rows()) +
                         ", decoder expects " + std::to_string(cfg_.width));
  if (f_sp.cols() == 0) throw ParameterError("decoder needs at least one superpoint");
  BranchFeatures out;
  out.affordance = affordance_proj_(f_sp);
  out.mask = mask_proj_(f_sp);
  return out;
}

BilateralQueryDecoder::LayerOut BilateralQueryDecoder::layer(
    int l, const ad::Tensor& q, const BranchFeatures& branch,
    const ad::Tensor& clip_tokens) const {
  if (l < 0 || l >= static_cast<int>(scene_blocks_.size()))
    throw ParameterError("layer index out of range");
  LayerOut out;
  out.q_s = run_block(scene_blocks_[static_cast<std::size_t>(l)], q, branch.affordance);
  out.q_v = run_block(video_blocks_[static_cast<std::size_t>(l)], q, clip_tokens);
  out.next = merges_[static_cast<std::size_t>(l)](ad::concat_rows(out.q_s, out.q_v));
  return out;
}

LayerPrediction BilateralQueryDecoder::predict_head(const ad::Tensor& next_q,
                                                    const ad::Tensor& q_s,
                                                    const ad::Tensor& q_v,
                                                    const ad::Tensor& f_m,
                                                    const ad::Tensor& clip_pooled) const {
  LayerPrediction pred;
  pred.class_logits = class_head_(ad::mean_cols(next_q));
  pred.sp_masks = ad::sigmoid(ad::matmul(ad::transpose(f_m), q_s));
  pred.scores = ad::cosine_cols(q_s, clip_pooled);
  pred.q_s = q_s;
  pred.q_v = q_v;
  return pred;
}

std::vector<LayerPrediction> BilateralQueryDecoder::forward(
    const ad::Tensor& f_sp, const ClipFeatures& clip) const {
  if (!clip.tokens.defined() || clip.tokens.cols() == 0)
    throw ParameterError("decoder needs at least one clip token");
  if (clip.tokens.rows() != cfg_.width)
    throw ParameterError("clip tokens have width " + std::to_string(clip.tokens.rows()) +
                         ", decoder expects " + std::to_string(cfg_.width));
  const BranchFeatures branch = project_branch_features(f_sp);

  std::vector<LayerPrediction> out;
  if (cfg_.fused) {
    // Single-branch baseline: one cross-attention over the concatenated
    // scene + clip tokens, then the shared heads; no clip-branch queries.
    ad::Tensor kv = ad::concat_cols(branch.affordance, clip.tokens);
    ad::Tensor q = run_block(fuse_block_, *queries_, kv);
    out.push_back(predict_head(q, q, ad::Tensor(), branch.mask, clip.pooled));
    return out;
  }

  out.reserve(static_cast<std::size_t>(cfg_.layers));
  ad::Tensor q = *queries_;
  for (int l = 0; l < cfg_.layers; ++l) {
    LayerOut lo = layer(l, q, branch, clip.tokens);
    out.push_back(predict_head(lo.next, lo.q_s, lo.q_v, branch.mask, clip.pooled));
    q = lo.next;
  }
  return out;
}

}  // namespace egosag
