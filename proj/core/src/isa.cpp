#include "egosag/isa.hpp"

#include <string>

#include "egosag/errors.hpp"

namespace egosag {

ISALayer::ISALayer(ParamRegistry& reg, const std::string& name,
                   const ISALayerConfig& cfg, int intent_width)
    : cfg_(cfg) {
  if (cfg.n_c < 1 || cfg.k < 1)
    throw ParameterError("isa layer '" + name + "' needs n_c >= 1 and k >= 1");
  if (!(cfg.r > 0.0)) throw ParameterError("isa layer '" + name + "' needs r > 0");
  if (cfg.level_width < 1)
    throw ParameterError("isa layer '" + name + "' needs a positive level width");
  const int c = cfg.level_width;
  intent_proj_ = Linear(reg, name + ".intent_proj", intent_width, c);
  mlp_ = MLP2(reg, name + ".mlp", c, c, c);
  // Head-divisibility is enforced here (d_model = level width).
  attn_ = MultiheadAttention(reg, name + ".attn", c, c, c, cfg.heads, c);
  // The gate starts nearly closed (bias -4) and its transform starts small,
  // so a fresh layer perturbs the residual path by well under 5%.
  wg_ = reg.param(name + ".gate.wg", c, c, InitSpec::xavier());
  bg_ = reg.param(name + ".gate.bg", c, 1, InitSpec::constant(-4.0));
  wf_ = reg.param(name + ".gate.wf", c, c, InitSpec::xavier_scaled(0.25));
}

ad::Tensor ISALayer::group_subregions(const ad::Tensor& d, const Coords& coords,
                                      std::vector<int>* centroids_out) const {
  if (d.cols() != coords.rows())
    throw InternalError("feature/coordinate column mismatch in sub-region grouping");
  if (d.rows() != cfg_.level_width)
    throw InternalError("level width mismatch in sub-region grouping");
  const int n_i = static_cast<int>(d.cols());
  if (n_i < cfg_.n_c)
    throw ParameterError("sub-region grouping needs at least " +
                         std::to_string(cfg_.n_c) + " points, level has " +
                         std::to_string(n_i));
  std::vector<int> centroids = farthest_point_sample(coords, cfg_.n_c);
  if (centroids_out) *centroids_out = centroids;
  const IdxMat neighbors = ball_query_knn(coords, centroids, cfg_.k, cfg_.r);
  ad::Tensor pooled = ad::neighborhood_reduce(d, neighbors.transpose(), cfg_.reduce);
  return mlp_(pooled);
}

ad::Tensor ISALayer::intent_cross_attention(const ad::Tensor& g,
                                            const ad::Tensor& intent) const {
  return attn_(g, intent_proj_(intent));
}

ad::Tensor ISALayer::operator()(const ad::Tensor& d, const Coords& coords,
                                const ad::Tensor& intent) const {
  std::vector<int> centroids;
  ad::Tensor g = group_subregions(d, coords, &centroids);
  ad::Tensor f_j = intent_cross_attention(g, intent);

  Coords centroid_coords(centroids.size(), 3);
  for (std::size_t i = 0; i < centroids.size(); ++i)
    centroid_coords.row(static_cast<Eigen::Index>(i)) = coords.row(centroids[i]);
  const ad::InterpWeights w = interp_weights(centroid_coords, coords, cfg_.k_interp);
  ad::Tensor propagated = ad::interpolate_cols(f_j, w);
  if (propagated.rows() != d.rows() || propagated.cols() != d.cols())
    throw InternalError("propagated sub-region features do not match the level shape");

  ad::Tensor gate = ad::mul(
      ad::sigmoid(ad::add_colvec(ad::matmul(wg_, propagated), bg_)),
      ad::matmul(wf_, propagated));
  return ad::add(d, gate);
}

}  // namespace egosag
