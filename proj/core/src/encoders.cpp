#include "egosag/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "egosag/errors.hpp"

namespace egosag {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

// 3×3×3 tap indices for a strided conv over a dense t×h×w block; row order
// matches neighbor_offset_index. Out-of-range taps are -1 (zero padding).
IdxMat conv3d_taps(int t, int h, int w, const std::array<int, 3>& stride) {
  const int to = ceil_div(t, stride[0]);
  const int ho = ceil_div(h, stride[1]);
  const int wo = ceil_div(w, stride[2]);
  IdxMat idx(27, to * ho * wo);
  for (int tt = 0; tt < to; ++tt)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        const int col = (tt * ho + y) * wo + x;
        for (int dt = -1; dt <= 1; ++dt)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int st = tt * stride[0] + dt;
              const int sy = y * stride[1] + dy;
              const int sx = x * stride[2] + dx;
              const bool in = st >= 0 && st < t && sy >= 0 && sy < h && sx >= 0 && sx < w;
              idx(neighbor_offset_index(dt, dy, dx), col) =
                  in ? (st * h + sy) * w + sx : -1;
            }
      }
  return idx;
}

}  // namespace

ClipEncoder::ClipEncoder(ParamRegistry& reg, const std::string& name,
                         const ClipEncoderConfig& cfg)
    : cfg_(cfg) {
  if (cfg.model_width < 1 || cfg.frames < 1)
    throw ParameterError("clip encoder needs positive model width and frame count");
  if (cfg.widths.empty() || cfg.widths.size() != cfg.strides.size())
    throw ParameterError("clip encoder widths and strides must align and be non-empty");
  int in = 3;
  for (std::size_t l = 0; l < cfg.widths.size(); ++l) {
    const std::string base = name + ".conv" + std::to_string(l);
    convs_.emplace_back(reg, base, 27 * in, cfg.widths[l]);
    norms_.emplace_back(reg, base + ".norm", cfg.widths[l]);
    in = cfg.widths[l];
  }
  proj_ = Linear(reg, name + ".proj", in, cfg.model_width);
}

int ClipEncoder::token_count(int h, int w) const {
  int t = cfg_.frames;
  for (const auto& s : cfg_.strides) {
    t = ceil_div(t, s[0]);
    h = ceil_div(h, s[1]);
    w = ceil_div(w, s[2]);
  }
  return t * h * w;
}

ClipFeatures ClipEncoder::encode_clip(const ClipBlock& clip, int affordance_id,
                                      const std::string& clip_id) const {
  if (clip.t < 1 || clip.h < 1 || clip.w < 1 || clip.pixels.cols() == 0)
    throw DomainError("clip block is empty");
  if (clip.pixels.rows() != 3 ||
      clip.pixels.cols() != static_cast<Eigen::Index>(clip.t) * clip.h * clip.w)
    throw DomainError("clip pixel matrix does not match its declared t*h*w shape");
  if (clip.pixels.minCoeff() < 0.0 || clip.pixels.maxCoeff() > 1.0)
    throw DomainError("clip pixels must lie in [0,1]");

  // Uniform temporal resampling to the configured frame count: target frame
  // f reads source frame floor((f + 0.5) * t / frames).
  const int frames = cfg_.frames;
  const int plane = clip.h * clip.w;
  ad::Mat resampled(3, static_cast<Eigen::Index>(frames) * plane);
  for (int f = 0; f < frames; ++f) {
    int src = static_cast<int>((f + 0.5) * clip.t / frames);
    src = std::min(src, clip.t - 1);
    resampled.middleCols(static_cast<Eigen::Index>(f) * plane, plane) =
        clip.pixels.middleCols(static_cast<Eigen::Index>(src) * plane, plane);
  }

  ad::Tensor x = ad::Tensor::constant(resampled);
  int t = frames, h = clip.h, w = clip.w;
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    const IdxMat taps = conv3d_taps(t, h, w, cfg_.strides[l]);
    x = ad::relu(norms_[l](convs_[l](ad::gather_patches(x, taps))));
    t = ceil_div(t, cfg_.strides[l][0]);
    h = ceil_div(h, cfg_.strides[l][1]);
    w = ceil_div(w, cfg_.strides[l][2]);
  }

  ClipFeatures out;
  out.tokens = proj_(x);
  out.pooled = ad::mean_cols(out.tokens);
  out.affordance_id = affordance_id;
  out.clip_id = clip_id;
  return out;
}

ClipFeatures ClipEncoder::from_tokens(const ad::Mat& tokens, int affordance_id,
                                      const std::string& clip_id) {
  if (tokens.cols() == 0) throw DomainError("precomputed clip has zero tokens");
  ClipFeatures out;
  out.tokens = ad::Tensor::constant(tokens);
  out.pooled = ad::mean_cols(out.tokens);
  out.affordance_id = affordance_id;
  out.clip_id = clip_id;
  return out;
}

IntentionProjector::IntentionProjector(ParamRegistry& reg, const std::string& name,
                                       int width)
    : proj_(reg, name, width, width) {}

ad::Tensor IntentionProjector::operator()(const ClipFeatures& feats) const {
  return ad::mean_cols(proj_(feats.tokens));
}

SceneUNet::SceneUNet(ParamRegistry& reg, const std::string& name, const UNetConfig& cfg)
    : cfg_(cfg), reg_(&reg), name_(name) {
  if (cfg.level_widths.empty())
    throw ParameterError("scene backbone needs at least one level width");
  if (cfg.in_width < 1 || cfg.model_width < 1)
    throw ParameterError("scene backbone needs positive channel counts");
  const bool bias = !cfg.linear_only;
  const auto& lw = cfg.level_widths;

  stem_ = Linear(reg, name + ".enc0.ssc", 27 * cfg.in_width, lw[0], bias);
  if (!cfg.linear_only) stem_norm_ = LayerNormModule(reg, name + ".enc0.norm", lw[0]);
  for (std::size_t l = 1; l < lw.size(); ++l) {
    const std::string base = name + ".enc" + std::to_string(l);
    down_.emplace_back(reg, base + ".down", 8 * lw[l - 1], lw[l], bias);
    enc_ssc_.emplace_back(reg, base + ".ssc", 27 * lw[l], lw[l], bias);
    if (!cfg.linear_only) {
      down_norm_.emplace_back(reg, base + ".down_norm", lw[l]);
      enc_norm_.emplace_back(reg, base + ".norm", lw[l]);
    }
  }
  for (std::size_t l = lw.size() - 1; l-- > 0;) {
    const std::string base = name + ".dec" + std::to_string(l);
    up_.emplace_back(reg, base + ".up", lw[l + 1], lw[l], bias);
    dec_ssc_.emplace_back(reg, base + ".ssc", 27 * 2 * lw[l], lw[l], bias);
    if (!cfg.linear_only) dec_norm_.emplace_back(reg, base + ".norm", lw[l]);
  }
  head_ = Linear(reg, name + ".head", lw[0], cfg.model_width, bias);

  if (cfg.with_isa) {
    // Touch every intention-layer parameter now so checkpoints and the
    // optimizer see the full set before the first forward pass.
    for (std::size_t l = 0; l < lw.size(); ++l) {
      ISALayerConfig ic;
      ic.n_c = cfg.isa_n_c;
      ic.k = cfg.isa_k;
      ic.r = 1.0;  // placeholder; the real radius is set per forward pass
      ic.heads = cfg.isa_heads;
      ic.level_width = lw[lw.size() - 1 - l];
      ic.reduce = cfg.isa_reduce;
      ISALayer touch(reg, name + ".isa" + std::to_string(l), ic, cfg.model_width);
    }
  }
}

ad::Tensor SceneUNet::block(const Linear& conv, const LayerNormModule& norm,
                            const ad::Tensor& x) const {
  if (cfg_.linear_only) return conv(x);
  return ad::relu(norm(conv(x)));
}

SceneFeatures SceneUNet::forward(const VoxelGrid& grid, const GridHierarchy& hier,
                                 const Coords& point_coords,
                                 const ad::Tensor& intent) const {
  const int n_levels = levels();
  if (static_cast<int>(hier.levels.size()) != n_levels)
    throw ParameterError("hierarchy level count does not match the backbone");
  if (grid.site_features.rows() != cfg_.in_width)
    throw ParameterError("grid features have width " +
                         std::to_string(grid.site_features.rows()) + ", backbone expects " +
                         std::to_string(cfg_.in_width));
  if (intent.rows() != cfg_.model_width || intent.cols() != 1)
    throw ParameterError("intention vector width does not match the model width");

  const GridLevel& l0 = hier.levels[0];

  // Input features reordered to the hierarchy's site layout.
  ad::Tensor x = ad::gather_cols(ad::Tensor::constant(grid.site_features), l0.source_index);

  // Encoder: submanifold stem at full resolution, then stride-2 descents.
  std::vector<ad::Tensor> enc(static_cast<std::size_t>(n_levels));
  x = block(stem_, stem_norm_, ad::gather_patches(x, l0.neighbors));
  enc[0] = x;
  for (int l = 1; l < n_levels; ++l) {
    const GridLevel& cur = hier.levels[static_cast<std::size_t>(l)];
    ad::Tensor down_in = ad::gather_patches(x, cur.children);
    x = cfg_.linear_only ? down_[static_cast<std::size_t>(l - 1)](down_in)
                         : ad::relu(down_norm_[static_cast<std::size_t>(l - 1)](
                               down_[static_cast<std::size_t>(l - 1)](down_in)));
    x = block(enc_ssc_[static_cast<std::size_t>(l - 1)],
              cfg_.linear_only ? LayerNormModule()
                               : enc_norm_[static_cast<std::size_t>(l - 1)],
              ad::gather_patches(x, cur.neighbors));
    enc[static_cast<std::size_t>(l)] = x;
  }

  SceneFeatures out;
  out.decoder_levels.reserve(static_cast<std::size_t>(n_levels));
  out.level_coords.reserve(static_cast<std::size_t>(n_levels));

  auto apply_isa = [&](int decoder_idx, ad::Tensor d, const Coords& coords) {
    if (!cfg_.with_isa) return d;
    const int gl = n_levels - 1 - decoder_idx;
    ISALayerConfig ic;
    ic.n_c = std::min<int>(cfg_.isa_n_c, static_cast<int>(d.cols()));
    ic.k = cfg_.isa_k;
    ic.r = cfg_.isa_r > 0.0 ? cfg_.isa_r
                            : 2.0 * grid.voxel_size * static_cast<double>(1 << gl);
    ic.heads = cfg_.isa_heads;
    ic.level_width = static_cast<int>(d.rows());
    ic.reduce = cfg_.isa_reduce;
    ISALayer layer(*reg_, name_ + ".isa" + std::to_string(decoder_idx), ic,
                   cfg_.model_width);
    return layer(d, coords, intent);
  };

  // Decoder: coarsest level first, parent-lookup upsampling, skip concat.
  ad::Tensor d = enc[static_cast<std::size_t>(n_levels - 1)];
  for (int decoder_idx = 0; decoder_idx < n_levels; ++decoder_idx) {
    const int gl = n_levels - 1 - decoder_idx;
    const GridLevel& cur = hier.levels[static_cast<std::size_t>(gl)];
    if (decoder_idx > 0) {
      const std::size_t di = static_cast<std::size_t>(decoder_idx - 1);
      ad::Tensor upped = up_[di](ad::gather_cols(d, cur.parent));
      ad::Tensor merged = ad::concat_rows(upped, enc[static_cast<std::size_t>(gl)]);
      d = block(dec_ssc_[di], cfg_.linear_only ? LayerNormModule() : dec_norm_[di],
                ad::gather_patches(merged, cur.neighbors));
    }
    d = apply_isa(decoder_idx, d, cur.centroids);
    if (gl == 0) {
      // Full resolution: hand each point the feature of its site.
      std::vector<int> inverse(cur.sites.size());
      for (std::size_t i = 0; i < cur.source_index.size(); ++i)
        inverse[static_cast<std::size_t>(cur.source_index[i])] = static_cast<int>(i);
      std::vector<int> lookup(grid.point_to_site.size());
      for (std::size_t p = 0; p < grid.point_to_site.size(); ++p)
        lookup[p] = inverse[static_cast<std::size_t>(grid.point_to_site[p])];
      out.decoder_levels.push_back(ad::gather_cols(d, lookup));
      out.level_coords.push_back(point_coords);
    } else {
      out.decoder_levels.push_back(d);
      out.level_coords.push_back(cur.centroids);
    }
  }

  out.per_point = head_(out.decoder_levels.back());
  return out;
}

}  // namespace egosag
