#include "egosag/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <unordered_map>

#include "egosag/errors.hpp"

namespace egosag {

namespace {

struct Int3Hash {
  size_t operator()(const std::array<int, 3>& a) const {
    // FNV-1a over the three ints; good enough for grid keys
    uint64_t h = 1469598103934665603ull;
    for (int v : a) {
      for (int b = 0; b < 4; ++b) {
        h ^= static_cast<uint64_t>((static_cast<uint32_t>(v) >> (8 * b)) & 0xff);
        h *= 1099511628211ull;
      }
    }
    return static_cast<size_t>(h);
  }
};

double sq_dist(const Coords& a, Eigen::Index i, const Coords& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

}  // namespace

void validate_scene(const PointCloudScene& scene) {
  const Eigen::Index n = scene.coords.rows();
  if (n < 1) throw DomainError("scene '" + scene.scene_id + "' has no points");
  if (!scene.coords.allFinite())
    throw DomainError("scene '" + scene.scene_id + "' has non-finite coordinates");
  if (scene.colors.rows() != n)
    throw DomainError("scene '" + scene.scene_id + "' colors/coords length mismatch");
  if (scene.gt_masks.size() != scene.gt_affordance_ids.size())
    throw DomainError("scene '" + scene.scene_id +
                      "' gt mask / affordance id count mismatch");
  for (size_t m = 0; m < scene.gt_masks.size(); ++m) {
    if (static_cast<Eigen::Index>(scene.gt_masks[m].size()) != n)
      throw DomainError("scene '" + scene.scene_id + "' gt mask " +
                        std::to_string(m) + " length mismatch");
    bool any = false;
    for (uint8_t v : scene.gt_masks[m]) any = any || v != 0;
    if (!any)
      throw DomainError("scene '" + scene.scene_id + "' gt mask " +
                        std::to_string(m) + " is empty");
  }
}

VoxelGrid voxelize(const PointCloudScene& scene, double voxel_size,
                   bool include_coords) {
  if (voxel_size <= 0.0)
    throw ParameterError("voxelize: voxel_size must be positive, got " +
                         std::to_string(voxel_size));
  const Eigen::Index n = scene.coords.rows();
  if (n < 1) throw DomainError("voxelize: empty scene");

  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  grid.point_to_site.resize(static_cast<size_t>(n));
  std::unordered_map<std::array<int, 3>, int, Int3Hash> site_of;
  for (Eigen::Index p = 0; p < n; ++p) {
    std::array<int, 3> key;
    for (int d = 0; d < 3; ++d)
      key[static_cast<size_t>(d)] =
          static_cast<int>(std::floor(scene.coords(p, d) / voxel_size));
    auto [it, inserted] = site_of.try_emplace(key, static_cast<int>(grid.active_sites.size()));
    if (inserted) grid.active_sites.push_back(key);
    grid.point_to_site[static_cast<size_t>(p)] = it->second;
  }

  const int s = static_cast<int>(grid.active_sites.size());
  grid.site_counts.assign(static_cast<size_t>(s), 0);
  grid.site_coords = ad::Mat::Zero(3, s);
  const int feat_rows = include_coords ? 6 : 3;
  grid.site_features = ad::Mat::Zero(feat_rows, s);
  for (Eigen::Index p = 0; p < n; ++p) {
    const int site = grid.point_to_site[static_cast<size_t>(p)];
    grid.site_counts[static_cast<size_t>(site)] += 1;
    grid.site_coords.col(site) += scene.coords.row(p).transpose();
    grid.site_features.block(0, site, 3, 1) += scene.colors.row(p).transpose();
    if (include_coords)
      grid.site_features.block(3, site, 3, 1) += scene.coords.row(p).transpose();
  }
  for (int i = 0; i < s; ++i) {
    const double c = static_cast<double>(grid.site_counts[static_cast<size_t>(i)]);
    grid.site_coords.col(i) /= c;
    grid.site_features.col(i) /= c;
  }
  return grid;
}

std::vector<int> farthest_point_sample(const Coords& coords, int n_c,
                                       int seed_index) {
  const Eigen::Index n = coords.rows();
  if (n_c < 1 || n_c > n)
    throw ParameterError("farthest_point_sample: n_c " + std::to_string(n_c) +
                         " outside [1, " + std::to_string(n) + "]");
  if (seed_index < 0 || seed_index >= n)
    throw ParameterError("farthest_point_sample: seed index out of range");

  std::vector<int> chosen;
  chosen.reserve(static_cast<size_t>(n_c));
  chosen.push_back(seed_index);
  Eigen::VectorXd min_d2 = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  for (int step = 1; step < n_c; ++step) {
    const int last = chosen.back();
    for (Eigen::Index p = 0; p < n; ++p)
      min_d2(p) = std::min(min_d2(p), sq_dist(coords, p, coords, last));
    int best = -1;
    double best_d2 = -1.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (min_d2(p) == 0.0 &&
          std::find(chosen.begin(), chosen.end(), static_cast<int>(p)) != chosen.end())
        continue;
      if (min_d2(p) > best_d2) {  // strict: ties keep the lowest index
        best_d2 = min_d2(p);
        best = static_cast<int>(p);
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

IdxMat ball_query_knn(const Coords& coords, const std::vector<int>& centroid_indices,
                      int k, double r) {
  if (centroid_indices.empty())
    throw ParameterError("ball_query_knn: empty centroid list");
  if (k < 1) throw ParameterError("ball_query_knn: k must be >= 1");
  if (r <= 0.0) throw ParameterError("ball_query_knn: radius must be positive");
  const Eigen::Index n = coords.rows();
  const double r2 = r * r;
  IdxMat out(static_cast<Eigen::Index>(centroid_indices.size()), k);
  std::vector<std::pair<double, int>> within;
  for (size_t row = 0; row < centroid_indices.size(); ++row) {
    const int c = centroid_indices[row];
    if (c < 0 || c >= n) throw ParameterError("ball_query_knn: centroid index out of range");
    within.clear();
    for (Eigen::Index p = 0; p < n; ++p) {
      const double d2 = sq_dist(coords, p, coords, c);
      if (d2 <= r2) within.emplace_back(d2, static_cast<int>(p));
    }
    std::sort(within.begin(), within.end());
    for (int j = 0; j < k; ++j)
      out(static_cast<Eigen::Index>(row), j) =
          j < static_cast<int>(within.size()) ? within[static_cast<size_t>(j)].second : c;
  }
  return out;
}

IdxMat knn_indices(const Coords& coords, int k) {
  const Eigen::Index n = coords.rows();
  if (k < 1) throw ParameterError("knn_indices: k must be >= 1");
  const int kk = std::min<int>(k, static_cast<int>(n) - 1);
  IdxMat out(n, std::max(kk, 0));
  std::vector<std::pair<double, int>> d;
  d.reserve(static_cast<size_t>(n));
  for (Eigen::Index p = 0; p < n; ++p) {
    d.clear();
    for (Eigen::Index q = 0; q < n; ++q) {
      if (q == p) continue;
      d.emplace_back(sq_dist(coords, p, coords, q), static_cast<int>(q));
    }
    std::partial_sort(d.begin(), d.begin() + kk, d.end());
    for (int j = 0; j < kk; ++j) out(p, j) = d[static_cast<size_t>(j)].second;
  }
  return out;
}

ad::InterpWeights interp_weights(const Coords& src_coords, const Coords& dst_coords,
                                 int k_interp, double eps) {
  const Eigen::Index s = src_coords.rows();
  if (s < 1) throw ParameterError("interp_weights: no source points");
  if (eps <= 0.0) throw ParameterError("interp_weights: eps must be positive");
  if (!src_coords.allFinite() || !dst_coords.allFinite())
    throw DomainError("interp_weights: non-finite coordinates");
  const int kk = std::min<int>(k_interp, static_cast<int>(s));

  ad::InterpWeights w(static_cast<size_t>(dst_coords.rows()));
  std::vector<std::pair<double, int>> d;
  d.reserve(static_cast<size_t>(s));
  for (Eigen::Index p = 0; p < dst_coords.rows(); ++p) {
    d.clear();
    for (Eigen::Index q = 0; q < s; ++q)
      d.emplace_back((dst_coords.row(p) - src_coords.row(q)).norm(),
                     static_cast<int>(q));
    std::partial_sort(d.begin(), d.begin() + kk, d.end());
    double total = 0.0;
    for (int j = 0; j < kk; ++j) total += 1.0 / (d[static_cast<size_t>(j)].first + eps);
    auto& row = w[static_cast<size_t>(p)];
    row.reserve(static_cast<size_t>(kk));
    for (int j = 0; j < kk; ++j)
      row.emplace_back(d[static_cast<size_t>(j)].second,
                       (1.0 / (d[static_cast<size_t>(j)].first + eps)) / total);
  }
  return w;
}

ad::Mat propagate_features(const Coords& src_coords, const ad::Mat& src_features,
                           const Coords& dst_coords, int k_interp, double eps) {
  if (src_features.cols() != src_coords.rows())
    throw ParameterError("propagate_features: feature column count " +
                         std::to_string(src_features.cols()) +
                         " != source point count " +
                         std::to_string(src_coords.rows()));
  if (!src_features.allFinite())
    throw DomainError("propagate_features: non-finite features");
  const auto w = interp_weights(src_coords, dst_coords, k_interp, eps);
  ad::Mat out = ad::Mat::Zero(src_features.rows(), dst_coords.rows());
  for (size_t p = 0; p < w.size(); ++p)
    for (const auto& [src, weight] : w[p])
      out.col(static_cast<Eigen::Index>(p)) += weight * src_features.col(src);
  return out;
}

SuperpointPartition build_superpoints(const PointCloudScene& scene, int target_m,
                                      int knn_k, double color_weight) {
  const Eigen::Index n = scene.coords.rows();
  if (n < 1) throw DomainError("build_superpoints: empty scene");
  if (target_m < 1)
    throw ParameterError("build_superpoints: target_m must be >= 1, got " +
                         std::to_string(target_m));

  SuperpointPartition sp;
  sp.assignment.resize(static_cast<size_t>(n));
  if (target_m >= n) {  // finest partition: every point its own superpoint
    for (Eigen::Index p = 0; p < n; ++p) sp.assignment[static_cast<size_t>(p)] = static_cast<int>(p);
    sp.M = static_cast<int>(n);
    return sp;
  }

  const Eigen::RowVector3d lo = scene.coords.colwise().minCoeff();
  const Eigen::RowVector3d hi = scene.coords.colwise().maxCoeff();
  const double diag = (hi - lo).norm();
  if (diag == 0.0) {  // all points coincident: single superpoint
    std::fill(sp.assignment.begin(), sp.assignment.end(), 0);
    sp.M = 1;
    return sp;
  }

  // Sweep cell sizes diag / 2^(k/2); keep the finest grid whose occupied-cell
  // count still fits target_m.
  auto occupied = [&](double cell, std::unordered_map<std::array<int, 3>, std::vector<int>, Int3Hash>* cells) {
    cells->clear();
    for (Eigen::Index p = 0; p < n; ++p) {
      std::array<int, 3> key;
      for (int d = 0; d < 3; ++d)
        key[static_cast<size_t>(d)] =
            static_cast<int>(std::floor((scene.coords(p, d) - lo(d)) / cell));
      (*cells)[key].push_back(static_cast<int>(p));
    }
    return static_cast<int>(cells->size());
  };

  std::unordered_map<std::array<int, 3>, std::vector<int>, Int3Hash> cells, best_cells;
  int k_exp = 0;
  while (occupied(diag / std::pow(2.0, k_exp / 2.0), &cells) > target_m && k_exp > -80)
    --k_exp;  // coarsen until it fits
  best_cells = cells;
  while (k_exp < 80) {
    const int m_next = occupied(diag / std::pow(2.0, (k_exp + 1) / 2.0), &cells);
    if (m_next > target_m) break;
    best_cells = cells;
    ++k_exp;
  }

  // Seed per cell: the member point nearest the cell's point centroid;
  // ordered by cell key for determinism.
  std::vector<std::pair<std::array<int, 3>, std::vector<int>>> ordered(best_cells.begin(),
                                                                       best_cells.end());
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<int> seeds;
  seeds.reserve(ordered.size());
  for (const auto& [key, members] : ordered) {
    Eigen::RowVector3d centroid = Eigen::RowVector3d::Zero();
    for (int p : members) centroid += scene.coords.row(p);
    centroid /= static_cast<double>(members.size());
    int best = members.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (int p : members) {
      const double d = (scene.coords.row(p) - centroid).squaredNorm();
      if (d < best_d || (d == best_d && p < best)) {
        best_d = d;
        best = p;
      }
    }
    seeds.push_back(best);
  }
  const int m = static_cast<int>(seeds.size());

  // Multi-source shortest-path growth over the k-NN graph; edge cost mixes
  // spatial and color distance so regions respect appearance boundaries.
  const double cw = color_weight >= 0.0 ? color_weight : 0.1 * diag;
  const IdxMat nbr = knn_indices(scene.coords, knn_k);
  std::vector<double> dist(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<int> label(static_cast<size_t>(n), -1);
  using QE = std::tuple<double, int, int>;  // (dist, point, label) — point index breaks ties
  std::priority_queue<QE, std::vector<QE>, std::greater<QE>> pq;
  for (int s = 0; s < m; ++s) {
    dist[static_cast<size_t>(seeds[static_cast<size_t>(s)])] = 0.0;
    label[static_cast<size_t>(seeds[static_cast<size_t>(s)])] = s;
    pq.emplace(0.0, seeds[static_cast<size_t>(s)], s);
  }
  auto edge_cost = [&](int a, int b) {
    const double dx = (scene.coords.row(a) - scene.coords.row(b)).norm();
    const double dc = (scene.colors.row(a) - scene.colors.row(b)).norm();
    return dx + cw * dc;
  };
  while (!pq.empty()) {
    auto [d, p, lab] = pq.top();
    pq.pop();
    if (d > dist[static_cast<size_t>(p)] || label[static_cast<size_t>(p)] != lab) continue;
    for (Eigen::Index j = 0; j < nbr.cols(); ++j) {
      const int q = nbr(p, j);
      const double nd = d + edge_cost(p, q);
      if (nd < dist[static_cast<size_t>(q)]) {
        dist[static_cast<size_t>(q)] = nd;
        label[static_cast<size_t>(q)] = lab;
        pq.emplace(nd, q, lab);
      }
    }
  }
  // Disconnected leftovers go to the Euclidean-nearest seed.
  for (Eigen::Index p = 0; p < n; ++p) {
    if (label[static_cast<size_t>(p)] >= 0) continue;
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int s = 0; s < m; ++s) {
      const double d = sq_dist(scene.coords, p, scene.coords, seeds[static_cast<size_t>(s)]);
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    label[static_cast<size_t>(p)] = best;
  }
  sp.assignment.assign(label.begin(), label.end());
  sp.M = m;
  return sp;
}

ad::Mat superpoint_pool(const ad::Mat& point_features, const SuperpointPartition& sp,
                        PoolReduce reduce) {
  if (point_features.cols() != static_cast<Eigen::Index>(sp.assignment.size()))
    throw ParameterError("superpoint_pool: feature column count " +
                         std::to_string(point_features.cols()) +
                         " != partition size " + std::to_string(sp.assignment.size()));
  ad::Mat out;
  if (reduce == PoolReduce::Mean) {
    out = ad::Mat::Zero(point_features.rows(), sp.M);
    std::vector<double> counts(static_cast<size_t>(sp.M), 0.0);
    for (size_t p = 0; p < sp.assignment.size(); ++p) {
      out.col(sp.assignment[p]) += point_features.col(static_cast<Eigen::Index>(p));
      counts[static_cast<size_t>(sp.assignment[p])] += 1.0;
    }
    for (int g = 0; g < sp.M; ++g) out.col(g) /= counts[static_cast<size_t>(g)];
  } else {
    out = ad::Mat::Constant(point_features.rows(), sp.M,
                            -std::numeric_limits<double>::infinity());
    for (size_t p = 0; p < sp.assignment.size(); ++p)
      out.col(sp.assignment[p]) =
          out.col(sp.assignment[p]).cwiseMax(point_features.col(static_cast<Eigen::Index>(p)));
  }
  return out;
}

Eigen::VectorXd expand_mask(const Eigen::VectorXd& sp_mask,
                            const SuperpointPartition& sp) {
  if (sp_mask.size() != sp.M)
    throw ParameterError("expand_mask: mask length " + std::to_string(sp_mask.size()) +
                         " != superpoint count " + std::to_string(sp.M));
  Eigen::VectorXd out(static_cast<Eigen::Index>(sp.assignment.size()));
  for (size_t p = 0; p < sp.assignment.size(); ++p)
    out(static_cast<Eigen::Index>(p)) = sp_mask(sp.assignment[p]);
  return out;
}

}  // namespace egosag
