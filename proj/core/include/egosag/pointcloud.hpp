#pragma once

// Geometry and partition primitives shared by the scene encoder and the
// intention-aware decoder layers: voxelization, farthest point sampling,
// radius-bounded k-NN grouping, inverse-distance propagation, superpoint
// partitioning, pooling, and mask expansion. All functions are pure.

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "egosag/tensor.hpp"

namespace egosag {

// Rows are points (N x 3); feature matrices elsewhere are channels x items.
using Coords = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using IdxMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

struct PointCloudScene {
  Coords coords;                    // meters
  Coords colors;                    // rgb in [0,1]
  std::vector<std::vector<uint8_t>> gt_masks;  // each length N, values 0/1
  std::vector<int> gt_affordance_ids;          // one per gt mask
  std::string scene_id;

  Eigen::Index size() const { return coords.rows(); }
};

// Throws DomainError/DataError when the scene breaks its invariants
// (non-finite coords, empty cloud, empty masks, list length mismatch).
void validate_scene(const PointCloudScene& scene);

struct SuperpointPartition {
  std::vector<int> assignment;  // point -> superpoint in [0, M)
  int M = 0;
};

struct VoxelGrid {
  double voxel_size = 0.0;
  std::vector<std::array<int, 3>> active_sites;  // integer cell coordinates
  ad::Mat site_features;   // 3 x S color means (6 x S with coords appended)
  ad::Mat site_coords;     // 3 x S mean point position per site
  std::vector<int> point_to_site;  // length N
  std::vector<int> site_counts;    // points per site
};

VoxelGrid voxelize(const PointCloudScene& scene, double voxel_size,
                   bool include_coords = false);

// Greedy max-min sampling; first pick is seed_index, ties broken by lowest
// index. Returns n_c point indices.
std::vector<int> farthest_point_sample(const Coords& coords, int n_c,
                                       int seed_index = 0);

// For each centroid the up-to-k nearest points within radius r, sorted by
// (distance, index); short rows are padded with the centroid's own index.
// Result is n_c x k (row per centroid).
IdxMat ball_query_knn(const Coords& coords, const std::vector<int>& centroid_indices,
                      int k, double r);

// Normalized inverse-distance weights (w = 1/(d+eps) over the k_interp nearest
// sources) mapping src columns to dst columns; feed to ad::interpolate_cols.
ad::InterpWeights interp_weights(const Coords& src_coords, const Coords& dst_coords,
                                 int k_interp = 3, double eps = 1e-8);

// src_features is C x S (column per source); returns C x N_dst.
ad::Mat propagate_features(const Coords& src_coords, const ad::Mat& src_features,
                           const Coords& dst_coords, int k_interp = 3,
                           double eps = 1e-8);

// Deterministic partition: voxel-grid seeding (cell size swept until the
// occupied-cell count fits target_m, seed = point nearest each cell's
// centroid) followed by multi-source shortest-path growth over a k-NN graph
// with spatial + color edge costs. target_m >= N degenerates to the identity
// partition. color_weight < 0 selects a scale-aware default.
SuperpointPartition build_superpoints(const PointCloudScene& scene, int target_m,
                                      int knn_k = 8, double color_weight = -1.0);

enum class PoolReduce { Mean, Max };

// Column m = reduce of point feature columns assigned to superpoint m.
ad::Mat superpoint_pool(const ad::Mat& point_features, const SuperpointPartition& sp,
                        PoolReduce reduce = PoolReduce::Mean);

// output[p] = sp_mask[assignment[p]]
Eigen::VectorXd expand_mask(const Eigen::VectorXd& sp_mask,
                            const SuperpointPartition& sp);

// Plain k-NN (self excluded), rows sorted by (distance, index); used for the
// superpoint graph and available to callers needing neighbor structure.
IdxMat knn_indices(const Coords& coords, int k);

}  // namespace egosag
