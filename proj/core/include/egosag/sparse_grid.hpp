#pragma once

// Multi-resolution structure for the sparse voxel backbone. Level 0 holds
// the active sites of the input grid; each coarser level halves the integer
// keys (floor division), keeping only sites that contain at least one finer
// site. The index matrices below let convolutions run as plain gathers:
//
//   neighbors  — 27×S, the 3×3×3 window around each site at the same level
//                (submanifold convolution: output sites = input sites),
//   children   — 8×S', the 2×2×2 fine-level footprint of each coarse site
//                (stride-2 downsampling),
//   parent     — S entries mapping each site to its coarse-level site
//                (upsampling by parent lookup).
//
// Offsets use a fixed lexicographic order so weight layouts are stable.

#include <array>
#include <vector>

#include "egosag/pointcloud.hpp"

namespace egosag {

struct GridLevel {
  std::vector<std::array<int, 3>> sites;  // sorted lexicographically
  IdxMat neighbors;   // 27 x S, entry -1 where the neighbor site is absent
  IdxMat children;    // 8 x S at this level, indices into the PREVIOUS
                      // (finer) level; empty matrix at level 0
  std::vector<int> parent;   // index into the NEXT (coarser) level; empty at the top
  Coords centroids;   // S x 3, count-weighted mean of member point centroids
  std::vector<int> counts;   // member point count per site
  std::vector<int> source_index;  // level 0 only: site -> column in the
                                  // originating grid's site_features
};

struct GridHierarchy {
  std::vector<GridLevel> levels;  // levels[0] = full resolution
};

// Offset enumeration used by the index matrices: row k of `neighbors` is the
// offset (dx, dy, dz) with k = ((dx+1)*3 + (dy+1))*3 + (dz+1); row k of
// `children` is (ox, oy, oz) with k = (ox*2 + oy)*2 + oz, o ∈ {0,1}.
int neighbor_offset_index(int dx, int dy, int dz);
int child_offset_index(int ox, int oy, int oz);

// Builds `n_levels` resolutions from a voxel grid's active sites. Throws
// DomainError naming the level when any level ends up with zero sites (only
// possible when the input grid is empty).
GridHierarchy build_hierarchy(const VoxelGrid& grid, int n_levels);

}  // namespace egosag
