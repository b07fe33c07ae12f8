#include "egosag/sparse_grid.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <unordered_map>

#include "egosag/errors.hpp"

namespace egosag {

namespace {

struct KeyHash {
  std::size_t operator()(const std::array<int, 3>& k) const {
    std::uint64_t h = 1469598103934665603ull;
    for (int v : k) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v));
      h *= 1099511628211ull;
    }
    return static_cast<std::size_t>(h);
  }
};

int floor_div2(int v) { return (v >= 0) ? v / 2 : -((-v + 1) / 2); }

}  // namespace

int neighbor_offset_index(int dx, int dy, int dz) {
  return ((dx + 1) * 3 + (dy + 1)) * 3 + (dz + 1);
}

int child_offset_index(int ox, int oy, int oz) { return (ox * 2 + oy) * 2 + oz; }

GridHierarchy build_hierarchy(const VoxelGrid& grid, int n_levels) {
  if (n_levels < 1) throw ParameterError("hierarchy needs at least one level");

  GridHierarchy out;
  out.levels.resize(static_cast<std::size_t>(n_levels));

  // Level 0 copies the grid's active sites (already produced in sorted key
  // order by voxelization, but sort defensively: index layout must be stable).
  {
    GridLevel& l0 = out.levels[0];
    l0.sites = grid.active_sites;
    std::sort(l0.sites.begin(), l0.sites.end());
    const int s = static_cast<int>(l0.sites.size());
    l0.centroids.resize(s, 3);
    l0.counts.resize(static_cast<std::size_t>(s));
    // voxelize() emits sites sorted by key, so positions line up after the
    // defensive sort; map through the original order to stay correct anyway.
    std::unordered_map<std::array<int, 3>, int, KeyHash> original;
    original.reserve(grid.active_sites.size() * 2);
    for (std::size_t i = 0; i < grid.active_sites.size(); ++i)
      original.emplace(grid.active_sites[i], static_cast<int>(i));
    l0.source_index.resize(static_cast<std::size_t>(s));
    for (int i = 0; i < s; ++i) {
      const int src = original.at(l0.sites[static_cast<std::size_t>(i)]);
      l0.centroids.row(i) = grid.site_coords.col(src).transpose();
      l0.counts[static_cast<std::size_t>(i)] = grid.site_counts[static_cast<std::size_t>(src)];
      l0.source_index[static_cast<std::size_t>(i)] = src;
    }
  }

  for (int lev = 0; lev < n_levels; ++lev) {
    GridLevel& cur = out.levels[static_cast<std::size_t>(lev)];
    const int s = static_cast<int>(cur.sites.size());
    if (s == 0)
      throw DomainError("sparse hierarchy level " + std::to_string(lev) +
                        " has zero active sites");

    std::unordered_map<std::array<int, 3>, int, KeyHash> lookup;
    lookup.reserve(cur.sites.size() * 2);
    for (int i = 0; i < s; ++i) lookup.emplace(cur.sites[static_cast<std::size_t>(i)], i);

    cur.neighbors.resize(27, s);
    for (int i = 0; i < s; ++i) {
      const auto& key = cur.sites[static_cast<std::size_t>(i)];
      for (int dx = -1; dx <= 1; ++dx)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dz = -1; dz <= 1; ++dz) {
            const std::array<int, 3> nb = {key[0] + dx, key[1] + dy, key[2] + dz};
            auto it = lookup.find(nb);
            cur.neighbors(neighbor_offset_index(dx, dy, dz), i) =
                (it == lookup.end()) ? -1 : it->second;
          }
    }

    if (lev + 1 >= n_levels) break;

    // Coarsen: parent key = floor(key / 2) per dimension.
    GridLevel& next = out.levels[static_cast<std::size_t>(lev + 1)];
    for (const auto& key : cur.sites)
      next.sites.push_back({floor_div2(key[0]), floor_div2(key[1]), floor_div2(key[2])});
    std::sort(next.sites.begin(), next.sites.end());
    next.sites.erase(std::unique(next.sites.begin(), next.sites.end()), next.sites.end());

    std::unordered_map<std::array<int, 3>, int, KeyHash> coarse;
    coarse.reserve(next.sites.size() * 2);
    const int sn = static_cast<int>(next.sites.size());
    for (int i = 0; i < sn; ++i) coarse.emplace(next.sites[static_cast<std::size_t>(i)], i);

    cur.parent.resize(static_cast<std::size_t>(s));
    for (int i = 0; i < s; ++i) {
      const auto& key = cur.sites[static_cast<std::size_t>(i)];
      cur.parent[static_cast<std::size_t>(i)] =
          coarse.at({floor_div2(key[0]), floor_div2(key[1]), floor_div2(key[2])});
    }

    next.children = IdxMat::Constant(8, sn, -1);
    for (int i = 0; i < s; ++i) {
      const auto& key = cur.sites[static_cast<std::size_t>(i)];
      const int p = cur.parent[static_cast<std::size_t>(i)];
      const auto& pkey = next.sites[static_cast<std::size_t>(p)];
      const int ox = key[0] - 2 * pkey[0];
      const int oy = key[1] - 2 * pkey[1];
      const int oz = key[2] - 2 * pkey[2];
      next.children(child_offset_index(ox, oy, oz), p) = i;
    }

    // Count-weighted centroids carried up so coarse sites keep a physical
    // position for the decoder's spatial layers.
    next.centroids = Coords::Zero(sn, 3);
    next.counts.assign(static_cast<std::size_t>(sn), 0);
    for (int i = 0; i < s; ++i) {
      const int p = cur.parent[static_cast<std::size_t>(i)];
      const int c = cur.counts[static_cast<std::size_t>(i)];
      next.centroids.row(p) += cur.centroids.row(i) * static_cast<double>(c);
      next.counts[static_cast<std::size_t>(p)] += c;
    }
    for (int p = 0; p < sn; ++p)
      next.centroids.row(p) /= static_cast<double>(next.counts[static_cast<std::size_t>(p)]);
  }

  return out;
}

}  // namespace egosag
