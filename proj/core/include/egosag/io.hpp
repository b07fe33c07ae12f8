#pragma once

// On-disk formats: binary PLY point clouds with a JSON region sidecar, raw
// clip pixel blocks, precomputed clip-token files, and the dataset manifest
// tying scenes and clips into train/val pairs. All binary containers are
// little-endian with float32 payloads; readers fail with DataError carrying
// the failure kind (missing file, version mismatch, corrupt payload).

#include <map>
#include <string>
#include <vector>

#include "egosag/encoders.hpp"
#include "egosag/pointcloud.hpp"
#include "egosag/tensor.hpp"

namespace egosag::io {

// ---------------------------------------------------------------------------
// PLY scenes. Vertices carry x,y,z as float32 and red,green,blue as uint8.
// The writer emits exactly that layout; the reader tolerates extra vertex
// properties (skipped) and any property order, but requires the six standard
// ones with their standard types.
// ---------------------------------------------------------------------------

void save_scene_ply(const PointCloudScene& scene, const std::string& path);

// Returns a scene with coords/colors/scene_id only (masks live in the sidecar).
PointCloudScene load_scene_ply(const std::string& path);

// Sidecar JSON: {"scene_id", "regions": [{"affordance_id", "point_indices"}]}.
// Point indices refer to PLY vertex order.
void save_scene_sidecar(const PointCloudScene& scene, const std::string& path);
void load_scene_sidecar(PointCloudScene& scene, const std::string& path);

void save_scene(const PointCloudScene& scene, const std::string& ply_path,
                const std::string& sidecar_path);
PointCloudScene load_scene(const std::string& ply_path,
                           const std::string& sidecar_path);

// Rounds coords through float32 and colors onto the 1/255 grid so that a
// save/load cycle reproduces the scene exactly. Generators call this before
// returning; anything loaded from disk is already a fixed point.
void quantize_scene_to_storage(PointCloudScene& scene);

// ---------------------------------------------------------------------------
// Raw clip blocks: header {magic "EGSC", version, T, H, W : u32} followed by
// float32 pixels in frame, row, column, channel order.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kClipBlockVersion = 1;

void save_clip_block(const ClipBlock& clip, const std::string& path);
ClipBlock load_clip_block(const std::string& path);

// ---------------------------------------------------------------------------
// Precomputed clip tokens: header {magic "EGSF", version, C, n_tokens : u32}
// followed by row-major float32 tokens, plus a JSON sidecar
// {"clip_id", "affordance_id"}.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kClipTokenVersion = 1;

struct ClipTokenRecord {
  ad::Mat tokens;  // C x n_tokens
  std::string clip_id;
  int affordance_id = -1;
};

void save_clip_tokens(const ClipTokenRecord& record, const std::string& path,
                      const std::string& sidecar_path);
ClipTokenRecord load_clip_tokens(const std::string& path,
                                 const std::string& sidecar_path);

// ---------------------------------------------------------------------------
// Dataset manifest JSON:
//   {"split", "affordance_catalog": {"id": "name", ...},
//    "pairs": [{"clip_id", "scene_id", "gt_region_indices": [int,...]}, ...]}
// ---------------------------------------------------------------------------

struct ManifestPair {
  std::string clip_id;
  std::string scene_id;
  std::vector<int> gt_region_indices;
};

struct DatasetManifest {
  std::vector<ManifestPair> pairs;
  std::map<int, std::string> affordance_catalog;
  std::string split;  // "train" or "val"
};

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// ---------------------------------------------------------------------------
// Shared low-level helpers (also used by the checkpoint container).
// ---------------------------------------------------------------------------

// Reads the whole file; DataError{MissingFile} when it cannot be opened.
std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);

// Round a double through float32 precision.
inline double to_storage_precision(double v) {
  return static_cast<double>(static_cast<float>(v));
}

}  // namespace egosag::io
