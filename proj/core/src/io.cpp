#include "egosag/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "egosag/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

namespace egosag::io {
namespace {

using nlohmann::json;

// --- byte-level primitives -------------------------------------------------

void append_u32(std::string& out, uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void append_f32(std::string& out, float v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

// Cursor over an in-memory file image; every read is bounds-checked so a
// truncated file surfaces as Corrupt instead of undefined behaviour.
struct Reader {
  const std::string& bytes;
  const std::string& path;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > bytes.size()) {
      throw DataError(DataError::Kind::Corrupt,
                      path + ": truncated file (needed " + std::to_string(n) +
                          " more bytes at offset " + std::to_string(pos) + ")");
    }
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  float f32() {
    need(4);
    float v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  void raw(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  }
  void skip(size_t n) {
    need(n);
    pos += n;
  }
};

void check_magic(Reader& r, const char expect[4], const char* what) {
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, expect, 4) != 0) {
    throw DataError(DataError::Kind::VersionMismatch,
                    r.path + ": not a " + what + " file (bad magic bytes)");
  }
}

void check_version(Reader& r, uint32_t expect, const char* what) {
  const uint32_t v = r.u32();
  if (v != expect) {
    throw DataError(DataError::Kind::VersionMismatch,
                    r.path + ": unsupported " + what + " version " +
                        std::to_string(v) + " (expected " +
                        std::to_string(expect) + ")");
  }
}

json parse_json_file(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  json j = json::parse(bytes, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) {
    throw DataError(DataError::Kind::Corrupt, path + ": invalid JSON");
  }
  return j;
}

template <typename Fn>
auto json_field(const json& j, const std::string& path, const char* key,
                Fn&& get) {
  if (!j.contains(key)) {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": missing field \"" + key + "\"");
  }
  try {
    return get(j.at(key));
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": field \"" + key + "\": " + e.what());
  }
}

uint8_t color_byte(double c) {
  const double scaled = std::round(c * 255.0);
  return static_cast<uint8_t>(std::min(255.0, std::max(0.0, scaled)));
}

}  // namespace

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(DataError::Kind::MissingFile,
                    path + ": cannot open file for reading");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError(DataError::Kind::MissingFile,
                    path + ": cannot open file for writing");
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw DataError(DataError::Kind::Corrupt, path + ": short write");
  }
}

// --- PLY -------------------------------------------------------------------

void save_scene_ply(const PointCloudScene& scene, const std::string& path) {
  if (scene.coords.rows() != scene.colors.rows()) {
    throw ParameterError("save_scene_ply: coords/colors row mismatch");
  }
  std::string out;
  std::ostringstream header;
  header << "ply\n"
         << "format binary_little_endian 1.0\n"
         << "element vertex " << scene.coords.rows() << "\n"
         << "property float x\n"
         << "property float y\n"
         << "property float z\n"
         << "property uchar red\n"
         << "property uchar green\n"
         << "property uchar blue\n"
         << "end_header\n";
  out = header.str();
  out.reserve(out.size() + static_cast<size_t>(scene.coords.rows()) * 15);
  for (Eigen::Index i = 0; i < scene.coords.rows(); ++i) {
    for (int d = 0; d < 3; ++d) {
      append_f32(out, static_cast<float>(scene.coords(i, d)));
    }
    for (int d = 0; d < 3; ++d) {
      out.push_back(static_cast<char>(color_byte(scene.colors(i, d))));
    }
  }
  write_file_bytes(path, out);
}

PointCloudScene load_scene_ply(const std::string& path) {
  const std::string bytes = read_file_bytes(path);

  // Header: ASCII lines up to and including "end_header\n".
  const size_t header_end = bytes.find("end_header\n");
  if (bytes.rfind("ply\n", 0) != 0 || header_end == std::string::npos) {
    throw DataError(DataError::Kind::VersionMismatch,
                    path + ": not a binary PLY file");
  }
  std::istringstream header(bytes.substr(0, header_end));
  std::string line;
  std::getline(header, line);  // "ply"

  struct Property {
    std::string name;
    size_t size = 0;
    bool is_float = false;
    bool is_uchar = false;
  };
  std::vector<Property> props;
  Eigen::Index n_vertices = -1;
  bool in_vertex_element = false;
  bool format_ok = false;

  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment") continue;
    if (tok == "format") {
      std::string fmt, ver;
      ls >> fmt >> ver;
      if (fmt != "binary_little_endian" || ver != "1.0") {
        throw DataError(DataError::Kind::VersionMismatch,
                        path + ": unsupported PLY format \"" + fmt + " " + ver +
                            "\" (need binary_little_endian 1.0)");
      }
      format_ok = true;
    } else if (tok == "element") {
      std::string name;
      long long count = 0;
      ls >> name >> count;
      if (name == "vertex") {
        if (n_vertices >= 0) {
          throw DataError(DataError::Kind::Corrupt,
                          path + ": duplicate vertex element");
        }
        n_vertices = static_cast<Eigen::Index>(count);
        in_vertex_element = true;
      } else {
        if (n_vertices < 0) {
          throw DataError(DataError::Kind::Corrupt,
                          path + ": element \"" + name +
                              "\" precedes the vertex element");
        }
        in_vertex_element = false;  // trailing elements are ignored
      }
    } else if (tok == "property" && in_vertex_element) {
      std::string type, name;
      ls >> type >> name;
      if (type == "list") {
        throw DataError(DataError::Kind::Corrupt,
                        path + ": list property in vertex element");
      }
      Property p;
      p.name = name;
      if (type == "float" || type == "float32") {
        p.size = 4;
        p.is_float = true;
      } else if (type == "double" || type == "float64") {
        p.size = 8;
      } else if (type == "uchar" || type == "uint8") {
        p.size = 1;
        p.is_uchar = true;
      } else if (type == "char" || type == "int8") {
        p.size = 1;
      } else if (type == "short" || type == "ushort" || type == "int16" ||
                 type == "uint16") {
        p.size = 2;
      } else if (type == "int" || type == "uint" || type == "int32" ||
                 type == "uint32") {
        p.size = 4;
      } else {
        throw DataError(DataError::Kind::Corrupt,
                        path + ": unknown property type \"" + type + "\"");
      }
      props.push_back(p);
    }
  }
  if (!format_ok || n_vertices < 0) {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": header lacks format or vertex element");
  }

  // Locate the six standard properties.
  int coord_slot[3] = {-1, -1, -1};
  int color_slot[3] = {-1, -1, -1};
  const char* coord_names[3] = {"x", "y", "z"};
  const char* color_names[3] = {"red", "green", "blue"};
  size_t stride = 0;
  std::vector<size_t> offsets;
  for (const Property& p : props) {
    offsets.push_back(stride);
    stride += p.size;
  }
  for (size_t i = 0; i < props.size(); ++i) {
    for (int d = 0; d < 3; ++d) {
      if (props[i].name == coord_names[d]) {
        if (!props[i].is_float) {
          throw DataError(DataError::Kind::Corrupt,
                          path + ": property " + props[i].name +
                              " must be float32");
        }
        coord_slot[d] = static_cast<int>(i);
      }
      if (props[i].name == color_names[d]) {
        if (!props[i].is_uchar) {
          throw DataError(DataError::Kind::Corrupt,
                          path + ": property " + props[i].name +
                              " must be uchar");
        }
        color_slot[d] = static_cast<int>(i);
      }
    }
  }
  for (int d = 0; d < 3; ++d) {
    if (coord_slot[d] < 0 || color_slot[d] < 0) {
      throw DataError(DataError::Kind::Corrupt,
                      path + ": vertex element lacks x/y/z float and "
                             "red/green/blue uchar properties");
    }
  }

  Reader r{bytes, path, header_end + std::strlen("end_header\n")};
  PointCloudScene scene;
  scene.coords.resize(n_vertices, 3);
  scene.colors.resize(n_vertices, 3);
  for (Eigen::Index i = 0; i < n_vertices; ++i) {
    r.need(stride);
    const char* base = bytes.data() + r.pos;
    for (int d = 0; d < 3; ++d) {
      float f;
      std::memcpy(&f, base + offsets[static_cast<size_t>(coord_slot[d])], 4);
      scene.coords(i, d) = static_cast<double>(f);
      const auto b = static_cast<uint8_t>(
          base[offsets[static_cast<size_t>(color_slot[d])]]);
      scene.colors(i, d) = static_cast<double>(b) / 255.0;
    }
    r.pos += stride;
  }
  return scene;
}

void save_scene_sidecar(const PointCloudScene& scene, const std::string& path) {
  if (scene.gt_masks.size() != scene.gt_affordance_ids.size()) {
    throw ParameterError("save_scene_sidecar: mask/id list length mismatch");
  }
  json regions = json::array();
  for (size_t m = 0; m < scene.gt_masks.size(); ++m) {
    json indices = json::array();
    for (size_t p = 0; p < scene.gt_masks[m].size(); ++p) {
      if (scene.gt_masks[m][p]) indices.push_back(p);
    }
    regions.push_back({{"affordance_id", scene.gt_affordance_ids[m]},
                       {"point_indices", std::move(indices)}});
  }
  json j = {{"scene_id", scene.scene_id}, {"regions", std::move(regions)}};
  write_file_bytes(path, j.dump(2) + "\n");
}

void load_scene_sidecar(PointCloudScene& scene, const std::string& path) {
  const json j = parse_json_file(path);
  scene.scene_id = json_field(j, path, "scene_id",
                              [](const json& v) { return v.get<std::string>(); });
  scene.gt_masks.clear();
  scene.gt_affordance_ids.clear();
  const Eigen::Index n = scene.coords.rows();
  const json regions = json_field(j, path, "regions",
                                  [](const json& v) { return v; });
  if (!regions.is_array()) {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": \"regions\" must be an array");
  }
  for (const json& region : regions) {
    const int affordance_id =
        json_field(region, path, "affordance_id",
                   [](const json& v) { return v.get<int>(); });
    const std::vector<long long> indices =
        json_field(region, path, "point_indices", [](const json& v) {
          return v.get<std::vector<long long>>();
        });
    std::vector<uint8_t> mask(static_cast<size_t>(n), 0);
    for (long long idx : indices) {
      if (idx < 0 || idx >= n) {
        throw DataError(DataError::Kind::Corrupt,
                        path + ": point index " + std::to_string(idx) +
                            " outside scene of " + std::to_string(n) +
                            " points");
      }
      mask[static_cast<size_t>(idx)] = 1;
    }
    scene.gt_masks.push_back(std::move(mask));
    scene.gt_affordance_ids.push_back(affordance_id);
  }
}

void save_scene(const PointCloudScene& scene, const std::string& ply_path,
                const std::string& sidecar_path) {
  save_scene_ply(scene, ply_path);
  save_scene_sidecar(scene, sidecar_path);
}

PointCloudScene load_scene(const std::string& ply_path,
                           const std::string& sidecar_path) {
  PointCloudScene scene = load_scene_ply(ply_path);
  load_scene_sidecar(scene, sidecar_path);
  return scene;
}

void quantize_scene_to_storage(PointCloudScene& scene) {
  for (Eigen::Index i = 0; i < scene.coords.rows(); ++i) {
    for (int d = 0; d < 3; ++d) {
      scene.coords(i, d) = to_storage_precision(scene.coords(i, d));
      scene.colors(i, d) = static_cast<double>(color_byte(scene.colors(i, d))) / 255.0;
    }
  }
}

// --- raw clip blocks -------------------------------------------------------

void save_clip_block(const ClipBlock& clip, const std::string& path) {
  const Eigen::Index n = static_cast<Eigen::Index>(clip.t) * clip.h * clip.w;
  if (clip.t <= 0 || clip.h <= 0 || clip.w <= 0 || clip.pixels.rows() != 3 ||
      clip.pixels.cols() != n) {
    throw ParameterError("save_clip_block: pixel matrix does not match t*h*w");
  }
  std::string out;
  out.reserve(20 + static_cast<size_t>(n) * 12);
  out.append("EGSC", 4);
  append_u32(out, kClipBlockVersion);
  append_u32(out, static_cast<uint32_t>(clip.t));
  append_u32(out, static_cast<uint32_t>(clip.h));
  append_u32(out, static_cast<uint32_t>(clip.w));
  // Column index already enumerates (frame, row, column) lexicographically,
  // so streaming columns with the channel innermost gives T,H,W,3 order.
  for (Eigen::Index col = 0; col < n; ++col) {
    for (int c = 0; c < 3; ++c) {
      append_f32(out, static_cast<float>(clip.pixels(c, col)));
    }
  }
  write_file_bytes(path, out);
}

ClipBlock load_clip_block(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  Reader r{bytes, path};
  check_magic(r, "EGSC", "clip block");
  check_version(r, kClipBlockVersion, "clip block");
  ClipBlock clip;
  clip.t = static_cast<int>(r.u32());
  clip.h = static_cast<int>(r.u32());
  clip.w = static_cast<int>(r.u32());
  if (clip.t <= 0 || clip.h <= 0 || clip.w <= 0) {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": non-positive clip dimensions");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(clip.t) * clip.h * clip.w;
  r.need(static_cast<size_t>(n) * 12);
  clip.pixels.resize(3, n);
  for (Eigen::Index col = 0; col < n; ++col) {
    for (int c = 0; c < 3; ++c) {
      clip.pixels(c, col) = static_cast<double>(r.f32());
    }
  }
  if (r.pos != bytes.size()) {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": trailing bytes after pixel payload");
  }
  return clip;
}

// --- precomputed clip tokens -----------------------------------------------

void save_clip_tokens(const ClipTokenRecord& record, const std::string& path,
                      const std::string& sidecar_path) {
  const ad::Mat& t = record.tokens;
  if (t.rows() <= 0 || t.cols() <= 0) {
    throw ParameterError("save_clip_tokens: empty token matrix");
  }
  std::string out;
  out.append("EGSF", 4);
  append_u32(out, kClipTokenVersion);
  append_u32(out, static_cast<uint32_t>(t.rows()));
  append_u32(out, static_cast<uint32_t>(t.cols()));
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
      append_f32(out, static_cast<float>(t(r, c)));
    }
  }
  write_file_bytes(path, out);

  json j = {{"clip_id", record.clip_id},
            {"affordance_id", record.affordance_id}};
  write_file_bytes(sidecar_path, j.dump(2) + "\n");
}

ClipTokenRecord load_clip_tokens(const std::string& path,
                                 const std::string& sidecar_path) {
  const std::string bytes = read_file_bytes(path);
  Reader r{bytes, path};
  check_magic(r, "EGSF", "clip feature");
  check_version(r, kClipTokenVersion, "clip feature");
  const auto channels = static_cast<Eigen::Index>(r.u32());
  const auto n_tokens = static_cast<Eigen::Index>(r.u32());
  if (channels <= 0 || n_tokens <= 0) {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": non-positive token dimensions");
  }
  ClipTokenRecord record;
  record.tokens.resize(channels, n_tokens);
  for (Eigen::Index row = 0; row < channels; ++row) {
    for (Eigen::Index col = 0; col < n_tokens; ++col) {
      record.tokens(row, col) = static_cast<double>(r.f32());
    }
  }
  if (r.pos != bytes.size()) {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": trailing bytes after token payload");
  }

  const json j = parse_json_file(sidecar_path);
  record.clip_id =
      json_field(j, sidecar_path, "clip_id",
                 [](const json& v) { return v.get<std::string>(); });
  record.affordance_id =
      json_field(j, sidecar_path, "affordance_id",
                 [](const json& v) { return v.get<int>(); });
  return record;
}

// --- dataset manifest ------------------------------------------------------

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  json pairs = json::array();
  for (const ManifestPair& p : manifest.pairs) {
    pairs.push_back({{"clip_id", p.clip_id},
                     {"scene_id", p.scene_id},
                     {"gt_region_indices", p.gt_region_indices}});
  }
  json catalog = json::object();
  for (const auto& [id, name] : manifest.affordance_catalog) {
    catalog[std::to_string(id)] = name;
  }
  json j = {{"split", manifest.split},
            {"affordance_catalog", std::move(catalog)},
            {"pairs", std::move(pairs)}};
  write_file_bytes(path, j.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::string& path) {
  const json j = parse_json_file(path);
  DatasetManifest manifest;
  manifest.split = json_field(j, path, "split",
                              [](const json& v) { return v.get<std::string>(); });
  if (manifest.split != "train" && manifest.split != "val") {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": split must be \"train\" or \"val\", got \"" +
                        manifest.split + "\"");
  }
  const json catalog = json_field(j, path, "affordance_catalog",
                                  [](const json& v) { return v; });
  if (!catalog.is_object()) {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": \"affordance_catalog\" must be an object");
  }
  for (const auto& [key, value] : catalog.items()) {
    int id = 0;
    try {
      id = std::stoi(key);
    } catch (const std::exception&) {
      throw DataError(DataError::Kind::Corrupt,
                      path + ": non-integer catalog key \"" + key + "\"");
    }
    if (!value.is_string()) {
      throw DataError(DataError::Kind::Corrupt,
                      path + ": catalog entry \"" + key + "\" must be a string");
    }
    manifest.affordance_catalog[id] = value.get<std::string>();
  }
  const json pairs = json_field(j, path, "pairs",
                                [](const json& v) { return v; });
  if (!pairs.is_array()) {
    throw DataError(DataError::Kind::Corrupt,
                    path + ": \"pairs\" must be an array");
  }
  for (const json& p : pairs) {
    ManifestPair pair;
    pair.clip_id = json_field(p, path, "clip_id",
                              [](const json& v) { return v.get<std::string>(); });
    pair.scene_id = json_field(p, path, "scene_id", [](const json& v) {
      return v.get<std::string>();
    });
    pair.gt_region_indices =
        json_field(p, path, "gt_region_indices",
                   [](const json& v) { return v.get<std::vector<int>>(); });
    manifest.pairs.push_back(std::move(pair));
  }
  return manifest;
}

}  // namespace egosag::io
