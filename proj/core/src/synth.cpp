#include "egosag/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "egosag/errors.hpp"
#include "egosag/rng.hpp"

namespace egosag::synth {
namespace {

// --- geometric primitives --------------------------------------------------

struct Vec3 {
  double x, y, z;
};

// A sampleable surface patch with a shared interface: planes, boxes, and
// cylinders all reduce to "draw a surface point".
struct Primitive {
  enum class Shape { Plane, Box, Cylinder } shape;
  Vec3 origin{};   // plane corner / box min corner / cylinder base center
  Vec3 extent{};   // plane edge lengths (2 used) / box size / (r, h, r)
  int axis = 1;    // plane normal axis (0=x,1=y,2=z)
  bool is_furniture = false;

  Vec3 sample(Rng& rng) const {
    switch (shape) {
      case Shape::Plane: {
        // Rectangle spanning the two axes other than `axis`.
        const double u = rng.uniform();
        const double v = rng.uniform();
        Vec3 p = origin;
        if (axis == 0) {
          p.y += u * extent.y;
          p.z += v * extent.z;
        } else if (axis == 1) {
          p.x += u * extent.x;
          p.z += v * extent.z;
        } else {
          p.x += u * extent.x;
          p.y += v * extent.y;
        }
        return p;
      }
      case Shape::Box: {
        // Pick a visible face (skip the bottom) weighted by area.
        const double sx = extent.x, sy = extent.y, sz = extent.z;
        const double a_top = sx * sz;
        const double a_xf = sx * sy;  // two faces normal to z
        const double a_zf = sy * sz;  // two faces normal to x
        const double total = a_top + 2.0 * a_xf + 2.0 * a_zf;
        double pick = rng.uniform() * total;
        const double u = rng.uniform();
        const double v = rng.uniform();
        Vec3 p = origin;
        if ((pick -= a_top) < 0.0) {
          p.x += u * sx;
          p.y += sy;
          p.z += v * sz;
        } else if ((pick -= a_xf) < 0.0) {
          p.x += u * sx;
          p.y += v * sy;
        } else if ((pick -= a_xf) < 0.0) {
          p.x += u * sx;
          p.y += v * sy;
          p.z += sz;
        } else if ((pick -= a_zf) < 0.0) {
          p.y += u * sy;
          p.z += v * sz;
        } else {
          p.x += sx;
          p.y += u * sy;
          p.z += v * sz;
        }
        return p;
      }
      case Shape::Cylinder: {
        const double r = extent.x, h = extent.y;
        const double a_side = 2.0 * M_PI * r * h;
        const double a_top = M_PI * r * r;
        Vec3 p = origin;  // base center
        if (rng.uniform() * (a_side + a_top) < a_side) {
          const double theta = rng.uniform() * 2.0 * M_PI;
          p.x += r * std::cos(theta);
          p.z += r * std::sin(theta);
          p.y += rng.uniform() * h;
        } else {
          // Uniform over the top disk.
          const double theta = rng.uniform() * 2.0 * M_PI;
          const double rad = r * std::sqrt(rng.uniform());
          p.x += rad * std::cos(theta);
          p.z += rad * std::sin(theta);
          p.y += h;
        }
        return p;
      }
    }
    return origin;
  }
};

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1)      { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else             { r = c; b = x; }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

double snap_255(double c) {
  return std::round(std::min(1.0, std::max(0.0, c)) * 255.0) / 255.0;
}

int positive_mod(int a, int m) { return ((a % m) + m) % m; }

}  // namespace

void validate_synth_config(const SynthConfig& cfg) {
  if (cfg.n_scenes <= 0 || cfg.n_clips <= 0 || cfg.points_per_scene < 64) {
    throw ParameterError(
        "synth config: scene/clip counts must be positive and scenes need "
        "at least 64 points");
  }
  const int max_classes = static_cast<int>(affordance_names().size());
  if (cfg.n_classes < 1 || cfg.n_classes > max_classes) {
    throw ParameterError("synth config: n_classes must be in [1, " +
                         std::to_string(max_classes) + "]");
  }
  if (cfg.regions_min < 1 || cfg.regions_max > 4 ||
      cfg.regions_min > cfg.regions_max) {
    throw ParameterError(
        "synth config: regions_per_scene range must satisfy "
        "1 <= min <= max <= 4");
  }
  if (cfg.coord_noise < 0 || cfg.color_noise < 0 || cfg.pixel_noise < 0) {
    throw ParameterError("synth config: noise levels must be non-negative");
  }
  if (cfg.frames < 1 || cfg.frame_h < 8 || cfg.frame_w < 8) {
    throw ParameterError(
        "synth config: clips need frames >= 1 and frame size >= 8");
  }
  if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0) {
    throw ParameterError("synth config: val_fraction must be in [0, 1)");
  }
}

const std::vector<std::string>& affordance_names() {
  static const std::vector<std::string> names = {
      "open",  "close", "grasp", "push",  "pull",    "pour",
      "cut",   "mix",   "turn",  "lift",  "place",   "wipe",
      "press", "hold",  "shake", "fold",  "squeeze",
  };
  return names;
}

std::array<double, 3> affordance_color(int affordance_id) {
  if (affordance_id < 0) {
    throw ParameterError("affordance_color: negative class id");
  }
  // Golden-angle hue spacing keeps the first couple dozen hues far apart;
  // saturation/value stay high so codes never collide with the muted room.
  const double hue = std::fmod(0.11 + 0.61803398875 * affordance_id, 1.0);
  auto rgb = hsv_to_rgb(hue, 0.85, 0.95);
  for (double& c : rgb) c = snap_255(c);
  return rgb;
}

PointCloudScene generate_scene(const SynthConfig& cfg, int index) {
  validate_synth_config(cfg);
  Rng rng = Rng::derive(cfg.rng_seed, "synth/scene",
                        static_cast<std::uint64_t>(index));

  // Room shell.
  const double sx = rng.uniform(2.2, 3.2);
  const double sz = rng.uniform(2.2, 3.2);
  const double wall_h = rng.uniform(1.2, 1.8);

  std::vector<Primitive> prims;
  prims.push_back({Primitive::Shape::Plane, {0, 0, 0}, {sx, 0, sz}, 1, false});
  prims.push_back({Primitive::Shape::Plane, {0, 0, 0}, {0, wall_h, sz}, 0, false});
  prims.push_back({Primitive::Shape::Plane, {0, 0, 0}, {sx, wall_h, 0}, 2, false});

  const int n_boxes = rng.range_int(1, 2);
  const int n_cyls = rng.range_int(1, 2);
  for (int b = 0; b < n_boxes; ++b) {
    const double bx = rng.uniform(0.3, 0.8);
    const double bz = rng.uniform(0.3, 0.8);
    const double by = rng.uniform(0.3, 0.9);
    const double px = rng.uniform(0.2, sx - bx - 0.2);
    const double pz = rng.uniform(0.2, sz - bz - 0.2);
    prims.push_back(
        {Primitive::Shape::Box, {px, 0, pz}, {bx, by, bz}, 1, true});
  }
  for (int c = 0; c < n_cyls; ++c) {
    const double r = rng.uniform(0.1, 0.25);
    const double h = rng.uniform(0.3, 0.8);
    const double px = rng.uniform(0.2 + r, sx - r - 0.2);
    const double pz = rng.uniform(0.2 + r, sz - r - 0.2);
    prims.push_back(
        {Primitive::Shape::Cylinder, {px, 0, pz}, {r, h, r}, 1, true});
  }

  // Point budget: furniture carries most of the detail.
  const int n_total = cfg.points_per_scene;
  std::vector<int> budget(prims.size(), 0);
  const int n_furniture = n_boxes + n_cyls;
  const int furn_points = static_cast<int>(0.55 * n_total);
  const int floor_points = static_cast<int>(0.25 * n_total);
  budget[0] = floor_points;
  for (size_t i = 3; i < prims.size(); ++i) {
    budget[i] = furn_points / n_furniture;
  }
  int used = floor_points + (furn_points / n_furniture) * n_furniture;
  budget[1] = (n_total - used) / 2;
  budget[2] = n_total - used - budget[1];

  // Muted per-primitive base colors; regions get saturated class codes later.
  std::vector<std::array<double, 3>> base_color(prims.size());
  base_color[0] = {0.45, 0.42, 0.38};
  base_color[1] = {0.60, 0.60, 0.62};
  base_color[2] = {0.58, 0.59, 0.57};
  for (size_t i = 3; i < prims.size(); ++i) {
    for (int d = 0; d < 3; ++d) {
      base_color[i][d] = 0.50 + rng.uniform(-0.08, 0.08);
    }
  }

  PointCloudScene scene;
  scene.coords.resize(n_total, 3);
  scene.colors.resize(n_total, 3);
  std::vector<int> point_prim(static_cast<size_t>(n_total), -1);
  int row = 0;
  for (size_t i = 0; i < prims.size(); ++i) {
    for (int p = 0; p < budget[i]; ++p, ++row) {
      Vec3 pos = prims[i].sample(rng);
      scene.coords(row, 0) = pos.x + rng.normal(0.0, cfg.coord_noise);
      scene.coords(row, 1) = pos.y + rng.normal(0.0, cfg.coord_noise);
      scene.coords(row, 2) = pos.z + rng.normal(0.0, cfg.coord_noise);
      for (int d = 0; d < 3; ++d) {
        scene.colors(row, d) =
            base_color[i][d] + rng.uniform(-cfg.color_noise, cfg.color_noise);
      }
      point_prim[static_cast<size_t>(row)] = static_cast<int>(i);
    }
  }

  // Labeled regions: contiguous nearest-neighbor patches on furniture,
  // disjoint by construction, painted with their class color.
  const int n_regions = rng.range_int(cfg.regions_min, cfg.regions_max);
  std::vector<uint8_t> claimed(static_cast<size_t>(n_total), 0);
  char id_buf[32];
  std::snprintf(id_buf, sizeof(id_buf), "scene_%04d", index);
  scene.scene_id = id_buf;
  for (int region = 0; region < n_regions; ++region) {
    const int affordance_id =
        positive_mod(index + 2 * region, cfg.n_classes);
    // Round-robin over furniture; fall back to any primitive with free points.
    std::vector<int> host_order;
    for (int i = 0; i < static_cast<int>(prims.size()); ++i) {
      if (prims[static_cast<size_t>(i)].is_furniture) host_order.push_back(i);
    }
    std::rotate(host_order.begin(),
                host_order.begin() + region % static_cast<int>(host_order.size()),
                host_order.end());
    host_order.push_back(0);  // floor as last resort

    std::vector<int> members;
    for (int host : host_order) {
      std::vector<int> free_points;
      for (int p = 0; p < n_total; ++p) {
        if (point_prim[static_cast<size_t>(p)] == host &&
            !claimed[static_cast<size_t>(p)]) {
          free_points.push_back(p);
        }
      }
      if (free_points.empty()) continue;
      const int anchor =
          free_points[static_cast<size_t>(rng.below(free_points.size()))];
      const int want = std::max(
          1, std::min(static_cast<int>(free_points.size()),
                      static_cast<int>(free_points.size() *
                                       rng.uniform(0.3, 0.5))));
      std::sort(free_points.begin(), free_points.end(), [&](int a, int b) {
        const double da = (scene.coords.row(a) - scene.coords.row(anchor))
                              .squaredNorm();
        const double db = (scene.coords.row(b) - scene.coords.row(anchor))
                              .squaredNorm();
        return da != db ? da < db : a < b;
      });
      members.assign(free_points.begin(), free_points.begin() + want);
      break;
    }
    if (members.empty()) {
      throw InternalError("generate_scene: no free points left for a region");
    }

    const auto code = affordance_color(affordance_id);
    std::vector<uint8_t> mask(static_cast<size_t>(n_total), 0);
    for (int p : members) {
      claimed[static_cast<size_t>(p)] = 1;
      mask[static_cast<size_t>(p)] = 1;
      for (int d = 0; d < 3; ++d) {
        scene.colors(p, d) =
            code[static_cast<size_t>(d)] +
            rng.uniform(-cfg.color_noise, cfg.color_noise);
      }
    }
    scene.gt_masks.push_back(std::move(mask));
    scene.gt_affordance_ids.push_back(affordance_id);
  }

  io::quantize_scene_to_storage(scene);
  return scene;
}

ClipBlock generate_clip(const SynthConfig& cfg, int affordance_id, int index) {
  validate_synth_config(cfg);
  if (affordance_id < 0 || affordance_id >= cfg.n_classes) {
    throw ParameterError("generate_clip: class id " +
                         std::to_string(affordance_id) + " outside [0, " +
                         std::to_string(cfg.n_classes) + ")");
  }
  Rng rng = Rng::derive(cfg.rng_seed, "synth/clip",
                        static_cast<std::uint64_t>(index));

  const int t = cfg.frames, h = cfg.frame_h, w = cfg.frame_w;
  const int ph = std::max(3, h / 4);
  const int pw = std::max(3, w / 4);
  const int start_y = rng.range_int(0, h - ph);
  const int start_x = rng.range_int(0, w - pw);
  // Velocity depends only on the class, so same-class clips at zero noise
  // differ only in the rng-drawn start position.
  const double theta =
      2.0 * M_PI * affordance_id / std::max(1, cfg.n_classes) + 0.4;
  const double speed = 0.35 * (h + w) / 2.0 / std::max(1, t);
  const double vy = speed * std::sin(theta);
  const double vx = speed * std::cos(theta);
  const auto code = affordance_color(affordance_id);
  const double background = 0.35;

  ClipBlock clip;
  clip.t = t;
  clip.h = h;
  clip.w = w;
  clip.pixels.resize(3, static_cast<Eigen::Index>(t) * h * w);
  for (int f = 0; f < t; ++f) {
    const int py = positive_mod(
        start_y + static_cast<int>(std::lround(f * vy)), h);
    const int px = positive_mod(
        start_x + static_cast<int>(std::lround(f * vx)), w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // Patch membership on the torus.
        const bool in_y = positive_mod(y - py, h) < ph;
        const bool in_x = positive_mod(x - px, w) < pw;
        const Eigen::Index col =
            (static_cast<Eigen::Index>(f) * h + y) * w + x;
        for (int c = 0; c < 3; ++c) {
          double v = (in_y && in_x) ? code[static_cast<size_t>(c)]
                                    : background;
          if (cfg.pixel_noise > 0.0) {
            v += rng.uniform(-cfg.pixel_noise, cfg.pixel_noise);
          }
          v = std::min(1.0, std::max(0.0, v));
          clip.pixels(c, col) = io::to_storage_precision(v);
        }
      }
    }
  }
  return clip;
}

std::string synth_config_to_json(const SynthConfig& cfg) {
  const nlohmann::json j = {{"n_scenes", cfg.n_scenes},
                            {"n_clips", cfg.n_clips},
                            {"points_per_scene", cfg.points_per_scene},
                            {"n_classes", cfg.n_classes},
                            {"regions_min", cfg.regions_min},
                            {"regions_max", cfg.regions_max},
                            {"coord_noise", cfg.coord_noise},
                            {"color_noise", cfg.color_noise},
                            {"pixel_noise", cfg.pixel_noise},
                            {"frames", cfg.frames},
                            {"frame_h", cfg.frame_h},
                            {"frame_w", cfg.frame_w},
                            {"val_fraction", cfg.val_fraction},
                            {"rng_seed", cfg.rng_seed}};
  return j.dump(2) + "\n";
}

SynthConfig synth_config_from_json(const std::string& text) {
  nlohmann::json input =
      nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (input.is_discarded() || !input.is_object()) {
    throw ConfigError("synth config: invalid JSON");
  }
  SynthConfig cfg;
  nlohmann::json schema =
      nlohmann::json::parse(synth_config_to_json(cfg));
  for (const auto& [key, value] : input.items()) {
    if (!schema.contains(key)) {
      throw ConfigError("synth config: unknown key \"" + key + "\"");
    }
    schema[key] = value;
  }
  try {
    cfg.n_scenes = schema.at("n_scenes").get<int>();
    cfg.n_clips = schema.at("n_clips").get<int>();
    cfg.points_per_scene = schema.at("points_per_scene").get<int>();
    cfg.n_classes = schema.at("n_classes").get<int>();
    cfg.regions_min = schema.at("regions_min").get<int>();
    cfg.regions_max = schema.at("regions_max").get<int>();
    cfg.coord_noise = schema.at("coord_noise").get<double>();
    cfg.color_noise = schema.at("color_noise").get<double>();
    cfg.pixel_noise = schema.at("pixel_noise").get<double>();
    cfg.frames = schema.at("frames").get<int>();
    cfg.frame_h = schema.at("frame_h").get<int>();
    cfg.frame_w = schema.at("frame_w").get<int>();
    cfg.val_fraction = schema.at("val_fraction").get<double>();
    cfg.rng_seed = schema.at("rng_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: bad value: ") + e.what());
  }
  validate_synth_config(cfg);
  return cfg;
}

SynthConfig load_synth_config(const std::string& path) {
  return synth_config_from_json(io::read_file_bytes(path));
}

std::string scene_basename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d", index);
  return buf;
}

std::string clip_basename(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "clip_%04d", index);
  return buf;
}

std::string scene_ply_path(const std::string& root, const std::string& id) {
  return root + "/scenes/" + id + ".ply";
}
std::string scene_sidecar_path(const std::string& root, const std::string& id) {
  return root + "/scenes/" + id + ".json";
}
std::string clip_block_path(const std::string& root, const std::string& id) {
  return root + "/clips/" + id + ".egsc";
}

GeneratedDataset generate_dataset(const SynthConfig& cfg,
                                  const std::string& root) {
  validate_synth_config(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(root + "/scenes");
  fs::create_directories(root + "/clips");

  // Scenes, remembering each one's region classes for pairing.
  std::vector<std::vector<int>> scene_region_classes(
      static_cast<size_t>(cfg.n_scenes));
  for (int j = 0; j < cfg.n_scenes; ++j) {
    PointCloudScene scene = generate_scene(cfg, j);
    scene_region_classes[static_cast<size_t>(j)] = scene.gt_affordance_ids;
    io::save_scene(scene, scene_ply_path(root, scene.scene_id),
                   scene_sidecar_path(root, scene.scene_id));
  }

  std::vector<int> clip_class(static_cast<size_t>(cfg.n_clips));
  for (int k = 0; k < cfg.n_clips; ++k) {
    clip_class[static_cast<size_t>(k)] = k % cfg.n_classes;
    ClipBlock clip = generate_clip(cfg, clip_class[static_cast<size_t>(k)], k);
    io::save_clip_block(clip, clip_block_path(root, clip_basename(k)));
  }

  const int n_val_scenes = std::min(
      cfg.n_scenes - 1,
      static_cast<int>(std::floor(cfg.n_scenes * cfg.val_fraction)));
  const int n_val_clips = std::min(
      cfg.n_clips - 1,
      static_cast<int>(std::floor(cfg.n_clips * cfg.val_fraction)));
  const int first_val_scene = cfg.n_scenes - n_val_scenes;
  const int first_val_clip = cfg.n_clips - n_val_clips;

  io::DatasetManifest manifests[2];
  manifests[0].split = "train";
  manifests[1].split = "val";
  for (auto& m : manifests) {
    for (int a = 0; a < cfg.n_classes; ++a) {
      m.affordance_catalog[a] = affordance_names()[static_cast<size_t>(a)];
    }
  }

  for (int k = 0; k < cfg.n_clips; ++k) {
    const bool is_val = k >= first_val_clip;
    const int scene_lo = is_val ? first_val_scene : 0;
    const int scene_hi = is_val ? cfg.n_scenes : first_val_scene;
    const int want_class = clip_class[static_cast<size_t>(k)];
    std::vector<int> eligible;
    for (int j = scene_lo; j < scene_hi; ++j) {
      const auto& classes = scene_region_classes[static_cast<size_t>(j)];
      if (std::find(classes.begin(), classes.end(), want_class) !=
          classes.end()) {
        eligible.push_back(j);
      }
    }
    if (eligible.empty()) {
      throw ConfigError(
          "synth: no " + std::string(is_val ? "val" : "train") +
          " scene contains a region of class " + std::to_string(want_class) +
          "; increase n_scenes or regions_per_scene");
    }
    const int j = eligible[static_cast<size_t>(k) % eligible.size()];
    io::ManifestPair pair;
    pair.clip_id = clip_basename(k);
    pair.scene_id = scene_basename(j);
    const auto& classes = scene_region_classes[static_cast<size_t>(j)];
    for (int r = 0; r < static_cast<int>(classes.size()); ++r) {
      if (classes[static_cast<size_t>(r)] == want_class) {
        pair.gt_region_indices.push_back(r);
      }
    }
    manifests[is_val ? 1 : 0].pairs.push_back(std::move(pair));
  }

  GeneratedDataset out;
  out.root = root;
  out.train_manifest = root + "/manifest_train.json";
  out.val_manifest = root + "/manifest_val.json";
  out.n_train_pairs = static_cast<int>(manifests[0].pairs.size());
  out.n_val_pairs = static_cast<int>(manifests[1].pairs.size());
  io::save_manifest(manifests[0], out.train_manifest);
  io::save_manifest(manifests[1], out.val_manifest);
  return out;
}

}  // namespace egosag::synth
