#include "egosag/config.hpp"

#include <cctype>
#include <cstdlib>

#include <json.hpp>

#include "egosag/errors.hpp"
#include "egosag/io.hpp"

namespace egosag {
namespace {

using nlohmann::json;

json model_to_json(const ModelConfig& m) {
  json strides = json::array();
  for (const auto& s : m.clip_strides) strides.push_back({s[0], s[1], s[2]});
  return {{"channels", m.channels},
          {"queries", m.queries},
          {"decoder_layers", m.decoder_layers},
          {"heads", m.heads},
          {"level_widths", m.level_widths},
          {"voxel_size", m.voxel_size},
          {"superpoint_count", m.superpoint_count},
          {"n_classes", m.n_classes},
          {"frames", m.frames},
          {"clip_widths", m.clip_widths},
          {"clip_strides", strides},
          {"isa_n_c", m.isa_n_c},
          {"isa_k", m.isa_k},
          {"isa_heads", m.isa_heads},
          {"isa_r", m.isa_r},
          {"with_isa", m.with_isa},
          {"fused_decoder", m.fused_decoder},
          {"per_layer_supervision", m.per_layer_supervision}};
}

json to_json_tree(const RunConfig& cfg) {
  return {
      {"model", model_to_json(cfg.model)},
      {"loss",
       {{"lambda_ce", cfg.loss.lambda_ce},
        {"lambda_mask", cfg.loss.lambda_mask},
        {"lambda_kl", cfg.loss.lambda_kl},
        {"lambda_con", cfg.loss.lambda_con},
        {"zeta_bce", cfg.loss.zeta_bce},
        {"zeta_dice", cfg.loss.zeta_dice},
        {"dice_variant", cfg.loss.dice_variant},
        {"tau", cfg.loss.tau},
        {"iou_threshold", cfg.loss.iou_threshold},
        {"binarize_threshold", cfg.loss.binarize_threshold}}},
      {"optim",
       {{"algorithm", cfg.optim.algorithm},
        {"lr", cfg.optim.lr},
        {"lr_schedule", cfg.optim.lr_schedule},
        {"warmup_steps", cfg.optim.warmup_steps},
        {"weight_decay", cfg.optim.weight_decay},
        {"beta1", cfg.optim.beta1},
        {"beta2", cfg.optim.beta2},
        {"eps", cfg.optim.eps},
        {"epochs", cfg.optim.epochs},
        {"steps", cfg.optim.steps},
        {"batch", cfg.optim.batch},
        {"seed", cfg.optim.seed},
        {"deterministic", cfg.optim.deterministic},
        {"eval_every", cfg.optim.eval_every},
        {"grad_clip", cfg.optim.grad_clip}}},
      {"data",
       {{"manifest", cfg.data.manifest},
        {"val_manifest", cfg.data.val_manifest},
        {"encoder_mode", cfg.data.encoder_mode}}},
      {"output_dir", cfg.output_dir}};
}

// Same JSON value category for override/merge purposes.
bool same_category(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

void check_against_schema(const json& input, const json& schema,
                          const std::string& path) {
  if (!input.is_object()) {
    throw ConfigError("config: expected an object at \"" +
                      (path.empty() ? "<root>" : path) + "\"");
  }
  for (const auto& [key, value] : input.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!schema.contains(key)) {
      throw ConfigError("config: unknown key \"" + full + "\"");
    }
    const json& expect = schema.at(key);
    if (expect.is_object()) {
      check_against_schema(value, expect, full);
    } else if (!same_category(value, expect)) {
      throw ConfigError("config: wrong type for \"" + full + "\" (expected " +
                        std::string(expect.type_name()) + ", got " +
                        std::string(value.type_name()) + ")");
    }
  }
}

void merge_into(json& base, const json& input) {
  for (const auto& [key, value] : input.items()) {
    if (value.is_object() && base.at(key).is_object()) {
      merge_into(base.at(key), value);
    } else {
      base[key] = value;
    }
  }
}

std::string env_name_for(const std::string& path) {
  std::string name = "EGOSAG_";
  for (char c : path) {
    if (c == '.') {
      name += "__";
    } else {
      name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
  }
  return name;
}

void apply_env_overrides(json& tree, const std::string& path) {
  for (auto& [key, value] : tree.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (value.is_object()) {
      apply_env_overrides(value, full);
      continue;
    }
    const char* env = std::getenv(env_name_for(full).c_str());
    if (env == nullptr) continue;
    json parsed = json::parse(env, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) parsed = std::string(env);  // bare string
    if (!same_category(parsed, value)) {
      throw ConfigError("config: environment override " + env_name_for(full) +
                        " has wrong type for \"" + full + "\" (expected " +
                        std::string(value.type_name()) + ")");
    }
    value = std::move(parsed);
  }
}

template <typename T>
T leaf(const json& tree, const std::string& section, const std::string& key) {
  try {
    return tree.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for \"" + section + "." + key +
                      "\": " + e.what());
  }
}

RunConfig parse_tree(const json& tree) {
  RunConfig cfg;
  ModelConfig& m = cfg.model;
  m.channels = leaf<int>(tree, "model", "channels");
  m.queries = leaf<int>(tree, "model", "queries");
  m.decoder_layers = leaf<int>(tree, "model", "decoder_layers");
  m.heads = leaf<int>(tree, "model", "heads");
  m.level_widths = leaf<std::vector<int>>(tree, "model", "level_widths");
  m.voxel_size = leaf<double>(tree, "model", "voxel_size");
  m.superpoint_count = leaf<int>(tree, "model", "superpoint_count");
  m.n_classes = leaf<int>(tree, "model", "n_classes");
  m.frames = leaf<int>(tree, "model", "frames");
  m.clip_widths = leaf<std::vector<int>>(tree, "model", "clip_widths");
  {
    const auto raw =
        leaf<std::vector<std::vector<int>>>(tree, "model", "clip_strides");
    m.clip_strides.clear();
    for (const auto& s : raw) {
      if (s.size() != 3) {
        throw ConfigError(
            "config: bad value for \"model.clip_strides\": each entry needs "
            "exactly 3 strides (t, h, w)");
      }
      m.clip_strides.push_back({s[0], s[1], s[2]});
    }
  }
  m.isa_n_c = leaf<int>(tree, "model", "isa_n_c");
  m.isa_k = leaf<int>(tree, "model", "isa_k");
  m.isa_heads = leaf<int>(tree, "model", "isa_heads");
  m.isa_r = leaf<double>(tree, "model", "isa_r");
  m.with_isa = leaf<bool>(tree, "model", "with_isa");
  m.fused_decoder = leaf<bool>(tree, "model", "fused_decoder");
  m.per_layer_supervision = leaf<bool>(tree, "model", "per_layer_supervision");

  LossConfig& l = cfg.loss;
  l.lambda_ce = leaf<double>(tree, "loss", "lambda_ce");
  l.lambda_mask = leaf<double>(tree, "loss", "lambda_mask");
  l.lambda_kl = leaf<double>(tree, "loss", "lambda_kl");
  l.lambda_con = leaf<double>(tree, "loss", "lambda_con");
  l.zeta_bce = leaf<double>(tree, "loss", "zeta_bce");
  l.zeta_dice = leaf<double>(tree, "loss", "zeta_dice");
  l.dice_variant = leaf<std::string>(tree, "loss", "dice_variant");
  l.tau = leaf<double>(tree, "loss", "tau");
  l.iou_threshold = leaf<double>(tree, "loss", "iou_threshold");
  l.binarize_threshold = leaf<double>(tree, "loss", "binarize_threshold");

  OptimConfig& o = cfg.optim;
  o.algorithm = leaf<std::string>(tree, "optim", "algorithm");
  o.lr = leaf<double>(tree, "optim", "lr");
  o.lr_schedule = leaf<std::string>(tree, "optim", "lr_schedule");
  o.warmup_steps = leaf<int>(tree, "optim", "warmup_steps");
  o.weight_decay = leaf<double>(tree, "optim", "weight_decay");
  o.beta1 = leaf<double>(tree, "optim", "beta1");
  o.beta2 = leaf<double>(tree, "optim", "beta2");
  o.eps = leaf<double>(tree, "optim", "eps");
  o.epochs = leaf<int>(tree, "optim", "epochs");
  o.steps = leaf<int>(tree, "optim", "steps");
  o.batch = leaf<int>(tree, "optim", "batch");
  o.seed = leaf<std::uint64_t>(tree, "optim", "seed");
  o.deterministic = leaf<bool>(tree, "optim", "deterministic");
  o.eval_every = leaf<int>(tree, "optim", "eval_every");
  o.grad_clip = leaf<double>(tree, "optim", "grad_clip");

  DataConfig& d = cfg.data;
  d.manifest = leaf<std::string>(tree, "data", "manifest");
  d.val_manifest = leaf<std::string>(tree, "data", "val_manifest");
  d.encoder_mode = leaf<std::string>(tree, "data", "encoder_mode");

  try {
    cfg.output_dir = tree.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for \"output_dir\": ") +
                      e.what());
  }
  return cfg;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) {
    throw ConfigError("config: invalid value for \"" + key + "\": " + what);
  }
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
  return to_json_tree(cfg).dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text, bool apply_env) {
  json input = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (input.is_discarded()) {
    throw ConfigError("config: invalid JSON");
  }
  json tree = to_json_tree(RunConfig{});
  check_against_schema(input, tree, "");
  merge_into(tree, input);
  if (apply_env) apply_env_overrides(tree, "");
  RunConfig cfg = parse_tree(tree);
  validate_run_config(cfg);
  return cfg;
}

RunConfig load_run_config(const std::string& path, bool apply_env) {
  return run_config_from_json(io::read_file_bytes(path), apply_env);
}

void validate_run_config(const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  require(m.channels > 0, "model.channels", "must be positive");
  require(m.queries > 0, "model.queries", "must be positive");
  require(m.decoder_layers > 0, "model.decoder_layers", "must be positive");
  require(m.heads > 0 && m.channels % m.heads == 0, "model.heads",
          "must be positive and divide channels");
  require(!m.level_widths.empty(), "model.level_widths", "must be non-empty");
  for (int wdt : m.level_widths) {
    require(wdt > 0, "model.level_widths", "entries must be positive");
  }
  require(m.voxel_size > 0, "model.voxel_size", "must be positive");
  require(m.superpoint_count > 0, "model.superpoint_count",
          "must be positive");
  require(m.n_classes > 0, "model.n_classes", "must be positive");
  require(m.frames > 0, "model.frames", "must be positive");
  require(!m.clip_widths.empty() &&
              m.clip_widths.size() == m.clip_strides.size(),
          "model.clip_widths",
          "must be non-empty and match clip_strides in length");
  for (const auto& s : m.clip_strides) {
    require(s[0] > 0 && s[1] > 0 && s[2] > 0, "model.clip_strides",
            "strides must be positive");
  }
  require(m.isa_n_c > 0 && m.isa_k > 0, "model.isa_n_c",
          "subregion count and k must be positive");
  require(m.isa_heads > 0, "model.isa_heads", "must be positive");
  for (size_t i = 0; i < m.level_widths.size(); ++i) {
    require(m.level_widths[i] % m.isa_heads == 0 || !m.with_isa,
            "model.isa_heads", "must divide every level width");
  }

  const LossConfig& l = cfg.loss;
  require(l.dice_variant == "literal" || l.dice_variant == "standard",
          "loss.dice_variant", "must be \"literal\" or \"standard\"");
  require(l.zeta_bce >= 0 && l.zeta_dice >= 0, "loss.zeta_bce",
          "cost weights must be non-negative");
  require(l.lambda_ce >= 0 && l.lambda_mask >= 0 && l.lambda_kl >= 0 &&
              l.lambda_con >= 0,
          "loss.lambda_ce", "loss weights must be non-negative");
  require(l.iou_threshold > 0 && l.iou_threshold < 1, "loss.iou_threshold",
          "must lie in (0, 1)");
  require(l.binarize_threshold > 0 && l.binarize_threshold < 1,
          "loss.binarize_threshold", "must lie in (0, 1)");

  const OptimConfig& o = cfg.optim;
  require(o.algorithm == "adamw", "optim.algorithm",
          "only \"adamw\" is supported");
  require(o.lr > 0, "optim.lr", "must be positive");
  require(o.lr_schedule == "constant" || o.lr_schedule == "cosine",
          "optim.lr_schedule", "must be \"constant\" or \"cosine\"");
  require(o.warmup_steps >= 0, "optim.warmup_steps", "must be non-negative");
  require(o.weight_decay >= 0, "optim.weight_decay", "must be non-negative");
  require(o.beta1 >= 0 && o.beta1 < 1 && o.beta2 >= 0 && o.beta2 < 1,
          "optim.beta1", "betas must lie in [0, 1)");
  require(o.eps > 0, "optim.eps", "must be positive");
  require(o.steps >= 0 && o.epochs >= 0 && (o.steps > 0 || o.epochs > 0),
          "optim.steps", "need a positive step or epoch budget");
  require(o.batch > 0, "optim.batch", "must be positive");
  require(o.eval_every >= 0, "optim.eval_every", "must be non-negative");
  require(o.grad_clip >= 0, "optim.grad_clip", "must be non-negative");

  const DataConfig& d = cfg.data;
  require(d.encoder_mode == "raw" || d.encoder_mode == "features",
          "data.encoder_mode", "must be \"raw\" or \"features\"");
}

std::uint64_t config_hash(const RunConfig& cfg) {
  const std::string canonical = model_to_json(cfg.model).dump();
  // FNV-1a, the same mixing the rng uses for stream names.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void save_resolved_config(const RunConfig& cfg, const std::string& path) {
  io::write_file_bytes(path, run_config_to_json(cfg));
}

LossWeights to_loss_weights(const LossConfig& cfg) {
  LossWeights w;
  w.lambda_ce = cfg.lambda_ce;
  w.lambda_mask = cfg.lambda_mask;
  w.lambda_kl = cfg.lambda_kl;
  w.lambda_con = cfg.lambda_con;
  w.zeta_bce = cfg.zeta_bce;
  w.zeta_dice = cfg.zeta_dice;
  w.iou_threshold = cfg.iou_threshold;
  w.binarize_threshold = cfg.binarize_threshold;
  w.dice_variant = cfg.dice_variant == "standard" ? DiceVariant::Standard
                                                  : DiceVariant::Literal;
  return w;
}

}  // namespace egosag
