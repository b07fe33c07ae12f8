#include "egosag/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "egosag/errors.hpp"
#include "egosag/io.hpp"
#include "egosag/rng.hpp"

namespace egosag {
namespace {

using nlohmann::json;

// Breakdown fields averaged over a batch.
LossBreakdown accumulate(const LossBreakdown& acc, const LossBreakdown& add,
                         double weight) {
  LossBreakdown out = acc;
  out.ce += weight * add.ce;
  out.bce += weight * add.bce;
  out.dice += weight * add.dice;
  out.score += weight * add.score;
  out.mask += weight * add.mask;
  out.kl += weight * add.kl;
  out.con += weight * add.con;
  out.total += weight * add.total;
  out.con_degenerate = out.con_degenerate || add.con_degenerate;
  out.kl_absent = out.kl_absent || add.kl_absent;
  return out;
}

std::string log_line(int step, const LossBreakdown& b, double grad_norm) {
  json j = {{"step", step},       {"total", b.total}, {"ce", b.ce},
            {"bce", b.bce},       {"dice", b.dice},   {"score", b.score},
            {"mask", b.mask},     {"kl", b.kl},       {"con", b.con},
            {"grad_norm", grad_norm}};
  return j.dump();
}

}  // namespace

AdamW::AdamW(ParamRegistry& reg, const OptimConfig& cfg)
    : reg_(&reg), cfg_(cfg) {
  for (const auto& [name, tensor] : reg.entries()) {
    m_.emplace(name, ad::Mat::Zero(tensor.rows(), tensor.cols()));
    v_.emplace(name, ad::Mat::Zero(tensor.rows(), tensor.cols()));
  }
}

void AdamW::step() {
  t_ += 1;
  const double lr = cfg_.lr * lr_scale_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, tensor] : reg_->entries()) {
    const ad::Mat& g = tensor.grad();
    ad::Mat& m = m_.at(name);
    ad::Mat& v = v_.at(name);
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const ad::Mat m_hat = m / bc1;
    const ad::Mat v_hat = v / bc2;
    ad::Mat& value = tensor.mutable_val();
    value -= lr * (m_hat.array() / (v_hat.array().sqrt() + cfg_.eps))
                       .matrix();
    if (cfg_.weight_decay > 0.0) {
      value -= lr * cfg_.weight_decay * value;
    }
  }
}

double lr_schedule_scale(const OptimConfig& cfg, int step, int budget) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.lr_schedule == "cosine") {
    const double span =
        static_cast<double>(std::max(1, budget - cfg.warmup_steps));
    double p = static_cast<double>(step - cfg.warmup_steps - 1) / span;
    p = std::clamp(p, 0.0, 1.0);
    return 0.5 * (1.0 + std::cos(M_PI * p));
  }
  return 1.0;
}

void AdamW::export_state(Checkpoint& ckpt) const {
  for (const auto& [name, m] : m_) ckpt.tensors["opt.m:" + name] = m;
  for (const auto& [name, v] : v_) ckpt.tensors["opt.v:" + name] = v;
}

void AdamW::import_state(const Checkpoint& ckpt) {
  for (auto& [name, m] : m_) {
    const auto it = ckpt.tensors.find("opt.m:" + name);
    if (it != ckpt.tensors.end()) m = it->second;
  }
  for (auto& [name, v] : v_) {
    const auto it = ckpt.tensors.find("opt.v:" + name);
    if (it != ckpt.tensors.end()) v = it->second;
  }
  t_ = ckpt.step;
}

double clip_gradients(ParamRegistry& reg, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, tensor] : reg.entries()) {
    sq += tensor.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& [name, tensor] : reg.entries()) {
      tensor.grad() *= scale;
    }
  }
  return norm;
}

EvalOutcome run_eval(const EgoSagModel& model, const PairedDataset& data,
                     double tau) {
  EvalOutcome out;
  std::vector<EvalSample> samples;
  int correct = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    const DatasetSample& s = data.sample(i);
    const ClipFeatures clip = data.clip_features(model, i);
    const std::vector<LayerPrediction> layers = model.forward(*s.pack, clip);
    const LayerPrediction& last = layers.back();

    Eigen::Index argmax = 0;
    last.class_logits.val().col(0).maxCoeff(&argmax);
    if (static_cast<int>(argmax) == s.gt.affordance_class) ++correct;

    const FinalPrediction pred = filter_predictions(last, s.pack->sp, tau);
    EvalSample es;
    for (size_t k = 0; k < pred.point_masks.size(); ++k) {
      es.preds.push_back(
          {pred.point_masks[k], pred.scores[k], pred.affordance_id});
    }
    for (Eigen::Index j = 0; j < s.gt.point_masks.cols(); ++j) {
      es.gt_masks.push_back(s.gt.point_masks.col(j));
      es.gt_classes.push_back(s.gt.affordance_class);
    }
    samples.push_back(std::move(es));
  }
  out.report = evaluate_dataset(samples);
  out.clip_accuracy =
      data.size() == 0
          ? 0.0
          : static_cast<double>(correct) / static_cast<double>(data.size());
  return out;
}

TrainOutputs train_model(const RunConfig& cfg, std::ostream* echo) {
  validate_run_config(cfg);
  if (cfg.data.manifest.empty()) {
    throw ConfigError(
        "config: invalid value for \"data.manifest\": a train manifest is "
        "required");
  }
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);

  TrainOutputs out;
  out.resolved_config_path = cfg.output_dir + "/config_resolved.json";
  save_resolved_config(cfg, out.resolved_config_path);
  out.log_path = cfg.output_dir + "/train_log.jsonl";
  out.last_checkpoint = cfg.output_dir + "/last.egcp";
  out.best_checkpoint = cfg.output_dir + "/best.egcp";

  PairedDataset train_data(cfg.data.manifest, cfg.model,
                           cfg.data.encoder_mode);
  if (train_data.size() == 0) {
    throw DataError(DataError::Kind::Corrupt,
                    cfg.data.manifest + ": manifest lists no pairs");
  }
  std::unique_ptr<PairedDataset> val_data;
  if (!cfg.data.val_manifest.empty()) {
    val_data = std::make_unique<PairedDataset>(cfg.data.val_manifest,
                                               cfg.model,
                                               cfg.data.encoder_mode);
    out.has_val = val_data->size() > 0;
  }

  ParamRegistry reg(cfg.optim.seed);
  EgoSagModel model(reg, cfg.model);
  const std::uint64_t hash = config_hash(cfg);
  AdamW optimizer(reg, cfg.optim);
  const LossWeights weights = to_loss_weights(cfg.loss);

  const int n = static_cast<int>(train_data.size());
  const int steps_per_epoch = (n + cfg.optim.batch - 1) / cfg.optim.batch;
  const int budget = cfg.optim.steps > 0 ? cfg.optim.steps
                                         : cfg.optim.epochs * steps_per_epoch;
  out.steps = budget;

  Rng order_rng = Rng::derive(cfg.optim.seed, "train/order");
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // forces a shuffle before the first step
  auto next_index = [&]() {
    if (cursor >= order.size()) {
      for (size_t i = order.size(); i > 1; --i) {  // Fisher–Yates
        std::swap(order[i - 1], order[static_cast<size_t>(
                                    order_rng.below(i))]);
      }
      cursor = 0;
    }
    return static_cast<size_t>(order[cursor++]);
  };

  std::ofstream log(out.log_path, std::ios::trunc);
  if (!log) {
    throw DataError(DataError::Kind::MissingFile,
                    out.log_path + ": cannot open log for writing");
  }

  const auto save_with_state = [&](const std::string& path, int step) {
    Checkpoint ckpt = capture_params(reg, hash,
                                     static_cast<std::uint64_t>(step));
    optimizer.export_state(ckpt);
    save_checkpoint(ckpt, path);
  };

  bool wrote_best = false;
  for (int step = 1; step <= budget; ++step) {
    LossBreakdown batch_avg;
    std::vector<std::string> batch_clips;
    const double weight = 1.0 / static_cast<double>(cfg.optim.batch);
    for (int b = 0; b < cfg.optim.batch; ++b) {
      const size_t idx = next_index();
      const DatasetSample& s = train_data.sample(idx);
      batch_clips.push_back(s.clip_id);

      const ClipFeatures clip = train_data.clip_features(model, idx);
      const std::vector<LayerPrediction> layers =
          model.forward(*s.pack, clip);
      std::vector<LayerLossTerms> terms;
      if (cfg.model.per_layer_supervision) {
        for (const LayerPrediction& pred : layers) {
          terms.push_back(layer_losses(pred, s.gt, s.pack->sp, weights));
        }
      } else {
        terms.push_back(layer_losses(layers.back(), s.gt, s.pack->sp,
                                     weights));
      }
      const TotalLoss loss = total_loss(terms, weights);
      ad::scale(loss.value, weight).backward();
      batch_avg = accumulate(batch_avg, loss.breakdown, weight);
    }

    if (!std::isfinite(batch_avg.total)) {
      std::ostringstream ids;
      for (size_t i = 0; i < batch_clips.size(); ++i) {
        ids << (i ? ", " : "") << batch_clips[i];
      }
      throw NumericalError("training loss became non-finite at step " +
                           std::to_string(step) + " (batch clips: " +
                           ids.str() + ")");
    }

    const double grad_norm = clip_gradients(reg, cfg.optim.grad_clip);
    optimizer.set_lr_scale(lr_schedule_scale(cfg.optim, step, budget));
    optimizer.step();
    reg.zero_grad_all();

    const std::string line = log_line(step, batch_avg, grad_norm);
    log << line << "\n";
    if (echo != nullptr) (*echo) << line << "\n";

    if (step == 1) out.first_loss = batch_avg.total;
    out.final_loss = batch_avg.total;

    if (out.has_val && cfg.optim.eval_every > 0 &&
        step % cfg.optim.eval_every == 0 && step != budget) {
      const EvalOutcome val = run_eval(model, *val_data, cfg.loss.tau);
      if (val.report.mAP > out.best_val_map) {
        out.best_val_map = val.report.mAP;
        save_with_state(out.best_checkpoint, step);
        wrote_best = true;
      }
    }
  }
  log.flush();

  save_with_state(out.last_checkpoint, budget);

  const EvalOutcome train_eval = run_eval(model, train_data, cfg.loss.tau);
  out.train_metrics = train_eval.report;
  out.train_clip_accuracy = train_eval.clip_accuracy;
  if (out.has_val) {
    const EvalOutcome val = run_eval(model, *val_data, cfg.loss.tau);
    out.val_metrics = val.report;
    out.val_clip_accuracy = val.clip_accuracy;
    if (val.report.mAP > out.best_val_map) {
      out.best_val_map = val.report.mAP;
      save_with_state(out.best_checkpoint, budget);
      wrote_best = true;
    }
  }
  if (!wrote_best) {
    // No val split (or it never improved): best mirrors last.
    save_with_state(out.best_checkpoint, budget);
  }
  return out;
}

EvalOutcome evaluate_checkpoint(const RunConfig& cfg,
                                const std::string& checkpoint_path,
                                const std::string& manifest_path) {
  validate_run_config(cfg);
  PairedDataset data(manifest_path, cfg.model, cfg.data.encoder_mode);
  ParamRegistry reg(cfg.optim.seed);
  EgoSagModel model(reg, cfg.model);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path, config_hash(cfg));
  restore_params(reg, ckpt);
  return run_eval(model, data, cfg.loss.tau);
}

FinalPrediction predict_pair(const EgoSagModel& model, const ScenePack& pack,
                             const ClipFeatures& clip, double tau) {
  const std::vector<LayerPrediction> layers = model.forward(pack, clip);
  return filter_predictions(layers.back(), pack.sp, tau);
}

std::string prediction_to_json(const FinalPrediction& pred,
                               const std::string& scene_id,
                               const std::string& clip_id) {
  json instances = json::array();
  for (size_t k = 0; k < pred.point_masks.size(); ++k) {
    json indices = json::array();
    const Eigen::VectorXd& mask = pred.point_masks[k];
    for (Eigen::Index p = 0; p < mask.size(); ++p) {
      if (mask(p) > 0.5) indices.push_back(p);
    }
    instances.push_back(
        {{"score", pred.scores[k]}, {"point_indices", std::move(indices)}});
  }
  json j = {{"scene_id", scene_id},
            {"clip_id", clip_id},
            {"affordance_id", pred.affordance_id},
            {"instances", std::move(instances)}};
  return j.dump(2) + "\n";
}

FinalPrediction prediction_from_json(const std::string& text,
                                     Eigen::Index n_points) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) {
    throw DataError(DataError::Kind::Corrupt, "prediction dump: invalid JSON");
  }
  FinalPrediction pred;
  try {
    pred.affordance_id = j.at("affordance_id").get<int>();
    for (const json& inst : j.at("instances")) {
      Eigen::VectorXd mask = Eigen::VectorXd::Zero(n_points);
      for (const json& idx : inst.at("point_indices")) {
        const auto p = idx.get<long long>();
        if (p < 0 || p >= n_points) {
          throw DataError(DataError::Kind::Corrupt,
                          "prediction dump: point index " + std::to_string(p) +
                              " outside scene of " + std::to_string(n_points) +
                              " points");
        }
        mask(static_cast<Eigen::Index>(p)) = 1.0;
      }
      pred.point_masks.push_back(std::move(mask));
      pred.scores.push_back(inst.at("score").get<double>());
    }
  } catch (const json::exception& e) {
    throw DataError(DataError::Kind::Corrupt,
                    std::string("prediction dump: ") + e.what());
  }
  return pred;
}

std::string prediction_filename(const std::string& clip_id,
                                const std::string& scene_id) {
  return clip_id + "__" + scene_id + ".json";
}

EvalOutcome evaluate_predictions_dir(const ModelConfig& model_cfg,
                                     const std::string& manifest_path,
                                     const std::string& predictions_dir) {
  PairedDataset data(manifest_path, model_cfg, "raw");
  EvalOutcome out;
  std::vector<EvalSample> samples;
  int correct = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    const DatasetSample& s = data.sample(i);
    const std::string path = predictions_dir + "/" +
                             prediction_filename(s.clip_id, s.scene_id);
    const FinalPrediction pred =
        prediction_from_json(io::read_file_bytes(path), s.pack->scene.size());
    if (pred.affordance_id == s.gt.affordance_class) ++correct;
    EvalSample es;
    for (size_t k = 0; k < pred.point_masks.size(); ++k) {
      es.preds.push_back(
          {pred.point_masks[k], pred.scores[k], pred.affordance_id});
    }
    for (Eigen::Index j = 0; j < s.gt.point_masks.cols(); ++j) {
      es.gt_masks.push_back(s.gt.point_masks.col(j));
      es.gt_classes.push_back(s.gt.affordance_class);
    }
    samples.push_back(std::move(es));
  }
  out.report = evaluate_dataset(samples);
  out.clip_accuracy =
      data.size() == 0
          ? 0.0
          : static_cast<double>(correct) / static_cast<double>(data.size());
  return out;
}

PointCloudScene recolor_predictions(const PointCloudScene& scene,
                                    const FinalPrediction& pred) {
  PointCloudScene out = scene;
  for (const Eigen::VectorXd& mask : pred.point_masks) {
    for (Eigen::Index p = 0; p < mask.size() && p < out.colors.rows(); ++p) {
      if (mask(p) > 0.5) {
        out.colors(p, 0) = 1.0;
        out.colors(p, 1) = 0.0;
        out.colors(p, 2) = 0.0;
      }
    }
  }
  return out;
}

}  // namespace egosag
