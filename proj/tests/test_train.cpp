// Optimizer mechanics, gradient clipping, the training loop's files and
// logs, checkpoint evaluation, and the prediction-dump scoring path used by
// external fixtures.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "egosag/checkpoint.hpp"
#include "egosag/config.hpp"
#include "egosag/errors.hpp"
#include "egosag/io.hpp"
#include "egosag/synth.hpp"
#include "egosag/train.hpp"

namespace fs = std::filesystem;
using egosag::AdamW;
using egosag::Checkpoint;
using egosag::ConfigError;
using egosag::DataError;
using egosag::EvalOutcome;
using egosag::OptimConfig;
using egosag::ParamRegistry;
using egosag::RunConfig;
using egosag::TrainOutputs;
using Mat = Eigen::MatrixXd;
using nlohmann::json;

namespace {

std::string test_dir() {
  static std::string dir = [] {
    const fs::path p = fs::temp_directory_path() / "egosag_train_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
  }();
  return dir;
}

std::string path_in(const std::string& name) { return test_dir() + "/" + name; }

// One dataset shared by every training test in this binary.
const egosag::synth::GeneratedDataset& dataset() {
  static egosag::synth::GeneratedDataset ds = [] {
    egosag::synth::SynthConfig cfg;
    cfg.n_scenes = 8;
    cfg.n_clips = 8;
    cfg.points_per_scene = 96;
    cfg.frames = 4;
    cfg.frame_h = 8;
    cfg.frame_w = 8;
    return egosag::synth::generate_dataset(cfg, path_in("ds"));
  }();
  return ds;
}

RunConfig tiny_run(const std::string& out_name) {
  RunConfig cfg;
  cfg.model.channels = 8;
  cfg.model.queries = 4;
  cfg.model.decoder_layers = 2;
  cfg.model.heads = 2;
  cfg.model.level_widths = {4, 6};
  cfg.model.voxel_size = 0.3;
  cfg.model.superpoint_count = 12;
  cfg.model.n_classes = 4;
  cfg.model.frames = 4;
  cfg.model.clip_widths = {4, 6};
  cfg.model.clip_strides = {{2, 2, 2}, {1, 2, 2}};
  cfg.model.isa_n_c = 4;
  cfg.model.isa_k = 3;
  cfg.model.isa_heads = 2;
  cfg.optim.steps = 3;
  cfg.optim.batch = 2;
  cfg.optim.seed = 5;
  cfg.optim.eval_every = 0;
  cfg.data.manifest = dataset().train_manifest;
  cfg.data.val_manifest = dataset().val_manifest;
  cfg.output_dir = path_in(out_name);
  return cfg;
}

std::vector<json> read_log(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<json> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(json::parse(line));
  }
  return lines;
}

}  // namespace

TEST_CASE("one optimizer step reproduces the hand-computed update") {
  ParamRegistry reg(3);
  egosag::ad::Tensor& w =
      reg.param("w", 2, 2, egosag::InitSpec::constant(0.5));
  OptimConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  AdamW opt(reg, cfg);

  Mat g(2, 2);
  g << 1.0, -2.0, 0.5, 0.0;
  w.grad() = g;
  opt.step();

  // First step: m_hat = g, v_hat = g^2, so the adaptive part is sign(g)
  // damped by eps, followed by the decoupled decay.
  for (int c = 0; c < 2; ++c) {
    for (int r = 0; r < 2; ++r) {
      double expect = 0.5;
      const double denom = std::abs(g(r, c)) + cfg.eps;
      if (g(r, c) != 0.0) expect -= cfg.lr * g(r, c) / denom;
      expect -= cfg.lr * cfg.weight_decay * expect;
      CHECK(w.val()(r, c) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("optimizer state export and import continue identically") {
  const auto make = [] {
    auto reg = std::make_unique<ParamRegistry>(3);
    reg->param("w", 3, 1, egosag::InitSpec::constant(1.0));
    return reg;
  };
  OptimConfig cfg;
  cfg.lr = 0.05;
  Mat g1(3, 1), g2(3, 1), g3(3, 1);
  g1 << 1.0, -1.0, 0.5;
  g2 << -0.2, 0.3, 0.1;
  g3 << 0.7, 0.7, -0.7;

  // Continuous run: three steps.
  auto reg_a = make();
  AdamW opt_a(*reg_a, cfg);
  for (const Mat& g : {g1, g2, g3}) {
    reg_a->at("w").grad() = g;
    opt_a.step();
    reg_a->zero_grad_all();
  }

  // Interrupted run: two steps, round trip through a checkpoint, one more.
  auto reg_b = make();
  AdamW opt_b(*reg_b, cfg);
  for (const Mat& g : {g1, g2}) {
    reg_b->at("w").grad() = g;
    opt_b.step();
    reg_b->zero_grad_all();
  }
  Checkpoint ckpt = egosag::capture_params(*reg_b, 42, opt_b.steps_done());
  opt_b.export_state(ckpt);
  egosag::save_checkpoint(ckpt, path_in("resume.egcp"));

  auto reg_c = make();
  AdamW opt_c(*reg_c, cfg);
  const Checkpoint loaded = egosag::load_checkpoint(path_in("resume.egcp"), 42);
  egosag::restore_params(*reg_c, loaded);
  opt_c.import_state(loaded);
  CHECK(opt_c.steps_done() == 2);
  reg_c->at("w").grad() = g3;
  opt_c.step();

  // Checkpoints store float32, so resumed values agree to storage precision.
  CHECK((reg_a->at("w").val() - reg_c->at("w").val()).cwiseAbs().maxCoeff() <
        1e-6);
}

TEST_CASE("gradient clipping rescales only above the threshold") {
  ParamRegistry reg(1);
  egosag::ad::Tensor& w = reg.param("w", 1, 2, egosag::InitSpec::zero());
  Mat g(1, 2);
  g << 3.0, 4.0;  // norm 5
  w.grad() = g;

  CHECK(egosag::clip_gradients(reg, 10.0) == doctest::Approx(5.0));
  CHECK((w.grad() - g).cwiseAbs().maxCoeff() == 0.0);

  CHECK(egosag::clip_gradients(reg, 2.5) == doctest::Approx(5.0));
  CHECK(w.grad()(0, 0) == doctest::Approx(1.5));
  CHECK(w.grad()(0, 1) == doctest::Approx(2.0));

  // Disabled clipping (non-positive threshold) only reports the norm.
  w.grad() = g;
  CHECK(egosag::clip_gradients(reg, 0.0) == doctest::Approx(5.0));
  CHECK((w.grad() - g).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a short run writes its logs, checkpoints, and resolved config") {
  RunConfig cfg = tiny_run("run_smoke");
  const TrainOutputs out = egosag::train_model(cfg);

  CHECK(out.steps == cfg.optim.steps);
  CHECK(fs::exists(out.resolved_config_path));
  CHECK(fs::exists(out.last_checkpoint));
  CHECK(fs::exists(out.best_checkpoint));
  CHECK(out.has_val);
  CHECK(std::isfinite(out.first_loss));
  CHECK(std::isfinite(out.final_loss));

  const std::vector<json> lines = read_log(out.log_path);
  REQUIRE(lines.size() == static_cast<size_t>(cfg.optim.steps));
  for (size_t i = 0; i < lines.size(); ++i) {
    CHECK(lines[i].at("step").get<int>() == static_cast<int>(i) + 1);
    for (const char* key :
         {"total", "ce", "bce", "dice", "score", "mask", "kl", "con",
          "grad_norm"}) {
      CHECK(lines[i].contains(key));
      CHECK(std::isfinite(lines[i].at(key).get<double>()));
    }
  }
  CHECK(lines.front().at("total").get<double>() ==
        doctest::Approx(out.first_loss));
  CHECK(lines.back().at("total").get<double>() ==
        doctest::Approx(out.final_loss));

  // The resolved snapshot reparses to the exact same configuration.
  const RunConfig back = egosag::load_run_config(out.resolved_config_path,
                                                 /*apply_env=*/false);
  CHECK(egosag::config_hash(back) == egosag::config_hash(cfg));
  CHECK(back.optim.steps == cfg.optim.steps);

  // The stored weights reproduce the final evaluation.
  const EvalOutcome again = egosag::evaluate_checkpoint(
      cfg, out.last_checkpoint, dataset().train_manifest);
  CHECK(again.report.mAP == doctest::Approx(out.train_metrics.mAP));
  CHECK(again.clip_accuracy == doctest::Approx(out.train_clip_accuracy));
}

TEST_CASE("zeroing the auxiliary weights reduces the total to the class term") {
  RunConfig cfg = tiny_run("run_ce_only");
  cfg.loss.lambda_mask = 0.0;
  cfg.loss.lambda_kl = 0.0;
  cfg.loss.lambda_con = 0.0;
  const TrainOutputs out = egosag::train_model(cfg);
  for (const json& line : read_log(out.log_path)) {
    CHECK(line.at("total").get<double>() ==
          doctest::Approx(line.at("ce").get<double>()).epsilon(1e-12));
  }
}

TEST_CASE("equal seeds give byte-identical checkpoints and logs") {
  RunConfig a = tiny_run("run_det_a");
  a.optim.deterministic = true;
  RunConfig b = tiny_run("run_det_b");
  b.optim.deterministic = true;
  const TrainOutputs out_a = egosag::train_model(a);
  const TrainOutputs out_b = egosag::train_model(b);

  CHECK(egosag::io::read_file_bytes(out_a.last_checkpoint) ==
        egosag::io::read_file_bytes(out_b.last_checkpoint));
  CHECK(egosag::io::read_file_bytes(out_a.log_path) ==
        egosag::io::read_file_bytes(out_b.log_path));
  CHECK(out_a.train_metrics.mAP == out_b.train_metrics.mAP);
  CHECK(out_a.val_metrics.mAP == out_b.val_metrics.mAP);
}

TEST_CASE("a training manifest is required") {
  RunConfig cfg = tiny_run("run_nomanifest");
  cfg.data.manifest.clear();
  CHECK_THROWS_AS(egosag::train_model(cfg), ConfigError);
}

TEST_CASE("checkpoints from another architecture are rejected") {
  RunConfig cfg = tiny_run("run_smoke");  // smoke test already trained here
  if (!fs::exists(cfg.output_dir + "/last.egcp")) {
    egosag::train_model(cfg);
  }
  RunConfig other = tiny_run("run_other_arch");
  other.model.queries += 1;
  CHECK_THROWS_AS(egosag::evaluate_checkpoint(other,
                                              cfg.output_dir + "/last.egcp",
                                              dataset().train_manifest),
                  DataError);
  try {
    egosag::evaluate_checkpoint(other, cfg.output_dir + "/last.egcp",
                                dataset().train_manifest);
  } catch (const DataError& e) {
    CHECK(e.kind() == DataError::Kind::ConfigHashMismatch);
  }
}

TEST_CASE("prediction dumps round trip through their JSON form") {
  egosag::FinalPrediction pred;
  pred.affordance_id = 2;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(7);
  m1(1) = 1.0;
  m1(4) = 1.0;
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(7);
  m2(6) = 1.0;
  pred.point_masks = {m1, m2};
  pred.scores = {0.75, 0.5};

  const std::string text = egosag::prediction_to_json(pred, "scene_x", "clip_y");
  const egosag::FinalPrediction back = egosag::prediction_from_json(text, 7);
  CHECK(back.affordance_id == 2);
  REQUIRE(back.point_masks.size() == 2);
  CHECK((back.point_masks[0] - m1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.point_masks[1] - m2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.scores[0] == doctest::Approx(0.75));

  CHECK_THROWS_AS(egosag::prediction_from_json("not json", 7), DataError);
  CHECK_THROWS_AS(egosag::prediction_from_json("{}", 7), DataError);
  CHECK_THROWS_AS(egosag::prediction_from_json(text, 5), DataError);
}

TEST_CASE("feeding the ground truth back as predictions scores perfectly") {
  const RunConfig cfg = tiny_run("unused");
  egosag::PairedDataset data(dataset().train_manifest, cfg.model);
  const std::string dir = path_in("gt_preds");
  fs::create_directories(dir);
  for (size_t i = 0; i < data.size(); ++i) {
    const egosag::DatasetSample& s = data.sample(i);
    egosag::FinalPrediction pred;
    pred.affordance_id = s.gt.affordance_class;
    for (Eigen::Index j = 0; j < s.gt.point_masks.cols(); ++j) {
      pred.point_masks.push_back(s.gt.point_masks.col(j));
      pred.scores.push_back(1.0);
    }
    egosag::io::write_file_bytes(
        dir + "/" + egosag::prediction_filename(s.clip_id, s.scene_id),
        egosag::prediction_to_json(pred, s.scene_id, s.clip_id));
  }

  const EvalOutcome out = egosag::evaluate_predictions_dir(
      cfg.model, dataset().train_manifest, dir);
  CHECK(out.report.mAP == doctest::Approx(100.0));
  CHECK(out.report.AP50 == doctest::Approx(100.0));
  CHECK(out.report.AP25 == doctest::Approx(100.0));
  CHECK(out.report.mRC == doctest::Approx(100.0));
  CHECK(out.report.RC50 == doctest::Approx(100.0));
  CHECK(out.report.RC25 == doctest::Approx(100.0));
  CHECK(out.clip_accuracy == doctest::Approx(1.0));
}

TEST_CASE("empty prediction dumps score zero everywhere") {
  const RunConfig cfg = tiny_run("unused");
  egosag::PairedDataset data(dataset().train_manifest, cfg.model);
  const std::string dir = path_in("empty_preds");
  fs::create_directories(dir);
  for (size_t i = 0; i < data.size(); ++i) {
    const egosag::DatasetSample& s = data.sample(i);
    egosag::FinalPrediction pred;
    pred.affordance_id = -1;
    egosag::io::write_file_bytes(
        dir + "/" + egosag::prediction_filename(s.clip_id, s.scene_id),
        egosag::prediction_to_json(pred, s.scene_id, s.clip_id));
  }

  const EvalOutcome out = egosag::evaluate_predictions_dir(
      cfg.model, dataset().train_manifest, dir);
  CHECK(out.report.mAP == doctest::Approx(0.0));
  CHECK(out.report.AP25 == doctest::Approx(0.0));
  CHECK(out.report.mRC == doctest::Approx(0.0));
  CHECK(out.clip_accuracy == doctest::Approx(0.0));
}

TEST_CASE("a missing dump file names its path") {
  const RunConfig cfg = tiny_run("unused");
  const std::string dir = path_in("no_preds");
  fs::create_directories(dir);
  try {
    egosag::evaluate_predictions_dir(cfg.model, dataset().train_manifest, dir);
    FAIL("expected a missing-file error");
  } catch (const DataError& e) {
    CHECK(e.kind() == DataError::Kind::MissingFile);
    CHECK(std::string(e.what()).find(dir) != std::string::npos);
  }
}
