#pragma once

#include <string>

#include "json.hpp"
#include "pbsdet/data.hpp"
#include "pbsdet/distill.hpp"
#include "pbsdet/inference.hpp"
#include "pbsdet/train.hpp"

namespace pbsdet {

// Invalid or malformed experiment config; the CLI maps it to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string dir = "data";
  int count = 100;
  SceneSpec scene;
  std::string train_manifest;
  std::string test_manifest;
};

struct NetConfig {
  int in_channels = 1;
  std::vector<int> channels{16, 32, 64, 64};
  int total_stride = 16;  // power of two; leading layers take stride 2
  double width = 1.0;

  NetArch to_arch(int num_scales, HeadType head) const;
};

struct EvalConfig {
  std::vector<int> fp_budgets{100, 500, 1000};
  double iou_min = 0.5;
  // Desk-scale mapping of the FDDB operating points: budgets are scaled by
  // dataset_gt_count / budget_reference_gts, rounded up.
  bool scale_budgets = true;
  int budget_reference_gts = 5171;

  std::vector<int> scaled(long long dataset_gt_count) const;
};

struct DistillCommandConfig {
  DistillConfig loss;                     // mix weights, width factor, iterations
  std::string teacher_weights;
  std::string student_init = "half_trained";  // or "fresh"
};

// Whole-experiment configuration mirroring the JSON file. Parsing is strict:
// unknown keys anywhere are rejected before any work starts.
struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir = "runs/out";
  AnchorConfig anchors;
  LabelRule rule = LabelRule::binary(0.7, 0.3);
  LossConfig loss;
  NetConfig net;
  TrainConfig train;  // rule/loss/anchors copied in after parse
  std::string pretrain_weights;
  DistillCommandConfig distill;
  DatasetConfig dataset;
  DetectConfig detect;
  std::string detect_weights;
  EvalConfig eval;

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;
};

}  // namespace pbsdet
