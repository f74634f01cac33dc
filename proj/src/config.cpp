#include "pbsdet/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

using nlohmann::json;

namespace pbsdet {

namespace {

void check_keys(const json& j, const std::string& ctx,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: " + ctx + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + ctx);
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      j.at(key).get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
    }
  }
}

AnchorConfig parse_anchors(const json& j) {
  check_keys(j, "anchors",
             {"feature_w", "feature_h", "stride", "scales", "clip_to_image"});
  AnchorConfig a;
  get_to(j, "feature_w", a.feature_w);
  get_to(j, "feature_h", a.feature_h);
  get_to(j, "stride", a.stride);
  get_to(j, "scales", a.scales);
  get_to(j, "clip_to_image", a.clip_to_image);
  try {
    a.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: anchors: ") + e.what());
  }
  return a;
}

LabelRule parse_rule(const json& j) {
  check_keys(j, "rule", {"kind", "bound_pos", "bound_neg", "shift_a", "bound_1",
                         "score_1", "bound_2", "score_2"});
  std::string kind = "binary";
  get_to(j, "kind", kind);
  LabelRule r;
  if (kind == "binary") r.kind = RuleKind::Binary;
  else if (kind == "shift") r.kind = RuleKind::Shift;
  else if (kind == "split_one") r.kind = RuleKind::SplitOne;
  else if (kind == "split_two") r.kind = RuleKind::SplitTwo;
  else throw ConfigError("config: rule.kind must be binary|shift|split_one|split_two");
  get_to(j, "bound_pos", r.bound_pos);
  get_to(j, "bound_neg", r.bound_neg);
  get_to(j, "shift_a", r.shift_a);
  get_to(j, "bound_1", r.bound_1);
  get_to(j, "score_1", r.score_1);
  get_to(j, "bound_2", r.bound_2);
  get_to(j, "score_2", r.score_2);
  if (r.kind == RuleKind::SplitOne && !j.contains("bound_2")) {
    r.bound_2 = 1.0;
    r.score_2 = 1.0;
  }
  try {
    r.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: rule: ") + e.what());
  }
  return r;
}

SceneSpec parse_scene(const json& j) {
  check_keys(j, "dataset.scene", {"width", "height", "min_targets", "max_targets",
                                  "min_scale", "max_scale", "distractors"});
  SceneSpec s;
  get_to(j, "width", s.width);
  get_to(j, "height", s.height);
  get_to(j, "min_targets", s.min_targets);
  get_to(j, "max_targets", s.max_targets);
  get_to(j, "min_scale", s.min_scale);
  get_to(j, "max_scale", s.max_scale);
  get_to(j, "distractors", s.distractors);
  try {
    s.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: dataset.scene: ") + e.what());
  }
  return s;
}

HeadType parse_head(const std::string& s) {
  if (s == "softmax") return HeadType::Softmax;
  if (s == "precise_sigmoid") return HeadType::PreciseSigmoid;
  throw ConfigError("config: train.head must be softmax|precise_sigmoid");
}

}  // namespace

NetArch NetConfig::to_arch(int num_scales, HeadType head) const {
  NetArch a;
  a.in_channels = in_channels;
  a.channels = channels;
  a.num_scales = num_scales;
  a.head = head;
  a.width = width;
  int ts = total_stride;
  if (ts < 1 || (ts & (ts - 1)) != 0)
    throw ConfigError("config: net.total_stride must be a power of two");
  int twos = 0;
  while ((1 << twos) < ts) ++twos;
  if (twos > int(channels.size()))
    throw ConfigError("config: net.total_stride needs more layers than channels has");
  a.strides.assign(channels.size(), 1);
  for (int i = 0; i < twos; ++i) a.strides[size_t(i)] = 2;
  a.validate();
  return a;
}

std::vector<int> EvalConfig::scaled(long long dataset_gt_count) const {
  std::vector<int> out;
  for (int b : fp_budgets) {
    if (!scale_budgets) {
      out.push_back(b);
      continue;
    }
    const double s = double(b) * double(dataset_gt_count) / double(budget_reference_gts);
    out.push_back(std::max(0, int(std::ceil(s))));
  }
  return out;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, "top level",
             {"seed", "out_dir", "anchors", "rule", "loss", "net", "train",
              "distill", "dataset", "detect", "eval"});
  ExperimentConfig c;
  get_to(j, "seed", c.seed);
  get_to(j, "out_dir", c.out_dir);
  if (j.contains("anchors")) c.anchors = parse_anchors(j.at("anchors"));
  if (j.contains("rule")) c.rule = parse_rule(j.at("rule"));

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    check_keys(l, "loss", {"lambda", "smooth_l1_delta"});
    get_to(l, "lambda", c.loss.lambda);
    get_to(l, "smooth_l1_delta", c.loss.smooth_l1_delta);
    if (c.loss.lambda <= 0) throw ConfigError("config: loss.lambda must be > 0");
  }

  if (j.contains("net")) {
    const json& n = j.at("net");
    check_keys(n, "net", {"in_channels", "channels", "total_stride", "width"});
    get_to(n, "in_channels", c.net.in_channels);
    get_to(n, "channels", c.net.channels);
    get_to(n, "total_stride", c.net.total_stride);
    get_to(n, "width", c.net.width);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train",
               {"head", "learning_rate", "momentum", "weight_decay", "iterations",
                "batch_images", "batch_anchors", "max_pos_fraction",
                "force_best_match", "pretrain_weights", "lr_decay_iters",
                "lr_decay_factor"});
    std::string head = "softmax";
    get_to(t, "head", head);
    c.train.head = parse_head(head);
    get_to(t, "learning_rate", c.train.learning_rate);
    get_to(t, "momentum", c.train.momentum);
    get_to(t, "weight_decay", c.train.weight_decay);
    get_to(t, "iterations", c.train.iterations);
    get_to(t, "batch_images", c.train.batch_images);
    get_to(t, "batch_anchors", c.train.batch_anchors);
    get_to(t, "max_pos_fraction", c.train.max_pos_fraction);
    get_to(t, "force_best_match", c.train.force_best_match);
    get_to(t, "pretrain_weights", c.pretrain_weights);
    get_to(t, "lr_decay_iters", c.train.lr_decay_iters);
    get_to(t, "lr_decay_factor", c.train.lr_decay_factor);
  }

  if (j.contains("distill")) {
    const json& d = j.at("distill");
    check_keys(d, "distill",
               {"width_factor", "w_distill_cls", "w_distill_reg", "w_orig",
                "iterations", "match_post_sigmoid", "teacher_weights",
                "student_init"});
    get_to(d, "width_factor", c.distill.loss.width_factor);
    get_to(d, "w_distill_cls", c.distill.loss.w_distill_cls);
    get_to(d, "w_distill_reg", c.distill.loss.w_distill_reg);
    get_to(d, "w_orig", c.distill.loss.w_orig);
    get_to(d, "iterations", c.distill.loss.iterations);
    get_to(d, "match_post_sigmoid", c.distill.loss.match_post_sigmoid);
    get_to(d, "teacher_weights", c.distill.teacher_weights);
    get_to(d, "student_init", c.distill.student_init);
    if (c.distill.student_init != "fresh" && c.distill.student_init != "half_trained")
      throw ConfigError("config: distill.student_init must be fresh|half_trained");
    try {
      c.distill.loss.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: distill: ") + e.what());
    }
  }

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset",
               {"dir", "count", "scene", "train_manifest", "test_manifest"});
    get_to(d, "dir", c.dataset.dir);
    get_to(d, "count", c.dataset.count);
    if (d.contains("scene")) c.dataset.scene = parse_scene(d.at("scene"));
    get_to(d, "train_manifest", c.dataset.train_manifest);
    get_to(d, "test_manifest", c.dataset.test_manifest);
    if (c.dataset.count < 0) throw ConfigError("config: dataset.count >= 0");
  }

  if (j.contains("detect")) {
    const json& d = j.at("detect");
    check_keys(d, "detect", {"weights", "top_k", "nms_threshold", "score_floor"});
    get_to(d, "weights", c.detect_weights);
    get_to(d, "top_k", c.detect.top_k);
    get_to(d, "nms_threshold", c.detect.nms_threshold);
    get_to(d, "score_floor", c.detect.score_floor);
    if (c.detect.top_k < 0 || c.detect.nms_threshold < 0 || c.detect.nms_threshold > 1)
      throw ConfigError("config: detect: bad top_k or nms_threshold");
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval",
               {"fp_budgets", "iou_min", "scale_budgets", "budget_reference_gts"});
    get_to(e, "fp_budgets", c.eval.fp_budgets);
    get_to(e, "iou_min", c.eval.iou_min);
    get_to(e, "scale_budgets", c.eval.scale_budgets);
    get_to(e, "budget_reference_gts", c.eval.budget_reference_gts);
    if (c.eval.budget_reference_gts < 1)
      throw ConfigError("config: eval.budget_reference_gts >= 1");
  }

  // cross-field wiring and final validation
  c.train.rule = c.rule;
  c.train.loss = c.loss;
  c.train.anchors = c.anchors;
  c.train.seed = c.seed;
  if (c.anchors.feature_w > 0) {
    try {
      c.net.to_arch(c.anchors.num_scales(), c.train.head);
      c.train.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["anchors"] = {{"feature_w", anchors.feature_w},
                  {"feature_h", anchors.feature_h},
                  {"stride", anchors.stride},
                  {"scales", anchors.scales},
                  {"clip_to_image", anchors.clip_to_image}};
  json r;
  switch (rule.kind) {
    case RuleKind::Binary: r["kind"] = "binary"; break;
    case RuleKind::Shift: r["kind"] = "shift"; break;
    case RuleKind::SplitOne: r["kind"] = "split_one"; break;
    case RuleKind::SplitTwo: r["kind"] = "split_two"; break;
  }
  r["bound_pos"] = rule.bound_pos;
  r["bound_neg"] = rule.bound_neg;
  if (rule.kind == RuleKind::Shift) r["shift_a"] = rule.shift_a;
  if (rule.kind == RuleKind::SplitOne || rule.kind == RuleKind::SplitTwo) {
    r["bound_1"] = rule.bound_1;
    r["score_1"] = rule.score_1;
  }
  if (rule.kind == RuleKind::SplitTwo) {
    r["bound_2"] = rule.bound_2;
    r["score_2"] = rule.score_2;
  }
  j["rule"] = r;
  j["loss"] = {{"lambda", loss.lambda}, {"smooth_l1_delta", loss.smooth_l1_delta}};
  j["net"] = {{"in_channels", net.in_channels},
              {"channels", net.channels},
              {"total_stride", net.total_stride},
              {"width", net.width}};
  j["train"] = {{"head", head_name(train.head)},
                {"learning_rate", train.learning_rate},
                {"momentum", train.momentum},
                {"weight_decay", train.weight_decay},
                {"iterations", train.iterations},
                {"batch_images", train.batch_images},
                {"batch_anchors", train.batch_anchors},
                {"max_pos_fraction", train.max_pos_fraction},
                {"force_best_match", train.force_best_match},
                {"pretrain_weights", pretrain_weights},
                {"lr_decay_iters", train.lr_decay_iters},
                {"lr_decay_factor", train.lr_decay_factor}};
  j["distill"] = {{"width_factor", distill.loss.width_factor},
                  {"w_distill_cls", distill.loss.w_distill_cls},
                  {"w_distill_reg", distill.loss.w_distill_reg},
                  {"w_orig", distill.loss.w_orig},
                  {"iterations", distill.loss.iterations},
                  {"match_post_sigmoid", distill.loss.match_post_sigmoid},
                  {"teacher_weights", distill.teacher_weights},
                  {"student_init", distill.student_init}};
  j["dataset"] = {{"dir", dataset.dir},
                  {"count", dataset.count},
                  {"scene",
                   {{"width", dataset.scene.width},
                    {"height", dataset.scene.height},
                    {"min_targets", dataset.scene.min_targets},
                    {"max_targets", dataset.scene.max_targets},
                    {"min_scale", dataset.scene.min_scale},
                    {"max_scale", dataset.scene.max_scale},
                    {"distractors", dataset.scene.distractors}}},
                  {"train_manifest", dataset.train_manifest},
                  {"test_manifest", dataset.test_manifest}};
  j["detect"] = {{"weights", detect_weights},
                 {"top_k", detect.top_k},
                 {"nms_threshold", detect.nms_threshold},
                 {"score_floor", detect.score_floor}};
  j["eval"] = {{"fp_budgets", eval.fp_budgets},
               {"iou_min", eval.iou_min},
               {"scale_budgets", eval.scale_budgets},
               {"budget_reference_gts", eval.budget_reference_gts}};
  return j;
}

}  // namespace pbsdet
