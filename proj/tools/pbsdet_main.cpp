// pbsdet: data generation, training, distillation, detection, evaluation,
// label statistics, and gradient checks for the precise-box-score detector.
//
// Exit codes: 0 ok, 1 usage/config error, 2 runtime failure,
// 3 divergence or check failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pbsdet/config.hpp"
#include "pbsdet/distill.hpp"
#include "pbsdet/eval.hpp"
#include "pbsdet/gradcheck.hpp"
#include "pbsdet/inference.hpp"
#include "pbsdet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pbsdet;

namespace {

struct GlobalOpts {
  std::string config_path;
  int64_t seed_override = -1;
  std::string out_override;
  bool quiet = false;
};

// Timestamps are confined to this log file so every primary output stays
// byte-identical across reruns.
class RunLog {
 public:
  RunLog(const fs::path& dir, bool quiet) : quiet_(quiet) {
    fs::create_directories(dir);
    os_.open(dir / "run.log", std::ios::app);
  }
  void line(const std::string& msg) {
    if (os_) {
      const auto now = std::chrono::system_clock::now();
      const std::time_t t = std::chrono::system_clock::to_time_t(now);
      char buf[32];
      std::strftime(buf, sizeof buf, "%F %T", std::gmtime(&t));
      os_ << "[" << buf << "] " << msg << "\n";
    }
    if (!quiet_) std::cout << msg << "\n";
  }

 private:
  std::ofstream os_;
  bool quiet_ = false;
};

ExperimentConfig load_config(const GlobalOpts& g) {
  if (g.config_path.empty()) throw ConfigError("missing --config");
  ExperimentConfig cfg = ExperimentConfig::load(g.config_path);
  if (g.seed_override >= 0) {
    cfg.seed = uint64_t(g.seed_override);
    cfg.train.seed = cfg.seed;
  }
  if (!g.out_override.empty()) cfg.out_dir = g.out_override;
  return cfg;
}

void write_echo(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream os(dir / "config_echo.json");
  os << cfg.to_json().dump(2) << "\n";
}

std::string checksum_hex(uint64_t sum) {
  std::ostringstream os;
  os << std::hex << sum;
  return os.str();
}

json eval_summary(const EvalResult& r, const std::vector<int>& budgets_nominal) {
  json tpr = json::object();
  for (size_t i = 0; i < r.budgets.size(); ++i)
    tpr[std::to_string(budgets_nominal[i])] = r.tpr_at[i];
  return json{{"ap", r.ap},
              {"tpr_at_fp", tpr},
              {"fp_budgets_nominal", budgets_nominal},
              {"fp_budgets_scaled", r.budgets}};
}

EvalResult eval_on_scenes(DetectorNet<float>& net, const std::vector<Scene>& scenes,
                          const ExperimentConfig& cfg, std::vector<int>& budgets_out) {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<Box>> gts;
  long long total_gts = 0;
  for (const Scene& s : scenes) {
    dets.push_back(detect(net, s.image, cfg.anchors, cfg.detect));
    gts.push_back(s.gts);
    total_gts += (long long)s.gts.size();
  }
  budgets_out = cfg.eval.scaled(total_gts);
  return evaluate(dets, gts, budgets_out, cfg.eval.iou_min);
}

// Builds the configured net, applying the softmax-pretrain switch when a
// checkpoint is given and the target head is precise-sigmoid.
DetectorNet<float> build_train_net(const ExperimentConfig& cfg, RunLog& log) {
  const NetArch arch = cfg.net.to_arch(cfg.anchors.num_scales(), cfg.train.head);
  if (!cfg.pretrain_weights.empty()) {
    DetectorNet<float> pre = load_weights<float>(cfg.pretrain_weights);
    if (pre.arch.head == HeadType::Softmax && cfg.train.head == HeadType::PreciseSigmoid) {
      log.line("switching softmax pretrain '" + cfg.pretrain_weights +
               "' to a precise-sigmoid head");
      return switch_head_softmax_to_sigmoid(pre);
    }
    if (pre.arch.head != cfg.train.head)
      throw std::runtime_error("pretrain head does not match train.head");
    log.line("continuing from pretrain '" + cfg.pretrain_weights + "'");
    return pre;
  }
  if (cfg.train.head == HeadType::PreciseSigmoid)
    std::cerr << "warning: training a precise-sigmoid head from scratch; the "
                 "sigmoid-euclidean loss converges poorly without a softmax "
                 "pretrain (pass train.pretrain_weights)\n";
  return DetectorNet<float>(arch, cfg.seed);
}

int cmd_gen_data(const GlobalOpts& g) {
  const ExperimentConfig cfg = load_config(g);
  const fs::path dir = cfg.dataset.dir;
  fs::create_directories(dir);
  RunLog log(dir, g.quiet);
  write_echo(cfg, dir);

  std::vector<ManifestEntry> manifest;
  for (int i = 0; i < cfg.dataset.count; ++i) {
    const uint64_t seed = cfg.seed + uint64_t(i);
    const SyntheticScene s = gen_scene(seed, cfg.dataset.scene);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05d.pgm", i);
    write_pgm((dir / name).string(), s.width, s.height, s.pixels);
    manifest.push_back({name, s.gt_boxes});
  }
  save_manifest((dir / "manifest.json").string(), manifest);
  log.line("wrote " + std::to_string(cfg.dataset.count) + " scenes + manifest to " +
           dir.string());
  return 0;
}

int cmd_train(const GlobalOpts& g) {
  const ExperimentConfig cfg = load_config(g);
  const fs::path out = cfg.out_dir;
  RunLog log(out, g.quiet);
  write_echo(cfg, out);

  const std::vector<Scene> dataset = load_scenes(cfg.dataset.train_manifest);
  log.line("train set: " + std::to_string(dataset.size()) + " images, head=" +
           head_name(cfg.train.head) + ", rule=" + cfg.rule.describe());

  DetectorNet<float> net = build_train_net(cfg, log);
  const std::vector<TraceRow> trace = train(net, dataset, cfg.train);

  save_weights(net, (out / "weights.pbsw").string());
  {
    std::ofstream os(out / "trace.csv");
    write_trace_csv(os, trace);
  }
  if (!trace.empty())
    log.line("loss: first total=" + std::to_string(trace.front().total) +
             " last total=" + std::to_string(trace.back().total));

  const std::vector<Scene> test = load_scenes(cfg.dataset.test_manifest);
  std::vector<int> budgets;
  const EvalResult r = eval_on_scenes(net, test, cfg, budgets);
  json summary = eval_summary(r, cfg.eval.fp_budgets);
  summary["rule"] = cfg.rule.describe();
  summary["head"] = head_name(cfg.train.head);
  {
    std::ofstream os(out / "eval.json");
    os << summary.dump(2) << "\n";
    std::ofstream cs(out / "curve.csv");
    write_curve_csv(cs, r);
  }
  log.line("eval: ap=" + std::to_string(r.ap));
  return 0;
}

int cmd_distill(const GlobalOpts& g) {
  const ExperimentConfig cfg = load_config(g);
  const fs::path out = cfg.out_dir;
  RunLog log(out, g.quiet);
  write_echo(cfg, out);

  if (cfg.distill.teacher_weights.empty())
    throw ConfigError("distill.teacher_weights is required");
  DetectorNet<float> teacher = load_weights<float>(cfg.distill.teacher_weights);
  if (teacher.arch.head != cfg.train.head)
    throw std::runtime_error(
        "teacher head does not match train.head; teacher and student output "
        "maps must align");
  const uint64_t teacher_pre = teacher.checksum();
  log.line("teacher checksum pre: " + checksum_hex(teacher_pre));

  const std::vector<Scene> dataset = load_scenes(cfg.dataset.train_manifest);
  const int phase_iters = cfg.distill.loss.iterations;

  // quarter-width (by default) student; both arms start from the same
  // checkpoint: a softmax-binary pretrain of `phase_iters` plus the head
  // switch, or a fresh net
  DetectorNet<float> student0 = shrink_model(teacher, cfg.distill.loss.width_factor,
                                             hash2(cfg.seed, 0x57adull));
  if (cfg.distill.student_init == "half_trained") {
    NetArch pre_arch = student0.arch;
    pre_arch.head = HeadType::Softmax;
    DetectorNet<float> pre(pre_arch, hash2(cfg.seed, 0x57adull));
    TrainConfig pre_cfg = cfg.train;
    pre_cfg.head = HeadType::Softmax;
    pre_cfg.rule = LabelRule::binary(0.7, 0.3);
    pre_cfg.iterations = phase_iters;
    pre_cfg.lr_decay_iters.clear();
    log.line("student pretrain: softmax binary, " + std::to_string(phase_iters) +
             " iterations");
    train(pre, dataset, pre_cfg);
    student0 = cfg.train.head == HeadType::PreciseSigmoid
                   ? switch_head_softmax_to_sigmoid(pre)
                   : pre;
  }

  TrainConfig arm_cfg = cfg.train;
  arm_cfg.iterations = phase_iters;

  log.line("standalone arm: " + std::to_string(phase_iters) + " iterations, rule=" +
           cfg.rule.describe());
  DetectorNet<float> standalone = student0;
  const std::vector<TraceRow> trace_a = train(standalone, dataset, arm_cfg);

  log.line("distill arm: " + std::to_string(phase_iters) + " iterations");
  DetectorNet<float> distilled = student0;
  const std::vector<DistillTraceRow> trace_b =
      distill_train(teacher, distilled, dataset, arm_cfg, cfg.distill.loss);

  const uint64_t teacher_post = teacher.checksum();
  log.line("teacher checksum post: " + checksum_hex(teacher_post));
  if (teacher_pre != teacher_post)
    throw std::runtime_error("teacher weights changed during distillation");

  save_weights(standalone, (out / "student_standalone.pbsw").string());
  save_weights(distilled, (out / "student_distilled.pbsw").string());
  {
    std::ofstream os(out / "standalone_trace.csv");
    write_trace_csv(os, trace_a);
    std::ofstream ds(out / "distill_trace.csv");
    write_distill_trace_csv(ds, trace_b);
  }

  const std::vector<Scene> test = load_scenes(cfg.dataset.test_manifest);
  std::vector<int> budgets;
  const EvalResult ra = eval_on_scenes(standalone, test, cfg, budgets);
  const EvalResult rb = eval_on_scenes(distilled, test, cfg, budgets);

  json report;
  report["width_factor"] = cfg.distill.loss.width_factor;
  report["student_init"] = cfg.distill.student_init;
  report["teacher"] = {{"weights", cfg.distill.teacher_weights},
                       {"checksum_pre", checksum_hex(teacher_pre)},
                       {"checksum_post", checksum_hex(teacher_post)}};
  report["standalone"] = eval_summary(ra, cfg.eval.fp_budgets);
  report["distilled"] = eval_summary(rb, cfg.eval.fp_budgets);
  {
    std::ofstream os(out / "distill_report.json");
    os << report.dump(2) << "\n";
  }
  log.line("standalone ap=" + std::to_string(ra.ap) +
           " distilled ap=" + std::to_string(rb.ap));
  return 0;
}

int cmd_detect(const GlobalOpts& g, const std::vector<std::string>& images,
               const std::string& weights_flag) {
  const ExperimentConfig cfg = load_config(g);
  const fs::path out = cfg.out_dir;
  RunLog log(out, g.quiet);
  write_echo(cfg, out);

  const std::string weights = weights_flag.empty() ? cfg.detect_weights : weights_flag;
  if (weights.empty()) throw ConfigError("no weight file: set detect.weights or --weights");
  DetectorNet<float> net = load_weights<float>(weights);

  std::vector<std::pair<std::string, std::vector<Detection>>> rows;
  bool any_failed = false;
  for (const std::string& path : images) {
    try {
      int w = 0, h = 0;
      std::vector<uint8_t> px;
      read_pgm(path, w, h, px);
      Tensor<float> img(1, 1, h, w);
      for (size_t i = 0; i < px.size(); ++i) img.v[i] = float(px[i]) / 255.0f;
      rows.emplace_back(fs::path(path).filename().string(),
                        detect(net, img, cfg.anchors, cfg.detect));
    } catch (const std::exception& e) {
      std::cerr << "error: " << path << ": " << e.what() << "\n";
      any_failed = true;
    }
  }
  {
    std::ofstream os(out / "detections.csv");
    write_detections_csv(os, rows);
  }
  log.line("detected on " + std::to_string(rows.size()) + "/" +
           std::to_string(images.size()) + " images");
  return any_failed ? 2 : 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& dets_path,
             const std::string& manifest_path) {
  const ExperimentConfig cfg = load_config(g);
  const fs::path out = cfg.out_dir;
  RunLog log(out, g.quiet);
  write_echo(cfg, out);

  const auto manifest = load_manifest(manifest_path);
  std::map<std::string, size_t> index;
  for (size_t i = 0; i < manifest.size(); ++i) index[manifest[i].image] = i;

  std::vector<std::vector<Detection>> dets(manifest.size());
  std::vector<std::vector<Box>> gts(manifest.size());
  long long total_gts = 0;
  for (size_t i = 0; i < manifest.size(); ++i) {
    gts[i] = manifest[i].boxes;
    total_gts += (long long)gts[i].size();
  }

  std::ifstream is(dets_path);
  if (!is) throw std::runtime_error("cannot open detections: " + dets_path);
  for (const auto& [id, d] : read_detections_csv(is)) {
    auto it = index.find(id);
    if (it == index.end())
      throw std::runtime_error("detections reference unknown image id '" + id +
                               "' not present in the manifest");
    dets[it->second] = d;
  }

  const std::vector<int> budgets = cfg.eval.scaled(total_gts);
  const EvalResult r = evaluate(dets, gts, budgets, cfg.eval.iou_min);
  json summary = eval_summary(r, cfg.eval.fp_budgets);
  summary["detections"] = dets_path;
  summary["manifest"] = manifest_path;
  {
    std::ofstream os(out / "metrics.json");
    os << summary.dump(2) << "\n";
    std::ofstream cs(out / "curve.csv");
    write_curve_csv(cs, r);
  }
  log.line("ap=" + std::to_string(r.ap));
  return 0;
}

int cmd_label_stats(const GlobalOpts& g, const std::string& annotations,
                    const std::string& format) {
  const ExperimentConfig cfg = load_config(g);
  const fs::path out = cfg.out_dir;
  RunLog log(out, g.quiet);
  write_echo(cfg, out);

  std::vector<std::vector<Box>> gts;
  if (format == "manifest") {
    for (const auto& e : load_manifest(annotations)) gts.push_back(e.boxes);
  } else {
    std::ifstream is(annotations);
    if (!is) throw std::runtime_error("cannot open annotations: " + annotations);
    std::stringstream buf;
    buf << is.rdbuf();
    const auto records =
        format == "wider" ? parse_wider(buf.str()) : parse_fddb(buf.str());
    for (const auto& r : records) gts.push_back(r.boxes);
  }

  const LabelStats stats = label_stats(gts, cfg.anchors, cfg.rule);
  {
    std::ofstream os(out / "label_stats.csv");
    write_label_stats_csv(os, stats);
  }
  std::ostringstream headline;
  headline.precision(6);
  headline << "rule=" << cfg.rule.describe() << " images=" << gts.size()
           << " anchors=" << stats.total() << " ignored_fraction="
           << stats.ignored_fraction();
  log.line(headline.str());
  return 0;
}

int cmd_gradcheck(int trials, bool quiet) {
  const std::vector<CheckResult> results = run_gradient_suite(trials);
  bool all_pass = true;
  for (const CheckResult& r : results) {
    all_pass = all_pass && r.pass;
    if (!quiet || !r.pass) {
      std::ostringstream os;
      os.precision(3);
      os << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  trials=" << r.trials
         << "  max_rel_err=" << std::scientific << r.max_rel_err
         << "  tol=" << r.tolerance;
      std::cout << os.str() << "\n";
    }
  }
  return all_pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"precise-box-score detector toolkit"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "experiment config JSON");
  app.add_option("--seed", g.seed_override, "override config seed");
  app.add_option("--out", g.out_override, "override output directory");
  app.add_flag("--quiet", g.quiet, "suppress progress output");

  auto* gen = app.add_subcommand("gen-data", "render synthetic scenes + manifest");
  auto* tr = app.add_subcommand("train", "train a detector per the config");
  auto* di = app.add_subcommand("distill", "teacher->student compression report");

  std::vector<std::string> image_paths;
  std::string weights_flag;
  auto* de = app.add_subcommand("detect", "run detection over PGM images");
  de->add_option("images", image_paths, "image paths (PGM)");
  de->add_option("--weights", weights_flag, "weight file (overrides detect.weights)");

  std::string dets_path, manifest_path;
  auto* ev = app.add_subcommand("eval", "score a detections CSV against a manifest");
  ev->add_option("--dets", dets_path, "detections CSV")->required();
  ev->add_option("--manifest", manifest_path, "ground-truth manifest JSON")->required();

  std::string annotations, ann_format = "wider";
  auto* ls = app.add_subcommand("label-stats", "anchor label histogram for a rule");
  ls->add_option("--annotations", annotations, "annotation file")->required();
  ls->add_option("--format", ann_format, "wider|fddb|manifest")
      ->check(CLI::IsMember({"wider", "fddb", "manifest"}));

  int trials = 100;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--trials", trials, "randomized trials per check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(g);
    if (tr->parsed()) return cmd_train(g);
    if (di->parsed()) return cmd_distill(g);
    if (de->parsed()) return cmd_detect(g, image_paths, weights_flag);
    if (ev->parsed()) return cmd_eval(g, dets_path, manifest_path);
    if (ls->parsed()) return cmd_label_stats(g, annotations, ann_format);
    if (gc->parsed()) return cmd_gradcheck(trials, g.quiet);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
