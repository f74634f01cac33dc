#include "pbsdet/train.hpp"

#include <cmath>
#include <ostream>
#include <unordered_map>

namespace pbsdet {

void TrainConfig::validate() const {
  if (learning_rate <= 0 || momentum < 0 || weight_decay < 0)
    throw std::invalid_argument("TrainConfig: rates must be positive");
  if (iterations < 0) throw std::invalid_argument("TrainConfig: iterations < 0");
  if (batch_images < 1 || batch_anchors < 1)
    throw std::invalid_argument("TrainConfig: batch sizes must be >= 1");
  if (!(max_pos_fraction >= 0.0 && max_pos_fraction <= 1.0))
    throw std::invalid_argument("TrainConfig: max_pos_fraction in [0,1]");
  if (loss.lambda <= 0) throw std::invalid_argument("TrainConfig: lambda > 0");
  rule.validate();
  anchors.validate();
}

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
  os << "iteration,cls_loss,reg_loss,total\n";
  os.precision(9);
  for (const auto& r : trace)
    os << r.iteration << "," << r.cls_loss << "," << r.reg_loss << "," << r.total
       << "\n";
}

BatchTargets build_batch_targets(const std::vector<const Assignment*>& assignments,
                                 int batch_anchors, double max_pos_fraction,
                                 uint64_t seed, int iteration) {
  BatchTargets bt;
  for (int b = 0; b < int(assignments.size()); ++b) {
    const Assignment& a = *assignments[b];
    const std::vector<int> sampled = sample_minibatch(
        a, batch_anchors, max_pos_fraction, hash3(seed, uint64_t(iteration), uint64_t(b)));
    for (int idx : sampled)
      bt.cls.push_back({b, idx, a.labels[idx].kind == LabelKind::Positive
                                    ? a.labels[idx].target
                                    : 0.0});
    for (int i = 0; i < a.num_anchors(); ++i)
      if (a.labels[i].kind == LabelKind::Positive)
        bt.reg.push_back({b, i, a.reg_targets[i]});
  }
  return bt;
}

std::vector<TraceRow> train(DetectorNet<float>& net, const std::vector<Scene>& dataset,
                            const TrainConfig& cfg) {
  cfg.validate();
  std::vector<TraceRow> trace;
  if (cfg.iterations == 0) return trace;
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (net.arch.head != cfg.head)
    throw std::invalid_argument("train: net head does not match config");
  if (net.arch.num_scales != cfg.anchors.num_scales())
    throw std::invalid_argument("train: net K does not match anchor scales");

  const std::vector<Box> anchors = generate_anchors(cfg.anchors);
  const int img_h = dataset[0].image.h, img_w = dataset[0].image.w;
  if (cfg.anchors.feature_h * net.arch.total_stride() != img_h ||
      cfg.anchors.feature_w * net.arch.total_stride() != img_w)
    throw std::invalid_argument("train: anchor grid does not match image/stride");

  // anchors and gts are fixed per image, so assignments are cached
  std::unordered_map<int, Assignment> assignment_cache;
  auto assignment_of = [&](int idx) -> const Assignment& {
    auto it = assignment_cache.find(idx);
    if (it == assignment_cache.end())
      it = assignment_cache
               .emplace(idx, assign(anchors, dataset[idx].gts, cfg.rule,
                                    cfg.force_best_match))
               .first;
    return it->second;
  };

  Rng batch_rng(mix64(cfg.seed ^ 0xba7c4ull));
  SgdState<float> sgd;
  SgdConfig sgd_cfg{cfg.learning_rate, cfg.momentum, cfg.weight_decay};
  trace.reserve(size_t(cfg.iterations));

  for (int it = 0; it < cfg.iterations; ++it) {
    for (int d : cfg.lr_decay_iters)
      if (d == it) sgd_cfg.lr *= cfg.lr_decay_factor;

    std::vector<int> picks(size_t(cfg.batch_images));
    for (int& p : picks) p = int(batch_rng.next_u64() % dataset.size());

    Tensor<float> images(cfg.batch_images, 1, img_h, img_w);
    std::vector<const Assignment*> assignments;
    assignments.reserve(picks.size());
    for (int b = 0; b < cfg.batch_images; ++b) {
      const Scene& s = dataset[picks[b]];
      if (s.image.h != img_h || s.image.w != img_w)
        throw std::invalid_argument("train: dataset images differ in size");
      std::copy(s.image.v.begin(), s.image.v.end(),
                images.v.begin() + size_t(b) * img_h * img_w);
      assignments.push_back(&assignment_of(picks[b]));
    }

    auto maps = net.forward(images);
    const BatchTargets bt = build_batch_targets(
        assignments, cfg.batch_anchors, cfg.max_pos_fraction, cfg.seed, it);
    MapLoss<float> ml = detection_map_loss(maps.cls, maps.reg, bt, cfg.head,
                                           net.arch.num_scales, cfg.loss);
    if (!std::isfinite(ml.total))
      throw DivergenceError("train: loss diverged at iteration " + std::to_string(it));

    net.zero_grad();
    net.backward(ml.d_cls, ml.d_reg);
    sgd_step(net, sgd, sgd_cfg);

    trace.push_back({it, ml.cls, ml.reg, ml.total});
  }
  return trace;
}

}  // namespace pbsdet
