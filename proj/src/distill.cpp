#include "pbsdet/distill.hpp"

#include <cmath>
#include <ostream>
#include <unordered_map>

namespace pbsdet {

void DistillConfig::validate() const {
  if (!(width_factor > 0.0 && width_factor < 1.0 + 1e-12))
    throw std::invalid_argument("DistillConfig: width_factor in (0,1]");
  if (w_distill_cls < 0 || w_distill_reg < 0 || w_orig < 0)
    throw std::invalid_argument("DistillConfig: mix weights must be >= 0");
  if (w_distill_cls == 0 && w_distill_reg == 0 && w_orig == 0)
    throw std::invalid_argument("DistillConfig: mix weights all zero");
  if (iterations < 0) throw std::invalid_argument("DistillConfig: iterations < 0");
}

template <typename T>
DetectorNet<T> shrink_model(const DetectorNet<T>& teacher, double factor, uint64_t seed) {
  if (!(factor > 0.0 && factor <= 1.0))
    throw std::invalid_argument("shrink_model: factor in (0,1]");
  NetArch arch = teacher.arch;
  arch.channels.clear();
  for (size_t i = 0; i < teacher.arch.channels.size(); ++i)
    arch.channels.push_back(
        std::max(1, int(std::ceil(teacher.arch.scaled_channels(i) * factor))));
  arch.width = 1.0;
  return DetectorNet<T>(arch, seed);
}

template DetectorNet<float> shrink_model<float>(const DetectorNet<float>&, double, uint64_t);
template DetectorNet<double> shrink_model<double>(const DetectorNet<double>&, double, uint64_t);

void write_distill_trace_csv(std::ostream& os, const std::vector<DistillTraceRow>& trace) {
  os << "iteration,distill_cls,distill_reg,orig,total\n";
  os.precision(9);
  for (const auto& r : trace)
    os << r.iteration << "," << r.distill_cls << "," << r.distill_reg << ","
       << r.orig << "," << r.total << "\n";
}

std::vector<DistillTraceRow> distill_train(const DetectorNet<float>& teacher,
                                           DetectorNet<float>& student,
                                           const std::vector<Scene>& dataset,
                                           const TrainConfig& tc,
                                           const DistillConfig& dc) {
  tc.validate();
  dc.validate();
  std::vector<DistillTraceRow> trace;
  if (dc.iterations == 0) return trace;
  if (dataset.empty()) throw std::invalid_argument("distill_train: empty dataset");
  if (teacher.arch.head != student.arch.head ||
      teacher.arch.num_scales != student.arch.num_scales)
    throw std::invalid_argument("distill_train: teacher/student heads disagree");
  if (student.arch.head != tc.head)
    throw std::invalid_argument("distill_train: student head does not match config");

  const uint64_t teacher_sum = teacher.checksum();

  const std::vector<Box> anchors = generate_anchors(tc.anchors);
  const int img_h = dataset[0].image.h, img_w = dataset[0].image.w;

  std::unordered_map<int, Assignment> assignment_cache;
  auto assignment_of = [&](int idx) -> const Assignment& {
    auto it = assignment_cache.find(idx);
    if (it == assignment_cache.end())
      it = assignment_cache
               .emplace(idx, assign(anchors, dataset[idx].gts, tc.rule,
                                    tc.force_best_match))
               .first;
    return it->second;
  };

  // teacher forward pass needs no activation caching
  DetectorNet<float> frozen = teacher;

  Rng batch_rng(mix64(tc.seed ^ 0xd157111ull));
  SgdState<float> sgd;
  SgdConfig sgd_cfg{tc.learning_rate, tc.momentum, tc.weight_decay};
  trace.reserve(size_t(dc.iterations));

  for (int it = 0; it < dc.iterations; ++it) {
    for (int d : tc.lr_decay_iters)
      if (d == it) sgd_cfg.lr *= tc.lr_decay_factor;

    std::vector<int> picks(size_t(tc.batch_images));
    for (int& p : picks) p = int(batch_rng.next_u64() % dataset.size());

    Tensor<float> images(tc.batch_images, 1, img_h, img_w);
    std::vector<const Assignment*> assignments;
    for (int b = 0; b < tc.batch_images; ++b) {
      const Scene& s = dataset[picks[b]];
      std::copy(s.image.v.begin(), s.image.v.end(),
                images.v.begin() + size_t(b) * img_h * img_w);
      assignments.push_back(&assignment_of(picks[b]));
    }

    auto teacher_maps = frozen.forward(images, /*cache=*/false);
    auto student_maps = student.forward(images);
    if (!student_maps.cls.same_shape(teacher_maps.cls) ||
        !student_maps.reg.same_shape(teacher_maps.reg))
      throw std::runtime_error("distill_train: output map shapes diverged");

    const BatchTargets bt = build_batch_targets(
        assignments, tc.batch_anchors, tc.max_pos_fraction, tc.seed, it);
    DistillLoss<float> dl =
        distill_loss(student_maps.cls, student_maps.reg, teacher_maps.cls,
                     teacher_maps.reg, bt, dc, tc.head, student.arch.num_scales,
                     tc.loss);
    if (!std::isfinite(dl.total))
      throw DivergenceError("distill_train: loss diverged at iteration " +
                            std::to_string(it));

    student.zero_grad();
    student.backward(dl.d_cls, dl.d_reg);
    sgd_step(student, sgd, sgd_cfg);

    trace.push_back({it, dl.distill_cls, dl.distill_reg, dl.orig, dl.total});
  }

  if (teacher.checksum() != teacher_sum)
    throw std::runtime_error("distill_train: frozen teacher was modified");
  return trace;
}

}  // namespace pbsdet
