#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "pbsdet/train.hpp"

namespace pbsdet {

// Teacher-to-student compression: the student is the teacher with every
// backbone layer's channels scaled down, heads untouched so the output maps
// keep identical shapes, trained against the frozen teacher's maps plus the
// original labels.
struct DistillConfig {
  double width_factor = 0.25;
  double w_distill_cls = 1.0;
  double w_distill_reg = 1.0;
  double w_orig = 1.0;
  int iterations = 1000;
  // Match post-sigmoid scores instead of raw cls logits (off by default; the
  // logits carry more signal).
  bool match_post_sigmoid = false;

  void validate() const;
};

// Channel-shrunk copy of the teacher's architecture with a fresh seeded
// init: backbone channels scaled by factor (ceil, floor of 1), head output
// channels unchanged.
template <typename T>
DetectorNet<T> shrink_model(const DetectorNet<T>& teacher, double factor, uint64_t seed);

template <typename T>
struct DistillLoss {
  double total = 0;
  double distill_cls = 0, distill_reg = 0, orig = 0;
  double orig_cls = 0, orig_reg = 0;
  Tensor<T> d_cls, d_reg;  // gradients of `total` wrt the student maps
};

// w_cls * L2(cls_s, cls_t)/Mc + w_reg * SmoothL1(reg_s, reg_t)/Mr
// + w_orig * (lambda * cls + reg on the original labels), where L2 is the
// half-sum of squared differences and Mc/Mr are the map element counts.
template <typename T>
DistillLoss<T> distill_loss(const Tensor<T>& cls_s, const Tensor<T>& reg_s,
                            const Tensor<T>& cls_t, const Tensor<T>& reg_t,
                            const BatchTargets& bt, const DistillConfig& dc,
                            HeadType head, int num_scales, const LossConfig& lc) {
  dc.validate();
  if (!cls_s.same_shape(cls_t) || !reg_s.same_shape(reg_t))
    throw std::invalid_argument("distill_loss: teacher/student map shape mismatch");

  DistillLoss<T> out;
  out.d_cls = Tensor<T>(cls_s.n, cls_s.c, cls_s.h, cls_s.w);
  out.d_reg = Tensor<T>(reg_s.n, reg_s.c, reg_s.h, reg_s.w);

  const double mc = double(cls_s.size());
  for (size_t i = 0; i < cls_s.size(); ++i) {
    if (dc.match_post_sigmoid) {
      const double ss = sigmoid(double(cls_s.v[i]));
      const double st = sigmoid(double(cls_t.v[i]));
      const double d = ss - st;
      out.distill_cls += 0.5 * d * d;
      out.d_cls.v[i] += T(dc.w_distill_cls * d * ss * (1.0 - ss) / mc);
    } else {
      const double d = double(cls_s.v[i]) - double(cls_t.v[i]);
      out.distill_cls += 0.5 * d * d;
      out.d_cls.v[i] += T(dc.w_distill_cls * d / mc);
    }
  }
  out.distill_cls /= mc;

  const double mr = double(reg_s.size());
  const double delta = lc.smooth_l1_delta;
  for (size_t i = 0; i < reg_s.size(); ++i) {
    const double d = double(reg_s.v[i]) - double(reg_t.v[i]);
    if (std::abs(d) < delta) {
      out.distill_reg += 0.5 * d * d;
      out.d_reg.v[i] += T(dc.w_distill_reg * d / mr);
    } else {
      out.distill_reg += std::abs(d) - 0.5 * delta;
      out.d_reg.v[i] += T(dc.w_distill_reg * (d > 0 ? 1.0 : -1.0) / mr);
    }
  }
  out.distill_reg /= mr;

  MapLoss<T> orig = detection_map_loss(cls_s, reg_s, bt, head, num_scales, lc);
  out.orig_cls = orig.cls;
  out.orig_reg = orig.reg;
  out.orig = orig.total;
  for (size_t i = 0; i < out.d_cls.size(); ++i)
    out.d_cls.v[i] += T(dc.w_orig) * orig.d_cls.v[i];
  for (size_t i = 0; i < out.d_reg.size(); ++i)
    out.d_reg.v[i] += T(dc.w_orig) * orig.d_reg.v[i];

  out.total = dc.w_distill_cls * out.distill_cls + dc.w_distill_reg * out.distill_reg +
              dc.w_orig * out.orig;
  return out;
}

struct DistillTraceRow {
  int iteration = 0;
  double distill_cls = 0, distill_reg = 0, orig = 0, total = 0;
};

void write_distill_trace_csv(std::ostream& os, const std::vector<DistillTraceRow>& trace);

// Trains the student on distill_loss against the frozen teacher. The teacher
// is never touched; its parameter checksum is asserted before and after, and
// map shape equality is asserted on every forward. Training hyperparameters,
// the label rule, and anchors come from tc; dc.iterations overrides
// tc.iterations.
std::vector<DistillTraceRow> distill_train(const DetectorNet<float>& teacher,
                                           DetectorNet<float>& student,
                                           const std::vector<Scene>& dataset,
                                           const TrainConfig& tc,
                                           const DistillConfig& dc);

}  // namespace pbsdet
