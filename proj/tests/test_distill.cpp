#include "doctest.h"
#include "pbsdet/data.hpp"
#include "pbsdet/distill.hpp"

using namespace pbsdet;

namespace {

NetArch teacher_arch() {
  NetArch a;
  a.channels = {16, 32, 64, 64};
  a.strides = {2, 2, 2, 1};
  a.num_scales = 2;
  a.head = HeadType::PreciseSigmoid;
  return a;
}

SceneSpec tiny_spec() {
  SceneSpec s;
  s.width = 32;
  s.height = 32;
  s.min_scale = 8;
  s.max_scale = 16;
  s.distractors = 1;
  return s;
}

}  // namespace

TEST_CASE("shrink_model: quarter channels, identical heads, factor 1 is identity") {
  DetectorNet<float> teacher(teacher_arch(), 3);
  DetectorNet<float> student = shrink_model(teacher, 0.25, 7);
  CHECK(student.arch.channels == std::vector<int>{4, 8, 16, 16});
  CHECK(student.cls_head.spec.out_c == teacher.cls_head.spec.out_c);
  CHECK(student.reg_head.spec.out_c == teacher.reg_head.spec.out_c);

  DetectorNet<float> same = shrink_model(teacher, 1.0, 7);
  CHECK(same.arch.channels == teacher.arch.channels);

  CHECK_THROWS(shrink_model(teacher, 0.0, 7));
  CHECK_THROWS(shrink_model(teacher, 1.5, 7));
}

TEST_CASE("shrink_model: student and teacher output maps share shapes") {
  DetectorNet<float> teacher(teacher_arch(), 3);
  DetectorNet<float> student = shrink_model(teacher, 0.25, 7);
  Tensor<float> x(2, 1, 32, 32);
  Rng rng(5);
  for (auto& v : x.v) v = float(rng.next_unit());
  auto mt = teacher.forward(x, false);
  auto ms = student.forward(x, false);
  CHECK(ms.cls.same_shape(mt.cls));
  CHECK(ms.reg.same_shape(mt.reg));
}

TEST_CASE("distill_loss: zero when maps match and the orig term is disabled") {
  Tensor<float> cls(1, 2, 2, 2), reg(1, 8, 2, 2);
  Rng rng(11);
  for (auto& v : cls.v) v = float(rng.normal());
  for (auto& v : reg.v) v = float(rng.normal());
  DistillConfig dc;
  dc.w_orig = 0.0;
  const auto dl = distill_loss(cls, reg, cls, reg, BatchTargets{}, dc,
                               HeadType::PreciseSigmoid, 2, {});
  CHECK(dl.total == doctest::Approx(0.0));
  for (float g : dl.d_cls.v) CHECK(g == 0.0f);
  for (float g : dl.d_reg.v) CHECK(g == 0.0f);
}

TEST_CASE("distill_loss: zero distill weights reduce to the training loss") {
  Tensor<float> cls_s(1, 2, 2, 2), reg_s(1, 8, 2, 2);
  Tensor<float> cls_t(1, 2, 2, 2), reg_t(1, 8, 2, 2);
  Rng rng(13);
  for (auto& v : cls_s.v) v = float(rng.normal());
  for (auto& v : reg_s.v) v = float(rng.normal());
  for (auto& v : cls_t.v) v = float(rng.normal());
  for (auto& v : reg_t.v) v = float(rng.normal());

  BatchTargets bt;
  bt.cls.push_back({0, 0, 0.9});
  bt.cls.push_back({0, 3, 0.0});
  bt.reg.push_back({0, 1, {0.1, -0.2, 0.3, 0.05}});

  DistillConfig dc;
  dc.w_distill_cls = 0.0;
  dc.w_distill_reg = 0.0;
  LossConfig lc;

  const auto dl =
      distill_loss(cls_s, reg_s, cls_t, reg_t, bt, dc, HeadType::PreciseSigmoid, 2, lc);
  const auto ml = detection_map_loss(cls_s, reg_s, bt, HeadType::PreciseSigmoid, 2, lc);
  CHECK(dl.total == doctest::Approx(ml.total));
  for (size_t i = 0; i < dl.d_cls.v.size(); ++i)
    CHECK(dl.d_cls.v[i] == doctest::Approx(ml.d_cls.v[i]));
  for (size_t i = 0; i < dl.d_reg.v.size(); ++i)
    CHECK(dl.d_reg.v[i] == doctest::Approx(ml.d_reg.v[i]));
}

TEST_CASE("distill_loss: scaling every mix weight scales the loss") {
  Tensor<float> cls_s(1, 2, 2, 2), reg_s(1, 8, 2, 2);
  Tensor<float> cls_t(1, 2, 2, 2), reg_t(1, 8, 2, 2);
  Rng rng(17);
  for (auto& v : cls_s.v) v = float(rng.normal());
  for (auto& v : reg_s.v) v = float(rng.normal());
  for (auto& v : cls_t.v) v = float(rng.normal());
  for (auto& v : reg_t.v) v = float(rng.normal());
  BatchTargets bt;
  bt.cls.push_back({0, 2, 0.4});

  DistillConfig base, scaled;
  const double k = 2.75;
  scaled.w_distill_cls = base.w_distill_cls * k;
  scaled.w_distill_reg = base.w_distill_reg * k;
  scaled.w_orig = base.w_orig * k;

  const auto a =
      distill_loss(cls_s, reg_s, cls_t, reg_t, bt, base, HeadType::PreciseSigmoid, 2, {});
  const auto b = distill_loss(cls_s, reg_s, cls_t, reg_t, bt, scaled,
                              HeadType::PreciseSigmoid, 2, {});
  CHECK(b.total == doctest::Approx(k * a.total));
}

TEST_CASE("distill_loss: shape mismatch is a hard error") {
  Tensor<float> cls_s(1, 2, 2, 2), reg_s(1, 8, 2, 2);
  Tensor<float> cls_t(1, 4, 2, 2), reg_t(1, 8, 2, 2);
  CHECK_THROWS(distill_loss(cls_s, reg_s, cls_t, reg_t, BatchTargets{}, DistillConfig{},
                            HeadType::PreciseSigmoid, 2, {}));
}

TEST_CASE("distill_train: zero iterations, frozen teacher, determinism") {
  NetArch arch = teacher_arch();
  arch.channels = {8, 12, 16};
  arch.strides = {2, 2, 2};
  DetectorNet<float> teacher(arch, 19);
  const uint64_t teacher_sum = teacher.checksum();
  DetectorNet<float> student = shrink_model(teacher, 0.5, 23);
  const auto scenes = make_synthetic_scenes(500, 12, tiny_spec());

  TrainConfig tc;
  tc.head = HeadType::PreciseSigmoid;
  tc.rule = LabelRule::split_two(0.4, 0.3, 0.4, 0.8, 0.5, 0.9);
  tc.anchors = AnchorConfig{4, 4, 8.0, {1.0, 1.75}, false};
  tc.batch_images = 4;
  tc.seed = 29;

  DistillConfig dc;
  dc.iterations = 0;
  const uint64_t student_sum = student.checksum();
  CHECK(distill_train(teacher, student, scenes, tc, dc).empty());
  CHECK(student.checksum() == student_sum);

  dc.iterations = 25;
  DetectorNet<float> s1 = student, s2 = student;
  const auto t1 = distill_train(teacher, s1, scenes, tc, dc);
  const auto t2 = distill_train(teacher, s2, scenes, tc, dc);
  CHECK(teacher.checksum() == teacher_sum);
  CHECK(s1.checksum() == s2.checksum());
  REQUIRE(t1.size() == 25);
  for (size_t i = 0; i < t1.size(); ++i) CHECK(t1[i].total == t2[i].total);
  // training moved the student
  CHECK(s1.checksum() != student_sum);
}
