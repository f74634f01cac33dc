#include <sstream>

#include "doctest.h"
#include "pbsdet/data.hpp"
#include "pbsdet/train.hpp"

using namespace pbsdet;

namespace {

// tiny setup: 32x32 scenes, stride 8 -> 4x4 map, two anchor scales
SceneSpec tiny_spec() {
  SceneSpec s;
  s.width = 32;
  s.height = 32;
  s.min_targets = 1;
  s.max_targets = 2;
  s.min_scale = 8;
  s.max_scale = 16;
  s.distractors = 1;
  return s;
}

TrainConfig tiny_config(HeadType head) {
  TrainConfig tc;
  tc.head = head;
  tc.anchors = AnchorConfig{4, 4, 8.0, {1.0, 1.75}, false};
  tc.rule = head == HeadType::Softmax ? LabelRule::binary(0.7, 0.3)
                                      : LabelRule::split_two(0.4, 0.3, 0.4, 0.8, 0.5, 0.9);
  tc.iterations = 200;
  tc.batch_images = 4;
  tc.learning_rate = 0.02;
  tc.seed = 5;
  return tc;
}

NetArch tiny_arch(HeadType head) {
  NetArch a;
  a.channels = {8, 12, 16};
  a.strides = {2, 2, 2};
  a.num_scales = 2;
  a.head = head;
  return a;
}

}  // namespace

TEST_CASE("train: zero iterations leaves the net untouched") {
  DetectorNet<float> net(tiny_arch(HeadType::Softmax), 1);
  const uint64_t sum = net.checksum();
  TrainConfig tc = tiny_config(HeadType::Softmax);
  tc.iterations = 0;
  const auto trace = train(net, {}, tc);
  CHECK(trace.empty());
  CHECK(net.checksum() == sum);
}

TEST_CASE("train: smoke run lowers the classification loss") {
  const auto scenes = make_synthetic_scenes(100, 50, tiny_spec());
  DetectorNet<float> net(tiny_arch(HeadType::Softmax), 1);
  const auto trace = train(net, scenes, tiny_config(HeadType::Softmax));
  REQUIRE(trace.size() == 200);
  double first = 0, last = 0;
  for (int i = 0; i < 20; ++i) {
    first += trace[size_t(i)].cls_loss;
    last += trace[trace.size() - 1 - size_t(i)].cls_loss;
  }
  CHECK(last < first);
  for (const auto& r : trace) CHECK(std::isfinite(r.total));
}

TEST_CASE("train: identical seed and config give identical traces and weights") {
  const auto scenes = make_synthetic_scenes(200, 20, tiny_spec());
  TrainConfig tc = tiny_config(HeadType::Softmax);
  tc.iterations = 40;

  DetectorNet<float> a(tiny_arch(HeadType::Softmax), 9);
  DetectorNet<float> b(tiny_arch(HeadType::Softmax), 9);
  const auto ta = train(a, scenes, tc);
  const auto tb = train(b, scenes, tc);
  CHECK(a.checksum() == b.checksum());
  REQUIRE(ta.size() == tb.size());
  for (size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].cls_loss == tb[i].cls_loss);
    CHECK(ta[i].reg_loss == tb[i].reg_loss);
  }
}

TEST_CASE("train: mismatched net and config are rejected") {
  const auto scenes = make_synthetic_scenes(300, 4, tiny_spec());
  TrainConfig tc = tiny_config(HeadType::Softmax);

  DetectorNet<float> wrong_head(tiny_arch(HeadType::PreciseSigmoid), 1);
  CHECK_THROWS(train(wrong_head, scenes, tc));

  NetArch bad_k = tiny_arch(HeadType::Softmax);
  bad_k.num_scales = 3;
  DetectorNet<float> wrong_k(bad_k, 1);
  CHECK_THROWS(train(wrong_k, scenes, tc));

  NetArch bad_stride = tiny_arch(HeadType::Softmax);
  bad_stride.strides = {2, 2, 1};
  DetectorNet<float> wrong_stride(bad_stride, 1);
  CHECK_THROWS(train(wrong_stride, scenes, tc));
}

TEST_CASE("train: divergence raises DivergenceError") {
  const auto scenes = make_synthetic_scenes(400, 8, tiny_spec());
  TrainConfig tc = tiny_config(HeadType::Softmax);
  tc.learning_rate = 1e9;
  tc.iterations = 50;
  DetectorNet<float> net(tiny_arch(HeadType::Softmax), 1);
  CHECK_THROWS_AS(train(net, scenes, tc), DivergenceError);
}

TEST_CASE("softmax head rejects fractional targets") {
  Tensor<float> cls(1, 4, 2, 2), reg(1, 8, 2, 2);
  BatchTargets bt;
  bt.cls.push_back({0, 0, 0.7});
  CHECK_THROWS_AS(detection_map_loss(cls, reg, bt, HeadType::Softmax, 2, {}),
                  std::invalid_argument);
}

TEST_CASE("detection_map_loss: lambda weighting and reg normalization") {
  Tensor<float> cls(1, 2, 2, 2), reg(1, 8, 2, 2);
  cls.v.assign(cls.size(), 0.0f);
  BatchTargets bt;
  bt.cls.push_back({0, 0, 1.0});  // sigma(0)=0.5 -> psl = 0.125
  LossConfig lc;
  lc.lambda = 300.0;
  const auto ml = detection_map_loss(cls, reg, bt, HeadType::PreciseSigmoid, 2, lc);
  CHECK(ml.cls == doctest::Approx(0.125));
  CHECK(ml.reg == doctest::Approx(0.0));
  CHECK(ml.total == doctest::Approx(300.0 * 0.125));

  // one positive anchor with residual 0.5 in one coordinate: 0.125 / 1
  BatchTargets bt2;
  bt2.reg.push_back({0, 0, {0.5, 0, 0, 0}});
  const auto ml2 = detection_map_loss(cls, reg, bt2, HeadType::PreciseSigmoid, 2, lc);
  CHECK(ml2.reg == doctest::Approx(0.125 + 0.0));
}

TEST_CASE("trace CSV format") {
  std::ostringstream os;
  write_trace_csv(os, {{0, 1.0, 2.0, 3.0}, {1, 0.5, 0.25, 0.75}});
  CHECK(os.str() ==
        "iteration,cls_loss,reg_loss,total\n0,1,2,3\n1,0.5,0.25,0.75\n");
}
