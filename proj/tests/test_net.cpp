#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pbsdet/loss.hpp"
#include "pbsdet/net.hpp"
#include "pbsdet/rng.hpp"
#include "pbsdet/train.hpp"
#include "test_util.hpp"

using namespace pbsdet;
namespace fs = std::filesystem;

namespace {

NetArch small_arch(HeadType head = HeadType::Softmax) {
  NetArch a;
  a.in_channels = 1;
  a.channels = {4, 6};
  a.strides = {2, 2};
  a.num_scales = 2;
  a.head = head;
  return a;
}

Tensor<float> random_images(int n, int hw, uint64_t seed) {
  Tensor<float> x(n, 1, hw, hw);
  Rng rng(seed);
  for (auto& v : x.v) v = float(rng.next_unit());
  return x;
}

}  // namespace

TEST_CASE("forward shapes: 64x64 at stride 16 gives 4x4 maps") {
  NetArch arch;
  arch.channels = {16, 32, 64, 64};
  arch.strides = {2, 2, 2, 2};
  arch.num_scales = 4;
  arch.head = HeadType::PreciseSigmoid;
  DetectorNet<float> net(arch, 1);
  auto maps = net.forward(random_images(2, 64, 5));
  CHECK(maps.cls.n == 2);
  CHECK(maps.cls.c == 4);  // K for the sigmoid head
  CHECK(maps.cls.h == 4);
  CHECK(maps.cls.w == 4);
  CHECK(maps.reg.c == 16);

  arch.head = HeadType::Softmax;
  DetectorNet<float> net2(arch, 1);
  CHECK(net2.forward(random_images(1, 64, 5)).cls.c == 8);

  CHECK_THROWS(net.forward(random_images(1, 60, 5)));  // not divisible by stride
}

TEST_CASE("zero-weight net emits equal logits everywhere") {
  DetectorNet<float> net(small_arch(), 3);
  for (auto& p : net.params())
    std::fill(p.value->begin(), p.value->end(), 0.0f);
  auto maps = net.forward(random_images(1, 16, 9));
  for (float v : maps.cls.v) CHECK(v == 0.0f);
  for (float v : maps.reg.v) CHECK(v == 0.0f);
}

TEST_CASE("batch independence: doubling the batch duplicates outputs") {
  DetectorNet<float> net(small_arch(), 11);
  const Tensor<float> one = random_images(1, 16, 13);
  Tensor<float> two(2, 1, 16, 16);
  std::copy(one.v.begin(), one.v.end(), two.v.begin());
  std::copy(one.v.begin(), one.v.end(), two.v.begin() + one.v.size());

  auto m1 = net.forward(one);
  auto m2 = net.forward(two);
  for (size_t i = 0; i < m1.cls.v.size(); ++i) {
    CHECK(m2.cls.v[i] == m1.cls.v[i]);
    CHECK(m2.cls.v[i + m1.cls.v.size()] == m1.cls.v[i]);
  }
}

TEST_CASE("backward: zero upstream gives zero grads; before forward is an error") {
  DetectorNet<float> net(small_arch(), 17);
  CHECK_THROWS(net.backward(Tensor<float>(1, 4, 4, 4), Tensor<float>(1, 8, 4, 4)));

  auto maps = net.forward(random_images(1, 16, 21));
  Tensor<float> dc(maps.cls.n, maps.cls.c, maps.cls.h, maps.cls.w);
  Tensor<float> dr(maps.reg.n, maps.reg.c, maps.reg.h, maps.reg.w);
  net.zero_grad();
  net.backward(dc, dr);
  for (auto& p : net.params())
    for (float g : *p.grad) CHECK(g == 0.0f);
}

TEST_CASE("identical seeds build identical nets; forward is deterministic") {
  DetectorNet<float> a(small_arch(), 23), b(small_arch(), 23);
  CHECK(a.checksum() == b.checksum());
  const Tensor<float> x = random_images(2, 16, 29);
  CHECK(a.forward(x).cls.v == b.forward(x).cls.v);
  DetectorNet<float> c(small_arch(), 24);
  CHECK(a.checksum() != c.checksum());
}

TEST_CASE("sgd_step: lr=0 leaves parameters, hand-computed momentum steps") {
  DetectorNet<float> net(small_arch(), 31);
  const uint64_t before = net.checksum();
  SgdState<float> st;
  sgd_step(net, st, {0.0, 0.9, 0.0});
  CHECK(net.checksum() == before);

  // single parameter quadratic toy: p=1, grad fixed 0.5, lr=0.1, mu=0.9
  // v1 = -0.05, p1 = 0.95; v2 = 0.9*(-0.05) - 0.05 = -0.095, p2 = 0.855
  DetectorNet<float> toy(small_arch(), 31);
  auto params = toy.params();
  std::fill(params[0].value->begin(), params[0].value->end(), 1.0f);
  std::fill(params[0].grad->begin(), params[0].grad->end(), 0.5f);
  for (size_t i = 1; i < params.size(); ++i) {
    std::fill(params[i].value->begin(), params[i].value->end(), 0.0f);
    std::fill(params[i].grad->begin(), params[i].grad->end(), 0.0f);
  }
  SgdState<float> st2;
  sgd_step(toy, st2, {0.1, 0.9, 0.0});
  CHECK((*toy.params()[0].value)[0] == doctest::Approx(0.95));
  std::fill(toy.params()[0].grad->begin(), toy.params()[0].grad->end(), 0.5f);
  sgd_step(toy, st2, {0.1, 0.9, 0.0});
  CHECK((*toy.params()[0].value)[0] == doctest::Approx(0.855));

  // weight decay folds into the gradient: v = -lr*(g + wd*p)
  DetectorNet<float> wd(small_arch(), 31);
  auto wp = wd.params();
  std::fill(wp[0].value->begin(), wp[0].value->end(), 2.0f);
  std::fill(wp[0].grad->begin(), wp[0].grad->end(), 0.0f);
  for (size_t i = 1; i < wp.size(); ++i) {
    std::fill(wp[i].value->begin(), wp[i].value->end(), 0.0f);
    std::fill(wp[i].grad->begin(), wp[i].grad->end(), 0.0f);
  }
  SgdState<float> st3;
  sgd_step(wd, st3, {0.1, 0.0, 0.5});
  CHECK((*wd.params()[0].value)[0] == doctest::Approx(2.0 - 0.1 * (0.5 * 2.0)));
}

TEST_CASE("switch_head: backbone copied, logit identity, ranking preserved") {
  NetArch arch = small_arch(HeadType::Softmax);
  DetectorNet<float> soft(arch, 37);
  DetectorNet<float> sig = switch_head_softmax_to_sigmoid(soft);

  CHECK(sig.arch.head == HeadType::PreciseSigmoid);
  CHECK(sig.cls_head.spec.out_c == 2);
  for (size_t i = 0; i < soft.backbone.size(); ++i) {
    CHECK(sig.backbone[i].w == soft.backbone[i].w);
    CHECK(sig.backbone[i].b == soft.backbone[i].b);
  }
  CHECK(sig.reg_head.w == soft.reg_head.w);

  CHECK_THROWS_AS(switch_head_softmax_to_sigmoid(sig), std::invalid_argument);

  const Tensor<float> x = random_images(2, 16, 41);
  auto ms = soft.forward(x);
  auto mg = sig.forward(x);
  // initial sigmoid logit equals softmax pos-minus-neg logit
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < mg.cls.h; ++i)
        for (int j = 0; j < mg.cls.w; ++j) {
          const float diff =
              ms.cls.at(n, 2 * k + 1, i, j) - ms.cls.at(n, 2 * k, i, j);
          CHECK(mg.cls.at(n, k, i, j) ==
                doctest::Approx(diff).epsilon(1e-4));
        }

  // score ranking carries over: sigmoid(logit) vs softmax face probability
  std::vector<std::pair<double, int>> rank_soft, rank_sig;
  int idx = 0;
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < mg.cls.h; ++i)
      for (int j = 0; j < mg.cls.w; ++j, ++idx) {
        rank_soft.push_back(
            {sigmoid(ms.cls.at(0, 2 * k + 1, i, j) - ms.cls.at(0, 2 * k, i, j)),
             idx});
        rank_sig.push_back({sigmoid(mg.cls.at(0, k, i, j)), idx});
      }
  auto by_score = [](auto& v) {
    std::sort(v.begin(), v.end(), [](auto& a, auto& b) { return a.first > b.first; });
  };
  by_score(rank_soft);
  by_score(rank_sig);
  for (size_t i = 0; i < rank_soft.size(); ++i)
    CHECK(rank_soft[i].second == rank_sig[i].second);
}

TEST_CASE("weight file round trip is bit exact") {
  TempDir tmp;
  const std::string path = (tmp.path / "w.pbsw").string();
  DetectorNet<float> net(small_arch(HeadType::PreciseSigmoid), 43);
  const uint64_t sum = net.checksum();
  save_weights(net, path);

  DetectorNet<float> loaded = load_weights<float>(path);
  CHECK(loaded.checksum() == sum);
  CHECK(loaded.arch.head == HeadType::PreciseSigmoid);
  CHECK(loaded.arch.num_scales == 2);
  CHECK(loaded.arch.strides == std::vector<int>{2, 2});

  DetectorNet<float> into(small_arch(HeadType::PreciseSigmoid), 99);
  load_weights_into(into, path);
  CHECK(into.checksum() == sum);
}

TEST_CASE("weight file: truncation and shape mismatch are explicit errors") {
  TempDir tmp;
  const std::string path = (tmp.path / "w.pbsw").string();
  DetectorNet<float> net(small_arch(), 47);
  save_weights(net, path);

  // truncate
  const auto full = fs::file_size(path);
  fs::resize_file(path, full / 2);
  CHECK_THROWS_WITH_AS(load_weights<float>(path),
                       doctest::Contains("truncated"), std::runtime_error);

  // width mismatch names the offending layer
  save_weights(net, path);
  NetArch wider = small_arch();
  wider.channels = {8, 6};
  DetectorNet<float> other(wider, 47);
  CHECK_THROWS_WITH_AS(load_weights_into(other, path),
                       doctest::Contains("backbone0"), std::runtime_error);

  // bad magic
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  CHECK_THROWS_WITH_AS(load_weights<float>(path), doctest::Contains("magic"),
                       std::runtime_error);
}

TEST_CASE("width multiplier scales backbone only; heads keep their channels") {
  NetArch arch = small_arch(HeadType::PreciseSigmoid);
  arch.channels = {16, 32};
  arch.width = 0.25;
  DetectorNet<float> net(arch, 51);
  CHECK(net.backbone[0].spec.out_c == 4);
  CHECK(net.backbone[1].spec.out_c == 8);
  CHECK(net.cls_head.spec.out_c == 2);
  CHECK(net.reg_head.spec.out_c == 8);
  auto maps = net.forward(random_images(1, 16, 53));
  CHECK(maps.cls.c == 2);
  CHECK(maps.reg.c == 8);
}
