#include "doctest.h"
#include "pbsdet/kernels.hpp"
#include "pbsdet/rng.hpp"

using namespace pbsdet;
using kernels::ConvSpec;

namespace {

template <typename T>
void randomize(std::vector<T>& v, Rng& rng) {
  for (T& x : v) x = T(rng.normal());
}

}  // namespace

TEST_CASE("conv2d_forward matches a hand-computed 1x1-input case") {
  // single pixel input, 3x3 kernel pad 1: only the center tap contributes
  ConvSpec s{1, 1, 3, 1, 1};
  Tensor<float> x(1, 1, 1, 1);
  x.v[0] = 2.0f;
  std::vector<float> w(9, 0.0f), b{0.5f};
  w[4] = 3.0f;  // center
  Tensor<float> y(1, 1, 1, 1);
  kernels::serial::conv2d_forward(x, w, b, s, y);
  CHECK(y.v[0] == doctest::Approx(6.5));
}

TEST_CASE("conv2d_forward: 2x2 stride-1 known values") {
  ConvSpec s{1, 1, 3, 1, 1};
  Tensor<double> x(1, 1, 2, 2);
  x.v = {1, 2, 3, 4};
  std::vector<double> w(9, 1.0), b{0.0};
  Tensor<double> y(1, 1, 2, 2);
  kernels::serial::conv2d_forward(x, w, b, s, y);
  // all-ones kernel sums the in-bounds neighborhood
  CHECK(y.v[0] == doctest::Approx(10.0));
  CHECK(y.v[1] == doctest::Approx(10.0));
  CHECK(y.v[2] == doctest::Approx(10.0));
  CHECK(y.v[3] == doctest::Approx(10.0));
}

TEST_CASE("serial and parallel kernels are bit-identical on random shapes") {
  Rng rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    ConvSpec s;
    s.in_c = rng.uniform_int(1, 8);
    s.out_c = rng.uniform_int(1, 8);
    s.ksize = rng.uniform_int(0, 1) ? 3 : 1;
    s.stride = rng.uniform_int(1, 2);
    s.pad = s.ksize / 2;
    const int n = rng.uniform_int(1, 3);
    const int h = rng.uniform_int(s.ksize, 12), w = rng.uniform_int(s.ksize, 12);

    Tensor<float> x(n, s.in_c, h, w);
    std::vector<float> weights(s.weight_count());
    std::vector<float> bias(size_t(s.out_c));
    randomize(x.v, rng);
    randomize(weights, rng);
    randomize(bias, rng);

    Tensor<float> y_s(n, s.out_c, s.out_h(h), s.out_w(w));
    Tensor<float> y_p = y_s;
    kernels::serial::conv2d_forward(x, weights, bias, s, y_s);
    kernels::par::conv2d_forward(x, weights, bias, s, y_p);
    CHECK(y_s.v == y_p.v);

    Tensor<float> gy = y_s;
    randomize(gy.v, rng);
    Tensor<float> gx_s(n, s.in_c, h, w), gx_p(n, s.in_c, h, w);
    kernels::serial::conv2d_backward_input(gy, weights, s, gx_s);
    kernels::par::conv2d_backward_input(gy, weights, s, gx_p);
    CHECK(gx_s.v == gx_p.v);

    std::vector<float> gw_s(weights.size(), 0.f), gb_s(bias.size(), 0.f);
    std::vector<float> gw_p(weights.size(), 0.f), gb_p(bias.size(), 0.f);
    kernels::serial::conv2d_backward_params(x, gy, s, gw_s, gb_s);
    kernels::par::conv2d_backward_params(x, gy, s, gw_p, gb_p);
    CHECK(gw_s == gw_p);
    CHECK(gb_s == gb_p);
  }
}

TEST_CASE("iou_matrix: serial and parallel agree exactly") {
  Rng rng(7);
  std::vector<Box> anchors, gts;
  for (int i = 0; i < 300; ++i) {
    const double x = rng.uniform(0, 200), y = rng.uniform(0, 200);
    anchors.push_back({x, y, x + rng.uniform(1, 40), y + rng.uniform(1, 40)});
  }
  for (int i = 0; i < 17; ++i) {
    const double x = rng.uniform(0, 200), y = rng.uniform(0, 200);
    gts.push_back({x, y, x + rng.uniform(1, 40), y + rng.uniform(1, 40)});
  }
  const IouMatrix a = kernels::serial::iou_matrix(anchors, gts);
  const IouMatrix b = kernels::par::iou_matrix(anchors, gts);
  CHECK(a.v == b.v);
  CHECK(a.rows == 300);
  CHECK(a.cols == 17);
}

TEST_CASE("conv output dims") {
  ConvSpec s{4, 8, 3, 2, 1};
  CHECK(s.out_h(64) == 32);
  CHECK(s.out_w(17) == 9);
  ConvSpec one{4, 8, 1, 1, 0};
  CHECK(one.out_h(5) == 5);
}
