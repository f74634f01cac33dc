// Times the serial reference kernels against the OpenMP ones on the shapes
// the training loop actually runs, and verifies both produce identical bits.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pbsdet/kernels.hpp"
#include "pbsdet/rng.hpp"

using namespace pbsdet;

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename F>
double time_ms(int reps, F&& f) {
  f();  // warm up
  const double t0 = now_ms();
  for (int i = 0; i < reps; ++i) f();
  return (now_ms() - t0) / reps;
}

void fill(std::vector<float>& v, Rng& rng) {
  for (float& x : v) x = float(rng.normal());
}

void bench_conv(int n, int in_c, int out_c, int hw, int stride, int reps) {
  kernels::ConvSpec spec{in_c, out_c, 3, stride, 1};
  Tensor<float> x(n, in_c, hw, hw);
  std::vector<float> w(spec.weight_count());
  std::vector<float> b(static_cast<size_t>(out_c));
  Rng rng(42);
  fill(x.v, rng);
  fill(w, rng);
  fill(b, rng);

  Tensor<float> y_serial(n, out_c, spec.out_h(hw), spec.out_w(hw));
  Tensor<float> y_par = y_serial;
  const double t_serial = time_ms(reps, [&] {
    kernels::serial::conv2d_forward(x, w, b, spec, y_serial);
  });
  const double t_par = time_ms(reps, [&] {
    kernels::par::conv2d_forward(x, w, b, spec, y_par);
  });
  const bool equal = y_serial.v == y_par.v;

  Tensor<float> gy = y_serial;
  Tensor<float> gx_serial = x, gx_par = x;
  const double tb_serial = time_ms(reps, [&] {
    kernels::serial::conv2d_backward_input(gy, w, spec, gx_serial);
  });
  const double tb_par = time_ms(reps, [&] {
    kernels::par::conv2d_backward_input(gy, w, spec, gx_par);
  });

  std::vector<float> gw_s(w.size()), gb_s(b.size()), gw_p(w.size()), gb_p(b.size());
  const double tw_serial = time_ms(reps, [&] {
    std::fill(gw_s.begin(), gw_s.end(), 0.f);
    std::fill(gb_s.begin(), gb_s.end(), 0.f);
    kernels::serial::conv2d_backward_params(x, gy, spec, gw_s, gb_s);
  });
  const double tw_par = time_ms(reps, [&] {
    std::fill(gw_p.begin(), gw_p.end(), 0.f);
    std::fill(gb_p.begin(), gb_p.end(), 0.f);
    kernels::par::conv2d_backward_params(x, gy, spec, gw_p, gb_p);
  });
  const bool equal_bwd = gx_serial.v == gx_par.v && gw_s == gw_p && gb_s == gb_p;

  std::printf("conv3x3 n=%d %3dx%-3d %2dx%-2d s%d | fwd %8.3f -> %8.3f ms (%4.2fx) | "
              "bwd_in %8.3f -> %8.3f | bwd_w %8.3f -> %8.3f | bits %s\n",
              n, in_c, out_c, hw, hw, stride, t_serial, t_par, t_serial / t_par,
              tb_serial, tb_par, tw_serial, tw_par,
              equal && equal_bwd ? "identical" : "DIFFER");
}

void bench_iou(int m, int n, int reps) {
  Rng rng(7);
  auto boxes = [&rng](int count) {
    std::vector<Box> out;
    for (int i = 0; i < count; ++i) {
      const double x = rng.uniform(0, 500), y = rng.uniform(0, 500);
      out.push_back({x, y, x + rng.uniform(1, 60), y + rng.uniform(1, 60)});
    }
    return out;
  };
  const std::vector<Box> a = boxes(m), g = boxes(n);
  IouMatrix r_serial, r_par;
  const double t_serial =
      time_ms(reps, [&] { r_serial = kernels::serial::iou_matrix(a, g); });
  const double t_par = time_ms(reps, [&] { r_par = kernels::par::iou_matrix(a, g); });
  std::printf("iou_matrix %5dx%-4d           | %8.3f -> %8.3f ms (%4.2fx) | bits %s\n",
              m, n, t_serial, t_par, t_serial / t_par,
              r_serial.v == r_par.v ? "identical" : "DIFFER");
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("openmp: %d threads\n", omp_get_max_threads());
#else
  std::printf("openmp: disabled (serial build)\n");
#endif
  bench_conv(8, 1, 16, 64, 2, 20);
  bench_conv(8, 16, 32, 32, 2, 20);
  bench_conv(8, 32, 64, 16, 2, 20);
  bench_conv(8, 64, 64, 8, 1, 20);
  bench_iou(4096, 16, 50);
  bench_iou(256, 256, 50);
  return 0;
}
