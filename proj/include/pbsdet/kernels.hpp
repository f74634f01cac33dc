#pragma once

#include <algorithm>
#include <vector>

#include "pbsdet/geometry.hpp"
#include "pbsdet/tensor.hpp"

// Compute kernels behind the network layers and the IoU table, in two
// flavors: kernels::serial is the reference, kernels::par runs the same code
// with OpenMP enabled over independent output slices. Convolutions go
// through an im2col buffer so the hot loops are contiguous axpy/transpose
// passes. Accumulation order is fixed and identical in both flavors
// (forward: ic,ky,kx per output element; weight grad: images then output
// positions per weight; input grad: kernel taps per element, each tap
// pre-reduced over output channels), and every output element is written by
// exactly one thread, so the two flavors are bit-identical at any thread
// count. Tests assert the equality; tools/bench_kernels.cpp compares speed.

namespace pbsdet::kernels {

struct ConvSpec {
  int in_c = 0, out_c = 0;
  int ksize = 3, stride = 1, pad = 1;

  int out_h(int h) const { return (h + 2 * pad - ksize) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - ksize) / stride + 1; }
  int patch() const { return in_c * ksize * ksize; }
  size_t weight_count() const { return size_t(out_c) * patch(); }
  size_t widx(int oc, int ic, int ky, int kx) const {
    return ((size_t(oc) * in_c + ic) * ksize + ky) * ksize + kx;
  }
};

namespace detail {

// ox range such that ix = ox*stride + kx - pad stays inside [0, in_w)
inline void ox_bounds(const ConvSpec& s, int out_w, int in_w, int kx, int& lo, int& hi) {
  const int shift = kx - s.pad;
  lo = shift < 0 ? (-shift + s.stride - 1) / s.stride : 0;
  hi = std::min(out_w, (in_w - 1 - shift) / s.stride + 1);
}

// col is [patch][positions], patch index k = (ic*ksize + ky)*ksize + kx,
// position p = oy*out_w + ox; out-of-image taps stay zero.
template <typename T>
void im2col(const Tensor<T>& x, int n, const ConvSpec& s, int oh, int ow,
            std::vector<T>& col) {
  const size_t positions = size_t(oh) * ow;
  col.assign(size_t(s.patch()) * positions, T(0));
  for (int ic = 0; ic < s.in_c; ++ic) {
    const T* xbase = &x.v[x.idx(n, ic, 0, 0)];
    for (int ky = 0; ky < s.ksize; ++ky)
      for (int kx = 0; kx < s.ksize; ++kx) {
        const int k = (ic * s.ksize + ky) * s.ksize + kx;
        int ox_lo, ox_hi;
        ox_bounds(s, ow, x.w, kx, ox_lo, ox_hi);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride + ky - s.pad;
          if (iy < 0 || iy >= x.h) continue;
          const T* xrow = xbase + size_t(iy) * x.w + (kx - s.pad);
          T* dst = &col[size_t(k) * positions + size_t(oy) * ow];
          for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = xrow[size_t(ox) * s.stride];
        }
      }
  }
}

template <typename T>
void conv2d_forward(const Tensor<T>& x, const std::vector<T>& w,
                    const std::vector<T>& b, const ConvSpec& s, Tensor<T>& y,
                    bool threaded) {
  const int positions = y.h * y.w;
  const int patch = s.patch();
  std::vector<T> col;
  for (int n = 0; n < x.n; ++n) {
    im2col(x, n, s, y.h, y.w, col);
#pragma omp parallel for schedule(static) if (threaded)
    for (int oc = 0; oc < s.out_c; ++oc) {
      T* yrow = &y.v[y.idx(n, oc, 0, 0)];
      std::fill(yrow, yrow + positions, b[oc]);
      const T* wrow = &w[size_t(oc) * patch];
      for (int k = 0; k < patch; ++k) {
        const T wv = wrow[k];
        const T* crow = &col[size_t(k) * positions];
        for (int p = 0; p < positions; ++p) yrow[p] += wv * crow[p];
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const Tensor<T>& gy, const std::vector<T>& w,
                           const ConvSpec& s, Tensor<T>& gx, bool threaded) {
  const int positions = gy.h * gy.w;
  const int patch = s.patch();
  std::vector<T> gcol(size_t(patch) * positions);
  for (int n = 0; n < gx.n; ++n) {
    // gcol = W^T * gy, reduced over output channels in ascending order
#pragma omp parallel for schedule(static) if (threaded)
    for (int k = 0; k < patch; ++k) {
      T* crow = &gcol[size_t(k) * positions];
      std::fill(crow, crow + positions, T(0));
      for (int oc = 0; oc < s.out_c; ++oc) {
        const T wv = w[size_t(oc) * patch + k];
        const T* gyrow = &gy.v[gy.idx(n, oc, 0, 0)];
        for (int p = 0; p < positions; ++p) crow[p] += wv * gyrow[p];
      }
    }
    // col2im scatter; each input channel's slice is owned by one iteration
#pragma omp parallel for schedule(static) if (threaded)
    for (int ic = 0; ic < s.in_c; ++ic) {
      T* gxbase = &gx.v[gx.idx(n, ic, 0, 0)];
      std::fill(gxbase, gxbase + size_t(gx.h) * gx.w, T(0));
      for (int ky = 0; ky < s.ksize; ++ky)
        for (int kx = 0; kx < s.ksize; ++kx) {
          const int k = (ic * s.ksize + ky) * s.ksize + kx;
          int ox_lo, ox_hi;
          ox_bounds(s, gy.w, gx.w, kx, ox_lo, ox_hi);
          for (int oy = 0; oy < gy.h; ++oy) {
            const int iy = oy * s.stride + ky - s.pad;
            if (iy < 0 || iy >= gx.h) continue;
            const T* crow = &gcol[size_t(k) * positions + size_t(oy) * gy.w];
            T* gxrow = gxbase + size_t(iy) * gx.w + (kx - s.pad);
            for (int ox = ox_lo; ox < ox_hi; ++ox)
              gxrow[size_t(ox) * s.stride] += crow[ox];
          }
        }
    }
  }
}

// Accumulates into gw/gb.
template <typename T>
void conv2d_backward_params(const Tensor<T>& x, const Tensor<T>& gy,
                            const ConvSpec& s, std::vector<T>& gw,
                            std::vector<T>& gb, bool threaded) {
  const int positions = gy.h * gy.w;
  const int patch = s.patch();
  std::vector<T> col, colt(size_t(positions) * patch);
  for (int n = 0; n < x.n; ++n) {
    im2col(x, n, s, gy.h, gy.w, col);
    for (int k = 0; k < patch; ++k)
      for (int p = 0; p < positions; ++p)
        colt[size_t(p) * patch + k] = col[size_t(k) * positions + p];
#pragma omp parallel for schedule(static) if (threaded)
    for (int oc = 0; oc < s.out_c; ++oc) {
      T* gwrow = &gw[size_t(oc) * patch];
      const T* gyrow = &gy.v[gy.idx(n, oc, 0, 0)];
      T bias_acc = T(0);
      for (int p = 0; p < positions; ++p) {
        const T gv = gyrow[p];
        bias_acc += gv;
        const T* crow = &colt[size_t(p) * patch];
        for (int k = 0; k < patch; ++k) gwrow[k] += gv * crow[k];
      }
      gb[oc] += bias_acc;
    }
  }
}

}  // namespace detail

namespace serial {

template <typename T>
void conv2d_forward(const Tensor<T>& x, const std::vector<T>& w,
                    const std::vector<T>& b, const ConvSpec& s, Tensor<T>& y) {
  detail::conv2d_forward(x, w, b, s, y, false);
}

template <typename T>
void conv2d_backward_input(const Tensor<T>& gy, const std::vector<T>& w,
                           const ConvSpec& s, Tensor<T>& gx) {
  detail::conv2d_backward_input(gy, w, s, gx, false);
}

template <typename T>
void conv2d_backward_params(const Tensor<T>& x, const Tensor<T>& gy,
                            const ConvSpec& s, std::vector<T>& gw,
                            std::vector<T>& gb) {
  detail::conv2d_backward_params(x, gy, s, gw, gb, false);
}

IouMatrix iou_matrix(const std::vector<Box>& anchors, const std::vector<Box>& gts);

}  // namespace serial

namespace par {

template <typename T>
void conv2d_forward(const Tensor<T>& x, const std::vector<T>& w,
                    const std::vector<T>& b, const ConvSpec& s, Tensor<T>& y) {
  detail::conv2d_forward(x, w, b, s, y, true);
}

template <typename T>
void conv2d_backward_input(const Tensor<T>& gy, const std::vector<T>& w,
                           const ConvSpec& s, Tensor<T>& gx) {
  detail::conv2d_backward_input(gy, w, s, gx, true);
}

template <typename T>
void conv2d_backward_params(const Tensor<T>& x, const Tensor<T>& gy,
                            const ConvSpec& s, std::vector<T>& gw,
                            std::vector<T>& gb) {
  detail::conv2d_backward_params(x, gy, s, gw, gb, true);
}

IouMatrix iou_matrix(const std::vector<Box>& anchors, const std::vector<Box>& gts);

}  // namespace par

}  // namespace pbsdet::kernels
