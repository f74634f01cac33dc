#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pbsdet/kernels.hpp"
#include "pbsdet/rng.hpp"
#include "pbsdet/tensor.hpp"

namespace pbsdet {

// Classification head variants. The softmax head emits 2 channels per anchor
// scale (2k = not-face logit, 2k+1 = face logit); the precise-sigmoid head
// emits one logit per scale, trained with sigmoid + euclidean loss and read
// out as a score directly.
enum class HeadType { Softmax, PreciseSigmoid };

inline const char* head_name(HeadType h) {
  return h == HeadType::Softmax ? "softmax" : "precise_sigmoid";
}

struct NetArch {
  int in_channels = 1;
  std::vector<int> channels{16, 32, 64, 64};  // backbone, at width 1.0
  std::vector<int> strides{2, 2, 2, 2};
  int num_scales = 4;  // K; head channel counts are K/2K (cls) and 4K (reg)
  HeadType head = HeadType::Softmax;
  double width = 1.0;  // backbone multiplier; heads are not scaled

  int scaled_channels(size_t i) const {
    return std::max(1, int(std::ceil(channels[i] * width)));
  }
  int total_stride() const {
    int s = 1;
    for (int st : strides) s *= st;
    return s;
  }
  int cls_channels() const {
    return head == HeadType::Softmax ? 2 * num_scales : num_scales;
  }
  int reg_channels() const { return 4 * num_scales; }
  void validate() const {
    if (channels.empty() || channels.size() != strides.size())
      throw std::invalid_argument("NetArch: channels/strides mismatch");
    if (in_channels < 1 || num_scales < 1)
      throw std::invalid_argument("NetArch: bad channel counts");
    if (!(width > 0.0 && width <= 1.0))
      throw std::invalid_argument("NetArch: width must be in (0,1]");
  }
};

template <typename T>
struct Conv2d {
  std::string name;
  kernels::ConvSpec spec;
  std::vector<T> w, b;
  std::vector<T> gw, gb;
  Tensor<T> cached_x;
  bool has_cache = false;

  void init(int in_c, int out_c, int ksize, int stride, std::string name_) {
    name = std::move(name_);
    spec = {in_c, out_c, ksize, stride, ksize / 2};
    w.assign(spec.weight_count(), T(0));
    b.assign(size_t(out_c), T(0));
    gw.assign(w.size(), T(0));
    gb.assign(b.size(), T(0));
  }

  void init_he(Rng& rng) {
    const double std_dev = std::sqrt(2.0 / (double(spec.in_c) * spec.ksize * spec.ksize));
    for (T& x : w) x = T(rng.normal() * std_dev);
    for (T& x : b) x = T(0);
  }

  // by value so callers can move the activation in; the cache takes it over
  Tensor<T> forward(Tensor<T> x, bool cache) {
    if (x.c != spec.in_c)
      throw std::runtime_error("Conv2d " + name + ": input channel mismatch");
    Tensor<T> y(x.n, spec.out_c, spec.out_h(x.h), spec.out_w(x.w));
    kernels::par::conv2d_forward(x, w, b, spec, y);
    if (cache) {
      cached_x = std::move(x);
      has_cache = true;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    backward_params_only(gy);
    Tensor<T> gx(cached_x.n, cached_x.c, cached_x.h, cached_x.w);
    kernels::par::conv2d_backward_input(gy, w, spec, gx);
    return gx;
  }

  void backward_params_only(const Tensor<T>& gy) {
    if (!has_cache)
      throw std::runtime_error("Conv2d " + name + ": backward before forward");
    kernels::par::conv2d_backward_params(cached_x, gy, spec, gw, gb);
  }

  void zero_grad() {
    std::fill(gw.begin(), gw.end(), T(0));
    std::fill(gb.begin(), gb.end(), T(0));
  }
};

template <typename T>
struct Relu {
  std::vector<char> mask;  // preactivation > 0
  bool has_cache = false;

  Tensor<T> forward(Tensor<T> x, bool cache) {
    if (cache) {
      mask.resize(x.v.size());
      for (size_t i = 0; i < x.v.size(); ++i) mask[i] = x.v[i] > T(0);
      has_cache = true;
    }
    for (T& v : x.v) v = v > T(0) ? v : T(0);
    return x;
  }

  Tensor<T> backward(Tensor<T> gy) {
    if (!has_cache) throw std::runtime_error("Relu: backward before forward");
    if (gy.v.size() != mask.size())
      throw std::runtime_error("Relu: gradient shape mismatch");
    for (size_t i = 0; i < gy.v.size(); ++i)
      if (!mask[i]) gy.v[i] = T(0);
    return gy;
  }
};

// Fully convolutional detector: conv3x3+relu backbone, 1x1 cls and reg heads
// reading the same final feature map. Output spatial dims are always
// input / total_stride.
template <typename T>
struct DetectorNet {
  NetArch arch;
  std::vector<Conv2d<T>> backbone;
  std::vector<Relu<T>> acts;
  Conv2d<T> cls_head, reg_head;

  struct Maps {
    Tensor<T> cls, reg;
  };

  DetectorNet() = default;

  DetectorNet(const NetArch& a, uint64_t seed) : arch(a) {
    arch.validate();
    Rng rng(mix64(seed ^ 0xde7ec702ull));
    int in_c = arch.in_channels;
    for (size_t i = 0; i < arch.channels.size(); ++i) {
      Conv2d<T> conv;
      const int out_c = arch.scaled_channels(i);
      conv.init(in_c, out_c, 3, arch.strides[i],
                "backbone" + std::to_string(i) + "_s" + std::to_string(arch.strides[i]));
      conv.init_he(rng);
      backbone.push_back(std::move(conv));
      in_c = out_c;
    }
    acts.resize(backbone.size());
    cls_head.init(in_c, arch.cls_channels(), 1, 1, "cls");
    cls_head.init_he(rng);
    reg_head.init(in_c, arch.reg_channels(), 1, 1, "reg");
    reg_head.init_he(rng);
  }

  Maps forward(const Tensor<T>& images, bool cache = true) {
    const int ts = arch.total_stride();
    if (images.h % ts != 0 || images.w % ts != 0)
      throw std::runtime_error("DetectorNet: image dims not divisible by total stride");
    Tensor<T> x = images;
    for (size_t i = 0; i < backbone.size(); ++i) {
      x = backbone[i].forward(std::move(x), cache);
      x = acts[i].forward(std::move(x), cache);
    }
    Maps maps;
    maps.cls = cls_head.forward(x, cache);
    maps.reg = reg_head.forward(std::move(x), cache);
    if (maps.cls.h != images.h / ts || maps.cls.w != images.w / ts)
      throw std::runtime_error("DetectorNet: output dims disagree with total stride");
    return maps;
  }

  void backward(const Tensor<T>& d_cls, const Tensor<T>& d_reg) {
    Tensor<T> g_feat = cls_head.backward(d_cls);
    const Tensor<T> g_feat_reg = reg_head.backward(d_reg);
    for (size_t i = 0; i < g_feat.v.size(); ++i) g_feat.v[i] += g_feat_reg.v[i];
    for (size_t i = backbone.size(); i-- > 0;) {
      g_feat = acts[i].backward(std::move(g_feat));
      if (i == 0) {
        // the image gradient is never used
        backbone[0].backward_params_only(g_feat);
        break;
      }
      g_feat = backbone[i].backward(g_feat);
    }
  }

  void zero_grad() {
    for (auto& l : backbone) l.zero_grad();
    cls_head.zero_grad();
    reg_head.zero_grad();
  }

  struct ParamRef {
    std::string name;
    std::vector<T>* value;
    std::vector<T>* grad;
    std::vector<uint32_t> dims;
  };

  std::vector<ParamRef> params() {
    std::vector<ParamRef> out;
    auto add = [&out](Conv2d<T>& l) {
      out.push_back({l.name + ".weight", &l.w, &l.gw,
                     {uint32_t(l.spec.out_c), uint32_t(l.spec.in_c),
                      uint32_t(l.spec.ksize), uint32_t(l.spec.ksize)}});
      out.push_back({l.name + ".bias", &l.b, &l.gb, {uint32_t(l.spec.out_c)}});
    };
    for (auto& l : backbone) add(l);
    add(cls_head);
    add(reg_head);
    return out;
  }

  size_t param_count() const {
    size_t c = 0;
    for (const auto& l : backbone) c += l.w.size() + l.b.size();
    return c + cls_head.w.size() + cls_head.b.size() + reg_head.w.size() +
           reg_head.b.size();
  }

  // FNV-1a over all parameter bytes, in params() order.
  uint64_t checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto eat = [&h](const std::vector<T>& v) {
      const unsigned char* p = reinterpret_cast<const unsigned char*>(v.data());
      for (size_t i = 0; i < v.size() * sizeof(T); ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
      }
    };
    for (const auto& l : backbone) {
      eat(l.w);
      eat(l.b);
    }
    eat(cls_head.w);
    eat(cls_head.b);
    eat(reg_head.w);
    eat(reg_head.b);
    return h;
  }
};

// New K-channel sigmoid cls head from a softmax head: filter/bias difference
// (face minus not-face), so the initial sigmoid logit equals the softmax
// head's logit difference and anchor rankings carry over. Backbone and reg
// head are copied verbatim.
template <typename T>
DetectorNet<T> switch_head_softmax_to_sigmoid(const DetectorNet<T>& src) {
  if (src.arch.head != HeadType::Softmax)
    throw std::invalid_argument("switch_head: net already has a sigmoid head");
  DetectorNet<T> out = src;
  out.arch.head = HeadType::PreciseSigmoid;
  const int k = src.arch.num_scales;
  const int feat_c = src.cls_head.spec.in_c;
  out.cls_head.init(feat_c, k, 1, 1, "cls");
  for (int s = 0; s < k; ++s) {
    for (int f = 0; f < feat_c; ++f)
      out.cls_head.w[size_t(s) * feat_c + f] =
          src.cls_head.w[size_t(2 * s + 1) * feat_c + f] -
          src.cls_head.w[size_t(2 * s) * feat_c + f];
    out.cls_head.b[s] = src.cls_head.b[2 * s + 1] - src.cls_head.b[2 * s];
  }
  return out;
}

// PBSW weight file: magic "PBSW", version u32, entry count u32, then per
// entry: name length u32 + bytes, dtype u32 (1=f32, 2=f64), rank u32, dims
// u32 each, raw little-endian values.
template <typename T>
void save_weights(DetectorNet<T>& net, const std::string& path);

template <typename T>
DetectorNet<T> load_weights(const std::string& path);

template <typename T>
void load_weights_into(DetectorNet<T>& net, const std::string& path);

}  // namespace pbsdet
