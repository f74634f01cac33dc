#include "pbsdet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "pbsdet/distill.hpp"
#include "pbsdet/loss.hpp"
#include "pbsdet/net.hpp"
#include "pbsdet/rng.hpp"
#include "pbsdet/train.hpp"

namespace pbsdet {

double fd_max_rel_error(const std::function<double(const std::vector<double>&)>& f,
                        const std::vector<double>& x,
                        const std::vector<double>& analytic_grad, double h) {
  std::vector<double> numeric(x.size());
  std::vector<double> probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    numeric[i] = (up - down) / (2.0 * h);
  }
  double scale = 0.0;
  for (size_t i = 0; i < x.size(); ++i)
    scale = std::max({scale, std::abs(analytic_grad[i]), std::abs(numeric[i])});
  if (scale < 1e-12) scale = 1e-12;
  double worst = 0.0;
  for (size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, std::abs(analytic_grad[i] - numeric[i]) / scale);
  return worst;
}

namespace {

constexpr double kStep = 1e-5;

// ---- losses ----

double check_softmax_ce(Rng& rng) {
  const int n = rng.uniform_int(2, 6);
  const int c = rng.uniform_int(2, 4);
  std::vector<double> logits(size_t(n) * c);
  for (double& v : logits) v = rng.normal() * 2.0;
  std::vector<int> labels(std::size_t{0} + n);
  for (int& l : labels) l = rng.uniform_int(0, c - 1);

  const LossGrad lg = softmax_ce(logits, c, labels);
  return fd_max_rel_error(
      [&](const std::vector<double>& x) { return softmax_ce(x, c, labels).loss; },
      logits, lg.grad, kStep);
}

double check_precise_sigmoid(Rng& rng) {
  const int n = rng.uniform_int(1, 8);
  std::vector<double> logits(std::size_t{0} + n), targets(std::size_t{0} + n);
  for (double& v : logits) v = rng.normal() * 2.0;
  for (double& v : targets) v = rng.next_unit();

  const LossGrad lg = precise_sigmoid_loss(logits, targets);
  return fd_max_rel_error(
      [&](const std::vector<double>& x) {
        return precise_sigmoid_loss(x, targets).loss;
      },
      logits, lg.grad, kStep);
}

double check_smooth_l1(Rng& rng) {
  const int n = rng.uniform_int(1, 8);
  const double delta = 1.0;
  std::vector<double> pred(std::size_t{0} + n), target(std::size_t{0} + n);
  for (int i = 0; i < n; ++i) {
    target[i] = rng.normal();
    // keep |d| away from the delta boundary; the fd stencil would straddle
    // the second-derivative jump there
    double d;
    do {
      d = rng.normal() * 1.5;
    } while (std::abs(std::abs(d) - delta) < 1e-3 || std::abs(d) < 1e-3);
    pred[i] = target[i] + d;
  }
  const double norm = double(rng.uniform_int(1, 4));

  const LossGrad lg = smooth_l1(pred, target, norm, delta);
  return fd_max_rel_error(
      [&](const std::vector<double>& x) {
        return smooth_l1(x, target, norm, delta).loss;
      },
      pred, lg.grad, kStep);
}

// ---- single layers ----

// L(theta, x) = sum r . conv(x; theta); checks input, weight, and bias grads.
double check_conv_layer(Rng& rng, int ksize, int stride) {
  Conv2d<double> layer;
  const int in_c = rng.uniform_int(1, 3);
  const int out_c = rng.uniform_int(1, 3);
  layer.init(in_c, out_c, ksize, stride, "probe");
  Rng init_rng(rng.next_u64());
  layer.init_he(init_rng);
  for (double& b : layer.b) b = rng.normal() * 0.1;

  Tensor<double> x(rng.uniform_int(1, 2), in_c, 5, 5);
  for (double& v : x.v) v = rng.normal();

  Tensor<double> probe_out = layer.forward(x, true);
  Tensor<double> r = probe_out;
  for (double& v : r.v) v = rng.normal();

  auto loss_of = [&](const std::vector<double>& w, const std::vector<double>& b,
                     const Tensor<double>& input) {
    Conv2d<double> tmp = layer;
    tmp.w = w;
    tmp.b = b;
    const Tensor<double> y = tmp.forward(input, false);
    double s = 0.0;
    for (size_t i = 0; i < y.v.size(); ++i) s += y.v[i] * r.v[i];
    return s;
  };

  layer.zero_grad();
  const Tensor<double> gx = layer.backward(r);

  double worst = fd_max_rel_error(
      [&](const std::vector<double>& w) { return loss_of(w, layer.b, x); }, layer.w,
      layer.gw, kStep);
  worst = std::max(worst, fd_max_rel_error(
                              [&](const std::vector<double>& b) {
                                return loss_of(layer.w, b, x);
                              },
                              layer.b, layer.gb, kStep));
  worst = std::max(worst, fd_max_rel_error(
                              [&](const std::vector<double>& xv) {
                                Tensor<double> xi = x;
                                xi.v = xv;
                                return loss_of(layer.w, layer.b, xi);
                              },
                              x.v, gx.v, kStep));
  return worst;
}

double check_relu(Rng& rng) {
  Relu<double> layer;
  Tensor<double> x(1, 2, 4, 4);
  for (double& v : x.v) {
    v = rng.normal();
    if (std::abs(v) < 1e-3) v += v >= 0 ? 2e-3 : -2e-3;  // keep off the kink
  }
  Tensor<double> y = layer.forward(x, true);
  Tensor<double> r = y;
  for (double& v : r.v) v = rng.normal();
  const Tensor<double> gx = layer.backward(r);

  return fd_max_rel_error(
      [&](const std::vector<double>& xv) {
        Tensor<double> xi = x;
        xi.v = xv;
        Relu<double> tmp;
        const Tensor<double> out = tmp.forward(xi, false);
        double s = 0.0;
        for (size_t i = 0; i < out.v.size(); ++i) s += out.v[i] * r.v[i];
        return s;
      },
      x.v, gx.v, kStep);
}

// ---- end to end ----

struct EndToEndCase {
  DetectorNet<double> net;
  Tensor<double> images;
  BatchTargets bt;
  LossConfig lc;
};

std::vector<double> flat_params(DetectorNet<double>& net) {
  std::vector<double> out;
  for (auto& p : net.params()) out.insert(out.end(), p.value->begin(), p.value->end());
  return out;
}

void set_flat_params(DetectorNet<double>& net, const std::vector<double>& flat) {
  size_t at = 0;
  for (auto& p : net.params()) {
    std::copy(flat.begin() + at, flat.begin() + at + p.value->size(), p.value->begin());
    at += p.value->size();
  }
}

std::vector<double> flat_grads(DetectorNet<double>& net) {
  std::vector<double> out;
  for (auto& p : net.params()) out.insert(out.end(), p.grad->begin(), p.grad->end());
  return out;
}

EndToEndCase make_end_to_end_case(Rng& rng, HeadType head) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    EndToEndCase cs;
    NetArch arch;
    arch.in_channels = 1;
    arch.channels = {4, 6};
    arch.strides = {2, 2};
    arch.num_scales = 2;
    arch.head = head;
    cs.net = DetectorNet<double>(arch, rng.next_u64());
    cs.images = Tensor<double>(1, 1, 8, 8);
    for (double& v : cs.images.v) v = rng.next_unit();

    const int num_anchors = 2 * 2 * 2;
    for (int a = 0; a < num_anchors; ++a) {
      if (rng.next_unit() < 0.7) {
        double t;
        if (head == HeadType::Softmax) t = rng.uniform_int(0, 1);
        else t = rng.next_unit();
        cs.bt.cls.push_back({0, a, t});
      }
      if (rng.next_unit() < 0.4) {
        BatchTargets::RegSample s{0, a, {}};
        for (double& v : s.t) v = rng.normal() * 0.4;
        cs.bt.reg.push_back(s);
      }
    }
    if (cs.bt.cls.empty()) cs.bt.cls.push_back({0, 0, head == HeadType::Softmax ? 1.0 : 0.5});
    cs.lc.lambda = 300.0;

    // reject trials with a relu preactivation or a smooth-l1 residual close
    // enough to a kink for the fd stencil to straddle it
    bool safe = true;
    {
      Tensor<double> z = cs.images;
      for (size_t i = 0; i < cs.net.backbone.size(); ++i) {
        z = cs.net.backbone[i].forward(std::move(z), false);
        for (double v : z.v)
          if (std::abs(v) < 1e-4) safe = false;
        Relu<double> act;
        z = act.forward(std::move(z), false);
      }
    }
    auto maps = cs.net.forward(cs.images);
    const AnchorIndexer ix{maps.cls.w, 2};
    for (const auto& s : cs.bt.reg)
      for (int d = 0; d < 4; ++d) {
        const double diff =
            maps.reg.at(0, 4 * ix.k(s.anchor) + d, ix.row(s.anchor), ix.col(s.anchor)) -
            s.t[d];
        if (std::abs(std::abs(diff) - cs.lc.smooth_l1_delta) < 1e-4) safe = false;
      }
    if (safe) return cs;
  }
  throw std::runtime_error("gradcheck: could not build a kink-free end-to-end case");
}

double check_end_to_end(Rng& rng, HeadType head) {
  EndToEndCase cs = make_end_to_end_case(rng, head);

  auto loss_at = [&](const std::vector<double>& flat) {
    set_flat_params(cs.net, flat);
    auto maps = cs.net.forward(cs.images, false);
    return detection_map_loss(maps.cls, maps.reg, cs.bt, head, 2, cs.lc).total;
  };

  const std::vector<double> theta = flat_params(cs.net);
  cs.net.zero_grad();
  auto maps = cs.net.forward(cs.images);
  MapLoss<double> ml = detection_map_loss(maps.cls, maps.reg, cs.bt, head, 2, cs.lc);
  cs.net.backward(ml.d_cls, ml.d_reg);
  const std::vector<double> analytic = flat_grads(cs.net);

  // directional derivatives over random unit directions; full coordinate fd
  // over every parameter would dominate the suite's runtime
  double scale = 0.0;
  for (double g : analytic) scale = std::max(scale, std::abs(g));
  if (scale < 1e-12) scale = 1e-12;

  double worst = 0.0;
  std::vector<double> probe = theta;
  for (int rep = 0; rep < 8; ++rep) {
    std::vector<double> dir(theta.size());
    double norm = 0.0;
    for (double& d : dir) {
      d = rng.normal();
      norm += d * d;
    }
    norm = std::sqrt(norm);
    double dot = 0.0;
    for (size_t i = 0; i < theta.size(); ++i) {
      dir[i] /= norm;
      dot += analytic[i] * dir[i];
    }
    for (size_t i = 0; i < theta.size(); ++i) probe[i] = theta[i] + kStep * dir[i];
    const double up = loss_at(probe);
    for (size_t i = 0; i < theta.size(); ++i) probe[i] = theta[i] - kStep * dir[i];
    const double down = loss_at(probe);
    const double numeric = (up - down) / (2.0 * kStep);
    worst = std::max(worst, std::abs(numeric - dot) / scale);
  }
  set_flat_params(cs.net, theta);
  return worst;
}

// ---- distillation loss ----

double check_distill_loss(Rng& rng) {
  const int k = 2, fh = 2, fw = 2;
  Tensor<double> cls_s(1, k, fh, fw), cls_t(1, k, fh, fw);
  Tensor<double> reg_s(1, 4 * k, fh, fw), reg_t(1, 4 * k, fh, fw);
  for (double& v : cls_s.v) v = rng.normal();
  for (double& v : cls_t.v) v = rng.normal();
  for (double& v : reg_t.v) v = rng.normal() * 0.5;
  for (size_t i = 0; i < reg_s.v.size(); ++i) {
    double d;
    do {
      d = rng.normal() * 1.5;
    } while (std::abs(std::abs(d) - 1.0) < 1e-3);
    reg_s.v[i] = reg_t.v[i] + d;
  }

  BatchTargets bt;
  for (int a = 0; a < k * fh * fw; ++a) {
    if (rng.next_unit() < 0.6) bt.cls.push_back({0, a, rng.next_unit()});
    if (rng.next_unit() < 0.3) {
      BatchTargets::RegSample s{0, a, {}};
      for (double& v : s.t) v = rng.normal() * 0.3;
      bt.reg.push_back(s);
    }
  }
  if (bt.cls.empty()) bt.cls.push_back({0, 0, 0.5});
  // keep the orig-term smooth-l1 residuals off the kink as well
  {
    const AnchorIndexer ix{fw, k};
    for (auto& s : bt.reg)
      for (int d = 0; d < 4; ++d) {
        double diff = reg_s.at(0, 4 * ix.k(s.anchor) + d, ix.row(s.anchor),
                               ix.col(s.anchor)) -
                      s.t[d];
        while (std::abs(std::abs(diff) - 1.0) < 1e-3 || std::abs(diff) < 1e-6) {
          s.t[d] += 3e-3;
          diff -= 3e-3;
        }
      }
  }

  DistillConfig dc;
  dc.w_distill_cls = 0.5 + rng.next_unit();
  dc.w_distill_reg = 0.5 + rng.next_unit();
  dc.w_orig = 0.5 + rng.next_unit();
  dc.match_post_sigmoid = rng.next_unit() < 0.25;
  LossConfig lc;
  lc.lambda = 300.0;

  auto loss_at = [&](const Tensor<double>& cs, const Tensor<double>& rs) {
    return distill_loss(cs, rs, cls_t, reg_t, bt, dc, HeadType::PreciseSigmoid, k, lc)
        .total;
  };

  DistillLoss<double> dl =
      distill_loss(cls_s, reg_s, cls_t, reg_t, bt, dc, HeadType::PreciseSigmoid, k, lc);

  double worst = fd_max_rel_error(
      [&](const std::vector<double>& v) {
        Tensor<double> probe = cls_s;
        probe.v = v;
        return loss_at(probe, reg_s);
      },
      cls_s.v, dl.d_cls.v, kStep);
  worst = std::max(worst, fd_max_rel_error(
                              [&](const std::vector<double>& v) {
                                Tensor<double> probe = reg_s;
                                probe.v = v;
                                return loss_at(cls_s, probe);
                              },
                              reg_s.v, dl.d_reg.v, kStep));
  return worst;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

CheckResult run_one(const std::string& name, int trials, double tolerance,
                    uint64_t seed, const std::function<double(Rng&)>& fn) {
  CheckResult r;
  r.name = name;
  r.trials = trials;
  r.tolerance = tolerance;
  for (int t = 0; t < trials; ++t) {
    Rng rng(hash3(seed, fnv1a(name), uint64_t(t)));
    r.max_rel_err = std::max(r.max_rel_err, fn(rng));
  }
  r.pass = r.max_rel_err <= tolerance;
  return r;
}

}  // namespace

std::vector<CheckResult> run_gradient_suite(int trials, uint64_t seed, double tolerance) {
  std::vector<CheckResult> out;
  out.push_back(run_one("softmax_ce", trials, tolerance, seed, check_softmax_ce));
  out.push_back(run_one("precise_sigmoid_loss", trials, tolerance, seed,
                        check_precise_sigmoid));
  out.push_back(run_one("smooth_l1", trials, tolerance, seed, check_smooth_l1));
  out.push_back(run_one("conv3x3_s1", trials, tolerance, seed,
                        [](Rng& rng) { return check_conv_layer(rng, 3, 1); }));
  out.push_back(run_one("conv3x3_s2", trials, tolerance, seed,
                        [](Rng& rng) { return check_conv_layer(rng, 3, 2); }));
  out.push_back(run_one("conv1x1", trials, tolerance, seed,
                        [](Rng& rng) { return check_conv_layer(rng, 1, 1); }));
  out.push_back(run_one("relu", trials, tolerance, seed, check_relu));
  out.push_back(run_one("net_end_to_end_sigmoid", trials, tolerance, seed, [](Rng& rng) {
    return check_end_to_end(rng, HeadType::PreciseSigmoid);
  }));
  out.push_back(run_one("net_end_to_end_softmax", trials, tolerance, seed, [](Rng& rng) {
    return check_end_to_end(rng, HeadType::Softmax);
  }));
  out.push_back(run_one("distill_loss", trials, tolerance, seed, check_distill_loss));
  return out;
}

}  // namespace pbsdet
