#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "pbsdet/assignment.hpp"
#include "pbsdet/data.hpp"
#include "pbsdet/loss.hpp"
#include "pbsdet/net.hpp"

namespace pbsdet {

// Thrown when the training loss goes NaN/Inf; the CLI maps it to exit code 3.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int iterations = 1000;
  int batch_images = 8;
  int batch_anchors = 256;
  double max_pos_fraction = 0.5;
  uint64_t seed = 1;
  HeadType head = HeadType::Softmax;
  bool force_best_match = true;
  // optional step decay: multiply the rate by lr_decay_factor at each listed iteration
  std::vector<int> lr_decay_iters;
  double lr_decay_factor = 0.1;

  LabelRule rule = LabelRule::binary(0.7, 0.3);
  LossConfig loss;
  AnchorConfig anchors;

  void validate() const;
};

struct TraceRow {
  int iteration = 0;
  double cls_loss = 0, reg_loss = 0, total = 0;
};

void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace);

// Training targets for one image batch, in output-map coordinates. cls holds
// the sampled classification anchors (soft target for the sigmoid head, 0/1
// for softmax); reg holds every Positive anchor with its 4 regression
// targets.
struct BatchTargets {
  struct ClsSample {
    int image = 0;
    int anchor = 0;
    double target = 0;
  };
  struct RegSample {
    int image = 0;
    int anchor = 0;
    std::array<double, 4> t{};
  };
  std::vector<ClsSample> cls;
  std::vector<RegSample> reg;
};

BatchTargets build_batch_targets(const std::vector<const Assignment*>& assignments,
                                 int batch_anchors, double max_pos_fraction,
                                 uint64_t seed, int iteration);

// anchor index -> (scale channel k, map row, map col); anchors are row-major
// over cells with scales innermost, matching generate_anchors.
struct AnchorIndexer {
  int feature_w = 0;
  int num_scales = 0;
  int k(int anchor) const { return anchor % num_scales; }
  int row(int anchor) const { return (anchor / num_scales) / feature_w; }
  int col(int anchor) const { return (anchor / num_scales) % feature_w; }
};

template <typename T>
struct MapLoss {
  double cls = 0, reg = 0, total = 0;
  Tensor<T> d_cls, d_reg;  // gradients of `total` wrt the maps
};

// Classification + regression loss over output maps. The cls term is softmax
// cross entropy (softmax head; targets must be 0/1) or the sigmoid-euclidean
// loss weighted by lambda (precise-sigmoid head); the reg term is smooth L1
// over positive anchors, normalized by their count. `total` and the map
// gradients include the lambda weighting; `cls` is reported unweighted.
template <typename T>
MapLoss<T> detection_map_loss(const Tensor<T>& cls_map, const Tensor<T>& reg_map,
                              const BatchTargets& bt, HeadType head, int num_scales,
                              const LossConfig& lc) {
  const AnchorIndexer ix{cls_map.w, num_scales};
  MapLoss<T> out;
  out.d_cls = Tensor<T>(cls_map.n, cls_map.c, cls_map.h, cls_map.w);
  out.d_reg = Tensor<T>(reg_map.n, reg_map.c, reg_map.h, reg_map.w);

  const double lambda_eff = head == HeadType::PreciseSigmoid ? lc.lambda : 1.0;

  if (!bt.cls.empty()) {
    if (head == HeadType::PreciseSigmoid) {
      std::vector<double> logits, targets;
      logits.reserve(bt.cls.size());
      targets.reserve(bt.cls.size());
      for (const auto& s : bt.cls) {
        logits.push_back(double(cls_map.at(s.image, ix.k(s.anchor), ix.row(s.anchor),
                                           ix.col(s.anchor))));
        targets.push_back(s.target);
      }
      const LossGrad lg = precise_sigmoid_loss(logits, targets);
      out.cls = lg.loss;
      for (size_t i = 0; i < bt.cls.size(); ++i) {
        const auto& s = bt.cls[i];
        out.d_cls.at(s.image, ix.k(s.anchor), ix.row(s.anchor), ix.col(s.anchor)) +=
            T(lambda_eff * lg.grad[i]);
      }
    } else {
      std::vector<double> logits;
      std::vector<int> labels;
      logits.reserve(bt.cls.size() * 2);
      labels.reserve(bt.cls.size());
      for (const auto& s : bt.cls) {
        const int k = ix.k(s.anchor), r = ix.row(s.anchor), c = ix.col(s.anchor);
        logits.push_back(double(cls_map.at(s.image, 2 * k, r, c)));
        logits.push_back(double(cls_map.at(s.image, 2 * k + 1, r, c)));
        if (s.target != 0.0 && s.target != 1.0)
          throw std::invalid_argument("softmax head requires binary targets");
        labels.push_back(s.target == 1.0 ? 1 : 0);
      }
      const LossGrad lg = softmax_ce(logits, 2, labels);
      out.cls = lg.loss;
      for (size_t i = 0; i < bt.cls.size(); ++i) {
        const auto& s = bt.cls[i];
        const int k = ix.k(s.anchor), r = ix.row(s.anchor), c = ix.col(s.anchor);
        out.d_cls.at(s.image, 2 * k, r, c) += T(lambda_eff * lg.grad[2 * i]);
        out.d_cls.at(s.image, 2 * k + 1, r, c) += T(lambda_eff * lg.grad[2 * i + 1]);
      }
    }
  }

  if (!bt.reg.empty()) {
    std::vector<double> pred, target;
    pred.reserve(bt.reg.size() * 4);
    target.reserve(bt.reg.size() * 4);
    for (const auto& s : bt.reg) {
      const int k = ix.k(s.anchor), r = ix.row(s.anchor), c = ix.col(s.anchor);
      for (int d = 0; d < 4; ++d) {
        pred.push_back(double(reg_map.at(s.image, 4 * k + d, r, c)));
        target.push_back(s.t[d]);
      }
    }
    const LossGrad lg =
        smooth_l1(pred, target, double(bt.reg.size()), lc.smooth_l1_delta);
    out.reg = lg.loss;
    for (size_t i = 0; i < bt.reg.size(); ++i) {
      const auto& s = bt.reg[i];
      const int k = ix.k(s.anchor), r = ix.row(s.anchor), c = ix.col(s.anchor);
      for (int d = 0; d < 4; ++d)
        out.d_reg.at(s.image, 4 * k + d, r, c) += T(lg.grad[4 * i + d]);
    }
  }

  out.total = lambda_eff * out.cls + out.reg;
  return out;
}

// Momentum SGD with weight decay: v <- mu*v - lr*(g + wd*p); p <- p + v.
struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

template <typename T>
struct SgdState {
  std::vector<std::vector<T>> velocity;
};

template <typename T>
void sgd_step(DetectorNet<T>& net, SgdState<T>& state, const SgdConfig& cfg) {
  auto params = net.params();
  if (state.velocity.empty()) {
    state.velocity.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i)
      state.velocity[i].assign(params[i].value->size(), T(0));
  }
  if (state.velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: state does not match net");
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i].value;
    auto& g = *params[i].grad;
    auto& v = state.velocity[i];
    if (v.size() != p.size() || g.size() != p.size())
      throw std::invalid_argument("sgd_step: grad shape mismatch for " + params[i].name);
    for (size_t j = 0; j < p.size(); ++j) {
      v[j] = T(cfg.momentum) * v[j] - T(cfg.lr) * (g[j] + T(cfg.weight_decay) * p[j]);
      p[j] += v[j];
    }
  }
}

// SGD training loop: per iteration sample an image batch, assign anchors,
// sample the classification minibatch, evaluate the losses, backprop, step.
// Deterministic given the config seed; throws DivergenceError on NaN/Inf.
std::vector<TraceRow> train(DetectorNet<float>& net, const std::vector<Scene>& dataset,
                            const TrainConfig& cfg);

}  // namespace pbsdet
