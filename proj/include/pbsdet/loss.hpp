#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace pbsdet {

struct LossConfig {
  double lambda = 300.0;       // weight on the sigmoid-euclidean cls term
  double smooth_l1_delta = 1.0;
};

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Mean cross entropy over row-major [N x C] logits; grad = (softmax - onehot)/N.
inline LossGrad softmax_ce(const std::vector<double>& logits, int num_classes,
                           const std::vector<int>& labels) {
  if (num_classes < 2) throw std::invalid_argument("softmax_ce: need C >= 2");
  const int n = int(labels.size());
  if (n == 0) throw std::invalid_argument("softmax_ce: empty batch");
  if (logits.size() != size_t(n) * num_classes)
    throw std::invalid_argument("softmax_ce: logits size mismatch");

  LossGrad out;
  out.grad.assign(logits.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes)
      throw std::invalid_argument("softmax_ce: label out of range");
    const double* row = logits.data() + size_t(i) * num_classes;
    double mx = row[0];
    for (int j = 1; j < num_classes; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < num_classes; ++j) z += std::exp(row[j] - mx);
    out.loss -= (row[y] - mx - std::log(z));
    for (int j = 0; j < num_classes; ++j) {
      const double p = std::exp(row[j] - mx) / z;
      out.grad[size_t(i) * num_classes + j] = (p - (j == y ? 1.0 : 0.0)) / n;
    }
  }
  out.loss /= n;
  return out;
}

// Sigmoid with euclidean loss: L = 1/(2N) * sum (sigma(x_i) - y_i)^2,
// grad_i = (sigma(x_i) - y_i) * sigma(x_i) * (1 - sigma(x_i)) / N.
inline LossGrad precise_sigmoid_loss(const std::vector<double>& logits,
                                     const std::vector<double>& targets) {
  const size_t n = logits.size();
  if (n == 0) throw std::invalid_argument("precise_sigmoid_loss: empty batch");
  if (targets.size() != n)
    throw std::invalid_argument("precise_sigmoid_loss: size mismatch");

  LossGrad out;
  out.grad.assign(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    const double y = targets[i];
    if (!(y >= 0.0 && y <= 1.0))
      throw std::invalid_argument("precise_sigmoid_loss: target outside [0,1]");
    const double s = sigmoid(logits[i]);
    const double d = s - y;
    out.loss += d * d;
    out.grad[i] = d * s * (1.0 - s) / double(n);
  }
  out.loss /= 2.0 * double(n);
  return out;
}

// Elementwise smooth L1 (0.5 d^2 for |d|<delta, |d|-0.5 delta beyond), summed
// and divided by norm_count (the positive-anchor count at the call site).
inline LossGrad smooth_l1(const std::vector<double>& pred,
                          const std::vector<double>& target, double norm_count,
                          double delta = 1.0) {
  if (pred.size() != target.size())
    throw std::invalid_argument("smooth_l1: length mismatch");
  if (norm_count < 1.0) throw std::invalid_argument("smooth_l1: norm_count >= 1");

  LossGrad out;
  out.grad.assign(pred.size(), 0.0);
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    if (std::abs(d) < delta) {
      out.loss += 0.5 * d * d;
      out.grad[i] = d / norm_count;
    } else {
      out.loss += std::abs(d) - 0.5 * delta;
      out.grad[i] = (d > 0 ? 1.0 : -1.0) / norm_count;
    }
  }
  out.loss /= norm_count;
  return out;
}

inline double total_loss(double cls_loss, double reg_loss, const LossConfig& cfg) {
  return cfg.lambda * cls_loss + reg_loss;
}

}  // namespace pbsdet
