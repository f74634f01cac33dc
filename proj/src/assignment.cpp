#include "pbsdet/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "pbsdet/rng.hpp"

namespace pbsdet {

LabelRule LabelRule::binary(double pos, double neg) {
  LabelRule r;
  r.kind = RuleKind::Binary;
  r.bound_pos = pos;
  r.bound_neg = neg;
  r.validate();
  return r;
}

LabelRule LabelRule::shift(double pos, double neg, double a) {
  LabelRule r;
  r.kind = RuleKind::Shift;
  r.bound_pos = pos;
  r.bound_neg = neg;
  r.shift_a = a;
  r.validate();
  return r;
}

LabelRule LabelRule::split_one(double pos, double neg, double b1, double s1) {
  LabelRule r;
  r.kind = RuleKind::SplitOne;
  r.bound_pos = pos;
  r.bound_neg = neg;
  r.bound_1 = b1;
  r.score_1 = s1;
  r.validate();
  return r;
}

LabelRule LabelRule::split_two(double pos, double neg, double b1, double s1,
                               double b2, double s2) {
  LabelRule r;
  r.kind = RuleKind::SplitTwo;
  r.bound_pos = pos;
  r.bound_neg = neg;
  r.bound_1 = b1;
  r.score_1 = s1;
  r.bound_2 = b2;
  r.score_2 = s2;
  r.validate();
  return r;
}

void LabelRule::validate() const {
  if (!(0.0 <= bound_neg && bound_neg <= bound_pos && bound_pos <= 1.0))
    throw std::invalid_argument("LabelRule: need 0 <= bound_neg <= bound_pos <= 1");
  if (kind == RuleKind::Shift && shift_a < 0.0)
    throw std::invalid_argument("LabelRule: shift_a must be >= 0");
  if (kind == RuleKind::SplitOne || kind == RuleKind::SplitTwo) {
    if (!(bound_pos <= bound_1 && bound_1 <= 1.0))
      throw std::invalid_argument("LabelRule: need bound_pos <= bound_1 <= 1");
    if (!(score_1 > 0.0 && score_1 <= 1.0))
      throw std::invalid_argument("LabelRule: score_1 must be in (0,1]");
  }
  if (kind == RuleKind::SplitTwo) {
    if (!(bound_1 <= bound_2 && bound_2 <= 1.0))
      throw std::invalid_argument("LabelRule: need bound_1 <= bound_2 <= 1");
    if (!(score_2 > 0.0 && score_2 <= 1.0))
      throw std::invalid_argument("LabelRule: score_2 must be in (0,1]");
    if (score_1 > score_2)
      throw std::invalid_argument("LabelRule: need score_1 <= score_2");
  }
}

std::string LabelRule::describe() const {
  std::ostringstream os;
  switch (kind) {
    case RuleKind::Binary:
      os << "binary_pos" << bound_pos << "_neg" << bound_neg;
      break;
    case RuleKind::Shift:
      os << "pos" << bound_pos << "+add" << shift_a;
      break;
    case RuleKind::SplitOne:
      os << "pos" << bound_pos << "+split_" << bound_1 << "_" << score_1;
      break;
    case RuleKind::SplitTwo:
      os << "pos" << bound_pos << "+split_" << bound_1 << "_" << score_1 << "_"
         << bound_2 << "_" << score_2;
      break;
  }
  return os.str();
}

AnchorLabel label_of(const LabelRule& rule, double iou) {
  if (!(iou >= 0.0 && iou <= 1.0))
    throw std::invalid_argument("label_of: iou outside [0,1]");
  switch (rule.kind) {
    case RuleKind::Binary:
      if (iou < rule.bound_neg) return {LabelKind::Negative, 0.0};
      if (iou > rule.bound_pos) return {LabelKind::Positive, 1.0};
      return {LabelKind::Ignore, 0.0};
    case RuleKind::Shift:
      if (iou < rule.bound_neg) return {LabelKind::Negative, 0.0};
      if (iou > rule.bound_pos)
        return {LabelKind::Positive, std::min(iou + rule.shift_a, 1.0)};
      return {LabelKind::Ignore, 0.0};
    case RuleKind::SplitOne:
      if (iou < rule.bound_neg) return {LabelKind::Negative, 0.0};
      if (iou > rule.bound_pos && iou < rule.bound_1)
        return {LabelKind::Positive, rule.score_1};
      if (iou >= rule.bound_1) return {LabelKind::Positive, 1.0};
      return {LabelKind::Ignore, 0.0};
    case RuleKind::SplitTwo:
      if (iou < rule.bound_neg) return {LabelKind::Negative, 0.0};
      if (iou > rule.bound_pos && iou < rule.bound_1)
        return {LabelKind::Positive, rule.score_1};
      if (iou >= rule.bound_1 && iou < rule.bound_2)
        return {LabelKind::Positive, rule.score_2};
      if (iou >= rule.bound_2) return {LabelKind::Positive, 1.0};
      return {LabelKind::Ignore, 0.0};
  }
  throw std::logic_error("label_of: unknown rule kind");
}

double forced_match_floor(const LabelRule& rule, double iou) {
  switch (rule.kind) {
    case RuleKind::Binary:
      return 1.0;
    case RuleKind::Shift:
      return std::min(iou + rule.shift_a, 1.0);
    case RuleKind::SplitOne:
    case RuleKind::SplitTwo:
      return rule.score_1;
  }
  throw std::logic_error("forced_match_floor: unknown rule kind");
}

Assignment assign(const std::vector<Box>& anchors, const std::vector<Box>& gts,
                  const LabelRule& rule, bool force_best_match) {
  rule.validate();
  if (anchors.empty()) throw std::invalid_argument("assign: anchors must be non-empty");

  const int m = int(anchors.size());
  const int n = int(gts.size());

  Assignment out;
  out.labels.assign(m, AnchorLabel{});
  out.matched_gt.assign(m, -1);
  out.reg_targets.assign(m, {0, 0, 0, 0});

  if (n == 0) {
    for (auto& l : out.labels) l = {LabelKind::Negative, 0.0};
    return out;
  }

  const IouMatrix ious = iou_matrix(anchors, gts);

  std::vector<double> max_iou(m, 0.0);
  for (int i = 0; i < m; ++i) {
    int best = 0;
    double best_iou = ious(i, 0);
    for (int j = 1; j < n; ++j)
      if (ious(i, j) > best_iou) {
        best_iou = ious(i, j);
        best = j;
      }
    max_iou[i] = best_iou;
    out.matched_gt[i] = best;
    out.labels[i] = label_of(rule, best_iou);
  }

  if (force_best_match) {
    for (int j = 0; j < n; ++j) {
      int best = -1;
      double best_iou = 0.0;
      for (int i = 0; i < m; ++i)
        if (ious(i, j) > best_iou) {
          best_iou = ious(i, j);
          best = i;
        }
      if (best < 0) continue;  // gt touches no anchor
      const double floor = forced_match_floor(rule, max_iou[best]);
      AnchorLabel& l = out.labels[best];
      if (l.kind == LabelKind::Positive)
        l.target = std::max(l.target, floor);
      else
        l = {LabelKind::Positive, floor};
    }
  }

  for (int i = 0; i < m; ++i)
    if (out.labels[i].kind == LabelKind::Positive)
      out.reg_targets[i] = regression_targets(anchors[i], gts[out.matched_gt[i]]);

  return out;
}

std::array<double, 4> regression_targets(const Box& anchor, const Box& gt) {
  const double aw = anchor.width(), ah = anchor.height();
  if (aw <= 0.0 || ah <= 0.0)
    throw std::invalid_argument("regression_targets: degenerate anchor");
  const double gw = gt.width(), gh = gt.height();
  if (gw <= 0.0 || gh <= 0.0)
    throw std::invalid_argument("regression_targets: degenerate ground truth");
  return {(gt.cx() - anchor.cx()) / aw, (gt.cy() - anchor.cy()) / ah,
          std::log(gw / aw), std::log(gh / ah)};
}

Box decode_box(const Box& anchor, const std::array<double, 4>& t) {
  const double aw = anchor.width(), ah = anchor.height();
  const double cx = t[0] * aw + anchor.cx();
  const double cy = t[1] * ah + anchor.cy();
  const double w = aw * std::exp(t[2]);
  const double h = ah * std::exp(t[3]);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<int> sample_minibatch(const Assignment& a, int batch_size,
                                  double max_pos_fraction, uint64_t seed) {
  if (batch_size < 1) throw std::invalid_argument("sample_minibatch: batch_size >= 1");

  std::vector<int> pos, neg;
  for (int i = 0; i < a.num_anchors(); ++i) {
    if (a.labels[i].kind == LabelKind::Positive) pos.push_back(i);
    else if (a.labels[i].kind == LabelKind::Negative) neg.push_back(i);
  }

  Rng rng(mix64(seed ^ 0x5eed5a4bu));
  rng.shuffle(pos);
  rng.shuffle(neg);

  const int pos_cap = int(max_pos_fraction * batch_size);
  const int n_pos = std::min<int>(int(pos.size()), pos_cap);
  const int n_neg = std::min<int>(int(neg.size()), batch_size - n_pos);

  std::vector<int> out(pos.begin(), pos.begin() + n_pos);
  out.insert(out.end(), neg.begin(), neg.begin() + n_neg);
  return out;
}

long long LabelStats::total() const {
  long long t = negative + ignored;
  for (const auto& [_, c] : positive) t += c;
  return t;
}

double LabelStats::ignored_fraction() const {
  const long long t = total();
  return t > 0 ? double(ignored) / double(t) : 0.0;
}

LabelStats label_stats(const std::vector<std::vector<Box>>& gts_per_image,
                       const AnchorConfig& cfg, const LabelRule& rule) {
  rule.validate();
  const std::vector<Box> anchors = generate_anchors(cfg);

  LabelStats stats;
  for (const auto& gts : gts_per_image) {
    if (gts.empty()) {
      stats.negative += anchors.size();
      continue;
    }
    const IouMatrix ious = iou_matrix(anchors, gts);
    for (int i = 0; i < int(anchors.size()); ++i) {
      double best = 0.0;
      for (int j = 0; j < int(gts.size()); ++j) best = std::max(best, ious(i, j));
      const AnchorLabel l = label_of(rule, best);
      switch (l.kind) {
        case LabelKind::Negative: ++stats.negative; break;
        case LabelKind::Ignore: ++stats.ignored; break;
        case LabelKind::Positive: ++stats.positive[l.target]; break;
      }
    }
  }
  return stats;
}

void write_label_stats_csv(std::ostream& os, const LabelStats& stats) {
  const long long t = stats.total();
  const double denom = t > 0 ? double(t) : 1.0;
  os << "bucket,count,fraction\n";
  os << "negative," << stats.negative << "," << (stats.negative / denom) << "\n";
  os << "ignore," << stats.ignored << "," << (stats.ignored / denom) << "\n";
  for (const auto& [target, count] : stats.positive)
    os << "pos_" << target << "," << count << "," << (count / denom) << "\n";
}

}  // namespace pbsdet
