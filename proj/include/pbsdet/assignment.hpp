#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "pbsdet/geometry.hpp"

namespace pbsdet {

// Rule family mapping an anchor's best IoU to a training target.
//
//   Binary    0 below bound_neg, 1 above bound_pos, else unused.
//   Shift     positive target iou + shift_a, clipped to 1.
//   SplitOne  one intermediate score band (bound_pos, bound_1) -> score_1,
//             then 1 from bound_1 up.
//   SplitTwo  two bands: (bound_pos, bound_1) -> score_1,
//             [bound_1, bound_2) -> score_2, then 1 from bound_2 up.
//
// Comparisons are exactly as printed above: strict below bound_neg, strict
// above bound_pos, ">=" at the bound_1/bound_2 transitions. An IoU that
// satisfies no branch is ignored.
enum class RuleKind { Binary, Shift, SplitOne, SplitTwo };

struct LabelRule {
  RuleKind kind = RuleKind::Binary;
  double bound_pos = 0.7;
  double bound_neg = 0.3;
  double shift_a = 0.0;   // Shift
  double bound_1 = 1.0;   // SplitOne/SplitTwo
  double score_1 = 1.0;
  double bound_2 = 1.0;   // SplitTwo
  double score_2 = 1.0;

  static LabelRule binary(double pos, double neg);
  static LabelRule shift(double pos, double neg, double a);
  static LabelRule split_one(double pos, double neg, double b1, double s1);
  static LabelRule split_two(double pos, double neg, double b1, double s1,
                             double b2, double s2);

  void validate() const;  // throws std::invalid_argument
  std::string describe() const;
};

enum class LabelKind { Negative, Ignore, Positive };

struct AnchorLabel {
  LabelKind kind = LabelKind::Ignore;
  double target = 0.0;  // meaningful for Positive; in (0,1]
};

AnchorLabel label_of(const LabelRule& rule, double iou);

// Lowest target the rule can assign to a positive anchor; used when a
// ground truth's best anchor is promoted by forced matching.
double forced_match_floor(const LabelRule& rule, double iou);

struct Assignment {
  std::vector<AnchorLabel> labels;
  std::vector<int> matched_gt;  // argmax-IoU gt per anchor; -1 if gts empty
  std::vector<std::array<double, 4>> reg_targets;  // valid for Positive anchors

  int num_anchors() const { return int(labels.size()); }
};

// Labels each anchor from its best IoU over the ground truths. With
// force_best_match, each gt's highest-IoU anchor (nonzero IoU, ties to the
// lowest anchor index) is made Positive even below bound_pos, floored at
// forced_match_floor.
Assignment assign(const std::vector<Box>& anchors, const std::vector<Box>& gts,
                  const LabelRule& rule, bool force_best_match = true);

// Standard R-CNN box parameterization: tx=(gx-ax)/aw, ty=(gy-ay)/ah,
// tw=ln(gw/aw), th=ln(gh/ah) in center/size form.
std::array<double, 4> regression_targets(const Box& anchor, const Box& gt);
Box decode_box(const Box& anchor, const std::array<double, 4>& t);

// Up to batch_size non-Ignore anchor indices, positives capped at
// max_pos_fraction*batch_size, remainder filled with negatives. Uniform
// without replacement, deterministic given seed. May return fewer than
// batch_size when supply is short.
std::vector<int> sample_minibatch(const Assignment& a, int batch_size,
                                  double max_pos_fraction, uint64_t seed);

// Label histogram over a dataset under the bare rule (no forced matching).
struct LabelStats {
  long long negative = 0;
  long long ignored = 0;
  std::map<double, long long> positive;  // keyed by target value

  long long total() const;
  double ignored_fraction() const;
};

LabelStats label_stats(const std::vector<std::vector<Box>>& gts_per_image,
                       const AnchorConfig& cfg, const LabelRule& rule);

// CSV report: bucket,count,fraction
void write_label_stats_csv(std::ostream& os, const LabelStats& stats);

}  // namespace pbsdet
