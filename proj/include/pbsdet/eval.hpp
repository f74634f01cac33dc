#pragma once

#include <iosfwd>
#include <vector>

#include "pbsdet/geometry.hpp"
#include "pbsdet/inference.hpp"

namespace pbsdet {

// Greedy matching of score-sorted detections against ground truths: each
// detection takes the unmatched gt of highest IoU if that IoU >= iou_min.
// One-to-one; returns one flag per detection.
std::vector<char> match(const std::vector<Detection>& dets_sorted,
                        const std::vector<Box>& gts, double iou_min = 0.5);

struct CurvePoint {
  double threshold = 0;  // detections with score >= threshold are included
  int cum_fp = 0;
  double tpr = 0;
  double precision = 0;
  double recall = 0;
};

struct EvalResult {
  std::vector<std::vector<char>> matched;  // per image, per score-sorted det
  std::vector<double> per_image_recall;
  std::vector<CurvePoint> curve;  // one point per distinct score, descending
  double ap = 0.0;
  std::vector<int> budgets;
  std::vector<double> tpr_at;  // parallel to budgets
};

// Pools detections over the dataset and sweeps the score threshold.
// tpr_at[i] is the TPR of the longest score-sorted prefix accumulating at
// most budgets[i] false positives (FDDB-style discrete ROC points); AP is
// the area under the precision/recall curve with all-point interpolation.
EvalResult evaluate(const std::vector<std::vector<Detection>>& dets_per_image,
                    const std::vector<std::vector<Box>>& gts_per_image,
                    const std::vector<int>& budgets, double iou_min = 0.5);

std::vector<double> tpr_at_fp(const std::vector<std::vector<Detection>>& dets,
                              const std::vector<std::vector<Box>>& gts,
                              const std::vector<int>& fp_budgets,
                              double iou_min = 0.5);

double average_precision(const std::vector<std::vector<Detection>>& dets,
                         const std::vector<std::vector<Box>>& gts,
                         double iou_min = 0.5);

// CSV columns: threshold,cum_fp,tpr,precision,recall
void write_curve_csv(std::ostream& os, const EvalResult& r);

}  // namespace pbsdet
