#include "pbsdet/eval.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

namespace pbsdet {

std::vector<char> match(const std::vector<Detection>& dets_sorted,
                        const std::vector<Box>& gts, double iou_min) {
  std::vector<char> matched(dets_sorted.size(), 0);
  std::vector<char> gt_taken(gts.size(), 0);
  for (size_t d = 0; d < dets_sorted.size(); ++d) {
    int best = -1;
    double best_iou = 0.0;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (gt_taken[g]) continue;
      const double v = iou(dets_sorted[d].box, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best = int(g);
      }
    }
    if (best >= 0 && best_iou >= iou_min) {
      matched[d] = 1;
      gt_taken[best] = 1;
    }
  }
  return matched;
}

EvalResult evaluate(const std::vector<std::vector<Detection>>& dets_per_image,
                    const std::vector<std::vector<Box>>& gts_per_image,
                    const std::vector<int>& budgets, double iou_min) {
  if (dets_per_image.size() != gts_per_image.size())
    throw std::invalid_argument("evaluate: image count mismatch");
  long long total_gts = 0;
  for (const auto& g : gts_per_image) total_gts += (long long)g.size();
  if (total_gts == 0) throw std::invalid_argument("evaluate: no ground truths");

  EvalResult r;
  r.budgets = budgets;

  struct Pooled {
    double score;
    char is_tp;
    int image;
    int rank;  // per-image rank, keeps pooled order deterministic
  };
  std::vector<Pooled> pooled;

  for (size_t img = 0; img < dets_per_image.size(); ++img) {
    std::vector<Detection> dets = dets_per_image[img];
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.anchor < b.anchor;
    });
    const std::vector<char> m = match(dets, gts_per_image[img], iou_min);
    r.matched.push_back(m);
    long long tp = 0;
    for (char f : m) tp += f;
    r.per_image_recall.push_back(
        gts_per_image[img].empty() ? 1.0 : double(tp) / double(gts_per_image[img].size()));
    for (size_t d = 0; d < dets.size(); ++d)
      pooled.push_back({dets[d].score, m[d], int(img), int(d)});
  }

  std::sort(pooled.begin(), pooled.end(), [](const Pooled& a, const Pooled& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.rank < b.rank;
  });

  // one curve point per distinct score (all detections tied at a score enter
  // together), plus precision/recall at every detection for AP
  std::vector<double> rec_at_tp, prec_at_tp;
  long long tp = 0, fp = 0;
  for (size_t i = 0; i < pooled.size(); ++i) {
    if (pooled[i].is_tp) {
      ++tp;
      rec_at_tp.push_back(double(tp) / double(total_gts));
      prec_at_tp.push_back(double(tp) / double(tp + fp));
    } else {
      ++fp;
    }
    const bool last_of_group =
        i + 1 == pooled.size() || pooled[i + 1].score != pooled[i].score;
    if (last_of_group) {
      CurvePoint p;
      p.threshold = pooled[i].score;
      p.cum_fp = int(fp);
      p.tpr = double(tp) / double(total_gts);
      p.precision = double(tp) / double(tp + fp);
      p.recall = p.tpr;
      r.curve.push_back(p);
    }
  }

  // all-point interpolated AP: precision envelope over the TP staircase
  double ap = 0.0, prev_rec = 0.0, envelope = 0.0;
  std::vector<double> interp(prec_at_tp.size());
  for (size_t i = prec_at_tp.size(); i-- > 0;) {
    envelope = std::max(envelope, prec_at_tp[i]);
    interp[i] = envelope;
  }
  for (size_t i = 0; i < rec_at_tp.size(); ++i) {
    ap += (rec_at_tp[i] - prev_rec) * interp[i];
    prev_rec = rec_at_tp[i];
  }
  r.ap = ap;

  // longest prefix whose false positives fit the budget
  for (int budget : budgets) {
    double best_tpr = 0.0;
    for (const CurvePoint& p : r.curve) {
      if (p.cum_fp > budget) break;
      best_tpr = p.tpr;
    }
    r.tpr_at.push_back(best_tpr);
  }
  return r;
}

std::vector<double> tpr_at_fp(const std::vector<std::vector<Detection>>& dets,
                              const std::vector<std::vector<Box>>& gts,
                              const std::vector<int>& fp_budgets, double iou_min) {
  return evaluate(dets, gts, fp_budgets, iou_min).tpr_at;
}

double average_precision(const std::vector<std::vector<Detection>>& dets,
                         const std::vector<std::vector<Box>>& gts, double iou_min) {
  return evaluate(dets, gts, {}, iou_min).ap;
}

void write_curve_csv(std::ostream& os, const EvalResult& r) {
  os << "threshold,cum_fp,tpr,precision,recall\n";
  os.precision(9);
  for (const CurvePoint& p : r.curve)
    os << p.threshold << "," << p.cum_fp << "," << p.tpr << "," << p.precision
       << "," << p.recall << "\n";
}

}  // namespace pbsdet
