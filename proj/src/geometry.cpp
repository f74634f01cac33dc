#include "pbsdet/geometry.hpp"

#include <algorithm>
#include <stdexcept>

#include "pbsdet/kernels.hpp"

namespace pbsdet {

double area(const Box& b) { return b.width() * b.height(); }

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = area(a) + area(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace kernels::serial {
IouMatrix iou_matrix(const std::vector<Box>& anchors, const std::vector<Box>& gts) {
  IouMatrix m;
  m.rows = int(anchors.size());
  m.cols = int(gts.size());
  m.v.resize(anchors.size() * gts.size());
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j)
      m.v[size_t(i) * m.cols + j] = iou(anchors[i], gts[j]);
  return m;
}
}  // namespace kernels::serial

namespace kernels::par {
IouMatrix iou_matrix(const std::vector<Box>& anchors, const std::vector<Box>& gts) {
  IouMatrix m;
  m.rows = int(anchors.size());
  m.cols = int(gts.size());
  m.v.resize(anchors.size() * gts.size());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j)
      m.v[size_t(i) * m.cols + j] = iou(anchors[i], gts[j]);
  return m;
}
}  // namespace kernels::par

IouMatrix iou_matrix(const std::vector<Box>& anchors, const std::vector<Box>& gts) {
  return kernels::par::iou_matrix(anchors, gts);
}

void AnchorConfig::validate() const {
  if (feature_w <= 0 || feature_h <= 0)
    throw std::invalid_argument("AnchorConfig: feature dims must be positive");
  if (stride <= 0) throw std::invalid_argument("AnchorConfig: stride must be positive");
  if (scales.empty()) throw std::invalid_argument("AnchorConfig: scales must be non-empty");
  for (double s : scales)
    if (s <= 0) throw std::invalid_argument("AnchorConfig: scales must be positive");
}

std::vector<Box> generate_anchors(const AnchorConfig& cfg) {
  cfg.validate();
  std::vector<Box> out;
  out.reserve(size_t(cfg.num_anchors()));
  for (int i = 0; i < cfg.feature_h; ++i)
    for (int j = 0; j < cfg.feature_w; ++j) {
      const double cx = (j + 0.5) * cfg.stride;
      const double cy = (i + 0.5) * cfg.stride;
      for (double s : cfg.scales) {
        const double half = 0.5 * s * cfg.stride;
        Box b{cx - half, cy - half, cx + half, cy + half};
        if (cfg.clip_to_image) {
          b.x1 = std::clamp(b.x1, 0.0, cfg.image_w());
          b.x2 = std::clamp(b.x2, 0.0, cfg.image_w());
          b.y1 = std::clamp(b.y1, 0.0, cfg.image_h());
          b.y2 = std::clamp(b.y2, 0.0, cfg.image_h());
        }
        out.push_back(b);
      }
    }
  return out;
}

}  // namespace pbsdet
