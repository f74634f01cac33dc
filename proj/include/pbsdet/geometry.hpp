#pragma once

#include <vector>

namespace pbsdet {

// Axis-aligned rectangle in continuous pixel coordinates (no +1 convention).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 >= x1 && y2 >= y1; }

  bool operator==(const Box&) const = default;
};

double area(const Box& b);

// Intersection over union in [0,1]; 0 when the union has zero area.
double iou(const Box& a, const Box& b);

// Dense m x n IoU table, row-major; entry (i,j) = iou(anchors[i], gts[j]).
struct IouMatrix {
  int rows = 0, cols = 0;
  std::vector<double> v;
  double operator()(int i, int j) const { return v[size_t(i) * cols + j]; }
};

IouMatrix iou_matrix(const std::vector<Box>& anchors, const std::vector<Box>& gts);

// Square 1:1 anchors tiled over a feature-map grid. For cell (i,j) and scale
// s the anchor is a side s*stride box centered at ((j+0.5)*stride,
// (i+0.5)*stride). Ordering: row-major over cells, then scales within a cell.
struct AnchorConfig {
  int feature_w = 0;
  int feature_h = 0;
  double stride = 16.0;
  std::vector<double> scales{4, 8, 16, 32};
  // Anchors crossing the image border are kept and labeled normally by
  // default; set to clamp them to [0, feature*stride] instead.
  bool clip_to_image = false;

  int num_scales() const { return int(scales.size()); }
  int num_anchors() const { return feature_w * feature_h * num_scales(); }
  double image_w() const { return feature_w * stride; }
  double image_h() const { return feature_h * stride; }
  void validate() const;  // throws std::invalid_argument
};

std::vector<Box> generate_anchors(const AnchorConfig& cfg);

}  // namespace pbsdet
