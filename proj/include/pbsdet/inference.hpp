#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pbsdet/geometry.hpp"
#include "pbsdet/net.hpp"

namespace pbsdet {

struct Detection {
  Box box;
  double score = 0.0;  // in [0,1]
  int anchor = -1;     // source anchor index; breaks score ties
};

// One Detection per anchor, in anchor order: score from the cls map (sigmoid
// of the logit, or the softmax face probability), box from the reg map
// applied to the anchor.
std::vector<Detection> decode_outputs(const Tensor<float>& cls_map,
                                      const Tensor<float>& reg_map,
                                      const AnchorConfig& cfg, HeadType head,
                                      int image = 0);

// k highest scores, descending; ties broken by anchor index.
std::vector<Detection> top_k(std::vector<Detection> dets, int k);

// Greedy NMS: repeatedly keep the highest-scored remaining detection and
// suppress everything with IoU strictly above the threshold against it.
// Returns indices into the input, in kept order.
std::vector<int> nms_keep(const std::vector<Detection>& dets, double iou_threshold);
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

struct DetectConfig {
  int top_k = 300;
  double nms_threshold = 0.3;
  double score_floor = 0.01;  // applied before NMS
};

// forward -> decode -> top_k -> score floor -> NMS on a single image.
std::vector<Detection> detect(DetectorNet<float>& net, const Tensor<float>& image,
                              const AnchorConfig& acfg, const DetectConfig& dcfg = {});

// CSV rows: image_id,x1,y1,x2,y2,score
void write_detections_csv(
    std::ostream& os,
    const std::vector<std::pair<std::string, std::vector<Detection>>>& per_image);

std::vector<std::pair<std::string, std::vector<Detection>>> read_detections_csv(
    std::istream& is);

}  // namespace pbsdet
