#include "pbsdet/inference.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "pbsdet/assignment.hpp"
#include "pbsdet/loss.hpp"

namespace pbsdet {

std::vector<Detection> decode_outputs(const Tensor<float>& cls_map,
                                      const Tensor<float>& reg_map,
                                      const AnchorConfig& cfg, HeadType head,
                                      int image) {
  cfg.validate();
  const int k = cfg.num_scales();
  const int cls_c = head == HeadType::Softmax ? 2 * k : k;
  if (cls_map.h != cfg.feature_h || cls_map.w != cfg.feature_w ||
      cls_map.c != cls_c || reg_map.c != 4 * k || reg_map.h != cls_map.h ||
      reg_map.w != cls_map.w)
    throw std::runtime_error("decode_outputs: map dims disagree with anchor config");

  const std::vector<Box> anchors = generate_anchors(cfg);
  std::vector<Detection> out;
  out.reserve(anchors.size());
  int a = 0;
  for (int i = 0; i < cfg.feature_h; ++i)
    for (int j = 0; j < cfg.feature_w; ++j)
      for (int s = 0; s < k; ++s, ++a) {
        double score;
        if (head == HeadType::PreciseSigmoid) {
          score = sigmoid(double(cls_map.at(image, s, i, j)));
        } else {
          // softmax face probability over (not-face, face) = sigmoid of the
          // logit difference
          const double neg = cls_map.at(image, 2 * s, i, j);
          const double pos = cls_map.at(image, 2 * s + 1, i, j);
          score = sigmoid(pos - neg);
        }
        const std::array<double, 4> t{
            double(reg_map.at(image, 4 * s + 0, i, j)),
            double(reg_map.at(image, 4 * s + 1, i, j)),
            double(reg_map.at(image, 4 * s + 2, i, j)),
            double(reg_map.at(image, 4 * s + 3, i, j))};
        out.push_back({decode_box(anchors[a], t), score, a});
      }
  return out;
}

namespace {

bool score_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.anchor < b.anchor;
}

}  // namespace

std::vector<Detection> top_k(std::vector<Detection> dets, int k) {
  if (k < 0) throw std::invalid_argument("top_k: k >= 0");
  std::sort(dets.begin(), dets.end(), score_order);
  if (int(dets.size()) > k) dets.resize(size_t(k));
  return dets;
}

std::vector<int> nms_keep(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<int> order(dets.size());
  for (size_t i = 0; i < dets.size(); ++i) order[i] = int(i);
  std::sort(order.begin(), order.end(), [&dets](int a, int b) {
    return score_order(dets[a], dets[b]);
  });

  std::vector<int> kept;
  std::vector<char> suppressed(dets.size(), 0);
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const int i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      const int j = order[oj];
      if (!suppressed[j] && iou(dets[i].box, dets[j].box) > iou_threshold)
        suppressed[j] = 1;
    }
  }
  return kept;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<Detection> out;
  for (int i : nms_keep(dets, iou_threshold)) out.push_back(dets[i]);
  return out;
}

std::vector<Detection> detect(DetectorNet<float>& net, const Tensor<float>& image,
                              const AnchorConfig& acfg, const DetectConfig& dcfg) {
  auto maps = net.forward(image, /*cache=*/false);
  std::vector<Detection> dets =
      top_k(decode_outputs(maps.cls, maps.reg, acfg, net.arch.head), dcfg.top_k);
  std::erase_if(dets, [&dcfg](const Detection& d) { return d.score < dcfg.score_floor; });
  return nms(dets, dcfg.nms_threshold);
}

void write_detections_csv(
    std::ostream& os,
    const std::vector<std::pair<std::string, std::vector<Detection>>>& per_image) {
  os << "image_id,x1,y1,x2,y2,score\n";
  os.precision(9);
  for (const auto& [id, dets] : per_image)
    for (const Detection& d : dets)
      os << id << "," << d.box.x1 << "," << d.box.y1 << "," << d.box.x2 << ","
         << d.box.y2 << "," << d.score << "\n";
}

std::vector<std::pair<std::string, std::vector<Detection>>> read_detections_csv(
    std::istream& is) {
  std::vector<std::pair<std::string, std::vector<Detection>>> out;
  std::map<std::string, size_t> index;
  std::string line;
  if (!std::getline(is, line) || line.rfind("image_id,", 0) != 0)
    throw std::runtime_error("detections CSV: missing header");
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, field;
    if (!std::getline(ls, id, ',')) continue;
    double vals[5];
    for (int i = 0; i < 5; ++i) {
      if (!std::getline(ls, field, ','))
        throw std::runtime_error("detections CSV: short row at line " +
                                 std::to_string(line_no));
      vals[i] = std::stod(field);
    }
    auto it = index.find(id);
    if (it == index.end()) {
      index.emplace(id, out.size());
      out.push_back({id, {}});
      it = index.find(id);
    }
    out[it->second].second.push_back(
        {Box{vals[0], vals[1], vals[2], vals[3]}, vals[4], -1});
  }
  return out;
}

}  // namespace pbsdet
