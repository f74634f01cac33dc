#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "pbsdet/eval.hpp"
#include "pbsdet/rng.hpp"

using namespace pbsdet;

namespace {

Detection det(double x, double y, double side, double score, int idx = -1) {
  return {{x, y, x + side, y + side}, score, idx};
}

// random one-image dataset with a controllable hit fraction
void random_case(Rng& rng, std::vector<std::vector<Detection>>& dets,
                 std::vector<std::vector<Box>>& gts, int images = 3) {
  dets.assign(size_t(images), {});
  gts.assign(size_t(images), {});
  for (int img = 0; img < images; ++img) {
    const int ng = rng.uniform_int(1, 4);
    for (int g = 0; g < ng; ++g) {
      const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
      const Box gt{x, y, x + rng.uniform(8, 20), y + rng.uniform(8, 20)};
      gts[size_t(img)].push_back(gt);
      if (rng.next_unit() < 0.7)  // near hit
        dets[size_t(img)].push_back(
            {{gt.x1 + rng.uniform(-2, 2), gt.y1 + rng.uniform(-2, 2),
              gt.x2 + rng.uniform(-2, 2), gt.y2 + rng.uniform(-2, 2)},
             rng.next_unit(),
             int(dets[size_t(img)].size())});
    }
    const int nf = rng.uniform_int(0, 4);  // far misses
    for (int f = 0; f < nf; ++f)
      dets[size_t(img)].push_back(det(rng.uniform(200, 300), rng.uniform(200, 300),
                                      rng.uniform(5, 15), rng.next_unit(),
                                      int(dets[size_t(img)].size())));
  }
}

}  // namespace

TEST_CASE("match: exact hits, no overlap, one-to-one") {
  const std::vector<Box> gts{{0, 0, 10, 10}, {20, 20, 30, 30}};
  std::vector<Detection> dets{det(0, 0, 10, 0.9, 0), det(20, 20, 10, 0.8, 1)};
  auto m = match(dets, gts);
  CHECK(m == std::vector<char>{1, 1});

  dets = {det(50, 50, 10, 0.9, 0)};
  m = match(dets, gts);
  CHECK(m == std::vector<char>{0});

  // two detections on the same gt: only the higher-ranked one matches
  dets = {det(0, 0, 10, 0.9, 0), det(0.5, 0.5, 10, 0.8, 1)};
  m = match(dets, gts);
  CHECK(m == std::vector<char>{1, 0});
}

TEST_CASE("match: greedy order follows scores, obeys the IoU minimum") {
  const std::vector<Box> gts{{0, 0, 10, 10}};
  // IoU just below 0.5 must not match
  const Box weak{5, 0, 15, 10};  // inter 50 union 150 -> 1/3
  CHECK(match({{weak, 0.9, 0}}, gts) == std::vector<char>{0});
  CHECK(match({{weak, 0.9, 0}}, gts, 0.3) == std::vector<char>{1});
}

TEST_CASE("match is one-to-one on random cases") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<Box>> gts;
    random_case(rng, dets, gts, 1);
    auto sorted = dets[0];
    std::sort(sorted.begin(), sorted.end(),
              [](auto& a, auto& b) { return a.score > b.score; });
    const auto m = match(sorted, gts[0]);
    long long matched = 0;
    for (char f : m) matched += f;
    CHECK(matched <= (long long)gts[0].size());
  }
}

TEST_CASE("tpr_at_fp: perfect detector and all-miss detector") {
  std::vector<std::vector<Box>> gts{{{0, 0, 10, 10}, {20, 20, 30, 30}}};
  std::vector<std::vector<Detection>> perfect{
      {det(0, 0, 10, 0.9, 0), det(20, 20, 10, 0.8, 1)}};
  CHECK(tpr_at_fp(perfect, gts, {0}) == std::vector<double>{1.0});

  std::vector<std::vector<Detection>> misses{
      {det(50, 50, 5, 0.9, 0), det(70, 70, 5, 0.8, 1)}};
  const auto t = tpr_at_fp(misses, gts, {0, 1, 2, 100});
  for (double v : t) CHECK(v == 0.0);
}

TEST_CASE("tpr_at_fp: hand-walked 10-detection sweep") {
  // one image, 4 gts; detections sorted by score:
  //   0.95 TP, 0.90 FP, 0.85 TP, 0.80 FP, 0.75 FP, 0.70 TP, 0.65 FP,
  //   0.60 FP, 0.55 TP, 0.50 FP
  // cumulative (tp, fp): (1,0)(1,1)(2,1)(2,2)(2,3)(3,3)(3,4)(3,5)(4,5)(4,6)
  std::vector<Box> g{{0, 0, 10, 10}, {20, 0, 30, 10}, {40, 0, 50, 10}, {60, 0, 70, 10}};
  std::vector<Detection> d{
      det(0, 0, 10, 0.95, 0),  det(100, 100, 10, 0.90, 1), det(20, 0, 10, 0.85, 2),
      det(110, 100, 10, 0.80, 3), det(120, 100, 10, 0.75, 4), det(40, 0, 10, 0.70, 5),
      det(130, 100, 10, 0.65, 6), det(140, 100, 10, 0.60, 7), det(60, 0, 10, 0.55, 8),
      det(150, 100, 10, 0.50, 9)};
  const auto t = tpr_at_fp({d}, {g}, {0, 1, 2, 3, 4, 5, 6, 7});
  const std::vector<double> expect{0.25, 0.5, 0.5, 0.75, 0.75, 1.0, 1.0, 1.0};
  REQUIRE(t.size() == expect.size());
  for (size_t i = 0; i < t.size(); ++i) CHECK(t[i] == doctest::Approx(expect[i]));
}

TEST_CASE("tpr curves are monotone in the budget") {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<Box>> gts;
    random_case(rng, dets, gts);
    const auto curve = tpr_at_fp(dets, gts, {0, 1, 2, 3, 5, 8, 13, 100});
    for (size_t i = 1; i < curve.size(); ++i) CHECK(curve[i] >= curve[i - 1]);
  }
}

TEST_CASE("average_precision: perfect 1, all-miss 0, staircase hand value") {
  std::vector<std::vector<Box>> gts{{{0, 0, 10, 10}, {20, 20, 30, 30}}};
  CHECK(average_precision({{det(0, 0, 10, 0.9, 0), det(20, 20, 10, 0.8, 1)}}, gts) ==
        doctest::Approx(1.0));
  CHECK(average_precision({{det(50, 50, 5, 0.9, 0)}}, gts) == doctest::Approx(0.0));

  // 6 detections, 3 gts, pattern TP FP TP TP FP FP by descending score:
  // precisions at TPs: 1, 2/3, 3/4; envelope: 1, 3/4, 3/4
  // AP = (1/3)(1) + (1/3)(3/4) + (1/3)(3/4) = 5/6
  std::vector<Box> g{{0, 0, 10, 10}, {20, 0, 30, 10}, {40, 0, 50, 10}};
  std::vector<Detection> d{det(0, 0, 10, 0.9, 0),   det(100, 100, 10, 0.8, 1),
                           det(20, 0, 10, 0.7, 2),  det(40, 0, 10, 0.6, 3),
                           det(110, 100, 10, 0.5, 4), det(120, 100, 10, 0.4, 5)};
  CHECK(average_precision({d}, {g}) == doctest::Approx(5.0 / 6.0));

  CHECK_THROWS(average_precision({{}}, {{}}));  // zero gts
}

TEST_CASE("AP is invariant under strictly increasing score transforms") {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<Box>> gts;
    random_case(rng, dets, gts);
    const double ap = average_precision(dets, gts);
    for (auto& img : dets)
      for (auto& d : img) d.score = 0.05 + 0.9 * d.score * d.score;
    CHECK(average_precision(dets, gts) == doctest::Approx(ap).epsilon(1e-12));
  }
}

TEST_CASE("duplicating every detection at lower score never increases AP") {
  Rng rng(13);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<Box>> gts;
    random_case(rng, dets, gts);
    const double ap = average_precision(dets, gts);
    auto dup = dets;
    for (size_t img = 0; img < dets.size(); ++img)
      for (const auto& d : dets[img]) {
        Detection copy = d;
        copy.score *= 0.5;
        copy.anchor = int(dup[img].size());
        dup[img].push_back(copy);
      }
    CHECK(average_precision(dup, gts) <= ap + 1e-12);
  }
}

TEST_CASE("evaluate: curve CSV shape and per-image recall") {
  std::vector<std::vector<Box>> gts{{{0, 0, 10, 10}}, {{0, 0, 10, 10}}};
  std::vector<std::vector<Detection>> dets{{det(0, 0, 10, 0.9, 0)}, {}};
  const EvalResult r = evaluate(dets, gts, {10});
  CHECK(r.per_image_recall[0] == doctest::Approx(1.0));
  CHECK(r.per_image_recall[1] == doctest::Approx(0.0));
  CHECK(r.tpr_at[0] == doctest::Approx(0.5));

  std::ostringstream os;
  write_curve_csv(os, r);
  CHECK(os.str().rfind("threshold,cum_fp,tpr,precision,recall\n", 0) == 0);
}
