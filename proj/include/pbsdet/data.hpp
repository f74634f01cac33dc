#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pbsdet/geometry.hpp"
#include "pbsdet/tensor.hpp"

namespace pbsdet {

// Synthetic detection scene. Targets are filled ellipses with two interior
// dots; distractors are plain rectangles and triangles in the same intensity
// range, so classification has to look at the interior pattern rather than
// brightness alone. Rendering is integer-only on a counter-based RNG and is
// bit-identical across platforms for a given seed.
struct SceneSpec {
  int width = 64, height = 64;
  int min_targets = 1, max_targets = 3;
  int min_scale = 12, max_scale = 28;  // target box side range, px
  int distractors = 2;

  void validate() const;
};

struct SyntheticScene {
  int width = 0, height = 0;
  std::vector<uint8_t> pixels;  // row-major grayscale
  std::vector<Box> gt_boxes;    // tight boxes over rendered target pixels
  uint64_t seed = 0;
};

SyntheticScene gen_scene(uint64_t seed, const SceneSpec& spec);

// Net-ready sample: image normalized to [0,1], shape (1,1,h,w).
struct Scene {
  std::string id;
  Tensor<float> image;
  std::vector<Box> gts;
};

Scene to_scene(const SyntheticScene& s, std::string id);
std::vector<Scene> make_synthetic_scenes(uint64_t seed0, int count, const SceneSpec& spec);

// Annotation files. WIDER-style blocks are a path line, a count line, then
// count lines of "x y w h" plus integer attribute flags (count 0 carries one
// placeholder line). FDDB-style blocks list ellipses as "major_r minor_r
// angle cx cy 1", converted to the axis-aligned bounding box of the rotated
// ellipse.
struct AnnotationRecord {
  std::string image;
  std::vector<Box> boxes;
  std::vector<std::vector<long long>> attrs;  // per box, preserved verbatim
};

std::vector<AnnotationRecord> parse_wider(const std::string& text);
std::string serialize_wider(const std::vector<AnnotationRecord>& records);
std::vector<AnnotationRecord> parse_fddb(const std::string& text);

// Tight axis-aligned extent of an ellipse with half-axes (major_r, minor_r)
// rotated by angle radians: half-width = sqrt((a cos t)^2 + (b sin t)^2),
// half-height likewise with sin/cos swapped.
Box ellipse_to_box(double major_r, double minor_r, double angle, double cx, double cy);

// Binary PGM (P5), maxval 255.
void write_pgm(const std::string& path, int w, int h, const std::vector<uint8_t>& pixels);
void read_pgm(const std::string& path, int& w, int& h, std::vector<uint8_t>& pixels);

// Manifest JSON: list of {"image": relative path, "boxes": [[x1,y1,x2,y2],..]}.
struct ManifestEntry {
  std::string image;
  std::vector<Box> boxes;
};

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::string& path);

// Loads every manifest image (paths resolved against the manifest's
// directory) in manifest order.
std::vector<Scene> load_scenes(const std::string& manifest_path);

}  // namespace pbsdet
