#include "pbsdet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pbsdet/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pbsdet {

void SceneSpec::validate() const {
  if (width < 8 || height < 8) throw std::invalid_argument("SceneSpec: image too small");
  if (min_targets < 0 || max_targets < min_targets)
    throw std::invalid_argument("SceneSpec: bad target count range");
  if (min_scale < 4 || max_scale < min_scale)
    throw std::invalid_argument("SceneSpec: bad scale range");
  if (max_scale >= std::min(width, height))
    throw std::invalid_argument("SceneSpec: max_scale exceeds image");
  if (distractors < 0) throw std::invalid_argument("SceneSpec: distractors < 0");
}

namespace {

struct Painter {
  int w, h;
  std::vector<uint8_t>& px;

  void set(int x, int y, uint8_t v) {
    if (x >= 0 && x < w && y >= 0 && y < h) px[size_t(y) * w + x] = v;
  }

  // Tracks the painted extent so the gt box is tight by construction.
  struct Extent {
    int min_x = 1 << 30, min_y = 1 << 30, max_x = -1, max_y = -1;
    void add(int x, int y) {
      min_x = std::min(min_x, x);
      min_y = std::min(min_y, y);
      max_x = std::max(max_x, x);
      max_y = std::max(max_y, y);
    }
    bool any() const { return max_x >= 0; }
    Box box() const { return {double(min_x), double(min_y), double(max_x + 1), double(max_y + 1)}; }
  };

  Extent fill_ellipse(int cx, int cy, int rx, int ry, uint8_t v) {
    Extent e;
    for (int y = cy - ry; y <= cy + ry; ++y)
      for (int x = cx - rx; x <= cx + rx; ++x) {
        const long long dx = x - cx, dy = y - cy;
        if (dx * dx * (long long)ry * ry + dy * dy * (long long)rx * rx <=
            (long long)rx * rx * ry * ry) {
          set(x, y, v);
          e.add(x, y);
        }
      }
    return e;
  }

  void fill_disc(int cx, int cy, int r, uint8_t v) {
    for (int y = cy - r; y <= cy + r; ++y)
      for (int x = cx - r; x <= cx + r; ++x)
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) set(x, y, v);
  }

  void fill_rect(int x0, int y0, int bw, int bh, uint8_t v) {
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) set(x, y, v);
  }

  void fill_triangle(int x0, int y0, int bw, int bh, uint8_t v) {
    // isoceles, apex up
    for (int y = 0; y < bh; ++y) {
      const int half = (bw * (y + 1)) / (2 * bh);
      for (int x = bw / 2 - half; x <= bw / 2 + half; ++x) set(x0 + x, y0 + y, v);
    }
  }
};

bool overlaps_any(const Box& b, const std::vector<Box>& placed, double max_iou) {
  for (const Box& p : placed)
    if (iou(b, p) > max_iou) return true;
  return false;
}

}  // namespace

SyntheticScene gen_scene(uint64_t seed, const SceneSpec& spec) {
  spec.validate();
  SyntheticScene scene;
  scene.seed = seed;
  scene.width = spec.width;
  scene.height = spec.height;
  scene.pixels.assign(size_t(spec.width) * spec.height, 0);

  // noise background, independent of draw order
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x)
      scene.pixels[size_t(y) * spec.width + x] =
          uint8_t(16 + hash3(seed, 0x6261636bull, uint64_t(y) * spec.width + x) % 64);

  Painter paint{spec.width, spec.height, scene.pixels};
  Rng rng(mix64(seed ^ 0x5ce9eull));

  const int num_targets = rng.uniform_int(spec.min_targets, spec.max_targets);
  std::vector<Box> placed;

  for (int t = 0; t < num_targets; ++t) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int side = rng.uniform_int(spec.min_scale, spec.max_scale);
      int rx = std::max(2, (side - 1) / 2);
      int ry = rx + rng.uniform_int(-rx / 5, rx / 5);
      ry = std::max(2, ry);
      if (2 * rx + 1 >= spec.width - 2 || 2 * ry + 1 >= spec.height - 2) continue;
      const int cx = rng.uniform_int(rx + 1, spec.width - 2 - rx);
      const int cy = rng.uniform_int(ry + 1, spec.height - 2 - ry);
      const Box candidate{double(cx - rx), double(cy - ry), double(cx + rx + 1),
                          double(cy + ry + 1)};
      if (overlaps_any(candidate, placed, 0.05)) continue;

      const uint8_t body = uint8_t(150 + rng.next_u64() % 70);
      const Painter::Extent e = paint.fill_ellipse(cx, cy, rx, ry, body);
      const int eye_r = std::max(1, rx / 4);
      paint.fill_disc(cx - (rx + 1) / 2, cy - (ry + 2) / 3, eye_r, 30);
      paint.fill_disc(cx + (rx + 1) / 2, cy - (ry + 2) / 3, eye_r, 30);
      if (e.any()) {
        scene.gt_boxes.push_back(e.box());
        placed.push_back(e.box());
      }
      break;
    }
  }

  for (int d = 0; d < spec.distractors; ++d) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int bw = rng.uniform_int(spec.min_scale, spec.max_scale);
      const int bh = rng.uniform_int(spec.min_scale, spec.max_scale);
      if (bw >= spec.width - 2 || bh >= spec.height - 2) continue;
      const int x0 = rng.uniform_int(1, spec.width - 1 - bw);
      const int y0 = rng.uniform_int(1, spec.height - 1 - bh);
      const Box candidate{double(x0), double(y0), double(x0 + bw), double(y0 + bh)};
      if (overlaps_any(candidate, placed, 0.05)) continue;

      const uint8_t v = uint8_t(150 + rng.next_u64() % 70);
      if (rng.next_u64() % 2 == 0)
        paint.fill_rect(x0, y0, bw, bh, v);
      else
        paint.fill_triangle(x0, y0, bw, bh, v);
      placed.push_back(candidate);
      break;
    }
  }

  return scene;
}

Scene to_scene(const SyntheticScene& s, std::string id) {
  Scene out;
  out.id = std::move(id);
  out.image = Tensor<float>(1, 1, s.height, s.width);
  for (size_t i = 0; i < s.pixels.size(); ++i)
    out.image.v[i] = float(s.pixels[i]) / 255.0f;
  out.gts = s.gt_boxes;
  return out;
}

std::vector<Scene> make_synthetic_scenes(uint64_t seed0, int count, const SceneSpec& spec) {
  std::vector<Scene> out;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    const uint64_t seed = seed0 + uint64_t(i);
    out.push_back(to_scene(gen_scene(seed, spec), "scene_" + std::to_string(seed)));
  }
  return out;
}

namespace {

[[noreturn]] void parse_fail(int line, const std::string& msg) {
  throw std::runtime_error("annotation parse error at line " + std::to_string(line) +
                           ": " + msg);
}

struct LineReader {
  std::istringstream in;
  int line_no = 0;
  explicit LineReader(const std::string& text) : in(text) {}

  bool next(std::string& out) {
    while (std::getline(in, out)) {
      ++line_no;
      if (!out.empty() && out.back() == '\r') out.pop_back();
      return true;
    }
    return false;
  }
};

}  // namespace

std::vector<AnnotationRecord> parse_wider(const std::string& text) {
  std::vector<AnnotationRecord> records;
  LineReader r(text);
  std::string line;
  while (r.next(line)) {
    if (line.empty()) continue;
    AnnotationRecord rec;
    rec.image = line;
    if (!r.next(line)) parse_fail(r.line_no + 1, "expected face count");
    long long count = 0;
    try {
      size_t pos = 0;
      count = std::stoll(line, &pos);
      if (pos != line.size() || count < 0) throw std::invalid_argument("");
    } catch (...) {
      parse_fail(r.line_no, "bad face count '" + line + "'");
    }
    if (count == 0) {
      // zero-face records still carry one placeholder line
      if (!r.next(line)) parse_fail(r.line_no + 1, "expected placeholder line");
    }
    for (long long i = 0; i < count; ++i) {
      if (!r.next(line)) parse_fail(r.line_no + 1, "expected box line");
      std::istringstream ls(line);
      long long x, y, w, h;
      if (!(ls >> x >> y >> w >> h)) parse_fail(r.line_no, "expected 'x y w h ...'");
      if (w < 0 || h < 0) parse_fail(r.line_no, "negative box dims");
      std::vector<long long> attrs;
      long long a;
      while (ls >> a) attrs.push_back(a);
      rec.boxes.push_back({double(x), double(y), double(x + w), double(y + h)});
      rec.attrs.push_back(std::move(attrs));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::string serialize_wider(const std::vector<AnnotationRecord>& records) {
  std::ostringstream os;
  for (const auto& rec : records) {
    os << rec.image << "\n" << rec.boxes.size() << "\n";
    if (rec.boxes.empty()) {
      os << "0 0 0 0 0 0 0 0 0 0\n";
      continue;
    }
    for (size_t i = 0; i < rec.boxes.size(); ++i) {
      const Box& b = rec.boxes[i];
      os << (long long)b.x1 << " " << (long long)b.y1 << " "
         << (long long)(b.x2 - b.x1) << " " << (long long)(b.y2 - b.y1);
      if (i < rec.attrs.size())
        for (long long a : rec.attrs[i]) os << " " << a;
      os << "\n";
    }
  }
  return os.str();
}

Box ellipse_to_box(double major_r, double minor_r, double angle, double cx, double cy) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double hw = std::sqrt(major_r * major_r * c * c + minor_r * minor_r * s * s);
  const double hh = std::sqrt(major_r * major_r * s * s + minor_r * minor_r * c * c);
  return {cx - hw, cy - hh, cx + hw, cy + hh};
}

std::vector<AnnotationRecord> parse_fddb(const std::string& text) {
  std::vector<AnnotationRecord> records;
  LineReader r(text);
  std::string line;
  while (r.next(line)) {
    if (line.empty()) continue;
    AnnotationRecord rec;
    rec.image = line;
    if (!r.next(line)) parse_fail(r.line_no + 1, "expected ellipse count");
    long long count = 0;
    try {
      size_t pos = 0;
      count = std::stoll(line, &pos);
      if (pos != line.size() || count < 0) throw std::invalid_argument("");
    } catch (...) {
      parse_fail(r.line_no, "bad ellipse count '" + line + "'");
    }
    for (long long i = 0; i < count; ++i) {
      if (!r.next(line)) parse_fail(r.line_no + 1, "expected ellipse line");
      std::istringstream ls(line);
      double major, minor, angle, cx, cy, label;
      if (!(ls >> major >> minor >> angle >> cx >> cy >> label))
        parse_fail(r.line_no, "expected 'major_r minor_r angle cx cy 1'");
      if (major < 0 || minor < 0) parse_fail(r.line_no, "negative radius");
      rec.boxes.push_back(ellipse_to_box(major, minor, angle, cx, cy));
      rec.attrs.emplace_back();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_pgm(const std::string& path, int w, int h, const std::vector<uint8_t>& pixels) {
  if (pixels.size() != size_t(w) * h)
    throw std::invalid_argument("write_pgm: pixel count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

void read_pgm(const std::string& path, int& w, int& h, std::vector<uint8_t>& pixels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image: " + path);
  std::string magic;
  int maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("unsupported PGM header in " + path);
  is.get();  // single whitespace after header
  pixels.resize(size_t(w) * h);
  if (!is.read(reinterpret_cast<char*>(pixels.data()), std::streamsize(pixels.size())))
    throw std::runtime_error("truncated PGM data in " + path);
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  json j = json::array();
  for (const auto& e : entries) {
    json boxes = json::array();
    for (const Box& b : e.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    j.push_back({{"image", e.image}, {"boxes", boxes}});
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("bad manifest JSON in " + path + ": " + e.what());
  }
  if (!j.is_array()) throw std::runtime_error("manifest must be a JSON array: " + path);
  std::vector<ManifestEntry> out;
  for (const auto& item : j) {
    ManifestEntry e;
    e.image = item.at("image").get<std::string>();
    for (const auto& b : item.at("boxes")) {
      if (!b.is_array() || b.size() != 4)
        throw std::runtime_error("manifest box must be [x1,y1,x2,y2]: " + path);
      e.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                         b[3].get<double>()});
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Scene> load_scenes(const std::string& manifest_path) {
  const auto entries = load_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<Scene> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    const std::string img_path = (base / e.image).string();
    int w = 0, h = 0;
    std::vector<uint8_t> px;
    read_pgm(img_path, w, h, px);
    Scene s;
    s.id = e.image;
    s.image = Tensor<float>(1, 1, h, w);
    for (size_t i = 0; i < px.size(); ++i) s.image.v[i] = float(px[i]) / 255.0f;
    s.gts = e.boxes;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace pbsdet
