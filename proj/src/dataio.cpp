#include "lrr/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lrr/ops.hpp"
#include "lrr/rng.hpp"

namespace fs = std::filesystem;

namespace lrr {

void validate_labels(const LabelMap& map, std::size_t num_classes) {
  if (map.labels.size() != map.height * map.width)
    throw ShapeError("label map storage does not match its extents");
  for (std::uint8_t l : map.labels)
    if (l != kVoidLabel && l >= num_classes)
      throw std::invalid_argument("label " + std::to_string(l) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
}

// ---- shapes ------------------------------------------------------------------

namespace {

// Offset rotated into the canonical frame of an oriented shape.
std::pair<std::int64_t, std::int64_t> canonical(const PlacedShape& s, int x, int y) {
  const std::int64_t dx = x - s.cx;
  const std::int64_t dy = y - s.cy;
  switch (s.orient & 3) {
    case 1: return {dy, -dx};
    case 2: return {dx, -dy};
    case 3: return {-dy, dx};
    default: return {dx, dy};
  }
}

bool swaps_axes(const PlacedShape& s) {
  return (s.kind == ShapeKind::Triangle || s.kind == ShapeKind::Ellipse) && (s.orient & 1);
}

int half_x(const PlacedShape& s) { return swaps_axes(s) ? s.b : s.a; }
int half_y(const PlacedShape& s) { return swaps_axes(s) ? s.a : s.b; }

constexpr std::array<std::array<double, 3>, kShapeKinds> kPalette{{
    {0.85, 0.22, 0.20},
    {0.20, 0.75, 0.28},
    {0.20, 0.35, 0.90},
    {0.92, 0.82, 0.18},
    {0.80, 0.28, 0.85},
    {0.18, 0.85, 0.85},
}};

}  // namespace

bool shape_contains(const PlacedShape& s, int x, int y) {
  const std::int64_t a = s.a;
  const std::int64_t b = s.b;
  switch (s.kind) {
    case ShapeKind::Disk: {
      const std::int64_t dx = x - s.cx, dy = y - s.cy;
      return dx * dx + dy * dy <= a * a;
    }
    case ShapeKind::Rectangle:
      return std::abs(x - s.cx) <= s.a && std::abs(y - s.cy) <= s.b;
    case ShapeKind::Triangle: {
      // Apex at (0, -b), base from (-a, b) to (a, b) in the canonical frame.
      const auto [u, v] = canonical(s, x, y);
      return v <= b && 2 * b * std::abs(u) <= a * (v + b);
    }
    case ShapeKind::Diamond: {
      const std::int64_t dx = std::abs(x - s.cx), dy = std::abs(y - s.cy);
      return b * dx + a * dy <= a * b;
    }
    case ShapeKind::Ellipse: {
      const auto [u, v] = canonical(s, x, y);
      return u * u * b * b + v * v * a * a <= a * a * b * b;
    }
    case ShapeKind::Cross: {
      const std::int64_t dx = std::abs(x - s.cx), dy = std::abs(y - s.cy);
      return (dx <= b && dy <= a) || (dy <= b && dx <= a);
    }
  }
  return false;
}

std::size_t paint_shape(LabelMap& map, const PlacedShape& s) {
  std::size_t painted = 0;
  const int hx = half_x(s), hy = half_y(s);
  const int y0 = std::max(0, s.cy - hy), y1 = std::min<int>(int(map.height) - 1, s.cy + hy);
  const int x0 = std::max(0, s.cx - hx), x1 = std::min<int>(int(map.width) - 1, s.cx + hx);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (shape_contains(s, x, y)) {
        map.at(y, x) = s.label;
        ++painted;
      }
  return painted;
}

std::vector<Sample> generate_shapes(const ShapesOptions& opts) {
  if (opts.size == 0 || opts.size % 32 != 0)
    throw std::invalid_argument("generate_shapes: size must be a positive multiple of 32");
  if (opts.num_classes < 2 || opts.num_classes > kShapeKinds + 1)
    throw std::invalid_argument("generate_shapes: num_classes must be in [2, " +
                                std::to_string(kShapeKinds + 1) + "]");
  const int size = static_cast<int>(opts.size);
  const int gap = 2;
  std::vector<Sample> out;
  out.reserve(opts.n);
  for (std::size_t i = 0; i < opts.n; ++i) {
    CounterRng rng(opts.seed, opts.first_index + i);
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "shape_%05zu", static_cast<std::size_t>(opts.first_index + i));
    s.id = id;
    s.truth = LabelMap(opts.size, opts.size, 0);

    int wanted = static_cast<int>(rng.uniform_int(1, opts.max_shapes));
    if (opts.background_only_prob > 0 && rng.uniform() < opts.background_only_prob) wanted = 0;

    const int r_lo = std::max(2, size / 12);
    const int r_hi = std::max(r_lo, size / 5);
    for (int k = 0; k < wanted; ++k) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        PlacedShape p;
        p.label = static_cast<std::uint8_t>(rng.uniform_int(1, std::int64_t(opts.num_classes) - 1));
        p.kind = static_cast<ShapeKind>(p.label - 1);
        const int r = static_cast<int>(rng.uniform_int(r_lo, r_hi));
        p.orient = static_cast<int>(rng.uniform_int(0, 3));
        switch (p.kind) {
          case ShapeKind::Disk: p.a = p.b = r; break;
          case ShapeKind::Rectangle:
            p.a = static_cast<int>(rng.uniform_int(r / 2, r));
            p.b = static_cast<int>(rng.uniform_int(r / 2, r));
            break;
          case ShapeKind::Triangle: p.a = p.b = r; break;
          case ShapeKind::Diamond: p.a = r; p.b = static_cast<int>(rng.uniform_int(2 * r / 3, r)); break;
          case ShapeKind::Ellipse: p.a = r; p.b = static_cast<int>(rng.uniform_int(r / 2, 3 * r / 4)); break;
          case ShapeKind::Cross: p.a = r; p.b = std::max(2, r / 3); break;
        }
        const int hx = half_x(p), hy = half_y(p);
        if (2 * hx + 3 > size || 2 * hy + 3 > size) continue;
        p.cx = static_cast<int>(rng.uniform_int(hx + 1, size - 2 - hx));
        p.cy = static_cast<int>(rng.uniform_int(hy + 1, size - 2 - hy));
        const bool overlaps = std::any_of(s.shapes.begin(), s.shapes.end(), [&](const PlacedShape& q) {
          return std::abs(p.cx - q.cx) <= hx + half_x(q) + gap &&
                 std::abs(p.cy - q.cy) <= hy + half_y(q) + gap;
        });
        if (overlaps) continue;
        s.shapes.push_back(p);
        break;
      }
    }

    std::vector<std::array<double, 3>> colours;
    const double grey = rng.uniform(0.3, 0.6);
    std::array<double, 3> background{};
    for (auto& v : background) v = grey + rng.uniform(-0.05, 0.05);
    for (const auto& p : s.shapes) {
      std::array<double, 3> c = kPalette[(p.label - 1) % kShapeKinds];
      for (auto& v : c) v = std::clamp(v + rng.uniform(-0.12, 0.12), 0.0, 1.0);
      colours.push_back(c);
    }

    // Paint shape indices (1-based) to pick colours, labels into the truth map.
    LabelMap index(opts.size, opts.size, 0);
    for (std::size_t k = 0; k < s.shapes.size(); ++k) {
      PlacedShape tagged = s.shapes[k];
      tagged.label = static_cast<std::uint8_t>(k + 1);
      paint_shape(index, tagged);
      paint_shape(s.truth, s.shapes[k]);
    }

    s.image = TensorF({3, opts.size, opts.size});
    for (std::size_t y = 0; y < opts.size; ++y)
      for (std::size_t x = 0; x < opts.size; ++x) {
        const std::uint8_t k = index.at(y, x);
        const auto& c = k ? colours[k - 1] : background;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double v = c[ch] + opts.noise_sigma * rng.normal();
          s.image.at(ch, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> generate_shapes(std::size_t n, std::size_t size, std::size_t num_classes,
                                    std::uint64_t seed) {
  ShapesOptions o;
  o.n = n;
  o.size = size;
  o.num_classes = num_classes;
  o.seed = seed;
  return generate_shapes(o);
}

// ---- augmentation ------------------------------------------------------------

void AugmentSpec::validate() const {
  if (min_size > max_size) throw std::invalid_argument("augment: min_size > max_size");
  if (crop == 0 || crop % 32 != 0) throw std::invalid_argument("augment: crop must be a positive multiple of 32");
  if ((max_size / 32) * 32 < std::max<std::size_t>(32, min_size))
    throw std::invalid_argument("augment: no multiple of 32 in [min_size, max_size]");
}

std::size_t augment_size(const AugmentSpec& spec, std::uint64_t draw) {
  spec.validate();
  const std::size_t lo = std::max<std::size_t>(1, (spec.min_size + 31) / 32);
  const std::size_t hi = spec.max_size / 32;
  CounterRng rng(spec.seed, draw);
  return 32 * static_cast<std::size_t>(rng.uniform_int(std::int64_t(lo), std::int64_t(hi)));
}

LabelMap resize_nearest(const LabelMap& map, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_nearest: empty output");
  LabelMap out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(map.height - 1, ((2 * y + 1) * map.height) / (2 * out_h));
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(map.width - 1, ((2 * x + 1) * map.width) / (2 * out_w));
      out.at(y, x) = map.at(sy, sx);
    }
  }
  return out;
}

Sample augment_to_size(const Sample& sample, std::size_t size, std::size_t crop, std::uint64_t draw) {
  const std::size_t h = sample.truth.height, w = sample.truth.width;
  std::size_t out_h = size, out_w = size;
  auto snap = [](double v) { return std::max<std::size_t>(32, static_cast<std::size_t>(std::lround(v / 32.0)) * 32); };
  if (h > w) out_w = snap(static_cast<double>(size) * double(w) / double(h));
  if (w > h) out_h = snap(static_cast<double>(size) * double(h) / double(w));

  Sample r;
  r.id = sample.id;
  r.image = bilinear_resize(sample.image, out_h, out_w);
  r.truth = resize_nearest(sample.truth, out_h, out_w);

  const std::size_t ch = std::min(out_h, crop), cw = std::min(out_w, crop);
  if (ch == out_h && cw == out_w) return r;
  CounterRng rng(draw);
  const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(out_h - ch)));
  const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(out_w - cw)));
  Sample c;
  c.id = sample.id;
  c.image = TensorF({3, ch, cw});
  c.truth = LabelMap(ch, cw);
  for (std::size_t y = 0; y < ch; ++y)
    for (std::size_t x = 0; x < cw; ++x) {
      c.truth.at(y, x) = r.truth.at(y0 + y, x0 + x);
      for (std::size_t k = 0; k < 3; ++k) c.image.at(k, y, x) = r.image.at(k, y0 + y, x0 + x);
    }
  return c;
}

Sample augment(const Sample& sample, const AugmentSpec& spec, std::uint64_t draw) {
  const std::size_t size = augment_size(spec, draw);
  return augment_to_size(sample, size, spec.crop, derive_stream(spec.seed ^ 0xA5A5A5A5ull, draw));
}

// ---- patches -----------------------------------------------------------------

double patch_coverage(std::span<const float> patch) {
  if (patch.empty()) return 0.0;
  double sum = 0;
  for (float v : patch) sum += v;
  return sum / static_cast<double>(patch.size());
}

PatchSet extract_class_patches(std::span<const Sample> samples, std::uint8_t class_id,
                               std::size_t count, std::size_t patch, double min_coverage,
                               std::uint64_t seed, std::size_t max_draws) {
  PatchSet set;
  set.class_id = class_id;
  set.patch = patch;
  if (patch == 0) throw std::invalid_argument("extract_class_patches: patch must be >= 1");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].truth.height >= patch && samples[i].truth.width >= patch) usable.push_back(i);
  if (usable.empty() || count == 0) return set;
  if (max_draws == 0) max_draws = 50 * count;

  CounterRng rng(seed, class_id);
  std::vector<float> buf(patch * patch);
  while (set.patches.size() < count && set.draws < max_draws) {
    ++set.draws;
    const Sample& s = samples[usable[rng.uniform_int(0, std::int64_t(usable.size()) - 1)]];
    const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(s.truth.height - patch)));
    const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(s.truth.width - patch)));
    for (std::size_t y = 0; y < patch; ++y)
      for (std::size_t x = 0; x < patch; ++x)
        buf[y * patch + x] = s.truth.at(y0 + y, x0 + x) == class_id ? 1.0f : 0.0f;
    if (patch_coverage(buf) >= min_coverage) set.patches.emplace_back(Shape{patch, patch}, buf);
  }
  return set;
}

// ---- PPM / PGM -----------------------------------------------------------------

namespace {

std::string next_token(std::istream& is, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw FormatError(path + ": malformed header");
  return tok;
}

struct NetpbmHeader {
  std::size_t width, height;
};

NetpbmHeader read_header(std::istream& is, const std::string& path, const char* magic) {
  if (next_token(is, path) != magic) throw FormatError(path + ": expected " + magic + " magic");
  NetpbmHeader h{};
  try {
    h.width = std::stoul(next_token(is, path));
    h.height = std::stoul(next_token(is, path));
    if (std::stoul(next_token(is, path)) != 255) throw FormatError(path + ": maxval must be 255");
  } catch (const std::logic_error&) {
    throw FormatError(path + ": malformed header");
  }
  if (h.width == 0 || h.height == 0) throw FormatError(path + ": empty image");
  return h;
}

}  // namespace

void write_image_ppm(const std::string& path, const TensorF& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) throw ShapeError("write_image_ppm: expected 3 x H x W");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> buf(3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        buf[(y * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw FormatError("write failed: " + path);
}

TensorF read_image_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  const NetpbmHeader h = read_header(is, path, "P6");
  std::vector<unsigned char> buf(3 * h.width * h.height);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw FormatError(path + ": truncated payload");
  TensorF image({3, h.height, h.width});
  for (std::size_t y = 0; y < h.height; ++y)
    for (std::size_t x = 0; x < h.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        image.at(c, y, x) = static_cast<float>(buf[(y * h.width + x) * 3 + c]) / 255.0f;
  return image;
}

void write_mask_pgm(const std::string& path, const LabelMap& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << "P5\n" << map.width << ' ' << map.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(map.labels.data()), static_cast<std::streamsize>(map.labels.size()));
  if (!os) throw FormatError("write failed: " + path);
}

LabelMap read_mask_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  const NetpbmHeader h = read_header(is, path, "P5");
  LabelMap map(h.height, h.width);
  if (!is.read(reinterpret_cast<char*>(map.labels.data()), static_cast<std::streamsize>(map.labels.size())))
    throw FormatError(path + ": truncated payload");
  return map;
}

// ---- manifests -------------------------------------------------------------------

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open manifest " + path);
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.id >> e.image_path >> e.mask_path))
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected 'id image_path mask_path'");
    if (fs::path(e.image_path).is_relative()) e.image_path = (base / e.image_path).string();
    if (fs::path(e.mask_path).is_relative()) e.mask_path = (base / e.mask_path).string();
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  for (const auto& e : entries) os << e.id << ' ' << e.image_path << ' ' << e.mask_path << '\n';
}

std::vector<Sample> load_dataset(const std::string& manifest_path) {
  std::vector<Sample> samples;
  for (const auto& e : read_manifest(manifest_path)) {
    Sample s;
    s.id = e.id;
    s.image = read_image_ppm(e.image_path);
    s.truth = read_mask_pgm(e.mask_path);
    if (s.image.dim(1) != s.truth.height || s.image.dim(2) != s.truth.width)
      throw FormatError(e.id + ": image and mask extents differ");
    samples.push_back(std::move(s));
  }
  return samples;
}

std::string write_dataset(const std::string& dir, std::span<const Sample> samples) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  std::vector<ManifestEntry> entries;
  for (const auto& s : samples) {
    ManifestEntry e{s.id, "images/" + s.id + ".ppm", "masks/" + s.id + ".pgm"};
    write_image_ppm((fs::path(dir) / e.image_path).string(), s.image);
    write_mask_pgm((fs::path(dir) / e.mask_path).string(), s.truth);
    entries.push_back(std::move(e));
  }
  const std::string manifest = (fs::path(dir) / "manifest.txt").string();
  write_manifest(manifest, entries);
  return manifest;
}

}  // namespace lrr
