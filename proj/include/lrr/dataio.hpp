#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lrr/tensor.hpp"

namespace lrr {

inline constexpr std::uint8_t kVoidLabel = 255;

/// Per-pixel class indices; kVoidLabel marks pixels excluded from losses and metrics.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::size_t size() const { return labels.size(); }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// Throws if any non-void label is >= num_classes.
void validate_labels(const LabelMap& map, std::size_t num_classes);

enum class ShapeKind : std::uint8_t { Disk, Rectangle, Triangle, Diamond, Ellipse, Cross };
inline constexpr std::size_t kShapeKinds = 6;

/// Integer geometry of one synthetic shape. `a` and `b` are half extents
/// (radius for disks); `orient` selects one of four orientations.
struct PlacedShape {
  ShapeKind kind = ShapeKind::Disk;
  int cx = 0, cy = 0;
  int a = 0, b = 0;
  int orient = 0;
  std::uint8_t label = 0;
};

bool shape_contains(const PlacedShape& s, int x, int y);
/// Writes s.label into every covered pixel; returns the number of pixels painted.
std::size_t paint_shape(LabelMap& map, const PlacedShape& s);

struct Sample {
  TensorF image;  // 3 x H x W in [0, 1]
  LabelMap truth;
  std::string id;
  std::vector<PlacedShape> shapes;
};

struct ShapesOptions {
  std::size_t n = 1;
  std::size_t size = 128;
  std::size_t num_classes = 5;
  std::uint64_t seed = 0;
  double background_only_prob = 0.0;
  int max_shapes = 4;
  double noise_sigma = 0.05;
  /// Start of the per-sample stream index (sample i uses stream first_index + i).
  std::uint64_t first_index = 0;
};

/// Synthetic shapes: class k >= 1 is drawn as shape kind k - 1 in a
/// class-specific colour. Deterministic given the options.
std::vector<Sample> generate_shapes(const ShapesOptions& opts);
std::vector<Sample> generate_shapes(std::size_t n, std::size_t size, std::size_t num_classes,
                                    std::uint64_t seed);

struct AugmentSpec {
  std::size_t min_size = 96;
  std::size_t max_size = 224;
  std::size_t crop = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Target size (larger side) for a draw: a multiple of 32 in [min_size, max_size].
std::size_t augment_size(const AugmentSpec& spec, std::uint64_t draw);
/// Resize so the larger side equals the size chosen by `draw`, then random-crop.
Sample augment(const Sample& sample, const AugmentSpec& spec, std::uint64_t draw);
/// As above with an explicit target size; the crop offset comes from `draw`.
Sample augment_to_size(const Sample& sample, std::size_t size, std::size_t crop,
                       std::uint64_t draw);

LabelMap resize_nearest(const LabelMap& map, std::size_t out_h, std::size_t out_w);

struct PatchSet {
  std::uint8_t class_id = 0;
  std::size_t patch = 32;
  std::vector<TensorF> patches;  // patch x patch binary class indicators
  std::size_t draws = 0;
};

double patch_coverage(std::span<const float> patch);

/// Random patch locations; keeps class-indicator patches whose class fraction
/// reaches min_coverage. Stops at `count` kept or `max_draws` tried
/// (0 means 50 * count).
PatchSet extract_class_patches(std::span<const Sample> samples, std::uint8_t class_id,
                               std::size_t count, std::size_t patch = 32,
                               double min_coverage = 0.02, std::uint64_t seed = 0,
                               std::size_t max_draws = 0);

// Binary P6 / P5 with maxval 255.
void write_image_ppm(const std::string& path, const TensorF& image);
TensorF read_image_ppm(const std::string& path);
void write_mask_pgm(const std::string& path, const LabelMap& map);
LabelMap read_mask_pgm(const std::string& path);

struct ManifestEntry {
  std::string id;
  std::string image_path;
  std::string mask_path;
};

/// One "id image_path mask_path" line per sample; relative paths are
/// resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<Sample> load_dataset(const std::string& manifest_path);
/// Writes images/<id>.ppm, masks/<id>.pgm and manifest.txt under dir.
std::string write_dataset(const std::string& dir, std::span<const Sample> samples);

}  // namespace lrr
