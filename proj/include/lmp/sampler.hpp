#pragma once

// Complementary crop sampling: blend uniform class draws with draws biased
// toward classes whose running training IoU is low.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace lmp {

using Rng = std::mt19937_64;

/// Running confusion counts (rows: ground truth, columns: prediction).
struct ClassStats {
  int classes = 0;
  double decay = 0.99;
  std::vector<double> confusion;  // classes * classes, row-major
  std::vector<double> iou;
  std::vector<std::uint8_t> present;  // classes that occur in the training data

  static ClassStats create(int classes, double decay = 0.99);

  double count(int label, int prediction) const {
    return confusion[static_cast<std::size_t>(label * classes + prediction)];
  }
};

/// Per-class TP / (TP + FP + FN) of a confusion matrix; 0/0 is reported as 1.
std::vector<double> iou_from_confusion(std::span<const double> confusion, int classes);

/// Decays the counts, adds the valid pixels, and recomputes IoU.
ClassStats update_stats(ClassStats stats, std::span<const int> predictions,
                        std::span<const int> labels, std::span<const std::uint8_t> valid);

struct SamplerConfig {
  double blend = 0.5;     // probability of a uniform draw
  double epsilon = 0.01;  // floor of the inverse-performance weight
  std::uint64_t seed = 0;

  void validate() const;
};

/// Exact draw distribution of sample_class.
std::vector<double> class_probabilities(const ClassStats& stats, const SamplerConfig& config);

int sample_class(const ClassStats& stats, const SamplerConfig& config, Rng& rng);

struct PixelLocation {
  std::size_t image = 0;
  std::size_t row = 0;
  std::size_t col = 0;
};

/// Per-class list of ground-truth pixel locations over a set of images.
class DatasetIndex {
 public:
  DatasetIndex(int classes, std::size_t images, std::size_t height, std::size_t width);

  void add(int label, PixelLocation where);
  int classes() const { return static_cast<int>(by_class_.size()); }
  std::size_t images() const { return images_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  const std::vector<PixelLocation>& locations(int label) const;
  std::vector<std::uint8_t> present_classes() const;

 private:
  std::vector<std::vector<PixelLocation>> by_class_;
  std::size_t images_;
  std::size_t height_;
  std::size_t width_;
};

struct CropAnchor {
  PixelLocation center;
  bool fallback = false;  // class absent: uniform image/position draw
};

CropAnchor pick_crop(const DatasetIndex& index, int label, Rng& rng);

/// Uniform image/position draw.
CropAnchor pick_uniform_crop(const DatasetIndex& index, Rng& rng);

struct CropWindow {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Window of at most crop_h x crop_w centered on the anchor, clipped to the image.
CropWindow crop_window(const PixelLocation& center, std::size_t crop_h, std::size_t crop_w,
                       std::size_t image_h, std::size_t image_w);

}  // namespace lmp
