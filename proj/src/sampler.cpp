#include "lmp/sampler.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <tuple>
#include <utility>

#include "lmp/errors.hpp"

namespace lmp {

ClassStats ClassStats::create(int classes, double decay) {
  if (classes < 2) throw InvalidParameter("at least two classes are required");
  if (!(decay > 0.0 && decay <= 1.0)) throw InvalidParameter("decay must lie in (0, 1]");
  ClassStats stats;
  stats.classes = classes;
  stats.decay = decay;
  stats.confusion.assign(static_cast<std::size_t>(classes * classes), 0.0);
  stats.iou.assign(static_cast<std::size_t>(classes), 1.0);
  stats.present.assign(static_cast<std::size_t>(classes), 1);
  return stats;
}

std::vector<double> iou_from_confusion(std::span<const double> confusion, int classes) {
  const auto C = static_cast<std::size_t>(classes);
  std::vector<double> iou(C, 1.0);
  for (std::size_t c = 0; c < C; ++c) {
    const double tp = confusion[c * C + c];
    double row = 0.0;
    double col = 0.0;
    for (std::size_t k = 0; k < C; ++k) {
      row += confusion[c * C + k];
      col += confusion[k * C + c];
    }
    const double uni = row + col - tp;
    if (uni > 0.0) iou[c] = tp / uni;
  }
  return iou;
}

ClassStats update_stats(ClassStats stats, std::span<const int> predictions,
                        std::span<const int> labels, std::span<const std::uint8_t> valid) {
  if (predictions.size() != labels.size() || labels.size() != valid.size()) {
    throw InvalidInput("predictions, labels and valid mask must have equal lengths");
  }
  for (double& v : stats.confusion) v *= stats.decay;
  for (std::size_t u = 0; u < labels.size(); ++u) {
    if (!valid[u]) continue;
    const int y = labels[u];
    const int yhat = predictions[u];
    if (y < 0 || y >= stats.classes || yhat < 0 || yhat >= stats.classes) {
      throw InvalidInput("class id out of range at pixel " + std::to_string(u));
    }
    stats.confusion[static_cast<std::size_t>(y * stats.classes + yhat)] += 1.0;
  }
  stats.iou = iou_from_confusion(stats.confusion, stats.classes);
  return stats;
}

void SamplerConfig::validate() const {
  if (!(blend >= 0.0 && blend <= 1.0)) throw InvalidParameter("sampler blend must lie in [0, 1]");
  if (!(epsilon > 0.0)) throw InvalidParameter("sampler epsilon must be positive");
}

std::vector<double> class_probabilities(const ClassStats& stats, const SamplerConfig& config) {
  config.validate();
  const auto C = static_cast<std::size_t>(stats.classes);
  const auto present = static_cast<double>(std::count(stats.present.begin(), stats.present.end(), 1));
  if (present == 0.0) throw InvalidParameter("no class is present in the training data");

  std::vector<double> inverse(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    if (stats.present[c]) inverse[c] = 1.0 - stats.iou[c] + config.epsilon;
  }
  const double total = std::accumulate(inverse.begin(), inverse.end(), 0.0);
  std::vector<double> probs(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    if (!stats.present[c]) continue;
    probs[c] = config.blend / present + (1.0 - config.blend) * inverse[c] / total;
  }
  return probs;
}

int sample_class(const ClassStats& stats, const SamplerConfig& config, Rng& rng) {
  config.validate();
  // Snapshot of the current IoU; stats may be updated after the draw.
  const std::vector<double> iou = stats.iou;
  std::vector<int> present;
  for (int c = 0; c < stats.classes; ++c) {
    if (stats.present[static_cast<std::size_t>(c)]) present.push_back(c);
  }
  if (present.empty()) throw InvalidParameter("no class is present in the training data");

  if (std::bernoulli_distribution(config.blend)(rng)) {
    std::uniform_int_distribution<std::size_t> pick(0, present.size() - 1);
    return present[pick(rng)];
  }
  std::vector<double> inverse;
  inverse.reserve(present.size());
  for (int c : present) inverse.push_back(1.0 - iou[static_cast<std::size_t>(c)] + config.epsilon);
  std::discrete_distribution<std::size_t> pick(inverse.begin(), inverse.end());
  return present[pick(rng)];
}

DatasetIndex::DatasetIndex(int classes, std::size_t images, std::size_t height, std::size_t width)
    : by_class_(static_cast<std::size_t>(classes)), images_(images), height_(height), width_(width) {
  if (classes < 1) throw InvalidParameter("dataset index needs at least one class");
}

void DatasetIndex::add(int label, PixelLocation where) {
  if (label < 0 || label >= classes()) throw InvalidInput("class id out of range");
  by_class_[static_cast<std::size_t>(label)].push_back(where);
}

const std::vector<PixelLocation>& DatasetIndex::locations(int label) const {
  return by_class_.at(static_cast<std::size_t>(label));
}

std::vector<std::uint8_t> DatasetIndex::present_classes() const {
  std::vector<std::uint8_t> present;
  for (const auto& locs : by_class_) present.push_back(locs.empty() ? 0 : 1);
  return present;
}

CropAnchor pick_uniform_crop(const DatasetIndex& index, Rng& rng) {
  if (index.images() == 0 || index.height() == 0 || index.width() == 0) {
    throw InvalidInput("dataset index is empty");
  }
  CropAnchor anchor;
  anchor.center.image = std::uniform_int_distribution<std::size_t>(0, index.images() - 1)(rng);
  anchor.center.row = std::uniform_int_distribution<std::size_t>(0, index.height() - 1)(rng);
  anchor.center.col = std::uniform_int_distribution<std::size_t>(0, index.width() - 1)(rng);
  return anchor;
}

CropAnchor pick_crop(const DatasetIndex& index, int label, Rng& rng) {
  if (label < 0 || label >= index.classes() || index.locations(label).empty()) {
    auto anchor = pick_uniform_crop(index, rng);
    anchor.fallback = true;
    return anchor;
  }
  const auto& locs = index.locations(label);
  CropAnchor anchor;
  anchor.center = locs[std::uniform_int_distribution<std::size_t>(0, locs.size() - 1)(rng)];
  return anchor;
}

CropWindow crop_window(const PixelLocation& center, std::size_t crop_h, std::size_t crop_w,
                       std::size_t image_h, std::size_t image_w) {
  // [c - len/2, c - len/2 + len) intersected with [0, extent).
  auto span_1d = [](std::size_t c, std::size_t len, std::size_t extent) {
    const auto start = static_cast<std::ptrdiff_t>(c) - static_cast<std::ptrdiff_t>(len / 2);
    const auto stop = start + static_cast<std::ptrdiff_t>(len);
    const auto lo = std::max<std::ptrdiff_t>(start, 0);
    const auto hi = std::min<std::ptrdiff_t>(stop, static_cast<std::ptrdiff_t>(extent));
    return std::pair{static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(hi - lo, std::ptrdiff_t{0}))};
  };
  CropWindow w;
  std::tie(w.row0, w.rows) = span_1d(center.row, crop_h, image_h);
  std::tie(w.col0, w.cols) = span_1d(center.col, crop_w, image_w);
  return w;
}

}  // namespace lmp
