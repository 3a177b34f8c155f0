#include "lmp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "lmp/errors.hpp"

namespace lmp {
namespace {

// Per-image class pixel targets. Cumulative rounding keeps the totals within
// one pixel per class of fraction * all pixels; the largest class absorbs the
// rounding slack of each image.
std::vector<std::vector<std::size_t>> pixel_targets(const SyntheticDatasetSpec& spec,
                                                    std::size_t background) {
  const std::size_t per_image = spec.height * spec.width;
  const auto C = static_cast<std::size_t>(spec.classes);
  std::vector<std::vector<std::size_t>> targets(spec.images, std::vector<std::size_t>(C, 0));
  for (std::size_t i = 0; i < spec.images; ++i) {
    std::size_t used = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (c == background) continue;
      const double cum = spec.class_pixel_fractions[c] * static_cast<double>(per_image);
      const auto before = static_cast<std::size_t>(std::llround(cum * static_cast<double>(i)));
      const auto after = static_cast<std::size_t>(std::llround(cum * static_cast<double>(i + 1)));
      targets[i][c] = std::min(after - before, per_image - used);
      used += targets[i][c];
    }
    targets[i][background] = per_image - used;
  }
  return targets;
}

void layout_blobs(std::vector<int>& labels, const std::vector<std::size_t>& order,
                  const std::vector<std::size_t>& target, const SyntheticDatasetSpec& spec,
                  Rng& rng) {
  const std::size_t H = spec.height;
  const std::size_t W = spec.width;
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t c : order) {
    if (target[c] == 0) continue;
    const double r0 = std::uniform_real_distribution<double>(0.0, static_cast<double>(H))(rng);
    const double c0 = std::uniform_real_distribution<double>(0.0, static_cast<double>(W))(rng);
    dist.clear();
    for (std::size_t px = 0; px < H * W; ++px) {
      if (labels[px] >= 0) continue;
      const double dr = static_cast<double>(px / W) + 0.5 - r0;
      const double dc = static_cast<double>(px % W) + 0.5 - c0;
      dist.emplace_back(dr * dr + dc * dc, px);
    }
    const auto take = std::min(target[c], dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());
    for (std::size_t k = 0; k < take; ++k) labels[dist[k].second] = static_cast<int>(c);
  }
}

void layout_stripes(std::vector<int>& labels, const std::vector<std::size_t>& order,
                    const std::vector<std::size_t>& target, const SyntheticDatasetSpec& spec,
                    Rng& rng) {
  const std::size_t P = spec.height * spec.width;
  for (std::size_t c : order) {
    if (target[c] == 0) continue;
    const std::size_t row = std::uniform_int_distribution<std::size_t>(0, spec.height - 1)(rng);
    std::size_t px = row * spec.width;
    for (std::size_t placed = 0; placed < target[c]; px = (px + 1) % P) {
      if (labels[px] < 0) {
        labels[px] = static_cast<int>(c);
        ++placed;
      }
    }
  }
}

double reduce_and_weigh(const TrainConfig& config, const PixelLossResult& pixels,
                        std::span<const int> labels, std::span<const double> class_weights,
                        std::vector<double>& weights, std::size_t& violations) {
  const std::size_t n = pixels.losses.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  weights.assign(n, inv_n);
  switch (config.loss_mode) {
    case LossMode::kUniform: {
      double sum = 0.0;
      for (double l : pixels.losses) sum += l;
      return sum * inv_n;
    }
    case LossMode::kInverseMedianFreq: {
      double sum = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const auto label = static_cast<std::size_t>(labels[pixels.valid_index_map[k]]);
        weights[k] = class_weights[label] * inv_n;
        sum += weights[k] * pixels.losses[k];
      }
      return sum;
    }
    case LossMode::kLmp: {
      auto outcome = solve_pool(pixels.losses, config.pooling);
      double mean = 0.0;
      for (double l : pixels.losses) mean += l;
      mean *= inv_n;
      if (outcome.pooled_loss < mean * (1.0 - 1e-12)) ++violations;
      weights = std::move(outcome.weights);
      return outcome.pooled_loss;
    }
  }
  return 0.0;
}

}  // namespace

void SyntheticDatasetSpec::validate() const {
  if (classes < 2) throw InvalidParameter("dataset needs at least two classes");
  if (height == 0 || width == 0) throw InvalidParameter("image size must be positive");
  if (images < 2) throw InvalidParameter("dataset needs at least two images (train/eval split)");
  if (class_pixel_fractions.size() != static_cast<std::size_t>(classes)) {
    throw InvalidParameter("class_pixel_fractions must have one entry per class");
  }
  double sum = 0.0;
  for (double f : class_pixel_fractions) {
    if (!(f > 0.0)) throw InvalidParameter("class_pixel_fractions must be positive");
    sum += f;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw InvalidParameter("class_pixel_fractions must sum to 1");
  if (!(feature_noise >= 0.0)) throw InvalidParameter("feature_noise must be non-negative");
  const double total = static_cast<double>(height * width * images);
  for (int c = 0; c < classes; ++c) {
    if (std::llround(class_pixel_fractions[static_cast<std::size_t>(c)] * total) == 0) {
      throw InvalidParameter("class " + std::to_string(c) +
                             " would receive no pixels at this dataset size");
    }
  }
}

Dataset generate_dataset(const SyntheticDatasetSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto C = static_cast<std::size_t>(spec.classes);
  const std::size_t P = spec.height * spec.width;

  const auto& fr = spec.class_pixel_fractions;
  const auto background = static_cast<std::size_t>(
      std::distance(fr.begin(), std::max_element(fr.begin(), fr.end())));
  // Rarest classes are placed first so that they get compact regions.
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < C; ++c) {
    if (c != background) order.push_back(c);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fr[a] < fr[b]; });

  const auto targets = pixel_targets(spec, background);

  Dataset ds;
  ds.spec = spec;
  ds.feature_dim = C;
  ds.images.resize(spec.images);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < spec.images; ++i) {
    auto& img = ds.images[i];
    img.labels.assign(P, -1);
    if (spec.shape == ShapeKind::kBlobs) {
      layout_blobs(img.labels, order, targets[i], spec, rng);
    } else {
      layout_stripes(img.labels, order, targets[i], spec, rng);
    }
    for (int& y : img.labels) {
      if (y < 0) y = static_cast<int>(background);
    }
    img.features.resize(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(C));
    for (std::size_t px = 0; px < P; ++px) {
      for (std::size_t d = 0; d < C; ++d) {
        const double mean = d == static_cast<std::size_t>(img.labels[px]) ? spec.class_separation : 0.0;
        img.features(static_cast<Eigen::Index>(px), static_cast<Eigen::Index>(d)) =
            mean + spec.feature_noise * noise(rng);
      }
    }
  }

  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(spec.images))), 1,
      spec.images - 1);
  for (std::size_t i = 0; i < spec.images; ++i) (i < n_train ? ds.train : ds.eval).push_back(i);
  return ds;
}

std::vector<std::size_t> class_pixel_counts(const Dataset& dataset) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(dataset.spec.classes), 0);
  for (const auto& img : dataset.images) {
    for (int y : img.labels) ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

LinearModel LinearModel::zeros(int classes, std::size_t feature_dim) {
  LinearModel model;
  model.weights = RowMatrix::Zero(classes, static_cast<Eigen::Index>(feature_dim));
  model.bias = Eigen::VectorXd::Zero(classes);
  return model;
}

RowMatrix LinearModel::logits(const RowMatrix& features) const {
  RowMatrix out = features * weights.transpose();
  out.rowwise() += bias.transpose();
  return out;
}

std::vector<int> LinearModel::predict(const RowMatrix& features) const {
  const RowMatrix z = logits(features);
  std::vector<int> pred(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Eigen::Index best = 0;
    z.row(r).maxCoeff(&best);
    pred[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return pred;
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::kUniform: return "uniform";
    case LossMode::kInverseMedianFreq: return "inverse_median_freq";
    case LossMode::kLmp: return "lmp";
  }
  return "unknown";
}

LossMode parse_loss_mode(const std::string& name) {
  if (name == "uniform") return LossMode::kUniform;
  if (name == "inverse_median_freq") return LossMode::kInverseMedianFreq;
  if (name == "lmp") return LossMode::kLmp;
  throw InvalidParameter("unknown loss mode '" + name +
                         "' (expected uniform, inverse_median_freq or lmp)");
}

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw InvalidParameter("lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidParameter("momentum must lie in [0, 1)");
  if (!(poly_power > 0.0)) throw InvalidParameter("poly_power must be positive");
  if (iterations < 1) throw InvalidParameter("iterations must be >= 1");
  if (batch_crops < 1) throw InvalidParameter("batch_crops must be >= 1");
  if (crop_height == 0 || crop_width == 0) throw InvalidParameter("crop size must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidParameter("weight_decay must be non-negative");
  if (!(stats_decay > 0.0 && stats_decay <= 1.0)) throw InvalidParameter("stats_decay must lie in (0, 1]");
  if (eval_every < 0) throw InvalidParameter("eval_every must be >= 0");
  if (!(pooling.p >= 1.0)) throw InvalidParameter("p must be >= 1");
  if (sampler) sampler->validate();
}

double poly_learning_rate(double lr0, int iteration, int max_iterations, double power) {
  const double progress = static_cast<double>(iteration) / static_cast<double>(max_iterations);
  return lr0 * std::pow(std::max(0.0, 1.0 - progress), power);
}

std::vector<double> inverse_median_frequency(const Dataset& dataset) {
  const auto C = static_cast<std::size_t>(dataset.spec.classes);
  std::vector<double> counts(C, 0.0);
  double total = 0.0;
  for (std::size_t i : dataset.train) {
    for (int y : dataset.images[i].labels) {
      counts[static_cast<std::size_t>(y)] += 1.0;
      total += 1.0;
    }
  }
  std::vector<double> freq;
  for (double c : counts) {
    if (c > 0.0) freq.push_back(c / total);
  }
  std::sort(freq.begin(), freq.end());
  const std::size_t k = freq.size();
  const double median = k % 2 == 1 ? freq[k / 2] : 0.5 * (freq[k / 2 - 1] + freq[k / 2]);
  std::vector<double> weights(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    if (counts[c] > 0.0) weights[c] = median / (counts[c] / total);
  }
  return weights;
}

Evaluation evaluate_predictions(std::span<const int> predictions, std::span<const int> labels,
                                int classes) {
  if (predictions.size() != labels.size()) throw InvalidInput("prediction/label length mismatch");
  if (labels.empty()) throw InvalidInput("cannot evaluate an empty split");
  const auto C = static_cast<std::size_t>(classes);
  std::vector<double> confusion(C * C, 0.0);
  for (std::size_t u = 0; u < labels.size(); ++u) {
    const int y = labels[u];
    const int yhat = predictions[u];
    if (y < 0 || y >= classes || yhat < 0 || yhat >= classes) {
      throw InvalidInput("class id out of range at pixel " + std::to_string(u));
    }
    confusion[static_cast<std::size_t>(y) * C + static_cast<std::size_t>(yhat)] += 1.0;
  }
  Evaluation ev;
  ev.per_class_iou = iou_from_confusion(confusion, classes);
  ev.counted.assign(C, 0);
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < C; ++c) {
    double uni = 0.0;
    for (std::size_t k = 0; k < C; ++k) uni += confusion[c * C + k] + confusion[k * C + c];
    if (uni > 0.0) {
      ev.counted[c] = 1;
      sum += ev.per_class_iou[c];
      ++counted;
    }
  }
  ev.mean_iou = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
  return ev;
}

Evaluation evaluate(const LinearModel& model, const Dataset& dataset,
                    std::span<const std::size_t> images) {
  if (images.empty()) throw InvalidInput("cannot evaluate an empty split");
  std::vector<int> predictions;
  std::vector<int> labels;
  for (std::size_t i : images) {
    const auto& img = dataset.images.at(i);
    const auto pred = model.predict(img.features);
    predictions.insert(predictions.end(), pred.begin(), pred.end());
    labels.insert(labels.end(), img.labels.begin(), img.labels.end());
  }
  return evaluate_predictions(predictions, labels, dataset.spec.classes);
}

TrainReport train(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.train.empty()) throw InvalidInput("dataset has no training images");
  const auto start = std::chrono::steady_clock::now();
  const int C = dataset.spec.classes;
  const std::size_t H = dataset.spec.height;
  const std::size_t W = dataset.spec.width;
  const auto D = static_cast<Eigen::Index>(dataset.feature_dim);

  DatasetIndex index(C, dataset.train.size(), H, W);
  for (std::size_t t = 0; t < dataset.train.size(); ++t) {
    const auto& labels = dataset.images[dataset.train[t]].labels;
    for (std::size_t px = 0; px < labels.size(); ++px) index.add(labels[px], {t, px / W, px % W});
  }
  ClassStats stats = ClassStats::create(C, config.stats_decay);
  stats.present = index.present_classes();
  const auto class_weights = inverse_median_frequency(dataset);

  TrainReport report;
  report.config = config;
  report.model = LinearModel::zeros(C, dataset.feature_dim);
  LinearModel& model = report.model;
  RowMatrix velocity_w = RowMatrix::Zero(C, D);
  Eigen::VectorXd velocity_b = Eigen::VectorXd::Zero(C);
  Rng rng(config.seed);

  SegBatch batch;
  std::vector<double> weights;
  RowMatrix crop_features;
  for (int it = 0; it < config.iterations; ++it) {
    const double lr = poly_learning_rate(config.lr0, it, config.iterations, config.poly_power);
    RowMatrix grad_w = RowMatrix::Zero(C, D);
    Eigen::VectorXd grad_b = Eigen::VectorXd::Zero(C);
    double step_loss = 0.0;

    for (int k = 0; k < config.batch_crops; ++k) {
      const CropAnchor anchor = config.sampler
                                    ? pick_crop(index, sample_class(stats, *config.sampler, rng), rng)
                                    : pick_uniform_crop(index, rng);
      const auto window = crop_window(anchor.center, config.crop_height, config.crop_width, H, W);
      const auto& img = dataset.images[dataset.train[anchor.center.image]];
      const auto P = static_cast<Eigen::Index>(window.rows * window.cols);

      crop_features.resize(P, D);
      batch.labels.resize(static_cast<std::size_t>(P));
      batch.valid.assign(static_cast<std::size_t>(P), 1);
      Eigen::Index r = 0;
      for (std::size_t row = window.row0; row < window.row0 + window.rows; ++row) {
        for (std::size_t col = window.col0; col < window.col0 + window.cols; ++col, ++r) {
          const auto px = static_cast<Eigen::Index>(row * W + col);
          crop_features.row(r) = img.features.row(px);
          batch.labels[static_cast<std::size_t>(r)] = img.labels[static_cast<std::size_t>(px)];
        }
      }
      batch.logits = model.logits(crop_features);
      const auto pixels = softmax_xent(batch);
      step_loss += reduce_and_weigh(config, pixels, batch.labels, class_weights, weights,
                                    report.upper_bound_violations);

      const RowMatrix g = backprop_pooled(pixels, weights) / static_cast<double>(config.batch_crops);
      grad_w.noalias() += g.transpose() * crop_features;
      grad_b += g.colwise().sum().transpose();

      if (config.sampler) {
        std::vector<int> predictions(static_cast<std::size_t>(P));
        for (Eigen::Index u = 0; u < P; ++u) {
          Eigen::Index best = 0;
          batch.logits.row(u).maxCoeff(&best);
          predictions[static_cast<std::size_t>(u)] = static_cast<int>(best);
        }
        stats = update_stats(std::move(stats), predictions, batch.labels, batch.valid);
      }
    }
    step_loss /= static_cast<double>(config.batch_crops);
    if (!std::isfinite(step_loss)) {
      throw TrainingDiverged("non-finite loss at iteration " + std::to_string(it) +
                             " (lr = " + std::to_string(lr) + ")");
    }
    report.loss_history.push_back(step_loss);
    if (config.sampler) report.train_iou_history.push_back(stats.iou);

    grad_w += 2.0 * config.weight_decay * model.weights;
    velocity_w = config.momentum * velocity_w + lr * grad_w;
    velocity_b = config.momentum * velocity_b + lr * grad_b;
    model.weights -= velocity_w;
    model.bias -= velocity_b;
    if (!model.weights.allFinite() || !model.bias.allFinite()) {
      throw TrainingDiverged("non-finite parameters after iteration " + std::to_string(it));
    }

    if (config.eval_every > 0 && (it + 1) % config.eval_every == 0 && !dataset.eval.empty()) {
      const auto ev = evaluate(model, dataset, dataset.eval);
      report.checkpoints.push_back({it + 1, ev.mean_iou, ev.per_class_iou});
    }
  }

  const auto ev = evaluate(model, dataset, dataset.eval.empty() ? dataset.train : dataset.eval);
  report.per_class_iou = ev.per_class_iou;
  report.mean_iou = ev.mean_iou;
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace lmp
