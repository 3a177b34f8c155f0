#pragma once

// Desk-scale segmentation training: synthetic long-tail pixel data, a per-pixel
// linear softmax model, momentum SGD with poly decay, and a choice of loss
// reduction (uniform mean, inverse median-frequency weights, loss max-pooling).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lmp/pixel_losses.hpp"
#include "lmp/sampler.hpp"
#include "lmp/solver.hpp"

namespace lmp {

enum class ShapeKind { kBlobs, kStripes };

struct SyntheticDatasetSpec {
  int classes = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t images = 40;
  std::vector<double> class_pixel_fractions{0.90, 0.09, 0.01};
  double feature_noise = 0.5;     // sigma of the per-pixel Gaussian features
  double class_separation = 1.0;  // class c has mean class_separation * e_c
  ShapeKind shape = ShapeKind::kBlobs;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SegImage {
  std::vector<int> labels;  // height * width, row-major
  RowMatrix features;       // (height * width) x feature_dim
};

struct Dataset {
  SyntheticDatasetSpec spec;
  std::size_t feature_dim = 0;
  std::vector<SegImage> images;
  std::vector<std::size_t> train;  // image ids
  std::vector<std::size_t> eval;
};

Dataset generate_dataset(const SyntheticDatasetSpec& spec);

/// Total pixel count per class over all images.
std::vector<std::size_t> class_pixel_counts(const Dataset& dataset);

struct LinearModel {
  RowMatrix weights;      // classes x feature_dim
  Eigen::VectorXd bias;   // classes

  static LinearModel zeros(int classes, std::size_t feature_dim);
  RowMatrix logits(const RowMatrix& features) const;
  std::vector<int> predict(const RowMatrix& features) const;
};

enum class LossMode { kUniform, kInverseMedianFreq, kLmp };

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& name);

struct TrainConfig {
  LossMode loss_mode = LossMode::kUniform;
  PoolingConfig pooling{1.3, PoolingSize::fraction(0.25)};
  double lr0 = 0.05;
  double momentum = 0.9;
  double poly_power = 0.9;
  int iterations = 300;
  int batch_crops = 2;
  std::size_t crop_height = 16;
  std::size_t crop_width = 16;
  std::optional<SamplerConfig> sampler;  // unset: uniform crop anchors
  double stats_decay = 0.99;
  double weight_decay = 1e-4;  // coefficient of the quadratic weight penalty
  int eval_every = 0;          // 0: evaluate only at the end
  std::uint64_t seed = 1;

  void validate() const;
};

struct Evaluation {
  std::vector<double> per_class_iou;
  double mean_iou = 0.0;
  std::vector<std::uint8_t> counted;  // classes with a non-empty union
};

struct Checkpoint {
  int iteration = 0;
  double mean_iou = 0.0;
  std::vector<double> per_class_iou;
};

struct TrainReport {
  std::vector<double> per_class_iou;
  double mean_iou = 0.0;
  std::vector<double> loss_history;      // reduced data loss per step
  std::vector<Checkpoint> checkpoints;
  std::vector<std::vector<double>> train_iou_history;  // running training IoU per step
  std::size_t upper_bound_violations = 0;  // lmp steps with pooled < mean
  TrainConfig config;
  double wall_time_seconds = 0.0;
  LinearModel model;
};

double poly_learning_rate(double lr0, int iteration, int max_iterations, double power);

/// median(freq) / freq_c over the training split; classes absent from it get 0.
std::vector<double> inverse_median_frequency(const Dataset& dataset);

/// Confusion-based IoU; classes with an empty union are excluded from the mean.
Evaluation evaluate_predictions(std::span<const int> predictions, std::span<const int> labels,
                                int classes);

Evaluation evaluate(const LinearModel& model, const Dataset& dataset,
                    std::span<const std::size_t> images);

TrainReport train(const Dataset& dataset, const TrainConfig& config);

}  // namespace lmp
