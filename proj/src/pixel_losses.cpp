#include "lmp/pixel_losses.hpp"

#include <cmath>
#include <string>

#include "lmp/errors.hpp"

namespace lmp {

PixelLossResult softmax_xent(const SegBatch& batch) {
  const auto n = static_cast<std::size_t>(batch.logits.rows());
  const auto classes = batch.logits.cols();
  if (classes < 2) throw InvalidParameter("at least two classes are required");
  if (batch.labels.size() != n || batch.valid.size() != n) {
    throw InvalidInput("labels and valid mask must have one entry per pixel");
  }
  if (!batch.logits.allFinite()) throw InvalidInput("logits must be finite");

  PixelLossResult result;
  result.per_pixel_logit_grad = RowMatrix::Zero(batch.logits.rows(), classes);
  for (std::size_t u = 0; u < n; ++u) {
    if (!batch.valid[u]) continue;
    const int label = batch.labels[u];
    if (label < 0 || label >= classes) {
      throw InvalidInput("label " + std::to_string(label) + " at pixel " + std::to_string(u) +
                         " is outside [0, " + std::to_string(classes) + ")");
    }
    const auto row = batch.logits.row(static_cast<Eigen::Index>(u));
    Eigen::Index top = 0;
    const double peak = row.maxCoeff(&top);
    double others = 0.0;
    for (Eigen::Index c = 0; c < classes; ++c) {
      if (c != top) others += std::exp(row(c) - peak);
    }
    const double log_partition = peak + std::log1p(others);
    result.losses.push_back(log_partition - row(label));
    result.valid_index_map.push_back(u);

    auto grad = result.per_pixel_logit_grad.row(static_cast<Eigen::Index>(u));
    for (Eigen::Index c = 0; c < classes; ++c) grad(c) = std::exp(row(c) - log_partition);
    grad(label) -= 1.0;
  }
  if (result.losses.empty()) throw InvalidInput("batch has no valid pixels");
  return result;
}

RowMatrix backprop_pooled(const PixelLossResult& result, std::span<const double> pooled_weights) {
  if (pooled_weights.size() != result.losses.size()) {
    throw InvalidParameter("expected " + std::to_string(result.losses.size()) +
                           " pooled weights, got " + std::to_string(pooled_weights.size()));
  }
  RowMatrix grad = RowMatrix::Zero(result.per_pixel_logit_grad.rows(),
                                   result.per_pixel_logit_grad.cols());
  for (std::size_t k = 0; k < pooled_weights.size(); ++k) {
    const auto u = static_cast<Eigen::Index>(result.valid_index_map[k]);
    grad.row(u) = pooled_weights[k] * result.per_pixel_logit_grad.row(u);
  }
  return grad;
}

}  // namespace lmp
