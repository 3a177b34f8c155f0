#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace lmp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One crop: logits [pixels x classes], ground truth, and the non-ignore mask.
struct SegBatch {
  RowMatrix logits;
  std::vector<int> labels;
  std::vector<std::uint8_t> valid;
};

struct PixelLossResult {
  std::vector<double> losses;                  // one per valid pixel, in pixel order
  std::vector<std::size_t> valid_index_map;    // compact index -> pixel index
  RowMatrix per_pixel_logit_grad;              // d loss(u) / d logits(u, .), zero rows when ignored
};

/// Softmax cross-entropy per valid pixel, stabilized by max subtraction.
PixelLossResult softmax_xent(const SegBatch& batch);

/// Chains per-pixel loss weights (e.g. w* of the pooled loss) back to logits.
RowMatrix backprop_pooled(const PixelLossResult& result, std::span<const double> pooled_weights);

}  // namespace lmp
