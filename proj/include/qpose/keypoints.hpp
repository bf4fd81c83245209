#pragma once

#include <span>

#include "qpose/ca_model.hpp"
#include "qpose/pose.hpp"

namespace qpose {

/// Pixel extent of the image the head was evaluated on; a level of width W_n
/// has cell stride image_width / W_n.
struct GridMeta {
    std::size_t image_width = 0;
    std::size_t image_height = 0;
};

/// Per-level head output with 3K channels: channel 3k is the u offset, 3k+1 the
/// v offset (both in cell strides from the cell centre) and 3k+2 the confidence logit.
///
/// Each keypoint takes the cell with the highest confidence over all levels;
/// ties go to the lowest (level, row, col). Confidences are logistic-squashed.
/// `model_points` supplies points3d and fixes K. Throws ShapeError on a channel mismatch.
KeypointSet decode_keypoints(const FeatureSet& head_out, const GridMeta& meta, std::span<const Vec3> model_points);

/// Builds a head output that decodes to `pixels`: keypoint k is placed on
/// `level` with logit `hi` in its cell and `lo` everywhere else.
FeatureSet encode_keypoints(std::span<const Vec2> pixels, std::span<const Dims> level_dims, const GridMeta& meta,
                            std::size_t level, double hi = 8.0, double lo = -8.0);

struct KeypointLoss {
    double loss = 0.0;
    FeatureSet grad;  // d loss / d head_out
};

/// Surrogate regression loss: smooth-L1 (beta = 1) between the predicted
/// offsets at each keypoint's ground-truth cell on `level` and the true offsets,
/// averaged over keypoints and both coordinates.
KeypointLoss keypoint_offset_loss(const FeatureSet& head_out, std::span<const Vec2> pixels, const GridMeta& meta,
                                  std::size_t level);

}  // namespace qpose
