#include "qpose/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qpose/error.hpp"

namespace qpose {
namespace {

struct Cell {
    std::size_t row = 0;
    std::size_t col = 0;
    Vec2 offset;
};

double stride_of(std::size_t image_extent, std::size_t cells, const char* axis) {
    if (cells == 0 || image_extent == 0 || image_extent % cells != 0) {
        throw ShapeError(std::string("keypoint grid: image ") + axis + " extent " + std::to_string(image_extent) +
                         " is not a multiple of " + std::to_string(cells) + " cells");
    }
    return static_cast<double>(image_extent / cells);
}

Cell locate(const Vec2& px, const Dims& d, const GridMeta& meta) {
    const double sx = stride_of(meta.image_width, d.w, "width");
    const double sy = stride_of(meta.image_height, d.h, "height");
    const double gx = px.x() / sx;
    const double gy = px.y() / sy;
    Cell c;
    c.col = static_cast<std::size_t>(std::clamp(std::floor(gx), 0.0, static_cast<double>(d.w - 1)));
    c.row = static_cast<std::size_t>(std::clamp(std::floor(gy), 0.0, static_cast<double>(d.h - 1)));
    c.offset = {gx - (static_cast<double>(c.col) + 0.5), gy - (static_cast<double>(c.row) + 0.5)};
    return c;
}

void check_channels(const FeatureSet& head_out, std::size_t k) {
    if (head_out.empty()) throw ShapeError("keypoint head: no levels");
    for (std::size_t l = 0; l < head_out.size(); ++l) {
        const Dims& d = head_out[l].dims();
        if (d.c != 3 * k || d.n != 1) {
            throw ShapeError("keypoint head: level " + std::to_string(l) + " has extents " + to_string(d) +
                             ", expected one image with " + std::to_string(3 * k) + " channels");
        }
    }
}

}  // namespace

KeypointSet decode_keypoints(const FeatureSet& head_out, const GridMeta& meta, std::span<const Vec3> model_points) {
    const std::size_t k = model_points.size();
    check_channels(head_out, k);
    KeypointSet out;
    out.points3d.assign(model_points.begin(), model_points.end());
    for (std::size_t kp = 0; kp < k; ++kp) {
        double best = -std::numeric_limits<double>::infinity();
        Vec2 best_px{0.0, 0.0};
        for (const Tensor& t : head_out) {
            const Dims& d = t.dims();
            const double sx = stride_of(meta.image_width, d.w, "width");
            const double sy = stride_of(meta.image_height, d.h, "height");
            for (std::size_t y = 0; y < d.h; ++y) {
                for (std::size_t x = 0; x < d.w; ++x) {
                    const double logit = t.at(0, 3 * kp + 2, y, x);
                    if (logit <= best) continue;  // strict: earlier (level, row, col) wins ties
                    best = logit;
                    best_px = {(static_cast<double>(x) + 0.5 + t.at(0, 3 * kp, y, x)) * sx,
                               (static_cast<double>(y) + 0.5 + t.at(0, 3 * kp + 1, y, x)) * sy};
                }
            }
        }
        out.points2d.push_back(best_px);
        out.confidence.push_back(1.0 / (1.0 + std::exp(-best)));
    }
    return out;
}

FeatureSet encode_keypoints(std::span<const Vec2> pixels, std::span<const Dims> level_dims, const GridMeta& meta,
                            std::size_t level, double hi, double lo) {
    if (level >= level_dims.size()) throw ShapeError("encode_keypoints: level out of range");
    FeatureSet out;
    for (const Dims& d : level_dims) {
        Tensor t({1, 3 * pixels.size(), d.h, d.w});
        for (std::size_t kp = 0; kp < pixels.size(); ++kp) {
            double* conf = t.plane(0, 3 * kp + 2);
            for (std::size_t i = 0; i < d.h * d.w; ++i) conf[i] = lo;
        }
        out.push_back(std::move(t));
    }
    for (std::size_t kp = 0; kp < pixels.size(); ++kp) {
        Tensor& t = out[level];
        const Cell c = locate(pixels[kp], t.dims(), meta);
        t.at(0, 3 * kp, c.row, c.col) = c.offset.x();
        t.at(0, 3 * kp + 1, c.row, c.col) = c.offset.y();
        t.at(0, 3 * kp + 2, c.row, c.col) = hi;
    }
    return out;
}

KeypointLoss keypoint_offset_loss(const FeatureSet& head_out, std::span<const Vec2> pixels, const GridMeta& meta,
                                  std::size_t level) {
    check_channels(head_out, pixels.size());
    if (level >= head_out.size()) throw ShapeError("keypoint_offset_loss: level out of range");
    KeypointLoss r;
    for (const Tensor& t : head_out) r.grad.emplace_back(t.dims());
    if (pixels.empty()) return r;
    const Tensor& t = head_out[level];
    const double norm = 1.0 / static_cast<double>(2 * pixels.size());
    for (std::size_t kp = 0; kp < pixels.size(); ++kp) {
        const Cell c = locate(pixels[kp], t.dims(), meta);
        for (std::size_t axis = 0; axis < 2; ++axis) {
            const double d = t.at(0, 3 * kp + axis, c.row, c.col) - c.offset[static_cast<Eigen::Index>(axis)];
            const double ad = std::abs(d);
            r.loss += (ad < 1.0 ? 0.5 * d * d : ad - 0.5) * norm;
            r.grad[level].at(0, 3 * kp + axis, c.row, c.col) = (ad < 1.0 ? d : (d > 0 ? 1.0 : -1.0)) * norm;
        }
    }
    return r;
}

}  // namespace qpose
