#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "qpose/ca_model.hpp"
#include "qpose/pose.hpp"

namespace qpose {

enum class DepthBin { Near, Medium, Far };

std::string_view name(DepthBin b);
DepthBin parse_depth_bin(std::string_view s);
/// [lo, hi) in meters; Far is closed at 16.
std::pair<double, double> depth_range(DepthBin b);
/// Bin containing depth z. Throws GeometryError outside [2, 16].
DepthBin depth_bin_of(double z);

struct SceneConfig {
    CameraIntrinsics camera{800.0, 800.0, 256.0, 256.0};
    std::size_t width = 512;
    std::size_t height = 512;
    ModelCuboid cuboid;
    std::size_t keypoints = 8;
    std::size_t raster_size = 32;          // rendered image is raster_size x raster_size
    double max_center_offset_px = 150.0;  // object centre projects within this box around (cx, cy)
};

struct Scene {
    CameraIntrinsics camera;
    std::size_t width = 0;
    std::size_t height = 0;
    Pose gt;
    ModelCuboid cuboid;
    KeypointSet keypoints;  // noisy 2-D projections, confidence 1
    MaskedScene view;       // 3-channel raster and its exact silhouette mask
};

/// Deterministic for a given (seed, bin): the pose and the unit noise draws do
/// not depend on noise_px, so scenes at different noise levels share geometry.
Scene gen_scene(std::uint64_t seed, DepthBin bin, double noise_px, const SceneConfig& cfg = {});

/// Seed of scene `index` of a run (splitmix64 of the pair), so scene sets of
/// different sizes share their leading scenes.
std::uint64_t scene_seed(std::uint64_t run_seed, std::uint64_t index);

/// `count` scenes; with no bin the scenes cycle through near, medium and far.
std::vector<Scene> gen_scenes(std::uint64_t run_seed, std::size_t count, std::optional<DepthBin> bin, double noise_px,
                              const SceneConfig& cfg = {});

/// Flat-shaded cuboid over a smooth background; `background_seed` drives the background only.
MaskedScene render_cuboid(const Pose& pose, const CameraIntrinsics& raster_cam, std::size_t size,
                          const ModelCuboid& cuboid, std::uint64_t background_seed);

/// Writes `<stem>.txt`, `<stem>_image.qpt` and `<stem>_mask.qpt` into `dir`.
void save_scene(const std::filesystem::path& dir, const std::string& stem, const Scene& scene);
/// Reads a scene text file and the tensors it references (relative to its directory).
Scene load_scene(const std::filesystem::path& file);

/// Scene text files (`*.txt`) of a directory in name order. Throws ConfigError
/// if the directory does not exist or holds no scene.
std::vector<std::filesystem::path> list_scene_files(const std::filesystem::path& dir);

}  // namespace qpose
