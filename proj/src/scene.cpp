#include "qpose/scene.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "qpose/error.hpp"
#include "qpose/tensor_io.hpp"

namespace qpose {
namespace {

constexpr std::array<double, 3> kTargetColor{0.9, 0.75, 0.55};

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

bool inside_convex(const std::array<Vec2, 4>& poly, const Vec2& p) {
    bool pos = false;
    bool neg = false;
    for (std::size_t i = 0; i < 4; ++i) {
        const double c = cross2(poly[(i + 1) % 4] - poly[i], p - poly[i]);
        pos |= c > 0.0;
        neg |= c < 0.0;
    }
    return !(pos && neg);
}

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

std::string_view name(DepthBin b) {
    switch (b) {
        case DepthBin::Near: return "near";
        case DepthBin::Medium: return "medium";
        case DepthBin::Far: return "far";
    }
    return "?";
}

DepthBin parse_depth_bin(std::string_view s) {
    if (s == "near") return DepthBin::Near;
    if (s == "medium") return DepthBin::Medium;
    if (s == "far") return DepthBin::Far;
    throw ConfigError("unknown depth bin '" + std::string(s) + "' (expected near, medium or far)");
}

std::pair<double, double> depth_range(DepthBin b) {
    switch (b) {
        case DepthBin::Near: return {2.0, 4.0};
        case DepthBin::Medium: return {4.0, 8.0};
        case DepthBin::Far: return {8.0, 16.0};
    }
    return {0.0, 0.0};
}

DepthBin depth_bin_of(double z) {
    if (z >= 2.0 && z < 4.0) return DepthBin::Near;
    if (z >= 4.0 && z < 8.0) return DepthBin::Medium;
    if (z >= 8.0 && z <= 16.0) return DepthBin::Far;
    throw GeometryError("depth " + std::to_string(z) + " m lies outside every bin");
}

MaskedScene render_cuboid(const Pose& pose, const CameraIntrinsics& raster_cam, std::size_t size,
                          const ModelCuboid& cuboid, std::uint64_t background_seed) {
    cuboid.validate();
    std::mt19937_64 rng(background_seed);
    std::uniform_real_distribution<double> offset(-0.3, 0.3);
    std::uniform_real_distribution<double> amp(0.1, 0.3);
    std::uniform_real_distribution<double> freq(0.5, 2.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

    MaskedScene out{Tensor({1, 3, size, size}), Tensor({1, 1, size, size})};
    const double s = static_cast<double>(size);
    for (std::size_t c = 0; c < 3; ++c) {
        const double o = offset(rng);
        const double a = amp(rng);
        const double kx = freq(rng);
        const double ky = freq(rng);
        const double ph = phase(rng);
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const double arg = 2.0 * std::numbers::pi * (kx * (x + 0.5) / s + ky * (y + 0.5) / s) + ph;
                out.image.at(0, c, y, x) = o + a * std::sin(arg);
            }
        }
    }

    const Mat3 r = pose.rotation();
    const Vec3& h = cuboid.half_extents;
    for (int axis = 0; axis < 3; ++axis) {
        for (double sign : {-1.0, 1.0}) {
            Vec3 normal = Vec3::Zero();
            normal[axis] = sign;
            const Vec3 centre = normal.cwiseProduct(h);
            const Vec3 n_cam = r * normal;
            const Vec3 c_cam = pose.apply(centre);
            if (n_cam.dot(c_cam) >= 0.0) continue;  // back face
            const int b = (axis + 1) % 3;
            const int d = (axis + 2) % 3;
            std::array<Vec2, 4> quad;
            constexpr double su[4] = {-1, 1, 1, -1};
            constexpr double sv[4] = {-1, -1, 1, 1};
            for (int k = 0; k < 4; ++k) {
                Vec3 corner = centre;
                corner[b] = su[k] * h[b];
                corner[d] = sv[k] * h[d];
                quad[static_cast<std::size_t>(k)] = project(pose, raster_cam, corner);
            }
            const double shade = 0.3 + 0.7 * std::abs(n_cam.dot(c_cam.normalized()));
            for (std::size_t y = 0; y < size; ++y) {
                for (std::size_t x = 0; x < size; ++x) {
                    if (out.mask.at(0, 0, y, x) != 0.0) continue;
                    if (!inside_convex(quad, Vec2(x + 0.5, y + 0.5))) continue;
                    out.mask.at(0, 0, y, x) = 1.0;
                    for (std::size_t c = 0; c < 3; ++c) out.image.at(0, c, y, x) = kTargetColor[c] * shade;
                }
            }
        }
    }
    return out;
}

Scene gen_scene(std::uint64_t seed, DepthBin bin, double noise_px, const SceneConfig& cfg) {
    cfg.camera.validate();
    if (!(noise_px >= 0.0) || !std::isfinite(noise_px)) throw ConfigError("scene noise must be finite and >= 0");
    if (cfg.width != cfg.height || cfg.width == 0 || cfg.raster_size == 0) {
        throw ConfigError("scene generator needs a square, non-empty image");
    }
    std::mt19937_64 rng(seed);
    const auto [lo, hi] = depth_range(bin);
    std::uniform_real_distribution<double> depth(lo, hi);
    std::uniform_real_distribution<double> centre(-cfg.max_center_offset_px, cfg.max_center_offset_px);
    std::normal_distribution<double> normal(0.0, 1.0);

    const double z = depth(rng);
    const double du = centre(rng);
    const double dv = centre(rng);
    Eigen::Quaterniond q;
    q.w() = normal(rng);
    q.x() = normal(rng);
    q.y() = normal(rng);
    q.z() = normal(rng);

    Scene s;
    s.camera = cfg.camera;
    s.width = cfg.width;
    s.height = cfg.height;
    s.cuboid = cfg.cuboid;
    s.gt = Pose::make(q, Vec3(du * z / cfg.camera.fx, dv * z / cfg.camera.fy, z));

    const std::vector<Vec3> model = cfg.cuboid.keypoints(cfg.keypoints);
    const std::vector<Vec2> clean = project(s.gt, cfg.camera, model);
    s.keypoints.points3d = model;
    for (const Vec2& p : clean) {
        const double nu = normal(rng);
        const double nv = normal(rng);
        s.keypoints.points2d.emplace_back(p.x() + noise_px * nu, p.y() + noise_px * nv);
        s.keypoints.confidence.push_back(1.0);
    }
    const std::uint64_t background_seed = rng();
    const double factor = static_cast<double>(cfg.raster_size) / static_cast<double>(cfg.width);
    s.view = render_cuboid(s.gt, cfg.camera.scaled(factor), cfg.raster_size, cfg.cuboid, background_seed);
    return s;
}

std::uint64_t scene_seed(std::uint64_t run_seed, std::uint64_t index) {
    std::uint64_t z = run_seed * 0x9e3779b97f4a7c15ULL + index + 0x632be59bd9b4e019ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<Scene> gen_scenes(std::uint64_t run_seed, std::size_t count, std::optional<DepthBin> bin, double noise_px,
                              const SceneConfig& cfg) {
    static constexpr DepthBin kCycle[3] = {DepthBin::Near, DepthBin::Medium, DepthBin::Far};
    std::vector<Scene> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(gen_scene(scene_seed(run_seed, i), bin ? *bin : kCycle[i % 3], noise_px, cfg));
    }
    return out;
}

void save_scene(const std::filesystem::path& dir, const std::string& stem, const Scene& scene) {
    std::filesystem::create_directories(dir);
    const std::string image_name = stem + "_image.qpt";
    const std::string mask_name = stem + "_mask.qpt";
    std::string text;
    const auto& c = scene.camera;
    text += fmt::format("camera {} {} {} {} {} {}\n", fmt_double(c.fx), fmt_double(c.fy), fmt_double(c.cx),
                        fmt_double(c.cy), scene.width, scene.height);
    const auto& p = scene.gt;
    text += fmt::format("pose {} {} {} {} {} {} {}\n", fmt_double(p.q.w()), fmt_double(p.q.x()), fmt_double(p.q.y()),
                        fmt_double(p.q.z()), fmt_double(p.t.x()), fmt_double(p.t.y()), fmt_double(p.t.z()));
    const Vec3& h = scene.cuboid.half_extents;
    text += fmt::format("cuboid {} {} {}\n", fmt_double(h.x()), fmt_double(h.y()), fmt_double(h.z()));
    text += fmt::format("keypoints {}\n", scene.keypoints.size());
    for (std::size_t i = 0; i < scene.keypoints.size(); ++i) {
        const Vec3& x = scene.keypoints.points3d[i];
        const Vec2& u = scene.keypoints.points2d[i];
        text += fmt::format("{} {} {} {} {} {}\n", fmt_double(x.x()), fmt_double(x.y()), fmt_double(x.z()),
                            fmt_double(u.x()), fmt_double(u.y()), fmt_double(scene.keypoints.confidence[i]));
    }
    text += "image " + image_name + "\n";
    text += "mask " + mask_name + "\n";

    std::ofstream os(dir / (stem + ".txt"), std::ios::binary);
    if (!os) throw FormatError("cannot write scene file in " + dir.string());
    os << text;
    save_qpt(dir / image_name, scene.view.image);
    save_qpt(dir / mask_name, scene.view.mask);
}

Scene load_scene(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is) throw FormatError("cannot open scene file " + file.string());
    auto fail = [&](const std::string& what) { throw FormatError(file.string() + ": " + what); };
    auto next_line = [&](const char* tag) {
        std::string line;
        if (!std::getline(is, line)) fail(std::string("missing '") + tag + "' line");
        std::istringstream ls(line);
        std::string got;
        ls >> got;
        if (got != tag) fail(std::string("expected '") + tag + "', found '" + got + "'");
        return ls;
    };
    auto read_all = [&](std::istringstream& ls, auto&... out) {
        ((ls >> out), ...);
        std::string extra;
        if (ls.fail() || (ls >> extra)) fail("malformed line");
    };

    Scene s;
    {
        auto ls = next_line("camera");
        read_all(ls, s.camera.fx, s.camera.fy, s.camera.cx, s.camera.cy, s.width, s.height);
    }
    {
        auto ls = next_line("pose");
        double qw, qx, qy, qz, tx, ty, tz;
        read_all(ls, qw, qx, qy, qz, tx, ty, tz);
        s.gt.q = Eigen::Quaterniond(qw, qx, qy, qz);
        s.gt.t = Vec3(tx, ty, tz);
        if (std::abs(s.gt.q.norm() - 1.0) > 1e-9 || qw < 0.0) fail("pose quaternion is not a canonical unit quaternion");
    }
    {
        auto ls = next_line("cuboid");
        read_all(ls, s.cuboid.half_extents.x(), s.cuboid.half_extents.y(), s.cuboid.half_extents.z());
    }
    std::size_t k = 0;
    {
        auto ls = next_line("keypoints");
        read_all(ls, k);
    }
    for (std::size_t i = 0; i < k; ++i) {
        std::string line;
        if (!std::getline(is, line)) fail("truncated keypoint list");
        std::istringstream ls(line);
        double x, y, z, u, v, conf;
        read_all(ls, x, y, z, u, v, conf);
        s.keypoints.points3d.emplace_back(x, y, z);
        s.keypoints.points2d.emplace_back(u, v);
        s.keypoints.confidence.push_back(conf);
    }
    std::string image_name;
    std::string mask_name;
    {
        auto ls = next_line("image");
        read_all(ls, image_name);
    }
    {
        auto ls = next_line("mask");
        read_all(ls, mask_name);
    }
    try {
        s.camera.validate();
        s.cuboid.validate();
    } catch (const Error& e) {
        fail(e.what());
    }
    const auto dir = file.parent_path();
    s.view.image = load_qpt(dir / image_name);
    s.view.mask = load_qpt(dir / mask_name);
    return s;
}

std::vector<std::filesystem::path> list_scene_files(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ConfigError("scene directory " + dir.string() + " does not exist");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    }
    if (files.empty()) throw ConfigError("scene directory " + dir.string() + " holds no scene files");
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace qpose
