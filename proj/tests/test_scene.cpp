#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "qpose/error.hpp"
#include "qpose/scene.hpp"
#include "test_util.hpp"

using namespace qpose;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    return d;
}

}  // namespace

TEST(Scene, DeterministicPerSeed) {
    const Scene a = gen_scene(11, DepthBin::Medium, 1.0);
    const Scene b = gen_scene(11, DepthBin::Medium, 1.0);
    EXPECT_EQ(a.gt.q.coeffs(), b.gt.q.coeffs());
    EXPECT_EQ(a.gt.t, b.gt.t);
    EXPECT_EQ(a.view.image, b.view.image);
    EXPECT_EQ(a.keypoints.points2d, b.keypoints.points2d);
    EXPECT_NE(gen_scene(12, DepthBin::Medium, 1.0).gt.t, a.gt.t);
}

TEST(Scene, NoiseDoesNotChangeGeometry) {
    const Scene clean = gen_scene(13, DepthBin::Near, 0.0);
    const Scene noisy = gen_scene(13, DepthBin::Near, 2.0);
    EXPECT_EQ(clean.gt.t, noisy.gt.t);
    const auto exact = project(clean.gt, clean.camera, clean.keypoints.points3d);
    for (std::size_t i = 0; i < exact.size(); ++i) {
        EXPECT_LE((clean.keypoints.points2d[i] - exact[i]).norm(), 1e-12);
        EXPECT_GT((noisy.keypoints.points2d[i] - exact[i]).norm(), 0.0);
    }
    EXPECT_THROW(gen_scene(13, DepthBin::Near, -1.0), ConfigError);
}

TEST(Scene, DepthBins) {
    EXPECT_EQ(depth_bin_of(2.0), DepthBin::Near);
    EXPECT_EQ(depth_bin_of(4.0), DepthBin::Medium);
    EXPECT_EQ(depth_bin_of(16.0), DepthBin::Far);
    EXPECT_THROW(depth_bin_of(1.99), GeometryError);
    EXPECT_THROW(depth_bin_of(16.01), GeometryError);
    EXPECT_EQ(parse_depth_bin(name(DepthBin::Far)), DepthBin::Far);
    for (DepthBin b : {DepthBin::Near, DepthBin::Medium, DepthBin::Far}) {
        for (std::uint64_t s = 0; s < 30; ++s) EXPECT_EQ(depth_bin_of(gen_scene(s, b, 0.0).gt.t.z()), b);
    }
}

TEST(Scene, SetsCycleBinsAndSharePrefixes) {
    const auto five = gen_scenes(4, 5, std::nullopt, 0.0);
    const auto three = gen_scenes(4, 3, std::nullopt, 0.0);
    const DepthBin cycle[] = {DepthBin::Near, DepthBin::Medium, DepthBin::Far};
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(depth_bin_of(five[i].gt.t.z()), cycle[i % 3]);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(five[i].gt.t, three[i].gt.t);
    EXPECT_NE(scene_seed(1, 0), scene_seed(1, 1));
    EXPECT_NE(scene_seed(1, 0), scene_seed(2, 0));
}

TEST(Scene, MaskMarksTheTarget) {
    const Scene s = gen_scene(14, DepthBin::Near, 0.0);
    double on = 0.0;
    for (double v : s.view.mask.data()) {
        EXPECT_TRUE(v == 0.0 || v == 1.0);
        on += v;
    }
    EXPECT_GT(on, 0.0);
    EXPECT_LT(on, static_cast<double>(s.view.mask.numel()));
    const Tensor erased = erase_target(s.view);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x) {
                const double m = s.view.mask.at(0, 0, y, x);
                EXPECT_EQ(erased.at(0, c, y, x), m == 1.0 ? 0.0 : s.view.image.at(0, c, y, x));
            }
}

TEST(Scene, SaveLoadRoundTrip) {
    const fs::path dir = fresh_dir("qpose_scene_test");
    const Scene s = gen_scene(15, DepthBin::Far, 1.5);
    save_scene(dir, "scene_00000", s);
    const Scene r = load_scene(dir / "scene_00000.txt");
    EXPECT_EQ(r.camera, s.camera);
    EXPECT_EQ(r.gt.q.coeffs(), s.gt.q.coeffs());
    EXPECT_EQ(r.gt.t, s.gt.t);
    EXPECT_EQ(r.keypoints.points2d, s.keypoints.points2d);
    EXPECT_EQ(r.keypoints.points3d, s.keypoints.points3d);
    EXPECT_EQ(r.view.image, s.view.image);
    EXPECT_EQ(r.view.mask, s.view.mask);
    EXPECT_EQ(list_scene_files(dir), (std::vector<fs::path>{dir / "scene_00000.txt"}));

    std::ofstream(dir / "broken.txt") << "camera 1 2\n";
    EXPECT_THROW(load_scene(dir / "broken.txt"), FormatError);
    EXPECT_THROW(load_scene(dir / "missing.txt"), FormatError);
    fs::remove_all(dir);
}

TEST(Scene, ListSceneFilesErrors) {
    const fs::path dir = fresh_dir("qpose_scene_empty");
    EXPECT_THROW(list_scene_files(dir), ConfigError);
    fs::create_directories(dir);
    EXPECT_THROW(list_scene_files(dir), ConfigError);
    fs::remove_all(dir);
}
