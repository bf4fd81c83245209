#include <gtest/gtest.h>

#include <numbers>

#include "qpose/error.hpp"
#include "qpose/pose.hpp"
#include "test_util.hpp"

using namespace qpose;
using namespace qpose::test;

namespace {

const CameraIntrinsics kCam{800.0, 800.0, 256.0, 256.0};

Pose random_pose(Rng& rng, double z_lo = 3.0, double z_hi = 10.0) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> z(z_lo, z_hi);
    std::uniform_real_distribution<double> xy(-0.5, 0.5);
    const Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    return Pose::make(q, Vec3(xy(rng), xy(rng), z(rng)));
}

KeypointSet observe(const Pose& pose, const std::vector<Vec3>& pts, Rng* rng = nullptr, double sigma = 0.0) {
    KeypointSet kp;
    kp.points3d = pts;
    kp.points2d = project(pose, kCam, pts);
    kp.confidence.assign(pts.size(), 1.0);
    if (rng) {
        std::normal_distribution<double> n(0.0, sigma);
        for (auto& p : kp.points2d) p += Vec2(n(*rng), n(*rng));
    }
    return kp;
}

Pose about_z(double angle, const Vec3& t) {
    return Pose::make(Eigen::Quaterniond(Eigen::AngleAxisd(angle, Vec3::UnitZ())), t);
}

}  // namespace

TEST(Project, Examples) {
    const CameraIntrinsics cam{100.0, 100.0, 10.0, 0.0};
    const Pose id;
    EXPECT_TRUE(project(id, CameraIntrinsics{100, 100, 0, 0}, Vec3(0, 0, 5)).isApprox(Vec2(0, 0)));
    const Vec2 p = project(id, cam, Vec3(2.5, 2.5, 5.0));
    EXPECT_DOUBLE_EQ(p.x(), 60.0);
    EXPECT_DOUBLE_EQ(p.y(), 50.0);
    EXPECT_THROW(project(id, cam, Vec3(0, 0, 0)), BehindCameraError);
    EXPECT_THROW(project(id, cam, Vec3(1, 1, -2)), BehindCameraError);
    EXPECT_THROW(CameraIntrinsics({0, 1, 0, 0}).validate(), GeometryError);
}

TEST(Pose, MakeNormalizesAndFixesSign) {
    const Pose p = Pose::make(Eigen::Quaterniond(-2, 0, 0, 0), Vec3(0, 0, 1));
    EXPECT_DOUBLE_EQ(p.q.w(), 1.0);
    EXPECT_THROW(Pose::make(Eigen::Quaterniond(0, 0, 0, 0), Vec3::Zero()), NumericError);
    Rng rng(71);
    const Pose r = random_pose(rng);
    const Pose back = Pose::from_rotation(r.rotation(), r.t);
    EXPECT_LE(rotation_error(r, back), 1e-12);
}

TEST(Pnp, RecoversNoiselessPose) {
    Rng rng(72);
    const ModelCuboid cube;
    for (std::size_t k : {8, 11}) {
        for (int trial = 0; trial < 50; ++trial) {
            const Pose gt = random_pose(rng);
            const PnpResult r = solve_pnp(observe(gt, cube.keypoints(k)), kCam);
            EXPECT_LE(rotation_error(r.pose, gt), 1e-7);
            EXPECT_LE((r.pose.t - gt.t).norm(), 1e-6);
            EXPECT_LE(r.rms, 1e-6);
        }
    }
}

TEST(Pnp, FourPointsUseP3P) {
    Rng rng(73);
    const std::vector<Vec3> pts{{0.3, 0.1, 0.0}, {-0.2, 0.25, 0.1}, {0.1, -0.3, -0.1}, {-0.25, -0.1, 0.2}};
    for (int trial = 0; trial < 20; ++trial) {
        const Pose gt = random_pose(rng);
        const PnpResult r = solve_pnp(observe(gt, pts), kCam);
        EXPECT_LE(r.rms, 1e-6);
        EXPECT_LE(rotation_error(r.pose, gt), 1e-6);

        const std::array<Vec3, 3> m{pts[0], pts[1], pts[2]};
        const auto px = project(gt, kCam, pts);
        const auto cands = p3p(m, {px[0], px[1], px[2]}, kCam);
        ASSERT_FALSE(cands.empty());
        ASSERT_LE(cands.size(), 4u);
        double best = 1e9;
        for (const Pose& c : cands) best = std::min(best, rotation_error(c, gt));
        // Unrefined candidates: the quartic is poorly conditioned for small, distant triangles.
        EXPECT_LE(best, 1e-5);
    }
}

TEST(Pnp, DegenerateInputs) {
    const Pose gt = about_z(0.3, Vec3(0, 0, 5));
    const std::vector<Vec3> three{{0, 0, 0}, {0.1, 0, 0}, {0, 0.1, 0}};
    EXPECT_THROW(solve_pnp(observe(gt, three), kCam), SolverError);
    const std::vector<Vec3> line{{0, 0, 0}, {0.1, 0, 0}, {0.2, 0, 0}, {0.3, 0, 0}, {0.4, 0, 0}};
    EXPECT_THROW(solve_pnp(observe(gt, line), kCam), SolverError);
    KeypointSet bad = observe(gt, ModelCuboid().corners());
    bad.confidence.pop_back();
    EXPECT_THROW(bad.validate(), ShapeError);
}

TEST(Refine, FixedPointTakesNoStep) {
    Rng rng(74);
    const Pose gt = random_pose(rng);
    const PnpResult r = refine_pose(observe(gt, ModelCuboid().corners()), kCam, gt);
    EXPECT_EQ(r.accepted_steps, 0u);
    EXPECT_TRUE(r.converged);
    EXPECT_LE(rotation_error(r.pose, gt), 1e-12);
}

TEST(Refine, ConvergesFromPerturbedStart) {
    Rng rng(75);
    const Pose gt = random_pose(rng);
    const Pose init = Pose::make(gt.q * Eigen::Quaterniond(Eigen::AngleAxisd(0.1, Vec3(1, 1, 0).normalized())),
                                 gt.t + Vec3(0.05, -0.05, 0.3));
    const PnpResult r = refine_pose(observe(gt, ModelCuboid().keypoints(11)), kCam, init);
    EXPECT_GT(r.accepted_steps, 0u);
    EXPECT_LE(rotation_error(r.pose, gt), 1e-8);
}

TEST(Pnp, NoisyReprojectionRms) {
    Rng rng(76);
    const ModelCuboid cube;
    double sum = 0.0;
    const int trials = 1000;
    for (int i = 0; i < trials; ++i) {
        const Pose gt = random_pose(rng, 4.0, 8.0);
        sum += solve_pnp(observe(gt, cube.keypoints(8), &rng, 2.0), kCam).rms;
    }
    EXPECT_LE(sum / trials, 2.5);
}

TEST(Adi, Properties) {
    const ModelCuboid cube;
    Rng rng(77);
    const Pose gt = random_pose(rng);
    EXPECT_EQ(adi_01d(gt, gt, cube).adi, 0.0);
    EXPECT_TRUE(adi_01d(gt, gt, cube).hit);

    const Vec3 d(0.03, -0.02, 0.05);
    const Pose shifted = Pose::make(gt.q, gt.t + d);
    EXPECT_LE(adi_01d(shifted, gt, cube).adi, d.norm() + 1e-12);

    // 180 degree turns about the box axes map the corner set onto itself.
    for (int a = 0; a < 3; ++a) {
        const Pose flip = Pose::make(gt.q * Eigen::Quaterniond(Eigen::AngleAxisd(std::numbers::pi, Vec3::Unit(a))), gt.t);
        EXPECT_LE(adi_01d(flip, gt, cube).adi, 1e-12);
    }

    const Pose far = Pose::make(gt.q, gt.t + Vec3(0, 0, cube.diameter()));
    EXPECT_FALSE(adi_01d(far, gt, cube).hit);
}

TEST(SpeedError, Examples) {
    const Pose gt = about_z(0.0, Vec3(0, 0, 5));
    const SpeedError e = speed_error(about_z(std::numbers::pi / 2, Vec3(0, 0, 5)), gt);
    EXPECT_NEAR(e.e_q, std::numbers::pi / 2, 1e-15);
    EXPECT_EQ(e.e_t, 0.0);

    // Relative translation error is invariant to a common scale.
    const Pose a = about_z(0.1, Vec3(0.2, 0.1, 4.0));
    const Pose b = about_z(0.1, Vec3(0.0, 0.0, 4.5));
    const Pose a3 = about_z(0.1, 3.0 * a.t);
    const Pose b3 = about_z(0.1, 3.0 * b.t);
    EXPECT_NEAR(speed_error(a, b).e_t, speed_error(a3, b3).e_t, 1e-15);
    EXPECT_NEAR(speed_error(a, b).total, speed_error(a, b).e_q + speed_error(a, b).e_t, 1e-15);
    EXPECT_THROW(speed_error(a, about_z(0.0, Vec3::Zero())), MetricError);

    const Pose q = about_z(0.7, Vec3(0, 0, 3));
    Pose neg = q;
    neg.q.coeffs() *= -1.0;
    EXPECT_LE(rotation_error(q, neg), 1e-15);
}

TEST(Cuboid, Keypoints) {
    const ModelCuboid cube;
    EXPECT_EQ(cube.keypoints(8).size(), 8u);
    const auto k11 = cube.keypoints(11);
    ASSERT_EQ(k11.size(), 11u);
    EXPECT_TRUE(k11[8].isApprox(Vec3(0.4, 0, 0)));
    EXPECT_NEAR(cube.diameter(), 2.0 * Vec3(0.4, 0.24, 0.18).norm(), 1e-15);
}
