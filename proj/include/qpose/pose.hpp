#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace qpose {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;

    /// Throws GeometryError unless fx, fy > 0 and everything is finite.
    void validate() const;
    /// Same camera at a different resolution: focal lengths and principal point scaled by `factor`.
    [[nodiscard]] CameraIntrinsics scaled(double factor) const;
    bool operator==(const CameraIntrinsics&) const = default;
};

/// Object-to-camera rigid transform x_cam = R(q) x + t.
struct Pose {
    Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
    Vec3 t = Vec3::Zero();

    /// Normalizes q and flips its sign so that w >= 0. Throws NumericError for a zero quaternion.
    static Pose make(const Eigen::Quaterniond& q, const Vec3& t);
    static Pose from_rotation(const Mat3& r, const Vec3& t);

    [[nodiscard]] Mat3 rotation() const { return q.toRotationMatrix(); }
    [[nodiscard]] Vec3 apply(const Vec3& x) const { return q * x + t; }
};

struct KeypointSet {
    std::vector<Vec2> points2d;
    std::vector<Vec3> points3d;
    std::vector<double> confidence;

    [[nodiscard]] std::size_t size() const { return points3d.size(); }
    /// Throws ShapeError when the three arrays disagree in length.
    void validate() const;
};

/// Axis-aligned box centred on the model origin.
struct ModelCuboid {
    Vec3 half_extents{0.4, 0.24, 0.18};

    void validate() const;
    [[nodiscard]] std::vector<Vec3> corners() const;
    /// Full space diagonal, 2 * ||half_extents||.
    [[nodiscard]] double diameter() const;
    /// K = 8 gives the corners; K = 11 adds the centres of the +x, +y and +z faces.
    [[nodiscard]] std::vector<Vec3> keypoints(std::size_t k) const;
};

/// Pinhole projection. Throws BehindCameraError for a point with Z <= 0 in the camera frame.
std::vector<Vec2> project(const Pose& pose, const CameraIntrinsics& cam, std::span<const Vec3> pts3d);
Vec2 project(const Pose& pose, const CameraIntrinsics& cam, const Vec3& x);

struct PnpResult {
    Pose pose;
    std::size_t iterations = 0;      // refinement iterations run
    std::size_t accepted_steps = 0;  // iterations whose step was kept
    bool converged = false;          // false when the iteration cap or damping cap was hit
    double rms = 0.0;                // reprojection RMS in pixels
};

struct RefineOptions {
    std::size_t max_iterations = 50;
    double step_tolerance = 1e-10;
    double damping_start = 1e-4;  // first damping value after a rejected step
    double damping_cap = 1e6;
};

/// Damped Gauss-Newton on the reprojection residual starting from `init`.
PnpResult refine_pose(const KeypointSet& kp, const CameraIntrinsics& cam, const Pose& init,
                      const RefineOptions& opts = {});

/// Normalized DLT for >= 6 non-coplanar points, otherwise a P3P search over
/// point triples; the best candidate is then refined.
/// Throws SolverError for fewer than 4 points or collinear model points.
PnpResult solve_pnp(const KeypointSet& kp, const CameraIntrinsics& cam, const RefineOptions& opts = {});

/// Candidate poses from the first three correspondences (up to four).
std::vector<Pose> p3p(const std::array<Vec3, 3>& model, const std::array<Vec2, 3>& pixels, const CameraIntrinsics& cam);

double reprojection_rms(const KeypointSet& kp, const CameraIntrinsics& cam, const Pose& pose);

struct AdiResult {
    double adi = 0.0;  // meters
    bool hit = false;  // adi < 0.1 * diameter
};

/// Mean over sample points of the distance to the closest transformed sample
/// under the other pose. Defaults to the cuboid corners when `samples` is empty.
AdiResult adi_01d(const Pose& pred, const Pose& gt, const ModelCuboid& model, std::span<const Vec3> samples = {});

struct SpeedError {
    double e_q = 0.0;
    double e_t = 0.0;
    double total = 0.0;
};

/// Rotation angle between quaternions plus translation error relative to ||t_gt||.
/// Throws MetricError when ||t_gt|| == 0.
SpeedError speed_error(const Pose& pred, const Pose& gt);

/// Angle of R_pred R_gt^T in radians.
double rotation_error(const Pose& a, const Pose& b);

}  // namespace qpose
