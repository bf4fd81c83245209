#include "qpose/pose.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "qpose/error.hpp"

namespace qpose {
namespace {

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

Eigen::Quaterniond exp_so3(const Vec3& w) {
    const double angle = w.norm();
    if (angle == 0.0) return Eigen::Quaterniond::Identity();
    return Eigen::Quaterniond(Eigen::AngleAxisd(angle, w / angle));
}

Vec2 normalized_coords(const Vec2& px, const CameraIntrinsics& cam) {
    return {(px.x() - cam.cx) / cam.fx, (px.y() - cam.cy) / cam.fy};
}

/// Sum of squared residuals; +inf if any point falls behind the camera.
double reprojection_cost(const KeypointSet& kp, const CameraIntrinsics& cam, const Pose& pose) {
    double cost = 0.0;
    for (std::size_t i = 0; i < kp.size(); ++i) {
        const Vec3 xc = pose.apply(kp.points3d[i]);
        if (!(xc.z() > 0.0)) return std::numeric_limits<double>::infinity();
        const Vec2 p{cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy};
        cost += (p - kp.points2d[i]).squaredNorm();
    }
    return cost;
}

enum class PointLayout { General, Planar, Collinear };

PointLayout classify(std::span<const Vec3> pts) {
    Vec3 mean = Vec3::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
    const Vec3 ev = Eigen::SelfAdjointEigenSolver<Mat3>(cov, Eigen::EigenvaluesOnly).eigenvalues();
    if (!(ev(2) > 0.0) || ev(1) <= 1e-12 * ev(2)) return PointLayout::Collinear;
    if (ev(0) <= 1e-10 * ev(2)) return PointLayout::Planar;
    return PointLayout::General;
}

/// Hartley-normalized DLT on normalized image coordinates.
Pose dlt(const KeypointSet& kp, const CameraIntrinsics& cam) {
    const std::size_t n = kp.size();
    std::vector<Vec2> m(n);
    Vec2 c2 = Vec2::Zero();
    Vec3 c3 = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = normalized_coords(kp.points2d[i], cam);
        c2 += m[i];
        c3 += kp.points3d[i];
    }
    c2 /= static_cast<double>(n);
    c3 /= static_cast<double>(n);
    double d2 = 0.0;
    double d3 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        d2 += (m[i] - c2).norm();
        d3 += (kp.points3d[i] - c3).norm();
    }
    const double s2 = d2 > 0.0 ? std::sqrt(2.0) * static_cast<double>(n) / d2 : 1.0;
    const double s3 = std::sqrt(3.0) * static_cast<double>(n) / d3;

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(2 * n), 12);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 X = (kp.points3d[i] - c3) * s3;
        const Vec2 x = (m[i] - c2) * s2;
        const Eigen::Vector4d h(X.x(), X.y(), X.z(), 1.0);
        const auto r = static_cast<Eigen::Index>(2 * i);
        a.block<1, 4>(r, 0) = h.transpose();
        a.block<1, 4>(r, 8) = -x.x() * h.transpose();
        a.block<1, 4>(r + 1, 4) = h.transpose();
        a.block<1, 4>(r + 1, 8) = -x.y() * h.transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd p = svd.matrixV().col(11);
    Eigen::Matrix<double, 3, 4> pn;
    pn << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), p(8), p(9), p(10), p(11);

    Eigen::Matrix3d t2 = Eigen::Matrix3d::Identity();
    t2(0, 0) = t2(1, 1) = s2;
    t2(0, 2) = -s2 * c2.x();
    t2(1, 2) = -s2 * c2.y();
    Eigen::Matrix4d t3 = Eigen::Matrix4d::Identity();
    t3.topLeftCorner<3, 3>() *= s3;
    t3.topRightCorner<3, 1>() = -s3 * c3;
    Eigen::Matrix<double, 3, 4> proj = t2.inverse() * pn * t3;

    Mat3 mrot = proj.leftCols<3>();
    if (mrot.determinant() < 0.0) {
        proj = -proj;
        mrot = -mrot;
    }
    Eigen::JacobiSVD<Mat3> rs(mrot, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = rs.matrixU() * rs.matrixV().transpose();
    const double scale = rs.singularValues().mean();
    if (!(scale > 0.0) || !std::isfinite(scale)) throw SolverError("solve_pnp: degenerate DLT solution");
    return Pose::from_rotation(r, proj.col(3) / scale);
}

/// Real roots of sum_k c[k] v^k (degree <= 4), polished with Newton steps.
std::vector<double> real_roots(std::vector<double> c) {
    double cmax = 0.0;
    for (double v : c) cmax = std::max(cmax, std::abs(v));
    if (cmax == 0.0) return {};
    while (c.size() > 1 && std::abs(c.back()) <= 1e-14 * cmax) c.pop_back();
    const auto deg = static_cast<Eigen::Index>(c.size() - 1);
    if (deg < 1) return {};
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
    for (Eigen::Index i = 0; i < deg; ++i) comp(0, i) = -c[static_cast<std::size_t>(deg - 1 - i)] / c.back();
    for (Eigen::Index i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
    std::vector<double> roots;
    for (Eigen::Index i = 0; i < deg; ++i) {
        const auto z = es.eigenvalues()(i);
        if (std::abs(z.imag()) > 1e-6 * std::max(1.0, std::abs(z.real()))) continue;
        double v = z.real();
        for (int it = 0; it < 8; ++it) {
            double f = 0.0;
            double df = 0.0;
            for (std::size_t k = c.size(); k-- > 0;) {
                df = df * v + f;
                f = f * v + c[k];
            }
            if (df == 0.0) break;
            v -= f / df;
        }
        roots.push_back(v);
    }
    return roots;
}

using Poly = std::vector<double>;

Poly mul(const Poly& a, const Poly& b) {
    Poly r(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
    }
    return r;
}

Poly axpy(double s, const Poly& a, const Poly& b) {
    Poly r(std::max(a.size(), b.size()), 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) r[i] += s * a[i];
    for (std::size_t i = 0; i < b.size(); ++i) r[i] += b[i];
    return r;
}

/// Rigid transform mapping model points onto camera-frame points (Kabsch).
Pose absolute_orientation(const std::array<Vec3, 3>& model, const std::array<Vec3, 3>& cam_pts) {
    Vec3 cm = Vec3::Zero();
    Vec3 cc = Vec3::Zero();
    for (int i = 0; i < 3; ++i) {
        cm += model[i];
        cc += cam_pts[i];
    }
    cm /= 3.0;
    cc /= 3.0;
    Mat3 h = Mat3::Zero();
    for (int i = 0; i < 3; ++i) h += (model[i] - cm) * (cam_pts[i] - cc).transpose();
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
    return Pose::from_rotation(r, cc - r * cm);
}

}  // namespace

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy) || !std::isfinite(cx) ||
        !std::isfinite(cy)) {
        throw GeometryError("camera intrinsics require finite fx, fy > 0");
    }
}

CameraIntrinsics CameraIntrinsics::scaled(double factor) const { return {fx * factor, fy * factor, cx * factor, cy * factor}; }

Pose Pose::make(const Eigen::Quaterniond& q, const Vec3& t) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("pose: quaternion must be finite and nonzero");
    Pose p;
    p.q = Eigen::Quaterniond(q.coeffs() / n);
    if (p.q.w() < 0.0) p.q.coeffs() = -p.q.coeffs();
    p.t = t;
    return p;
}

Pose Pose::from_rotation(const Mat3& r, const Vec3& t) { return make(Eigen::Quaterniond(r), t); }

void KeypointSet::validate() const {
    if (points2d.size() != points3d.size() || confidence.size() != points3d.size()) {
        throw ShapeError("keypoint set: " + std::to_string(points2d.size()) + " 2-D points, " +
                         std::to_string(points3d.size()) + " 3-D points, " + std::to_string(confidence.size()) +
                         " confidences");
    }
}

void ModelCuboid::validate() const {
    if (!(half_extents.minCoeff() > 0.0) || !half_extents.allFinite()) {
        throw GeometryError("cuboid half-extents must be positive");
    }
}

std::vector<Vec3> ModelCuboid::corners() const {
    std::vector<Vec3> out;
    for (int i = 0; i < 8; ++i) {
        out.emplace_back((i & 1 ? 1.0 : -1.0) * half_extents.x(), (i & 2 ? 1.0 : -1.0) * half_extents.y(),
                         (i & 4 ? 1.0 : -1.0) * half_extents.z());
    }
    return out;
}

double ModelCuboid::diameter() const { return 2.0 * half_extents.norm(); }

std::vector<Vec3> ModelCuboid::keypoints(std::size_t k) const {
    std::vector<Vec3> out = corners();
    if (k == 8) return out;
    if (k == 11) {
        out.emplace_back(half_extents.x(), 0.0, 0.0);
        out.emplace_back(0.0, half_extents.y(), 0.0);
        out.emplace_back(0.0, 0.0, half_extents.z());
        return out;
    }
    throw ShapeError("cuboid keypoints: K must be 8 or 11, got " + std::to_string(k));
}

Vec2 project(const Pose& pose, const CameraIntrinsics& cam, const Vec3& x) {
    const Vec3 xc = pose.apply(x);
    if (!(xc.z() > 0.0)) throw BehindCameraError("project: point has depth " + std::to_string(xc.z()));
    return {cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy};
}

std::vector<Vec2> project(const Pose& pose, const CameraIntrinsics& cam, std::span<const Vec3> pts3d) {
    std::vector<Vec2> out;
    out.reserve(pts3d.size());
    for (const auto& x : pts3d) out.push_back(project(pose, cam, x));
    return out;
}

double reprojection_rms(const KeypointSet& kp, const CameraIntrinsics& cam, const Pose& pose) {
    if (kp.size() == 0) return 0.0;
    return std::sqrt(reprojection_cost(kp, cam, pose) / static_cast<double>(kp.size()));
}

std::vector<Pose> p3p(const std::array<Vec3, 3>& model, const std::array<Vec2, 3>& pixels, const CameraIntrinsics& cam) {
    std::array<Vec3, 3> j;
    for (int i = 0; i < 3; ++i) {
        const Vec2 m = normalized_coords(pixels[static_cast<std::size_t>(i)], cam);
        j[static_cast<std::size_t>(i)] = Vec3(m.x(), m.y(), 1.0).normalized();
    }
    const double a2 = (model[1] - model[2]).squaredNorm();
    const double b2 = (model[0] - model[2]).squaredNorm();
    const double c2 = (model[0] - model[1]).squaredNorm();
    if (b2 == 0.0 || a2 == 0.0 || c2 == 0.0) return {};
    const double ca = j[1].dot(j[2]);
    const double cb = j[0].dot(j[2]);
    const double cg = j[0].dot(j[1]);

    // With u = s2/s1, v = s3/s1 the law of cosines gives
    //   b2 (1 + u^2 - 2u cg) = c2 Q(v),  b2 (u^2 + v^2 - 2uv ca) = a2 Q(v),  Q = 1 + v^2 - 2v cb.
    // Their difference is linear in u: u = N(v) / D(v); substituting back yields a quartic in v.
    const Poly q{1.0, -2.0 * cb, 1.0};
    const Poly n = axpy(a2 - c2, q, Poly{b2, 0.0, -b2});
    const Poly d{2.0 * b2 * cg, -2.0 * b2 * ca};
    Poly quartic = mul(n, n);
    quartic = axpy(b2, quartic, Poly{});
    quartic = axpy(-2.0 * b2 * cg, mul(n, d), quartic);
    quartic = axpy(1.0, mul(axpy(-c2, q, Poly{b2}), mul(d, d)), quartic);

    std::vector<Pose> out;
    for (double v : real_roots(quartic)) {
        if (!(v > 0.0)) continue;
        const double dv = d[0] + d[1] * v;
        if (std::abs(dv) < 1e-14 * std::max(1.0, std::abs(d[0]))) continue;
        const double u = (n[0] + n[1] * v + n[2] * v * v) / dv;
        if (!(u > 0.0)) continue;
        const double qv = 1.0 + v * v - 2.0 * v * cb;
        if (!(qv > 0.0)) continue;
        const double s1 = std::sqrt(b2 / qv);
        const std::array<Vec3, 3> pts{s1 * j[0], u * s1 * j[1], v * s1 * j[2]};
        out.push_back(absolute_orientation(model, pts));
    }
    return out;
}

PnpResult refine_pose(const KeypointSet& kp, const CameraIntrinsics& cam, const Pose& init, const RefineOptions& opts) {
    kp.validate();
    cam.validate();
    PnpResult res;
    res.pose = init;
    double cost = reprojection_cost(kp, cam, res.pose);
    if (!std::isfinite(cost)) throw BehindCameraError("refine_pose: initial pose puts points behind the camera");
    double lambda = 0.0;

    using Mat6 = Eigen::Matrix<double, 6, 6>;
    using Vec6 = Eigen::Matrix<double, 6, 1>;
    while (res.iterations < opts.max_iterations) {
        ++res.iterations;
        Mat6 h = Mat6::Zero();
        Vec6 g = Vec6::Zero();
        for (std::size_t i = 0; i < kp.size(); ++i) {
            const Vec3 y = res.pose.q * kp.points3d[i];
            const Vec3 xc = y + res.pose.t;
            const double iz = 1.0 / xc.z();
            Eigen::Matrix<double, 2, 3> jp;
            jp << cam.fx * iz, 0.0, -cam.fx * xc.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * xc.y() * iz * iz;
            Eigen::Matrix<double, 2, 6> jac;
            jac.leftCols<3>() = -jp * skew(y);
            jac.rightCols<3>() = jp;
            const Vec2 r = Vec2(cam.fx * xc.x() * iz + cam.cx, cam.fy * xc.y() * iz + cam.cy) - kp.points2d[i];
            h += jac.transpose() * jac;
            g += jac.transpose() * r;
        }
        Mat6 damped = h;
        damped.diagonal() += lambda * h.diagonal();
        const Vec6 delta = damped.ldlt().solve(-g);
        if (!delta.allFinite()) break;
        if (delta.norm() < opts.step_tolerance) {
            res.converged = true;
            break;
        }
        Pose trial = Pose::make(exp_so3(delta.head<3>()) * res.pose.q, res.pose.t + delta.tail<3>());
        const double trial_cost = reprojection_cost(kp, cam, trial);
        if (trial_cost <= cost) {
            res.pose = trial;
            cost = trial_cost;
            ++res.accepted_steps;
            lambda = lambda / 10.0 < opts.damping_start ? 0.0 : lambda / 10.0;
        } else {
            lambda = lambda == 0.0 ? opts.damping_start : lambda * 10.0;
            if (lambda > opts.damping_cap) break;
        }
    }
    res.rms = std::sqrt(cost / static_cast<double>(kp.size()));
    return res;
}

PnpResult solve_pnp(const KeypointSet& kp, const CameraIntrinsics& cam, const RefineOptions& opts) {
    kp.validate();
    cam.validate();
    const std::size_t n = kp.size();
    if (n < 4) throw SolverError("solve_pnp: need at least 4 correspondences, got " + std::to_string(n));
    const PointLayout layout = classify(kp.points3d);
    if (layout == PointLayout::Collinear) throw SolverError("solve_pnp: model points are collinear");

    std::optional<Pose> init;
    if (layout == PointLayout::General && n >= 6) {
        init = dlt(kp, cam);
        if (!std::isfinite(reprojection_cost(kp, cam, *init))) init.reset();
    }
    if (!init) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = a + 1; b < n; ++b) {
                for (std::size_t c = b + 1; c < n; ++c) {
                    const std::array<Vec3, 3> m{kp.points3d[a], kp.points3d[b], kp.points3d[c]};
                    if ((m[1] - m[0]).cross(m[2] - m[0]).norm() <= 1e-12 * (m[1] - m[0]).squaredNorm()) continue;
                    const std::array<Vec2, 3> px{kp.points2d[a], kp.points2d[b], kp.points2d[c]};
                    for (const Pose& cand : p3p(m, px, cam)) {
                        const double cost = reprojection_cost(kp, cam, cand);
                        if (cost < best) {
                            best = cost;
                            init = cand;
                        }
                    }
                }
            }
        }
    }
    if (!init) throw SolverError("solve_pnp: no pose candidate places all points in front of the camera");
    return refine_pose(kp, cam, *init, opts);
}

AdiResult adi_01d(const Pose& pred, const Pose& gt, const ModelCuboid& model, std::span<const Vec3> samples) {
    model.validate();
    const std::vector<Vec3> corners = model.corners();
    if (samples.empty()) samples = corners;
    std::vector<Vec3> g;
    g.reserve(samples.size());
    for (const auto& x : samples) g.push_back(gt.apply(x));
    double total = 0.0;
    for (const auto& x : samples) {
        const Vec3 p = pred.apply(x);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& y : g) best = std::min(best, (p - y).norm());
        total += best;
    }
    AdiResult r;
    r.adi = total / static_cast<double>(samples.size());
    r.hit = r.adi < 0.1 * model.diameter();
    return r;
}

double rotation_error(const Pose& a, const Pose& b) {
    // 2 acos(|<qa, qb>|), evaluated through atan2 so small angles keep full precision.
    const Eigen::Quaterniond rel = b.q.conjugate() * a.q;
    return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

SpeedError speed_error(const Pose& pred, const Pose& gt) {
    const double tn = gt.t.norm();
    if (!(tn > 0.0)) throw MetricError("speed_error: ground-truth translation is zero");
    SpeedError e;
    e.e_q = rotation_error(pred, gt);
    e.e_t = (pred.t - gt.t).norm() / tn;
    e.total = e.e_q + e.e_t;
    return e;
}

}  // namespace qpose
