#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "uslam/core/errors.hpp"

namespace uslam::geom {

using Eigen::Matrix2d;
using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Twist = Eigen::Matrix<double, 6, 1>;  // [rotation (rad); translation (m)]

/// Depth below this is treated as behind the camera.
constexpr double kMinDepth = 1e-4;

struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const {
        if (fx <= 0 || fy <= 0 || cx < 0 || cx >= width || cy < 0 || cy >= height)
            throw InvalidConfig("invalid camera intrinsics");
    }

    /// Intrinsics for an image resized by `scale` (e.g. 1/3 mapping resolution).
    CameraIntrinsics scaled(double scale) const {
        CameraIntrinsics k = *this;
        k.fx *= scale;
        k.fy *= scale;
        k.cx *= scale;
        k.cy *= scale;
        k.width = std::max(1, int(std::lround(width * scale)));
        k.height = std::max(1, int(std::lround(height * scale)));
        return k;
    }
};

/// Rigid body pose, camera-to-world convention.
struct Pose {
    Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
    Vector3d t = Vector3d::Zero();

    static Pose identity() { return {}; }

    Matrix3d rotation() const { return q.toRotationMatrix(); }

    Pose inverse() const {
        Pose p;
        p.q = q.conjugate();
        p.t = -(p.q * t);
        return p;
    }

    Pose operator*(const Pose& o) const {
        Pose p;
        p.q = (q * o.q).normalized();
        p.t = q * o.t + t;
        return p;
    }
};

Matrix3d skew(const Vector3d& v);

/// Quaternion exponential of a rotation vector.
Eigen::Quaterniond quat_exp(const Vector3d& w);

Vector3d transform_point(const Pose& pose, const Vector3d& p);

Vector2d project_point(const CameraIntrinsics& K, const Vector3d& p_cam,
                       double z_min = kMinDepth);

Vector3d backproject_pixel(const CameraIntrinsics& K, const Vector2d& uv, double depth);

/// Right-multiplicative rotation update, additive translation update:
///   q' = q * exp(xi_rot),  t' = t + xi_trans.
Pose pose_retract(const Pose& pose, const Twist& delta);

/// 2x3 Jacobian of the pinhole projection at a camera-frame point.
Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraIntrinsics& K,
                                                const Vector3d& p_cam);

/// Geodesic rotation distance in degrees.
double rotation_angle_deg(const Pose& a, const Pose& b);

}  // namespace uslam::geom
