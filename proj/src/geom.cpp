#include "uslam/geom.hpp"

#include <cmath>

namespace uslam::geom {

Matrix3d skew(const Vector3d& v) {
    Matrix3d m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

Eigen::Quaterniond quat_exp(const Vector3d& w) {
    double theta = w.norm();
    Eigen::Quaterniond q;
    if (theta < 1e-12) {
        q = Eigen::Quaterniond(1, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z());
    } else {
        double s = std::sin(0.5 * theta) / theta;
        q = Eigen::Quaterniond(std::cos(0.5 * theta), s * w.x(), s * w.y(), s * w.z());
    }
    q.normalize();
    return q;
}

Vector3d transform_point(const Pose& pose, const Vector3d& p) {
    return pose.q * p + pose.t;
}

Vector2d project_point(const CameraIntrinsics& K, const Vector3d& p, double z_min) {
    if (p.z() <= z_min) throw NonPositiveDepth();
    return {K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy};
}

Vector3d backproject_pixel(const CameraIntrinsics& K, const Vector2d& uv, double depth) {
    if (depth <= 0) throw NonPositiveDepth();
    return {(uv.x() - K.cx) / K.fx * depth, (uv.y() - K.cy) / K.fy * depth, depth};
}

Pose pose_retract(const Pose& pose, const Twist& delta) {
    Pose p;
    p.q = (pose.q * quat_exp(delta.head<3>())).normalized();
    p.t = pose.t + delta.tail<3>();
    return p;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraIntrinsics& K,
                                                const Vector3d& p) {
    const double iz = 1.0 / p.z();
    Eigen::Matrix<double, 2, 3> J;
    J << K.fx * iz, 0, -K.fx * p.x() * iz * iz,
         0, K.fy * iz, -K.fy * p.y() * iz * iz;
    return J;
}

double rotation_angle_deg(const Pose& a, const Pose& b) {
    double d = std::abs(a.q.normalized().dot(b.q.normalized()));
    d = std::min(d, 1.0);
    return 2.0 * std::acos(d) * 180.0 / M_PI;
}

}  // namespace uslam::geom
