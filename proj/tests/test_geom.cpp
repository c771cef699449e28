#include <doctest.h>

#include <random>

#include "uslam/geom.hpp"

using namespace uslam;
using namespace uslam::geom;

namespace {

Pose random_pose(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0, 1);
    Pose p;
    p.q = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
    p.t = Vector3d(n(rng), n(rng), n(rng));
    return p;
}

}  // namespace

TEST_CASE("transform_point identity and translation") {
    Pose id = Pose::identity();
    CHECK((transform_point(id, {1, 2, 3}) - Vector3d(1, 2, 3)).norm() == 0);
    Pose tr;
    tr.t = {0, 0, 5};
    CHECK((transform_point(tr, {0, 0, 0}) - Vector3d(0, 0, 5)).norm() == 0);
}

TEST_CASE("transform_point round trip through inverse") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0, 2);
    for (int i = 0; i < 100; ++i) {
        Pose p = random_pose(rng);
        Vector3d x(n(rng), n(rng), n(rng));
        Vector3d back = transform_point(p.inverse(), transform_point(p, x));
        CHECK((back - x).norm() < 1e-9);
    }
}

TEST_CASE("pose composition associative") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0, 1);
    for (int i = 0; i < 50; ++i) {
        Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
        Vector3d x(n(rng), n(rng), n(rng));
        Vector3d lhs = transform_point((a * b) * c, x);
        Vector3d rhs = transform_point(a * (b * c), x);
        CHECK((lhs - rhs).norm() < 1e-9);
    }
}

TEST_CASE("project_point pinhole cases") {
    CameraIntrinsics K{100, 100, 50, 50, 100, 100};
    CHECK((project_point(K, {0, 0, 2}) - Vector2d(50, 50)).norm() < 1e-12);
    CameraIntrinsics K0{100, 100, 0, 0, 100, 100};
    CHECK((project_point(K0, {1, 0, 2}) - Vector2d(50, 0)).norm() < 1e-12);
    CHECK_THROWS_AS(project_point(K, {0, 0, 0}), NonPositiveDepth);
}

TEST_CASE("backproject is inverse of project") {
    CameraIntrinsics K{120, 110, 60, 45, 128, 96};
    CHECK((backproject_pixel(K, {60, 45}, 3.0) - Vector3d(0, 0, 3)).norm() < 1e-12);
    CHECK_THROWS_AS(backproject_pixel(K, {10, 10}, 0.0), NonPositiveDepth);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 100; ++i) {
        Vector2d uv(u(rng) * K.width, u(rng) * K.height);
        double d = 0.1 + 5 * u(rng);
        Vector2d back = project_point(K, backproject_pixel(K, uv, d));
        CHECK((back - uv).norm() < 1e-9);
        Vector3d p = backproject_pixel(K, uv, d);
        Vector3d p2 = backproject_pixel(K, project_point(K, p), p.z());
        CHECK((p2 - p).norm() < 1e-9);
    }
}

TEST_CASE("pose_retract basics") {
    std::mt19937_64 rng(5);
    Pose p = random_pose(rng);
    Pose r0 = pose_retract(p, Twist::Zero());
    CHECK(r0.q.coeffs() == p.q.coeffs());
    CHECK(r0.t == p.t);

    std::uniform_real_distribution<double> u(-1e-3, 1e-3);
    for (int i = 0; i < 50; ++i) {
        Twist d;
        for (int k = 0; k < 6; ++k) d[k] = u(rng);
        Pose fwd = pose_retract(p, d);
        Pose back = pose_retract(fwd, Twist(-d));
        CHECK((back.t - p.t).norm() < 1e-6);
        CHECK(rotation_angle_deg(back, p) < 1e-6);
    }
}

TEST_CASE("retract jacobian matches finite differences") {
    // d/d(twist) of transform_point(retract(pose, twist), x) at twist = 0
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0, 1);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        Pose p = random_pose(rng);
        Vector3d x(n(rng), n(rng), n(rng));
        // analytic: d/d(rot) = -R [x]x, d/d(trans) = I
        Eigen::Matrix<double, 3, 6> Ja;
        Ja.block<3, 3>(0, 0) = -p.rotation() * skew(x);
        Ja.block<3, 3>(0, 3).setIdentity();
        for (int k = 0; k < 6; ++k) {
            Twist d = Twist::Zero();
            d[k] = h;
            Vector3d fp = transform_point(pose_retract(p, d), x);
            d[k] = -h;
            Vector3d fm = transform_point(pose_retract(p, d), x);
            Vector3d fd = (fp - fm) / (2 * h);
            CHECK((fd - Ja.col(k)).norm() < 1e-5);
        }
    }
}

TEST_CASE("projection jacobian matches finite differences") {
    CameraIntrinsics K{150, 140, 64, 48, 128, 96};
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n(0, 1);
    const double h = 1e-7;
    for (int trial = 0; trial < 50; ++trial) {
        Vector3d p(n(rng), n(rng), 1.0 + std::abs(n(rng)));
        auto J = projection_jacobian(K, p);
        for (int k = 0; k < 3; ++k) {
            Vector3d dp = Vector3d::Zero();
            dp[k] = h;
            Vector2d fd = (project_point(K, p + dp) - project_point(K, p - dp)) / (2 * h);
            CHECK((fd - J.col(k)).norm() / std::max(1.0, fd.norm()) < 1e-4);
        }
    }
}
