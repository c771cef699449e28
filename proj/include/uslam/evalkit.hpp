#pragma once

#include <string>
#include <vector>

#include "uslam/core/image.hpp"
#include "uslam/geom.hpp"

namespace uslam::evalkit {

using geom::Matrix3d;
using geom::Pose;
using geom::Vector3d;

/// Time-stamped camera trajectory. Timestamps must be strictly increasing.
struct Trajectory {
    std::vector<double> times;
    std::vector<Pose> poses;

    size_t size() const { return times.size(); }
    void push_back(double time, const Pose& pose);
    void validate() const;
};

/// Similarity transform p -> s * R * p + t.
struct Sim3Transform {
    double s = 1.0;
    Matrix3d R = Matrix3d::Identity();
    Vector3d t = Vector3d::Zero();

    Vector3d apply(const Vector3d& p) const { return s * (R * p) + t; }
};

/// Nearest-timestamp association window in seconds (half a frame at 30 fps).
constexpr double kAssocTolerance = 0.02;

/// Closed-form least-squares Sim(3) aligning est positions onto gt positions.
/// Pairs are associated by nearest timestamp within kAssocTolerance.
Sim3Transform umeyama_align(const Trajectory& est, const Trajectory& gt);

/// RMSE of translational residuals after Sim(3) alignment, in meters.
double ate_rmse(const Trajectory& est, const Trajectory& gt);

/// Finite stand-in for infinite PSNR on identical images.
constexpr double kPsnrSentinel = 99.0;

/// Peak signal-to-noise ratio in dB for images in [0,1].
double psnr(const GridD& a, const GridD& b);

/// Mean structural similarity (11x11 Gaussian window, sigma 1.5).
double ssim(const GridD& a, const GridD& b);

/// Area under the ROC curve using beta as the score for the dynamic class.
/// `gt_mask` is nonzero on dynamic pixels. Ties receive average rank.
double dynamic_auroc(const GridD& beta, const GridD& gt_mask);

/// TUM format: "timestamp tx ty tz qx qy qz qw" per line, '#' comments.
void write_tum(const std::string& path, const Trajectory& traj);
Trajectory read_tum(const std::string& path);

}  // namespace uslam::evalkit
