#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uslam/core/image.hpp"
#include "uslam/geom.hpp"
#include "uslam/loss_weights.hpp"

namespace uslam::splat {

using geom::CameraIntrinsics;
using geom::Pose;
using Eigen::Matrix2d;
using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::Vector4d;

/// One anisotropic splat. Covariance is R(q) diag(exp(2s)) R(q)^T; the raw
/// quaternion is normalized on use so it can be optimized unconstrained.
struct Gaussian {
    Vector3d mean = Vector3d::Zero();
    Vector4d quat = Vector4d(1, 0, 0, 0);  // (w, x, y, z)
    Vector3d log_scale = Vector3d::Zero();
    Vector3d color = Vector3d::Zero();
    double opacity_logit = 0;
    uint32_t anchor_keyframe_id = 0;

    double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
    Matrix3d rotation() const;
    Matrix3d covariance() const;
};

struct GaussianMap {
    std::vector<Gaussian> gaussians;
    Vector3d background = Vector3d::Zero();

    size_t size() const { return gaussians.size(); }
};

struct SplatProjection {
    Vector2d mean;   // pixels
    Matrix2d cov;    // pixels^2, low-pass regularized
    double z;        // camera-frame depth of the center
};

struct RenderOutput {
    GridD color;  // H x W x 3
    GridD depth;  // H x W
    GridD alpha;  // H x W
};

struct RasterizerOptions {
    double eps_lowpass = 0.3;   // px^2 added to the projected covariance
    double alpha_max = 0.999;   // per-splat opacity clamp
    double cull_radius = 3.0;   // screen-space Mahalanobis culling radius
    double alpha_min = 1e-8;    // contributions below this are skipped
    double term_transmittance = 1e-8;  // stop compositing once this opaque
};

SplatProjection project_gaussian(const Gaussian& g, const Pose& pose,
                                 const CameraIntrinsics& K,
                                 double eps_lowpass = 0.3);

RenderOutput rasterize(const GaussianMap& map, const Pose& pose,
                       const CameraIntrinsics& K,
                       const RasterizerOptions& opts = {});

struct GaussianGrad {
    Vector3d mean = Vector3d::Zero();
    Vector4d quat = Vector4d::Zero();
    Vector3d log_scale = Vector3d::Zero();
    Vector3d color = Vector3d::Zero();
    double opacity_logit = 0;
};

struct RenderGradients {
    std::vector<GaussianGrad> per_gaussian;  // aligned with map.gaussians
    geom::Twist camera = geom::Twist::Zero();
};

struct RenderTargets {
    GridD image;        // H x W x 3, observed
    GridD proxy_depth;  // H x W, <=0 marks pixels without depth supervision
    GridD beta;         // H x W, per-pixel uncertainty (>= beta_min)
};

struct RenderLossBreakdown {
    double color = 0;  // mean of lambda5 * L_color / beta^2
    double depth = 0;  // mean of lambda6 * L_depth / beta^2
    double iso = 0;    // lambda7 * L_iso
    double total = 0;
};

struct RenderWithGradients {
    RenderOutput render;
    RenderGradients grads;
    RenderLossBreakdown loss;
};

/// Forward render plus analytic gradients of the render loss
///   mean_p (lambda5 L_color + lambda6 L_depth) / beta^2 + lambda7 L_iso
/// with respect to every Gaussian parameter and the 6-dof camera twist.
RenderWithGradients rasterize_with_gradients(const GaussianMap& map, const Pose& pose,
                                             const CameraIntrinsics& K,
                                             const LossWeights& weights,
                                             const RenderTargets& targets,
                                             const RasterizerOptions& opts = {});

/// Isotropy regularizer: mean over Gaussians of the L1 spread of exp(s)
/// around its per-Gaussian mean. Zero iff every Gaussian is isotropic.
double isotropy_loss(const GaussianMap& map);

/// Optional low-opacity pruning (off by default in the pipeline).
size_t prune_by_opacity(GaussianMap& map, double min_opacity);

/// Binary record stream: magic "GMAP", u32 version, u64 count, then per
/// Gaussian 3xf32 mean, 4xf32 quat, 3xf32 log-scale, 3xf32 color,
/// f32 opacity logit, u32 anchor id.
void save_map(const std::string& path, const GaussianMap& map);
GaussianMap load_map(const std::string& path);

}  // namespace uslam::splat
