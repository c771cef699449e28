#include "uslam/splat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "uslam/core/ssim.hpp"

namespace uslam::splat {

namespace {

Matrix3d quat_to_rot(const Vector4d& q) {
    double n = q.norm();
    double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// Partials of R w.r.t. the components of a *unit* quaternion (w,x,y,z).
void rot_partials(const Vector4d& n, Matrix3d dR[4]) {
    double w = n[0], x = n[1], y = n[2], z = n[3];
    dR[0] << 0, -z, y, z, 0, -x, -y, x, 0;
    dR[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dR[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dR[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    for (int i = 0; i < 4; ++i) dR[i] *= 2.0;
}

struct ProjCache {
    int id = -1;               // index into map.gaussians
    Vector3d p_cam;            // mean in camera frame
    Matrix3d W;                // world-to-camera rotation
    Matrix3d B;                // W * Sigma_world * W^T
    Eigen::Matrix<double, 2, 3> J;
    Vector2d mu;               // projected mean
    Matrix2d cov;              // projected covariance (+ low pass)
    Matrix2d cov_inv;
    double z = 0;
    double opacity = 0;
    Vector3d color;
    double radius = 0;         // screen-space culling radius in pixels
};

struct PixelHit {
    int splat;     // index into the sorted splat list
    double alpha;
};

struct RasterCache {
    std::vector<ProjCache> splats;           // visible only, sorted by (z, id)
    std::vector<std::vector<PixelHit>> hits; // per pixel, front-to-back
    std::vector<int> used;                   // hits consumed before termination
    RenderOutput out;
};

bool project_internal(const Gaussian& g, const Matrix3d& W, const Vector3d& cam_center,
                      const CameraIntrinsics& K, double eps_lp, ProjCache& pc) {
    pc.p_cam = W * (g.mean - cam_center);
    if (pc.p_cam.z() <= geom::kMinDepth) return false;
    Matrix3d R = quat_to_rot(g.quat);
    Vector3d s2 = (2.0 * g.log_scale).array().exp();
    Matrix3d sigma = R * s2.asDiagonal() * R.transpose();
    pc.W = W;
    pc.B = W * sigma * W.transpose();
    pc.J = geom::projection_jacobian(K, pc.p_cam);
    pc.mu = geom::project_point(K, pc.p_cam);
    pc.cov = pc.J * pc.B * pc.J.transpose() + eps_lp * Matrix2d::Identity();
    double det = pc.cov.determinant();
    if (det <= 0 || !std::isfinite(det)) return false;
    pc.cov_inv = pc.cov.inverse();
    pc.z = pc.p_cam.z();
    pc.opacity = g.opacity();
    pc.color = g.color;
    return true;
}

RasterCache build_cache(const GaussianMap& map, const Pose& pose,
                        const CameraIntrinsics& K, const RasterizerOptions& opts) {
    RasterCache rc;
    const Matrix3d W = pose.rotation().transpose();
    const Vector3d center = pose.t;

    rc.splats.reserve(map.size());
    for (size_t i = 0; i < map.size(); ++i) {
        ProjCache pc;
        if (!project_internal(map.gaussians[i], W, center, K, opts.eps_lowpass, pc))
            continue;
        pc.id = int(i);
        // largest eigenvalue of the 2x2 covariance bounds the footprint
        double tr = pc.cov.trace();
        double det = pc.cov.determinant();
        double disc = std::sqrt(std::max(0.0, tr * tr / 4 - det));
        pc.radius = opts.cull_radius * std::sqrt(tr / 2 + disc);
        rc.splats.push_back(pc);
    }
    std::sort(rc.splats.begin(), rc.splats.end(), [](const ProjCache& a, const ProjCache& b) {
        return a.z != b.z ? a.z < b.z : a.id < b.id;
    });

    const int h = K.height, w = K.width;
    rc.hits.assign(size_t(h) * w, {});
    const double r2max = opts.cull_radius * opts.cull_radius;
    for (size_t s = 0; s < rc.splats.size(); ++s) {
        const ProjCache& pc = rc.splats[s];
        int x0 = std::max(0, int(std::floor(pc.mu.x() - pc.radius)));
        int x1 = std::min(w - 1, int(std::ceil(pc.mu.x() + pc.radius)));
        int y0 = std::max(0, int(std::floor(pc.mu.y() - pc.radius)));
        int y1 = std::min(h - 1, int(std::ceil(pc.mu.y() + pc.radius)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                Vector2d r(x - pc.mu.x(), y - pc.mu.y());
                double m2 = r.dot(pc.cov_inv * r);
                if (m2 > r2max) continue;
                double a = std::min(pc.opacity * std::exp(-0.5 * m2), opts.alpha_max);
                if (a < opts.alpha_min) continue;
                rc.hits[size_t(y) * w + x].push_back({int(s), a});
            }
    }

    rc.out.color = GridD(h, w, 3);
    rc.out.depth = GridD(h, w, 1);
    rc.out.alpha = GridD(h, w, 1);
    rc.used.assign(size_t(h) * w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto& list = rc.hits[size_t(y) * w + x];
            double T = 1.0;
            Vector3d col = Vector3d::Zero();
            double depth = 0;
            int used = 0;
            for (const PixelHit& hit : list) {
                if (T < opts.term_transmittance) break;
                const ProjCache& pc = rc.splats[hit.splat];
                col += pc.color * hit.alpha * T;
                depth += pc.z * hit.alpha * T;
                T *= (1.0 - hit.alpha);
                ++used;
            }
            col += map.background * T;
            rc.used[size_t(y) * w + x] = used;
            for (int c = 0; c < 3; ++c) rc.out.color.at(y, x, c) = col[c];
            rc.out.depth.at(y, x) = depth;
            rc.out.alpha.at(y, x) = 1.0 - T;
        }
    return rc;
}

/// Backprop from per-splat screen-space gradients to Gaussian parameters and
/// the camera twist.
void projection_backward(const Gaussian& g, const ProjCache& pc, const CameraIntrinsics& K,
                         const Vector2d& g_mu, const Matrix2d& g_cov_in, double g_z,
                         GaussianGrad& out, geom::Twist& twist) {
    const Matrix2d Gc = 0.5 * (g_cov_in + g_cov_in.transpose());
    const Matrix3d G_B = pc.J.transpose() * Gc * pc.J;
    const Eigen::Matrix<double, 2, 3> dLdJ = 2.0 * Gc * pc.J * pc.B;

    // dL/dp_cam: direct projection path, depth path, and J(p) path
    Vector3d g_p = pc.J.transpose() * g_mu;
    g_p.z() += g_z;
    const double X = pc.p_cam.x(), Y = pc.p_cam.y(), Z = pc.p_cam.z();
    const double iz2 = 1.0 / (Z * Z), iz3 = iz2 / Z;
    g_p.x() += dLdJ(0, 2) * (-K.fx * iz2);
    g_p.y() += dLdJ(1, 2) * (-K.fy * iz2);
    g_p.z() += dLdJ(0, 0) * (-K.fx * iz2) + dLdJ(0, 2) * (2 * K.fx * X * iz3) +
               dLdJ(1, 1) * (-K.fy * iz2) + dLdJ(1, 2) * (2 * K.fy * Y * iz3);

    out.mean += pc.W.transpose() * g_p;

    // camera twist: p = Exp(-d) W (mu - t - tau), B = Exp(-d) B0 Exp(-d)^T
    twist.head<3>() += g_p.cross(pc.p_cam);
    for (int k = 0; k < 3; ++k) {
        Vector3d e = Vector3d::Unit(k);
        Matrix3d Mk = -geom::skew(e) * pc.B + pc.B * geom::skew(e);
        twist[k] += (G_B.array() * Mk.array()).sum();
    }
    twist.tail<3>() += -(pc.W.transpose() * g_p);

    // Gaussian covariance parameters
    const Matrix3d G_V = pc.W.transpose() * G_B * pc.W;
    const Matrix3d R = quat_to_rot(g.quat);
    const Vector3d s2 = (2.0 * g.log_scale).array().exp();

    Matrix3d RtGVR = R.transpose() * G_V * R;
    for (int k = 0; k < 3; ++k) out.log_scale[k] += 2.0 * s2[k] * RtGVR(k, k);

    Vector4d n = g.quat / g.quat.norm();
    Matrix3d dR[4];
    rot_partials(n, dR);
    Vector4d g_n;
    const Matrix3d S2Rt = s2.asDiagonal() * R.transpose();
    for (int k = 0; k < 4; ++k) {
        Matrix3d dV = dR[k] * S2Rt;
        g_n[k] = 2.0 * (G_V.array() * dV.array()).sum();
    }
    double qn = g.quat.norm();
    out.quat += (g_n - n * n.dot(g_n)) / qn;
}

struct LossGrads {
    GridD d_color;  // dL/d rendered color
    GridD d_depth;  // dL/d rendered depth
    RenderLossBreakdown breakdown;
};

LossGrads render_loss(const RenderOutput& render, const RenderTargets& targets,
                      const LossWeights& w) {
    require_same_shape(render.color, targets.image, "render loss: image shape");
    require_same_shape(render.depth, targets.proxy_depth, "render loss: depth shape");
    require_same_shape(render.depth, targets.beta, "render loss: beta shape");
    const int h = render.color.h, wd = render.color.w;
    const double n = double(h) * wd;

    LossGrads lg;
    lg.d_color = GridD(h, wd, 3);
    lg.d_depth = GridD(h, wd, 1);

    SsimContext ssim;
    GridD grad_ssim_map;
    if (w.lambda_ssim > 0) {
        ssim = ssim_map(render.color, targets.image);
        grad_ssim_map = GridD(h, wd, 1);
    }

    double color_sum = 0, depth_sum = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wd; ++x) {
            double b = targets.beta.at(y, x);
            double ib2 = 1.0 / (b * b);
            double l1 = 0;
            for (int c = 0; c < 3; ++c) {
                double r = render.color.at(y, x, c) - targets.image.at(y, x, c);
                l1 += std::abs(r) / 3.0;
                double sgn = r > 0 ? 1.0 : r < 0 ? -1.0 : 0.0;
                lg.d_color.at(y, x, c) +=
                    w.lambda5 * (1 - w.lambda_ssim) * sgn / 3.0 * ib2 / n;
            }
            double lc = (1 - w.lambda_ssim) * l1;
            if (w.lambda_ssim > 0) {
                double lssim = 0.5 * (1.0 - ssim.map.at(y, x));
                lc += w.lambda_ssim * lssim;
                grad_ssim_map.at(y, x) = -0.5 * w.lambda_ssim * w.lambda5 * ib2 / n;
            }
            color_sum += w.lambda5 * lc * ib2;

            double dt = targets.proxy_depth.at(y, x);
            if (dt > 0) {
                double r = render.depth.at(y, x) - dt;
                depth_sum += w.lambda6 * std::abs(r) * ib2;
                double sgn = r > 0 ? 1.0 : r < 0 ? -1.0 : 0.0;
                lg.d_depth.at(y, x) = w.lambda6 * sgn * ib2 / n;
            }
        }
    if (w.lambda_ssim > 0) {
        GridD g_gray = ssim_backward(ssim, grad_ssim_map);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < wd; ++x)
                for (int c = 0; c < 3; ++c)
                    lg.d_color.at(y, x, c) += g_gray.at(y, x) / 3.0;
    }
    lg.breakdown.color = color_sum / n;
    lg.breakdown.depth = depth_sum / n;
    return lg;
}

void composite_backward(const GaussianMap& map, const RasterCache& rc,
                        const CameraIntrinsics& K, const GridD& d_color,
                        const GridD& d_depth, RenderGradients& grads) {
    const int h = K.height, w = K.width;
    const size_t ns = rc.splats.size();
    std::vector<Vector2d> g_mu(ns, Vector2d::Zero());
    std::vector<Matrix2d> g_cov(ns, Matrix2d::Zero());
    std::vector<double> g_z(ns, 0.0), g_alpha_acc(ns, 0.0);
    std::vector<Vector3d> g_col(ns, Vector3d::Zero());

    std::vector<double> Tbuf;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto& list = rc.hits[size_t(y) * w + x];
            int used = rc.used[size_t(y) * w + x];
            if (used == 0) continue;
            Vector3d gc(d_color.at(y, x, 0), d_color.at(y, x, 1), d_color.at(y, x, 2));
            double gd = d_depth.at(y, x);
            if (gc.isZero(0.0) && gd == 0.0) continue;

            Tbuf.resize(size_t(used));
            double T = 1.0;
            for (int i = 0; i < used; ++i) {
                Tbuf[size_t(i)] = T;
                T *= (1.0 - list[size_t(i)].alpha);
            }
            const double T_final = T;
            // suffix accumulators over later contributions (incl. background)
            Vector3d Sc = map.background * T_final;
            double Sd = 0;
            for (int i = used - 1; i >= 0; --i) {
                const PixelHit& hit = list[size_t(i)];
                const ProjCache& pc = rc.splats[size_t(hit.splat)];
                double Ti = Tbuf[size_t(i)];
                g_col[size_t(hit.splat)] += gc * hit.alpha * Ti;
                double dL_da = gc.dot(pc.color * Ti - Sc / (1.0 - hit.alpha)) +
                               gd * (pc.z * Ti - Sd / (1.0 - hit.alpha));
                g_z[size_t(hit.splat)] += gd * hit.alpha * Ti;
                // alpha = min(o * exp(-m2/2), alpha_max); clamped hits get no
                // geometric or opacity gradient
                Vector2d r(x - pc.mu.x(), y - pc.mu.y());
                double m2 = r.dot(pc.cov_inv * r);
                double a_raw = pc.opacity * std::exp(-0.5 * m2);
                bool clamped = a_raw > hit.alpha * (1.0 + 1e-12);
                if (!clamped) {
                    Vector2d Ar = pc.cov_inv * r;
                    g_mu[size_t(hit.splat)] += dL_da * hit.alpha * Ar;
                    g_cov[size_t(hit.splat)] +=
                        dL_da * 0.5 * hit.alpha * (Ar * Ar.transpose());
                    g_alpha_acc[size_t(hit.splat)] +=
                        dL_da * hit.alpha * (1.0 - pc.opacity);
                }
                Sc += pc.color * hit.alpha * Ti;
                Sd += pc.z * hit.alpha * Ti;
            }
        }

    for (size_t s = 0; s < ns; ++s) {
        const ProjCache& pc = rc.splats[s];
        GaussianGrad& gg = grads.per_gaussian[size_t(pc.id)];
        gg.color += g_col[s];
        gg.opacity_logit += g_alpha_acc[s];
        if (g_mu[s].isZero(0.0) && g_cov[s].isZero(0.0) && g_z[s] == 0.0) continue;
        projection_backward(map.gaussians[size_t(pc.id)], pc, K, g_mu[s], g_cov[s],
                            g_z[s], gg, grads.camera);
    }
}

}  // namespace

Matrix3d Gaussian::rotation() const { return quat_to_rot(quat); }

Matrix3d Gaussian::covariance() const {
    Matrix3d r = rotation();
    Vector3d s2 = (2.0 * log_scale).array().exp();
    return r * s2.asDiagonal() * r.transpose();
}

SplatProjection project_gaussian(const Gaussian& g, const Pose& pose,
                                 const CameraIntrinsics& K, double eps_lowpass) {
    ProjCache pc;
    if (!project_internal(g, pose.rotation().transpose(), pose.t, K, eps_lowpass, pc))
        throw BehindCamera();
    return {pc.mu, pc.cov, pc.z};
}

RenderOutput rasterize(const GaussianMap& map, const Pose& pose,
                       const CameraIntrinsics& K, const RasterizerOptions& opts) {
    return build_cache(map, pose, K, opts).out;
}

double isotropy_loss(const GaussianMap& map) {
    if (map.gaussians.empty()) return 0;
    double total = 0;
    for (const auto& g : map.gaussians) {
        Vector3d s = g.log_scale.array().exp();
        double m = s.mean();
        total += (s.array() - m).abs().sum();
    }
    return total / double(map.size());
}

RenderWithGradients rasterize_with_gradients(const GaussianMap& map, const Pose& pose,
                                             const CameraIntrinsics& K,
                                             const LossWeights& weights,
                                             const RenderTargets& targets,
                                             const RasterizerOptions& opts) {
    RasterCache rc = build_cache(map, pose, K, opts);
    LossGrads lg = render_loss(rc.out, targets, weights);

    RenderWithGradients result;
    result.grads.per_gaussian.assign(map.size(), GaussianGrad{});
    composite_backward(map, rc, K, lg.d_color, lg.d_depth, result.grads);

    // isotropy regularizer acts on log-scales only
    if (weights.lambda7 > 0 && !map.gaussians.empty()) {
        const double kinv = weights.lambda7 / double(map.size());
        for (size_t i = 0; i < map.size(); ++i) {
            Vector3d s = map.gaussians[i].log_scale.array().exp();
            double m = s.mean();
            Vector3d sgn;
            double sgn_sum = 0;
            for (int k = 0; k < 3; ++k) {
                double d = s[k] - m;
                sgn[k] = d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0;
                sgn_sum += sgn[k];
            }
            for (int k = 0; k < 3; ++k)
                result.grads.per_gaussian[i].log_scale[k] +=
                    kinv * (sgn[k] - sgn_sum / 3.0) * s[k];
        }
    }

    result.loss = lg.breakdown;
    result.loss.iso = weights.lambda7 * isotropy_loss(map);
    result.loss.total = result.loss.color + result.loss.depth + result.loss.iso;
    result.render = std::move(rc.out);
    return result;
}

size_t prune_by_opacity(GaussianMap& map, double min_opacity) {
    size_t before = map.size();
    std::erase_if(map.gaussians,
                  [&](const Gaussian& g) { return g.opacity() < min_opacity; });
    return before - map.size();
}

}  // namespace uslam::splat
