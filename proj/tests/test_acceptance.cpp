// Acceptance suite: one pass/fail line per criterion, exit 0 iff all pass.
//
// The criteria exercise the repository end to end: analytic rasterizer
// gradients, dense bundle adjustment convergence and its uncertainty
// semantics, full static/dynamic pipeline runs with ablation variants,
// consistency-mask precision/recall against injected depth corruption,
// metric oracles, and bitwise determinism.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "uslam/evalkit.hpp"
#include "uslam/pipeline.hpp"
#include "uslam/simworld.hpp"
#include "uslam/splat.hpp"
#include "uslam/tracking.hpp"

using namespace uslam;
using geom::CameraIntrinsics;
using geom::Pose;
using geom::Twist;
using geom::Vector2d;
using geom::Vector3d;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

double rel_err(double a, double f) {
    return std::abs(a - f) / std::max({1e-4, std::abs(a), std::abs(f)});
}

// ---------------------------------------------------------------------------
// Criterion 1: analytic rasterizer gradients vs central differences on
// randomized scenes, every Gaussian parameter plus the camera twist,
// relative error < 1e-4, within one minute.
// ---------------------------------------------------------------------------

struct SplatScene {
    splat::GaussianMap map;
    Pose pose;
    CameraIntrinsics K{20, 20, 8, 8, 16, 16};
    splat::RenderTargets targets;
    LossWeights weights;
};

SplatScene random_splat_scene(uint64_t seed, int n_gaussians = 12) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    std::normal_distribution<double> nd(0, 1);
    SplatScene s;
    s.map.background = {0.2, 0.3, 0.1};
    for (int i = 0; i < n_gaussians; ++i) {
        splat::Gaussian g;
        double z = 1.5 + 2.5 * u(rng);
        double x = (u(rng) * s.K.width - s.K.cx) / s.K.fx * z;
        double y = (u(rng) * s.K.height - s.K.cy) / s.K.fy * z;
        g.mean = {x, y, z};
        g.quat = Eigen::Vector4d(nd(rng), nd(rng), nd(rng), nd(rng));
        if (g.quat.norm() < 0.3) g.quat[0] += 1.0;
        g.log_scale = Eigen::Vector3d::Constant(std::log(0.15)) +
                      0.5 * Eigen::Vector3d(nd(rng), nd(rng), nd(rng));
        g.color = {u(rng), u(rng), u(rng)};
        g.opacity_logit = -2.0 + 3.0 * u(rng);
        s.map.gaussians.push_back(g);
    }
    s.targets.image = GridD(s.K.height, s.K.width, 3);
    s.targets.proxy_depth = GridD(s.K.height, s.K.width, 1);
    s.targets.beta = GridD(s.K.height, s.K.width, 1);
    for (auto& v : s.targets.image.data) v = u(rng);
    for (auto& v : s.targets.proxy_depth.data) v = 0.5 + 3.5 * u(rng);
    for (auto& v : s.targets.beta.data) v = 0.5 + 1.5 * u(rng);
    return s;
}

double splat_loss(const SplatScene& s) {
    return splat::rasterize_with_gradients(s.map, s.pose, s.K, s.weights, s.targets)
        .loss.total;
}

/// Worst relative error over all parameters of one randomized scene.
double scene_gradient_error(uint64_t seed) {
    SplatScene s = random_splat_scene(seed);
    auto res =
        splat::rasterize_with_gradients(s.map, s.pose, s.K, s.weights, s.targets);
    const double h = 1e-6;
    double worst = 0;

    for (size_t i = 0; i < s.map.size(); ++i) {
        auto probe = [&](double* param, double analytic) {
            double orig = *param;
            *param = orig + h;
            double fp = splat_loss(s);
            *param = orig - h;
            double fm = splat_loss(s);
            *param = orig;
            worst = std::max(worst, rel_err(analytic, (fp - fm) / (2 * h)));
        };
        splat::Gaussian& g = s.map.gaussians[i];
        const splat::GaussianGrad& gg = res.grads.per_gaussian[i];
        for (int k = 0; k < 3; ++k) probe(&g.mean[k], gg.mean[k]);
        for (int k = 0; k < 4; ++k) probe(&g.quat[k], gg.quat[k]);
        for (int k = 0; k < 3; ++k) probe(&g.log_scale[k], gg.log_scale[k]);
        for (int k = 0; k < 3; ++k) probe(&g.color[k], gg.color[k]);
        probe(&g.opacity_logit, gg.opacity_logit);
    }

    Pose base = s.pose;
    for (int k = 0; k < 6; ++k) {
        Twist d = Twist::Zero();
        d[k] = h;
        s.pose = geom::pose_retract(base, d);
        double fp = splat_loss(s);
        d[k] = -h;
        s.pose = geom::pose_retract(base, d);
        double fm = splat_loss(s);
        s.pose = base;
        worst = std::max(worst, rel_err(res.grads.camera[k], (fp - fm) / (2 * h)));
    }
    return worst;
}

Outcome criterion_rasterizer_gradients() {
    auto t0 = std::chrono::steady_clock::now();
    const int n_scenes = 20;
    double worst = 0;
    for (int s = 0; s < n_scenes; ++s)
        worst = std::max(worst, scene_gradient_error(9000 + uint64_t(s)));
    double elapsed = seconds_since(t0);
    std::ostringstream d;
    d << n_scenes << " scenes, max rel err " << worst << ", " << elapsed << " s";
    return {worst < 1e-4 && elapsed < 60.0, d.str()};
}

// ---------------------------------------------------------------------------
// Criteria 2, 3: tilted-plane world with an exact flow oracle, so the data
// term vanishes at ground truth and pose recovery can be checked tightly.
// ---------------------------------------------------------------------------

using tracking::FlowProviderFn;
using tracking::FrameGraph;
using tracking::Keyframe;
using tracking::TrackingOptions;

double cell_u(int cx, int stride) { return (cx + 0.5) * stride - 0.5; }

struct PlaneWorld {
    CameraIntrinsics K{60, 60, 31.5, 23.5, 64, 48};
    TrackingOptions opts;
    Vector3d n = Vector3d(0.15, 0.1, 1.0).normalized();
    double offset = 0;
    std::vector<Pose> gt;
    double fps = 30.0;
    bool with_sphere = true;  // breaks the plane-induced homography ambiguity
    Vector3d sphere_c = Vector3d(0.45, 0.4, 2.8);
    double sphere_r = 0.7;

    explicit PlaneWorld(int n_frames = 48) {
        offset = n.dot(Vector3d(0, 0, 4.0));
        for (int f = 0; f < n_frames; ++f) {
            Pose p;
            p.t = Vector3d(0.02 * f, 0.005 * std::sin(f / 3.0), 0);
            gt.push_back(p);
        }
    }

    double depth_of(const Pose& cam, double u, double v) const {
        Vector3d m((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
        Vector3d dir = cam.q * m;
        double plane_t = (offset - n.dot(cam.t)) / n.dot(dir);
        if (with_sphere) {
            Vector3d oc = cam.t - sphere_c;
            double a = dir.squaredNorm(), b = 2 * oc.dot(dir);
            double disc = b * b - 4 * a * (oc.squaredNorm() - sphere_r * sphere_r);
            if (disc > 0) {
                double t = (-b - std::sqrt(disc)) / (2 * a);
                if (t > 0 && t < plane_t) return t;
            }
        }
        return plane_t;
    }

    GridD proxy_for(int frame) const {
        GridD d(K.height, K.width, 1);
        for (int y = 0; y < K.height; ++y)
            for (int x = 0; x < K.width; ++x)
                d.at(y, x) = depth_of(gt[size_t(frame)], x, y);
        return d;
    }

    uncertainty::FeatureMap features() const {
        uncertainty::FeatureMap F;
        F.stride = opts.stride;
        F.data = GridD(K.height / opts.stride, K.width / opts.stride, 8, 0.0);
        for (int cy = 0; cy < F.data.h; ++cy)
            for (int cx = 0; cx < F.data.w; ++cx) F.data.at(cy, cx, 0) = 1.0;
        return F;
    }

    Keyframe make_kf(int frame) const {
        Keyframe kf;
        kf.frame_index = frame;
        kf.timestamp = frame / fps;
        kf.proxy_depth = proxy_for(frame);
        kf.features = features();
        kf.pose = gt[size_t(frame)];
        return kf;
    }

    FlowProviderFn provider() const {
        return [this](int fi, int fj) {
            const int gh = K.height / opts.stride, gw = K.width / opts.stride;
            simworld::FlowField f;
            f.stride = opts.stride;
            f.target = GridD(gh, gw, 2);
            f.confidence = GridD(gh, gw, 2, 1.0);
            GridD proxy = proxy_for(fi);
            const Pose& ci = gt[size_t(fi)];
            Pose inv_j = gt[size_t(fj)].inverse();
            for (int cy = 0; cy < gh; ++cy)
                for (int cx = 0; cx < gw; ++cx) {
                    double u = cell_u(cx, opts.stride), v = cell_u(cy, opts.stride);
                    double d = proxy.sample(u, v);
                    Vector3d p_w = geom::transform_point(
                        ci, geom::backproject_pixel(K, {u, v}, d));
                    Vector3d X_j = geom::transform_point(inv_j, p_w);
                    f.target.at(cy, cx, 0) = K.fx * X_j.x() / X_j.z() + K.cx;
                    f.target.at(cy, cx, 1) = K.fy * X_j.y() / X_j.z() + K.cy;
                }
            return f;
        };
    }

    FrameGraph graph(int n_kf) const {
        FrameGraph g;
        g.K = K;
        g.opts = opts;
        FlowProviderFn prov = provider();
        for (int k = 0; k < n_kf; ++k) tracking::add_keyframe(g, make_kf(4 * k), prov);
        return g;
    }
};

void perturb_poses(FrameGraph& g, uint64_t seed, double rot_rad, double trans_m) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0, 1);
    for (size_t k = 1; k < g.keyframes.size(); ++k) {
        Twist tw;
        for (int i = 0; i < 6; ++i) tw(i) = gauss(rng);
        tw.head<3>() *= rot_rad / std::max(tw.head<3>().norm(), 1e-12);
        tw.tail<3>() *= trans_m / std::max(tw.tail<3>().norm(), 1e-12);
        g.keyframes[k].pose = geom::pose_retract(g.keyframes[k].pose, tw);
    }
}

Outcome criterion_dba_convergence() {
    PlaneWorld world;
    FrameGraph g = world.graph(8);
    perturb_poses(g, 7001, 5.0 * M_PI / 180.0, 0.05);
    LossWeights w;
    tracking::DbaOptions opts;
    opts.iterations = 20;
    tracking::DbaReport rep = tracking::dba_solve(g, w, opts);

    double e_t = 0, e_r = 0;
    for (const auto& kf : g.keyframes) {
        e_t = std::max(e_t, (kf.pose.t - world.gt[size_t(kf.frame_index)].t).norm());
        e_r = std::max(e_r, geom::rotation_angle_deg(
                                kf.pose, world.gt[size_t(kf.frame_index)]));
    }
    bool monotone = true;
    for (size_t i = 1; i < rep.objective.size(); ++i)
        if (rep.objective[i] > rep.objective[i - 1] + 1e-12) monotone = false;

    std::ostringstream d;
    d << "5 deg / 5 cm perturbation -> " << e_t << " m, " << e_r
      << " deg after " << rep.iterations_run << " iters, monotone="
      << (monotone ? "yes" : "no");
    return {e_t < 1e-3 && e_r < 0.01 && monotone, d.str()};
}

Outcome criterion_uncertainty_semantics() {
    // Part 1: beta -> infinity on a cell set matches deleting those cells.
    PlaneWorld world;
    LossWeights w;
    auto setup = [&]() {
        FrameGraph g = world.graph(6);
        std::mt19937_64 rng(20240817);
        std::uniform_real_distribution<double> angle(0, 2 * M_PI);
        for (auto& e : g.edges)
            for (int cy = 0; cy < e.target.h; ++cy)
                for (int cx = 0; cx < e.target.w; ++cx) {
                    double a = angle(rng);
                    if ((cy * e.target.w + cx) % 10 < 3) {
                        e.target.at(cy, cx, 0) += 8.0 * std::cos(a);
                        e.target.at(cy, cx, 1) += 8.0 * std::sin(a);
                    }
                }
        perturb_poses(g, 808, 1.0 * M_PI / 180.0, 0.02);
        return g;
    };
    FrameGraph huge = setup();
    const int r = huge.opts.stride, gw = huge.K.width / r;
    for (auto& kf : huge.keyframes) {
        kf.beta = GridD(huge.K.height, huge.K.width, 1, 1.0);
        for (int cy = 0; cy < huge.K.height / r; ++cy)
            for (int cx = 0; cx < gw; ++cx)
                if ((cy * gw + cx) % 7 == 0)
                    for (int y = cy * r; y < (cy + 1) * r; ++y)
                        for (int x = cx * r; x < (cx + 1) * r; ++x)
                            kf.beta.at(y, x) = 1e9;
    }
    FrameGraph deleted = setup();
    for (auto& e : deleted.edges)
        for (int cy = 0; cy < e.target.h; ++cy)
            for (int cx = 0; cx < e.target.w; ++cx)
                if ((cy * e.target.w + cx) % 7 == 0) {
                    e.confidence.at(cy, cx, 0) = 0;
                    e.confidence.at(cy, cx, 1) = 0;
                }
    tracking::DbaOptions opts;
    opts.iterations = 10;
    opts.update_reg_masks = false;
    tracking::dba_solve(huge, w, opts);
    tracking::dba_solve(deleted, w, opts);
    double diff_inf = 0;
    for (size_t k = 0; k < huge.keyframes.size(); ++k)
        diff_inf = std::max(
            diff_inf, (huge.keyframes[k].pose.t - deleted.keyframes[k].pose.t).norm());

    // Part 2: without the disparity prior a common beta rescale is a pure
    // rescale of the objective and must leave the solution untouched.
    LossWeights w2;
    w2.lambda4 = 0;
    auto run_scaled = [&](double scale) {
        FrameGraph g = world.graph(6);
        for (auto& kf : g.keyframes)
            kf.beta = GridD(g.K.height, g.K.width, 1, scale);
        perturb_poses(g, 555, 1.0 * M_PI / 180.0, 0.02);
        tracking::DbaOptions o;
        o.iterations = 10;
        tracking::dba_solve(g, w2, o);
        return g;
    };
    FrameGraph a = run_scaled(1.0), b = run_scaled(3.7);
    double diff_scale = 0;
    for (size_t k = 0; k < a.keyframes.size(); ++k) {
        diff_scale = std::max(
            diff_scale, (a.keyframes[k].pose.t - b.keyframes[k].pose.t).norm());
        diff_scale = std::max(diff_scale, geom::rotation_angle_deg(
                                              a.keyframes[k].pose, b.keyframes[k].pose) *
                                              M_PI / 180.0);
    }

    std::ostringstream d;
    d << "inf-beta vs deleted " << diff_inf << " m, uniform rescale " << diff_scale;
    return {diff_inf < 1e-8 && diff_scale < 1e-9, d.str()};
}

// ---------------------------------------------------------------------------
// Criteria 4-7, 10: full pipeline runs on the standard scene suite.
// ---------------------------------------------------------------------------

pipeline::PipelineConfig acceptance_config() {
    pipeline::PipelineConfig c;
    c.seed = 7;
    c.refinement_iterations = 1500;
    c.mapping.spawn_stride = 2;
    c.weights.lambda1 = 0.1;
    return c;
}

simworld::SceneConfig suite_scene(const std::string& name) {
    for (const auto& sc : simworld::default_suite())
        if (sc.name == name) return sc;
    throw InvalidConfig("unknown suite scene: " + name);
}

const std::vector<std::string> kDynamicSuite = {"slow_distractor", "fast_distractor",
                                                "three_distractors"};

struct SuiteResults {
    // [scene][variant]; variant order follows run_ablation: full, a, b, d.
    std::vector<std::vector<pipeline::AblationRow>> rows;
    double trajectory_length = 0;

    double ate(size_t scene, size_t variant) const {
        return rows[scene][variant].metrics.ate_full;
    }
    double mean_ate(size_t variant) const {
        double s = 0;
        for (size_t i = 0; i < rows.size(); ++i) s += ate(i, variant);
        return s / double(rows.size());
    }
};

Outcome criterion_static_scene(const std::filesystem::path& work,
                               pipeline::RunReport& static_report) {
    auto t0 = std::chrono::steady_clock::now();
    auto scene = simworld::generate_scene(suite_scene("static"));
    static_report =
        pipeline::run_slam(acceptance_config(), scene, (work / "static").string());
    double elapsed = seconds_since(t0);
    const auto& m = static_report.metrics;
    double rel = m.ate_full / m.trajectory_length;
    std::ostringstream d;
    d << "ATE " << m.ate_full << " m (" << 100 * rel << "% of length), PSNR "
      << m.psnr << " dB, " << elapsed << " s";
    return {rel < 0.01 && m.psnr >= 30.0 && elapsed < 900.0, d.str()};
}

SuiteResults run_dynamic_suite(const std::filesystem::path& work) {
    SuiteResults out;
    for (const auto& name : kDynamicSuite) {
        auto scene = simworld::generate_scene(suite_scene(name));
        out.rows.push_back(pipeline::run_ablation(acceptance_config(),
                                                  {"a", "b", "d"}, scene,
                                                  (work / ("abl_" + name)).string()));
        for (const auto& row : out.rows.back())
            if (row.failed)
                throw TrackingFailure("ablation variant failed on " + name);
    }
    // all room scenes share the camera script, so any full row's length works
    evalkit::Trajectory gt =
        simworld::generate_scene(suite_scene(kDynamicSuite[0])).camera;
    double len = 0;
    for (size_t i = 1; i < gt.size(); ++i)
        len += (gt.poses[i].t - gt.poses[i - 1].t).norm();
    out.trajectory_length = len;
    return out;
}

Outcome criterion_uncertainty_ate(const SuiteResults& suite) {
    bool pass = true;
    std::ostringstream d;
    for (size_t i = 0; i < kDynamicSuite.size(); ++i) {
        double ratio = suite.ate(i, 1) / suite.ate(i, 0);
        double rel = suite.ate(i, 0) / suite.trajectory_length;
        pass = pass && ratio >= 2.0 && rel < 0.02;
        d << kDynamicSuite[i] << " ratio " << ratio << ", ATE " << 100 * rel
          << "%; ";
    }
    return {pass, d.str()};
}

Outcome criterion_auroc(const SuiteResults& suite) {
    bool pass = true;
    std::ostringstream d;
    for (size_t i = 0; i < kDynamicSuite.size(); ++i) {
        double auroc = suite.rows[i][0].metrics.auroc;
        pass = pass && auroc >= 0.9;
        d << kDynamicSuite[i] << " " << auroc << "; ";
    }
    return {pass, d.str()};
}

Outcome criterion_ablation_ordering(const SuiteResults& suite) {
    double full = suite.mean_ate(0);
    bool lowest = true;
    for (size_t v = 1; v < 4; ++v)
        if (suite.mean_ate(v) <= full) lowest = false;

    // the disparity-prior ablation must degrade most on the distractor-
    // dominant scene: slow_distractor has the largest dynamic pixel
    // coverage of the suite (~6.6% of pixels vs ~4.1% / ~2.3%)
    size_t dominant = 0;
    double dom_ratio = suite.ate(dominant, 3) / suite.ate(dominant, 0);
    bool reg_worst = true;
    for (size_t i = 0; i < kDynamicSuite.size(); ++i)
        if (i != dominant && suite.ate(i, 3) / suite.ate(i, 0) >= dom_ratio)
            reg_worst = false;

    std::ostringstream d;
    d << "mean ATE full " << full << ", no-unc " << suite.mean_ate(1) << ", no-depth "
      << suite.mean_ate(2) << ", no-reg " << suite.mean_ate(3)
      << "; no-reg degradation on " << kDynamicSuite[dominant] << " " << dom_ratio;
    return {lowest && reg_worst, d.str()};
}

Outcome criterion_mask_precision_recall() {
    simworld::SceneConfig sc = suite_scene("static");
    sc.name = "walls_injected";
    // planes only: a convex room has no inter-surface occlusion, so every
    // masked cell is attributable to the injected corruption
    std::erase_if(sc.statics, [](const simworld::TexturedPrimitive& p) {
        return p.geom.kind != simworld::Primitive::Kind::Plane;
    });
    sc.noise.corrupt_fraction = 0.15;
    auto scene = simworld::generate_scene(sc);

    FrameGraph g;
    g.K = scene.K();
    FlowProviderFn prov = [&](int i, int j) {
        return simworld::oracle_flow(scene, i, j, g.opts.stride);
    };
    const int step = 8, n_kf = scene.n_frames() / step;
    std::vector<GridD> gt_depth;
    for (int k = 0; k < n_kf; ++k) {
        int f = step * k;
        simworld::SensorFrame sf = simworld::make_sensor_frame(scene, f, 16, g.opts.stride);
        Keyframe kf;
        kf.frame_index = f;
        kf.timestamp = scene.time_of(f);
        kf.image = sf.gt.color;
        kf.proxy_depth = sf.proxy_depth;
        kf.features = sf.features;
        kf.pose = scene.camera.poses[size_t(f)];
        gt_depth.push_back(sf.gt.depth);
        tracking::add_keyframe(g, kf, prov);
    }

    long tp = 0, fp = 0, fn = 0, tn = 0;
    const int r = g.opts.stride, gh = g.K.height / r, gw = g.K.width / r;
    for (int k = 0; k < n_kf; ++k) {
        GridD mask = tracking::compute_reg_mask(g, k);
        const Keyframe& kf = g.keyframes[size_t(k)];
        for (int cy = 0; cy < gh; ++cy)
            for (int cx = 0; cx < gw; ++cx) {
                double u = cell_u(cx, r), v = cell_u(cy, r);
                double gt = gt_depth[size_t(k)].sample(u, v);
                if (gt <= 0) continue;
                double err = std::abs(kf.proxy_depth.sample(u, v) / gt - 1.0);
                // cells straddling a patch border are neither class
                bool injected = err > 0.20;
                if (!injected && err > 0.03) continue;
                bool excluded = mask.at(cy, cx) == 0.0;
                if (injected && excluded) ++tp;
                if (injected && !excluded) ++fn;
                if (!injected && excluded) ++fp;
                if (!injected && !excluded) ++tn;
            }
    }
    double precision = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
    double recall = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
    std::ostringstream d;
    d << "precision " << precision << ", recall " << recall << " (tp " << tp
      << ", fp " << fp << ", fn " << fn << ", tn " << tn << ")";
    return {precision >= 0.9 && recall >= 0.8, d.str()};
}

// ---------------------------------------------------------------------------
// Criterion 9: metric oracles.
// ---------------------------------------------------------------------------

evalkit::Trajectory random_traj(uint64_t seed, int n) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::normal_distribution<double> nd(0, 1);
    evalkit::Trajectory t;
    for (int i = 0; i < n; ++i) {
        Pose p;
        p.t = Vector3d(2 * u(rng), 2 * u(rng), 2 * u(rng));
        Eigen::Quaterniond q(nd(rng), nd(rng), nd(rng), nd(rng));
        p.q = q.normalized();
        t.push_back(0.033 * i, p);
    }
    return t;
}

GridD random_image(uint64_t seed, int h, int w, int c) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    GridD img(h, w, c);
    for (auto& v : img.data) v = u(rng);
    return img;
}

/// Direct 2D-convolution SSIM: per-pixel channel-mean grayscale, 11x11
/// Gaussian window (sigma 1.5) normalized over its full support with zero
/// padding outside the image, k1=0.01, k2=0.03 on unit range.
double ssim_reference(const GridD& a, const GridD& b) {
    auto gray = [](const GridD& img) {
        GridD g(img.h, img.w, 1);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double s = 0;
                for (int c = 0; c < img.c; ++c) s += img.at(y, x, c);
                g.at(y, x) = s / img.c;
            }
        return g;
    };
    const int r = 5;
    const double sigma = 1.5;
    double kernel[2 * r + 1][2 * r + 1];
    double ksum = 0;
    for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
            kernel[i + r][j + r] = std::exp(-(i * i + j * j) / (2 * sigma * sigma));
            ksum += kernel[i + r][j + r];
        }
    for (auto& row : kernel)
        for (auto& k : row) k /= ksum;

    GridD ga = gray(a), gb = gray(b);
    auto blur_at = [&](const GridD& img, auto&& f, int y, int x) {
        double s = 0;
        for (int i = -r; i <= r; ++i)
            for (int j = -r; j <= r; ++j)
                if (img.inside(y + i, x + j))
                    s += kernel[i + r][j + r] * f(img.at(y + i, x + j));
        return s;
    };
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    for (int y = 0; y < ga.h; ++y)
        for (int x = 0; x < ga.w; ++x) {
            auto id = [](double v) { return v; };
            auto sq = [](double v) { return v * v; };
            double mu_a = blur_at(ga, id, y, x), mu_b = blur_at(gb, id, y, x);
            double var_a = blur_at(ga, sq, y, x) - mu_a * mu_a;
            double var_b = blur_at(gb, sq, y, x) - mu_b * mu_b;
            double cov = 0;
            for (int i = -r; i <= r; ++i)
                for (int j = -r; j <= r; ++j)
                    if (ga.inside(y + i, x + j))
                        cov += kernel[i + r][j + r] * ga.at(y + i, x + j) *
                               gb.at(y + i, x + j);
            cov -= mu_a * mu_b;
            total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    return total / (ga.h * ga.w);
}

Outcome criterion_metric_oracles() {
    std::ostringstream d;
    bool pass = true;

    // exact Sim(3) recovery
    {
        evalkit::Trajectory gt = random_traj(41, 50), est = gt;
        std::mt19937_64 rng(42);
        std::normal_distribution<double> nd(0, 1);
        evalkit::Sim3Transform S;
        S.s = 1.7;
        S.R = Eigen::Quaterniond(nd(rng), nd(rng), nd(rng), nd(rng))
                  .normalized()
                  .toRotationMatrix();
        S.t = Vector3d(0.4, -1.2, 2.0);
        for (auto& p : est.poses) p.t = S.apply(p.t);
        evalkit::Sim3Transform T = evalkit::umeyama_align(est, gt);
        double worst = 0;
        for (size_t i = 0; i < est.size(); ++i)
            worst = std::max(worst, (T.apply(est.poses[i].t) - gt.poses[i].t).norm());
        pass = pass && worst < 1e-9;
        d << "sim3 " << worst;
    }

    // Monte Carlo ATE: isotropic per-axis noise sigma gives RMSE sigma*sqrt(3)
    {
        const double sigma = 0.01;
        evalkit::Trajectory gt = random_traj(43, 5000), est = gt;
        std::mt19937_64 rng(44);
        std::normal_distribution<double> nd(0, sigma);
        for (auto& p : est.poses) p.t += Vector3d(nd(rng), nd(rng), nd(rng));
        double ate = evalkit::ate_rmse(est, gt);
        double expect = sigma * std::sqrt(3.0);
        double rel = std::abs(ate - expect) / expect;
        pass = pass && rel < 0.05;
        d << ", ate-mc " << rel;
    }

    // PSNR against the closed form on random images
    {
        GridD a = random_image(45, 24, 31, 3), b = random_image(46, 24, 31, 3);
        double mse = 0;
        for (size_t i = 0; i < a.data.size(); ++i) {
            double e = a.data[i] - b.data[i];
            mse += e * e;
        }
        mse /= double(a.data.size());
        double diff = std::abs(evalkit::psnr(a, b) - 10.0 * std::log10(1.0 / mse));
        pass = pass && diff < 1e-6;
        d << ", psnr " << diff;
    }

    // SSIM against a direct 2D-convolution reference
    {
        GridD a = random_image(47, 24, 17, 3), b = a;
        std::mt19937_64 rng(48);
        std::normal_distribution<double> nd(0, 0.1);
        for (auto& v : b.data) v = std::clamp(v + nd(rng), 0.0, 1.0);
        double diff = std::abs(evalkit::ssim(a, b) - ssim_reference(a, b));
        pass = pass && diff < 1e-6;
        d << ", ssim " << diff;
    }

    // AUROC against the pairwise definition with half-credit ties
    {
        std::mt19937_64 rng(49);
        std::uniform_real_distribution<double> u(0, 1);
        GridD beta(20, 15, 1), mask(20, 15, 1);
        for (auto& v : beta.data) v = std::round(10 * u(rng)) / 10.0;  // force ties
        for (auto& v : mask.data) v = u(rng) < 0.3 ? 1.0 : 0.0;
        double wins = 0;
        long pairs = 0;
        for (size_t i = 0; i < beta.data.size(); ++i) {
            if (mask.data[i] == 0) continue;
            for (size_t j = 0; j < beta.data.size(); ++j) {
                if (mask.data[j] != 0) continue;
                ++pairs;
                if (beta.data[i] > beta.data[j]) wins += 1.0;
                else if (beta.data[i] == beta.data[j]) wins += 0.5;
            }
        }
        double diff =
            std::abs(evalkit::dynamic_auroc(beta, mask) - wins / double(pairs));
        pass = pass && diff < 1e-6;
        d << ", auroc " << diff;
    }
    return {pass, d.str()};
}

// ---------------------------------------------------------------------------
// Criterion 10: bitwise determinism of two identically configured runs.
// ---------------------------------------------------------------------------

bool trajectories_identical(const evalkit::Trajectory& a,
                            const evalkit::Trajectory& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (std::memcmp(&a.times[i], &b.times[i], sizeof(double)) != 0) return false;
        if (std::memcmp(a.poses[i].q.coeffs().data(), b.poses[i].q.coeffs().data(),
                        4 * sizeof(double)) != 0)
            return false;
        if (std::memcmp(a.poses[i].t.data(), b.poses[i].t.data(),
                        3 * sizeof(double)) != 0)
            return false;
    }
    return true;
}

Outcome criterion_determinism(const std::filesystem::path& work) {
    pipeline::PipelineConfig cfg;
    cfg.seed = 7;
    cfg.refinement_iterations = 300;
    auto scene = simworld::generate_scene(suite_scene("static"));
    pipeline::RunReport a = pipeline::run_slam(cfg, scene, (work / "det_a").string());
    pipeline::RunReport b = pipeline::run_slam(cfg, scene, (work / "det_b").string());
    bool traj = trajectories_identical(a.trajectory_full, b.trajectory_full) &&
                trajectories_identical(a.trajectory_kf, b.trajectory_kf);
    bool metrics =
        std::memcmp(&a.metrics, &b.metrics, sizeof(pipeline::RunMetrics)) == 0;
    std::ostringstream d;
    d << "trajectories " << (traj ? "identical" : "differ") << ", metrics "
      << (metrics ? "identical" : "differ");
    return {traj && metrics, d.str()};
}

void report(int id, const char* label, const Outcome& o, int& failures) {
    std::cout << "criterion " << (id < 10 ? " " : "") << id << ": "
              << (o.pass ? "PASS" : "FAIL") << "  " << label << " -- " << o.detail
              << std::endl;
    if (!o.pass) ++failures;
}

Outcome guarded(Outcome (*fn)()) {
    try {
        return fn();
    } catch (const std::exception& e) {
        return {false, std::string("exception: ") + e.what()};
    }
}

}  // namespace

int main() {
    std::filesystem::path work =
        std::filesystem::temp_directory_path() / "uslam_acceptance";
    std::error_code ec;
    std::filesystem::remove_all(work, ec);
    std::filesystem::create_directories(work);

    int failures = 0;
    report(1, "rasterizer gradients match central differences",
           guarded(criterion_rasterizer_gradients), failures);
    report(2, "bundle adjustment recovers perturbed poses",
           guarded(criterion_dba_convergence), failures);
    report(3, "uncertainty weighting semantics in the solver",
           guarded(criterion_uncertainty_semantics), failures);

    pipeline::RunReport static_report;
    Outcome o4;
    try {
        o4 = criterion_static_scene(work, static_report);
    } catch (const std::exception& e) {
        o4 = {false, std::string("exception: ") + e.what()};
    }
    report(4, "static scene accuracy and rendering quality", o4, failures);

    SuiteResults suite;
    Outcome o5, o6, o7;
    try {
        suite = run_dynamic_suite(work);
        o5 = criterion_uncertainty_ate(suite);
        o6 = criterion_auroc(suite);
        o7 = criterion_ablation_ordering(suite);
    } catch (const std::exception& e) {
        o5 = o6 = o7 = {false, std::string("exception: ") + e.what()};
    }
    report(5, "uncertainty halves trajectory error on dynamic scenes", o5, failures);
    report(6, "uncertainty separates dynamic from static pixels", o6, failures);
    report(7, "every ablation variant hurts, disparity prior most where it carries",
           o7, failures);

    report(8, "consistency mask excludes injected depth corruption",
           guarded(criterion_mask_precision_recall), failures);
    report(9, "metric implementations match independent oracles",
           guarded(criterion_metric_oracles), failures);

    Outcome o10;
    try {
        o10 = criterion_determinism(work);
    } catch (const std::exception& e) {
        o10 = {false, std::string("exception: ") + e.what()};
    }
    report(10, "identical config and seed reproduce bitwise", o10, failures);

    std::cout << (failures == 0 ? "acceptance: all 10 criteria passed"
                                : "acceptance: FAILED")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
