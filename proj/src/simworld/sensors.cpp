#include <cmath>
#include <filesystem>
#include <random>

#include "uslam/core/io.hpp"
#include "uslam/simworld.hpp"

namespace uslam::simworld {

namespace {

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

/// Continuous pixel coordinate of the center of cell (index) at stride r.
double cell_center(int index, int stride) { return (index + 0.5) * stride - 0.5; }

}  // namespace

FlowField oracle_flow(const SyntheticScene& scene, int i, int j, int stride) {
    if (i < 0 || j < 0 || i >= scene.n_frames() || j >= scene.n_frames() || i == j)
        throw InvalidConfig("oracle_flow: bad frame pair");
    const auto& K = scene.K();
    const Pose& cam_i = scene.camera.poses[size_t(i)];
    const Pose& cam_j = scene.camera.poses[size_t(j)];
    Pose world_from_j_inv = cam_j.inverse();

    const int gh = K.height / stride, gw = K.width / stride;
    FlowField field;
    field.stride = stride;
    field.target = GridD(gh, gw, 2);
    field.confidence = GridD(gh, gw, 2, scene.config.noise.flow_confidence);

    std::mt19937_64 rng(mix64(scene.config.seed, mix64(0x466c6f77ull,  // "Flow"
                                                       uint64_t(i) * 100003 + uint64_t(j))));
    std::normal_distribution<double> noise(0, 1);
    const double sigma = scene.config.noise.sigma_flow;

    for (int cy = 0; cy < gh; ++cy)
        for (int cx = 0; cx < gw; ++cx) {
            double u = cell_center(cx, stride), v = cell_center(cy, stride);
            SurfaceHit hit = trace_pixel(scene, i, u, v);
            Vector2d target;
            if (!hit.hit) {
                // background: rotation-only correspondence (point at infinity)
                Vector3d d_cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
                Vector3d d_j = world_from_j_inv.q * (cam_i.q * d_cam);
                if (d_j.z() <= geom::kMinDepth)
                    d_j = Vector3d(0, 0, 1);  // behind: degrade to frame center
                target = {K.fx * d_j.x() / d_j.z() + K.cx,
                          K.fy * d_j.y() / d_j.z() + K.cy};
            } else {
                Vector3d p_world = hit.world;
                if (hit.dynamic_index >= 0) {
                    // object-attached: the point rides with the moving object
                    const auto& obj = scene.config.dynamics[size_t(hit.dynamic_index)];
                    Pose pose_i = obj.motion.at(scene.time_of(i));
                    Pose pose_j = obj.motion.at(scene.time_of(j));
                    p_world = geom::transform_point(pose_j * pose_i.inverse(), p_world);
                }
                Vector3d p_j = geom::transform_point(world_from_j_inv, p_world);
                if (p_j.z() <= geom::kMinDepth) {
                    target = {K.cx, K.cy};  // behind camera j: uninformative
                    field.confidence.at(cy, cx, 0) = 0;
                    field.confidence.at(cy, cx, 1) = 0;
                } else {
                    target = geom::project_point(K, p_j);
                }
            }
            field.target.at(cy, cx, 0) = target.x() + sigma * noise(rng);
            field.target.at(cy, cx, 1) = target.y() + sigma * noise(rng);
        }
    return field;
}

GridD synth_depth(const GridD& gt_depth, const GridD& dyn_mask, const NoiseModel& noise,
                  uint64_t seed, int frame) {
    require_same_shape(gt_depth, dyn_mask, "synth_depth: mask shape");
    std::mt19937_64 rng(mix64(seed, mix64(0x44657074ull /*"Dept"*/, uint64_t(frame))));
    std::uniform_real_distribution<double> ua(noise.depth_a_min, noise.depth_a_max);
    std::uniform_real_distribution<double> ub(noise.depth_b_min, noise.depth_b_max);
    std::normal_distribution<double> eta(0, 1);
    double a = ua(rng), b = ub(rng);

    GridD out(gt_depth.h, gt_depth.w, 1);
    for (int y = 0; y < gt_depth.h; ++y)
        for (int x = 0; x < gt_depth.w; ++x) {
            double d = gt_depth.at(y, x);
            if (d <= 0) continue;  // no surface: leave unsupervised
            out.at(y, x) = std::max(geom::kMinDepth,
                                    a * d + b + noise.sigma_d * d * eta(rng));
        }

    // correlated error patches: rectangular blobs with a consistent scale error
    if (noise.corrupt_fraction > 0) {
        const int ph = std::max(4, gt_depth.h / 8), pw = std::max(4, gt_depth.w / 8);
        double patch_px = double(ph) * pw;
        int n_patches = int(std::ceil(noise.corrupt_fraction *
                                      double(gt_depth.h) * gt_depth.w / patch_px));
        std::uniform_int_distribution<int> uy(0, std::max(0, gt_depth.h - ph));
        std::uniform_int_distribution<int> ux(0, std::max(0, gt_depth.w - pw));
        for (int p = 0; p < n_patches; ++p) {
            int y0 = uy(rng), x0 = ux(rng);
            for (int y = y0; y < y0 + ph; ++y)
                for (int x = x0; x < x0 + pw; ++x)
                    if (out.at(y, x) > 0) out.at(y, x) *= noise.corrupt_scale;
        }
    }
    return out;
}

uncertainty::FeatureMap synth_features(const SyntheticScene& scene, int frame,
                                       int channels, int stride) {
    if (channels < 4) throw InvalidConfig("feature maps need at least 4 channels");
    const auto& K = scene.K();
    const int gh = K.height / stride, gw = K.width / stride;
    uncertainty::FeatureMap F;
    F.data = GridD(gh, gw, channels);
    F.stride = stride;

    auto descriptor = [&](int material_id) {
        std::mt19937_64 rng(mix64(scene.config.seed,
                                  mix64(0x46656174ull /*"Feat"*/, uint64_t(material_id + 2))));
        std::normal_distribution<double> n(0, 1);
        Eigen::VectorXd d(channels);
        for (int c = 0; c < channels; ++c) d[c] = n(rng);
        return Eigen::VectorXd(d.normalized());
    };

    std::mt19937_64 noise_rng(
        mix64(scene.config.seed, mix64(0x464e6f69ull /*"FNoi"*/, uint64_t(frame))));
    std::normal_distribution<double> n(0, 1);
    const double sigma_f = scene.config.noise.sigma_f;

    for (int cy = 0; cy < gh; ++cy)
        for (int cx = 0; cx < gw; ++cx) {
            SurfaceHit hit =
                trace_pixel(scene, frame, cell_center(cx, stride), cell_center(cy, stride));
            Eigen::VectorXd d = descriptor(hit.hit ? hit.material_id : -1);
            if (sigma_f > 0) {
                for (int c = 0; c < channels; ++c) d[c] += sigma_f * n(noise_rng);
                d.normalize();
            }
            for (int c = 0; c < channels; ++c) F.data.at(cy, cx, c) = d[c];
        }
    return F;
}

SensorFrame make_sensor_frame(const SyntheticScene& scene, int frame, int feat_channels,
                              int stride) {
    SensorFrame s;
    s.gt = render_gt(scene, frame);
    s.proxy_depth =
        synth_depth(s.gt.depth, s.gt.dyn_mask, scene.config.noise, scene.config.seed, frame);
    s.features = synth_features(scene, frame, feat_channels, stride);
    return s;
}

void write_sequence(const SyntheticScene& scene, const std::string& dir,
                    int feat_channels, int stride) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory: " + dir);

    save_scene_config(dir + "/scene.json", scene.config);
    evalkit::write_tum(dir + "/groundtruth.tum", scene.camera);

    char name[64];
    for (int f = 0; f < scene.n_frames(); ++f) {
        SensorFrame s = make_sensor_frame(scene, f, feat_channels, stride);
        std::snprintf(name, sizeof(name), "/rgb_%04d.png", f);
        io::write_png(dir + name, s.gt.color);
        std::snprintf(name, sizeof(name), "/depth_%04d.pfm", f);
        io::write_pfm(dir + name, s.gt.depth);
        std::snprintf(name, sizeof(name), "/proxy_depth_%04d.pfm", f);
        io::write_pfm(dir + name, s.proxy_depth);
        std::snprintf(name, sizeof(name), "/mask_%04d.png", f);
        io::write_png(dir + name, s.gt.dyn_mask);
        std::snprintf(name, sizeof(name), "/features_%04d.fblk", f);
        io::write_feature_block(dir + name, s.features.data);
    }
}

}  // namespace uslam::simworld
