#include "uslam/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

namespace uslam::mapping {

using Eigen::Vector3d;
using Eigen::Vector4d;

void MappingOptions::validate() const {
    if (tau_alpha <= 0 || tau_alpha > 1 || depth_mismatch <= 0 || spawn_stride < 1 ||
        window_capacity < 1 || covisibility_threshold < 0 ||
        covisibility_threshold > 1 || iterations_per_keyframe < 0 ||
        scene_extent <= 0 || lr_means < 0 || lr_scales < 0 || lr_rotation < 0 ||
        lr_color < 0 || lr_opacity < 0)
        throw InvalidConfig("invalid mapping options");
}

double covisibility(const MapKeyframe& a, const MapKeyframe& b,
                    const CameraIntrinsics& K, int stride) {
    geom::Pose inv_b = b.pose.inverse();
    long total = 0, shared = 0;
    for (int y = 0; y < a.proxy_depth.h; y += stride)
        for (int x = 0; x < a.proxy_depth.w; x += stride) {
            double d = a.proxy_depth.at(y, x);
            if (d <= 0) continue;
            ++total;
            Vector3d p_w = geom::transform_point(
                a.pose, geom::backproject_pixel(K, {double(x), double(y)}, d));
            Vector3d p_b = geom::transform_point(inv_b, p_w);
            if (p_b.z() <= geom::kMinDepth) continue;
            double u = K.fx * p_b.x() / p_b.z() + K.cx;
            double v = K.fy * p_b.y() / p_b.z() + K.cy;
            if (u >= 0 && u <= K.width - 1 && v >= 0 && v <= K.height - 1) ++shared;
        }
    return total > 0 ? double(shared) / double(total) : 0.0;
}

LocalWindow build_local_window(const std::vector<MapKeyframe>& keyframes,
                               const CameraIntrinsics& K, const MappingOptions& opts) {
    LocalWindow w;
    w.capacity = opts.window_capacity;
    if (keyframes.empty()) return w;
    const MapKeyframe* anchor = &keyframes.front();
    for (const auto& kf : keyframes)
        if (kf.id > anchor->id) anchor = &kf;
    w.ids.push_back(anchor->id);

    std::vector<std::pair<double, int>> ranked;  // (covisibility, id)
    for (const auto& kf : keyframes) {
        if (kf.id == anchor->id) continue;
        double c = covisibility(*anchor, kf, K);
        if (c > opts.covisibility_threshold) ranked.emplace_back(c, kf.id);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second > b.second;  // break ties toward recency
    });
    for (const auto& [c, id] : ranked) {
        if (int(w.ids.size()) >= w.capacity) break;
        w.ids.push_back(id);
    }
    return w;
}

int sample_keyframe(const LocalWindow& window, int total_keyframes,
                    std::mt19937_64& rng) {
    if (total_keyframes < 1) throw InvalidConfig("no keyframes to sample");
    std::unordered_set<int> in_window;
    for (int id : window.ids)
        if (id >= 0 && id < total_keyframes) in_window.insert(id);
    std::vector<int> inside(in_window.begin(), in_window.end());
    std::sort(inside.begin(), inside.end());
    std::vector<int> outside;
    for (int id = 0; id < total_keyframes; ++id)
        if (!in_window.count(id)) outside.push_back(id);

    if (inside.empty() || outside.empty()) {
        const std::vector<int>& pool = inside.empty() ? outside : inside;
        std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
        return pool[pick(rng)];
    }
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const std::vector<int>& pool = u01(rng) < 0.5 ? inside : outside;
    std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
    return pool[pick(rng)];
}

size_t expand_map(splat::GaussianMap& map, const MapKeyframe& kf,
                  const CameraIntrinsics& K, const MappingOptions& opts,
                  const splat::RasterizerOptions& ropts) {
    splat::RenderOutput render = splat::rasterize(map, kf.pose, K, ropts);
    size_t spawned = 0;
    for (int y = 0; y < kf.proxy_depth.h; y += opts.spawn_stride)
        for (int x = 0; x < kf.proxy_depth.w; x += opts.spawn_stride) {
            double d = kf.proxy_depth.at(y, x);
            if (d <= 0) continue;
            bool thin = render.alpha.at(y, x) < opts.tau_alpha;
            bool wrong_depth =
                !thin && std::abs(render.depth.at(y, x) - d) > opts.depth_mismatch * d;
            if (!thin && !wrong_depth) continue;
            splat::Gaussian g;
            g.mean = geom::transform_point(
                kf.pose, geom::backproject_pixel(K, {double(x), double(y)}, d));
            g.color = Vector3d(kf.image.at(y, x, 0), kf.image.at(y, x, 1),
                               kf.image.at(y, x, 2));
            // isotropic footprint covering the subsample spacing at this depth
            g.log_scale =
                Vector3d::Constant(std::log(d * opts.spawn_stride / (2.0 * K.fx)));
            g.opacity_logit = 3.5;
            g.anchor_keyframe_id = uint32_t(kf.id);
            map.gaussians.push_back(g);
            ++spawned;
        }
    return spawned;
}

void deform_map(splat::GaussianMap& map, const std::vector<Pose>& old_poses,
                const std::vector<Pose>& new_poses) {
    auto pose_equal = [](const Pose& a, const Pose& b) {
        return std::memcmp(a.q.coeffs().data(), b.q.coeffs().data(),
                           4 * sizeof(double)) == 0 &&
               std::memcmp(a.t.data(), b.t.data(), 3 * sizeof(double)) == 0;
    };
    for (auto& g : map.gaussians) {
        size_t a = g.anchor_keyframe_id;
        if (a >= old_poses.size() || a >= new_poses.size())
            throw MissingAnchor("gaussian anchored to unknown keyframe " +
                                std::to_string(a));
        if (pose_equal(old_poses[a], new_poses[a])) continue;
        Pose T = new_poses[a] * old_poses[a].inverse();
        g.mean = geom::transform_point(T, g.mean);
        Eigen::Quaterniond q(g.quat(0), g.quat(1), g.quat(2), g.quat(3));
        Eigen::Quaterniond rotated = (T.q * q).normalized();
        g.quat = Vector4d(rotated.w(), rotated.x(), rotated.y(), rotated.z());
    }
}

splat::RenderWithGradients MapOptimizer::step(splat::GaussianMap& map,
                                              const MapKeyframe& kf,
                                              const GridD& beta,
                                              const CameraIntrinsics& K,
                                              const LossWeights& w,
                                              const splat::RasterizerOptions& ropts) {
    splat::RenderTargets targets;
    targets.image = kf.image;
    targets.proxy_depth = kf.proxy_depth;
    targets.beta = beta;
    splat::RenderWithGradients out =
        splat::rasterize_with_gradients(map, kf.pose, K, w, targets, ropts);

    moments_.resize(map.gaussians.size());
    ++step_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double corr1 = 1.0 - std::pow(b1, double(step_));
    const double corr2 = 1.0 - std::pow(b2, double(step_));
    auto adam = [&](double& x, double& m, double& v, double g, double lr) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        x -= lr * (m / corr1) / (std::sqrt(v / corr2) + eps);
    };
    for (size_t i = 0; i < map.gaussians.size(); ++i) {
        splat::Gaussian& g = map.gaussians[i];
        const splat::GaussianGrad& gr = out.grads.per_gaussian[i];
        Moments& mo = moments_[i];
        for (int k = 0; k < 3; ++k)
            adam(g.mean(k), mo.m.mean(k), mo.v.mean(k), gr.mean(k),
                 opts_.lr_means * opts_.scene_extent);
        for (int k = 0; k < 4; ++k)
            adam(g.quat(k), mo.m.quat(k), mo.v.quat(k), gr.quat(k), opts_.lr_rotation);
        for (int k = 0; k < 3; ++k)
            adam(g.log_scale(k), mo.m.log_scale(k), mo.v.log_scale(k), gr.log_scale(k),
                 opts_.lr_scales);
        for (int k = 0; k < 3; ++k)
            adam(g.color(k), mo.m.color(k), mo.v.color(k), gr.color(k), opts_.lr_color);
        adam(g.opacity_logit, mo.m.opacity_logit, mo.v.opacity_logit,
             gr.opacity_logit, opts_.lr_opacity);
    }
    return out;
}

void final_refinement(splat::GaussianMap& map, uncertainty::UncertaintyTrainer& mlp,
                      const std::vector<MapKeyframe>& keyframes, int iterations,
                      const CameraIntrinsics& K, const LossWeights& w,
                      const MappingOptions& opts, uint64_t seed,
                      const splat::RasterizerOptions& ropts) {
    if (iterations <= 0 || keyframes.empty()) return;
    LocalWindow window = build_local_window(keyframes, K, opts);
    std::unordered_map<int, size_t> index_of;
    for (size_t i = 0; i < keyframes.size(); ++i) index_of[keyframes[i].id] = i;

    std::vector<std::vector<std::vector<int>>> neighbors(keyframes.size());
    MapOptimizer optimizer(opts);
    std::mt19937_64 rng(seed);
    for (int it = 0; it < iterations; ++it) {
        int id = sample_keyframe(window, int(keyframes.size()), rng);
        const MapKeyframe& kf = keyframes[index_of.at(id)];
        size_t idx = index_of.at(id);
        if (neighbors[idx].empty())
            neighbors[idx] = uncertainty::regv_neighbors(kf.features);
        GridD beta = uncertainty::predict_uncertainty(mlp.model(), kf.features,
                                                      kf.image.h, kf.image.w);
        splat::RenderWithGradients out = optimizer.step(map, kf, beta, K, w, ropts);
        mlp.train_step(out.render.color, out.render.depth, kf.image, kf.proxy_depth,
                       kf.features, w, &neighbors[idx]);
    }
}

}  // namespace uslam::mapping
