#include <doctest.h>

#include <cmath>
#include <random>

#include "uslam/evalkit.hpp"
#include "uslam/mapping.hpp"

using namespace uslam;
using namespace uslam::mapping;
using geom::CameraIntrinsics;
using geom::Pose;

namespace {

CameraIntrinsics cam() { return {30, 30, 23.5, 17.5, 48, 36}; }

uncertainty::FeatureMap constant_features(int h, int w, int c = 4,
                                          double value = 1.0) {
    uncertainty::FeatureMap F;
    F.data = GridD((h + 7) / 8, (w + 7) / 8, c, value);
    F.stride = 8;
    return F;
}

/// Textured wall of Gaussians around z = 3, wide enough to cover the view
/// from small camera translations.
splat::GaussianMap wall_map(uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    splat::GaussianMap map;
    map.background = {0.05, 0.05, 0.05};
    for (double y = -2.4; y <= 2.4; y += 0.4)
        for (double x = -3.2; x <= 3.2; x += 0.4) {
            splat::Gaussian g;
            g.mean = {x, y, 3.0 + 0.1 * std::sin(3 * x) * std::cos(2 * y)};
            g.log_scale = Eigen::Vector3d::Constant(std::log(0.22));
            g.color = {0.2 + 0.6 * u(rng), 0.2 + 0.6 * u(rng), 0.2 + 0.6 * u(rng)};
            g.opacity_logit = 4.0;
            map.gaussians.push_back(g);
        }
    return map;
}

/// Keyframe observing a reference map from the given pose: the render is the
/// observation and its depth the proxy.
MapKeyframe observe(int id, const splat::GaussianMap& world, const Pose& pose,
                    const CameraIntrinsics& K) {
    MapKeyframe kf;
    kf.id = id;
    kf.pose = pose;
    auto out = splat::rasterize(world, pose, K);
    kf.image = out.color;
    kf.proxy_depth = out.depth;
    kf.features = constant_features(K.height, K.width);
    return kf;
}

Pose translated(const Eigen::Vector3d& t) {
    Pose p = Pose::identity();
    p.t = t;
    return p;
}

int subsample_count(const GridD& proxy, int stride) {
    int n = 0;
    for (int y = 0; y < proxy.h; y += stride)
        for (int x = 0; x < proxy.w; x += stride)
            if (proxy.at(y, x) > 0) ++n;
    return n;
}

bool maps_bitwise_equal(const splat::GaussianMap& a, const splat::GaussianMap& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        const auto& ga = a.gaussians[i];
        const auto& gb = b.gaussians[i];
        if (ga.mean != gb.mean || ga.quat != gb.quat ||
            ga.log_scale != gb.log_scale || ga.color != gb.color ||
            ga.opacity_logit != gb.opacity_logit ||
            ga.anchor_keyframe_id != gb.anchor_keyframe_id)
            return false;
    }
    return true;
}

double max_map_difference(const splat::GaussianMap& a, const splat::GaussianMap& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst,
                         (a.gaussians[i].mean - b.gaussians[i].mean).norm());
        worst = std::max(worst,
                         (a.gaussians[i].quat - b.gaussians[i].quat).norm());
    }
    return worst;
}

}  // namespace

TEST_CASE("expansion fills an empty map at the subsample rate") {
    auto K = cam();
    MapKeyframe kf;
    kf.id = 0;
    kf.pose = Pose::identity();
    kf.image = GridD(K.height, K.width, 3, 0.5);
    kf.proxy_depth = GridD(K.height, K.width, 1, 3.0);
    MappingOptions opts;
    splat::GaussianMap map;
    size_t n = expand_map(map, kf, K, opts);
    CHECK(n == size_t(subsample_count(kf.proxy_depth, opts.spawn_stride)));
    CHECK(map.size() == n);
    for (const auto& g : map.gaussians) CHECK(g.anchor_keyframe_id == 0);
}

TEST_CASE("re-expanding the same keyframe spawns almost nothing") {
    auto K = cam();
    auto world = wall_map(5);
    MapKeyframe kf = observe(0, world, Pose::identity(), K);
    MappingOptions opts;
    splat::GaussianMap map;
    size_t first = expand_map(map, kf, K, opts);
    size_t second = expand_map(map, kf, K, opts);
    CHECK(first > 50);
    CHECK(double(second) < 0.05 * double(first));
}

TEST_CASE("spawned means reproject to their source pixels") {
    auto K = cam();
    MapKeyframe kf;
    kf.id = 3;
    kf.pose = translated({0.3, -0.1, 0.2});
    kf.pose.q = geom::quat_exp({0.05, -0.08, 0.02});
    kf.image = GridD(K.height, K.width, 3, 0.5);
    kf.proxy_depth = GridD(K.height, K.width, 1);
    for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x)
            kf.proxy_depth.at(y, x) = 2.0 + 0.01 * x + 0.02 * y;
    MappingOptions opts;
    splat::GaussianMap map;
    expand_map(map, kf, K, opts);
    Pose world_to_cam = kf.pose.inverse();
    size_t idx = 0;
    for (int y = 0; y < K.height; y += opts.spawn_stride)
        for (int x = 0; x < K.width; x += opts.spawn_stride) {
            REQUIRE(idx < map.size());
            Eigen::Vector3d p = geom::transform_point(world_to_cam,
                                                      map.gaussians[idx].mean);
            double u = K.fx * p.x() / p.z() + K.cx;
            double v = K.fy * p.y() / p.z() + K.cy;
            CHECK(std::hypot(u - x, v - y) < 0.5);
            ++idx;
        }
}

TEST_CASE("deformation with identical poses leaves the map bitwise unchanged") {
    auto K = cam();
    auto world = wall_map(7);
    splat::GaussianMap map;
    std::vector<Pose> poses = {Pose::identity(), translated({0.1, 0, 0}),
                               translated({0.2, 0.05, 0})};
    for (int i = 0; i < 3; ++i)
        expand_map(map, observe(i, world, poses[i], K), K, MappingOptions{});
    splat::GaussianMap before = map;
    deform_map(map, poses, poses);
    CHECK(maps_bitwise_equal(map, before));
}

TEST_CASE("translating every anchor translates every mean") {
    auto K = cam();
    auto world = wall_map(9);
    splat::GaussianMap map;
    std::vector<Pose> old_poses = {Pose::identity(), translated({0.1, 0, 0})};
    for (int i = 0; i < 2; ++i)
        expand_map(map, observe(i, world, old_poses[i], K), K, MappingOptions{});
    splat::GaussianMap before = map;
    Eigen::Vector3d shift(0.3, -0.2, 0.15);
    std::vector<Pose> new_poses = old_poses;
    for (auto& p : new_poses) p.t += shift;
    deform_map(map, old_poses, new_poses);
    for (size_t i = 0; i < map.size(); ++i) {
        CHECK((map.gaussians[i].mean - before.gaussians[i].mean - shift).norm() <
              1e-9);
        CHECK((map.gaussians[i].quat - before.gaussians[i].quat).norm() < 1e-9);
        CHECK(map.gaussians[i].log_scale == before.gaussians[i].log_scale);
        CHECK(map.gaussians[i].color == before.gaussians[i].color);
        CHECK(map.gaussians[i].opacity_logit == before.gaussians[i].opacity_logit);
    }
}

TEST_CASE("deforming with a keyframe's own pose update preserves its render") {
    auto K = cam();
    auto world = wall_map(11);
    Pose old_pose = translated({0.05, 0.02, 0});
    splat::GaussianMap map;
    expand_map(map, observe(0, world, old_pose, K), K, MappingOptions{});
    auto before = splat::rasterize(map, old_pose, K);

    Pose new_pose = old_pose;
    new_pose.q = (old_pose.q * geom::quat_exp({0.1, -0.05, 0.08})).normalized();
    new_pose.t += Eigen::Vector3d(0.2, -0.1, 0.3);
    deform_map(map, {old_pose}, {new_pose});
    auto after = splat::rasterize(map, new_pose, K);
    for (size_t i = 0; i < before.color.size(); ++i)
        CHECK(std::abs(before.color.data[i] - after.color.data[i]) < 1e-5);
}

TEST_CASE("deformation followed by the swapped deformation is the identity") {
    auto K = cam();
    auto world = wall_map(13);
    std::vector<Pose> old_poses = {Pose::identity(), translated({0.1, 0, 0})};
    splat::GaussianMap map;
    for (int i = 0; i < 2; ++i)
        expand_map(map, observe(i, world, old_poses[i], K), K, MappingOptions{});
    splat::GaussianMap before = map;

    std::vector<Pose> new_poses = old_poses;
    for (size_t i = 0; i < new_poses.size(); ++i) {
        new_poses[i].q = (new_poses[i].q *
                          geom::quat_exp({0.02 * double(i + 1), -0.03, 0.01}))
                             .normalized();
        new_poses[i].t += Eigen::Vector3d(0.1, 0.2 * double(i), -0.05);
    }
    deform_map(map, old_poses, new_poses);
    deform_map(map, new_poses, old_poses);
    CHECK(max_map_difference(map, before) < 1e-9);
}

TEST_CASE("deformation rejects gaussians with unknown anchors") {
    splat::GaussianMap map;
    splat::Gaussian g;
    g.anchor_keyframe_id = 5;
    map.gaussians.push_back(g);
    std::vector<Pose> poses(3, Pose::identity());
    std::vector<Pose> moved = poses;
    moved[0].t.x() += 1;
    CHECK_THROWS_AS(deform_map(map, poses, moved), MissingAnchor);
}

TEST_CASE("keyframe sampling splits mass between window and the rest") {
    LocalWindow window;
    window.ids = {0, 1, 2, 3};
    const int total = 8, draws = 100000;
    std::mt19937_64 rng(321);
    std::vector<int> counts(total, 0);
    for (int i = 0; i < draws; ++i) ++counts[sample_keyframe(window, total, rng)];

    int in_window = counts[0] + counts[1] + counts[2] + counts[3];
    CHECK(std::abs(in_window / double(draws) - 0.5) < 0.02);
    // chi-square uniformity within each group; 3 dof at p = 0.01 is 11.345
    auto chi2 = [&](int lo, int hi, double expected) {
        double s = 0;
        for (int id = lo; id < hi; ++id)
            s += (counts[id] - expected) * (counts[id] - expected) / expected;
        return s;
    };
    CHECK(chi2(0, 4, in_window / 4.0) < 11.345);
    CHECK(chi2(4, 8, (draws - in_window) / 4.0) < 11.345);
}

TEST_CASE("keyframe sampling with everything in the window is uniform") {
    LocalWindow window;
    window.ids = {0, 1, 2, 3, 4};
    const int total = 5, draws = 100000;
    std::mt19937_64 rng(77);
    std::vector<int> counts(total, 0);
    for (int i = 0; i < draws; ++i) ++counts[sample_keyframe(window, total, rng)];
    double expected = draws / double(total);
    double chi2 = 0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 13.277);  // 4 dof at p = 0.01
}

TEST_CASE("keyframe sampling with one keyframe always returns it") {
    LocalWindow window;
    window.ids = {0};
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) CHECK(sample_keyframe(window, 1, rng) == 0);
}

TEST_CASE("local window ranks peers by covisibility") {
    auto K = cam();
    auto world = wall_map(17);
    std::vector<MapKeyframe> kfs;
    // increasing x translation: later ids overlap the last keyframe less
    for (int i = 0; i < 5; ++i)
        kfs.push_back(observe(i, world, translated({0.4 * i, 0, 0}), K));
    MappingOptions opts;
    opts.window_capacity = 3;
    LocalWindow w = build_local_window(kfs, K, opts);
    REQUIRE(w.ids.size() <= 3);
    REQUIRE(w.ids.size() >= 2);
    CHECK(w.ids[0] == 4);  // anchored at the most recent keyframe
    CHECK(w.ids[1] == 3);  // closest pose, highest covisibility
}

TEST_CASE("a perfectly self-rendered keyframe is a stationary point") {
    auto K = cam();
    splat::GaussianMap map = wall_map(19);
    MapKeyframe kf = observe(0, map, Pose::identity(), K);
    GridD beta(K.height, K.width, 1, 1.0);
    LossWeights w;
    w.lambda7 = 0;
    w.lambda_ssim = 0;
    MapOptimizer optimizer{MappingOptions{}};
    auto out = optimizer.step(map, kf, beta, K, w);
    double norm2 = 0;
    for (const auto& g : out.grads.per_gaussian)
        norm2 += g.mean.squaredNorm() + g.quat.squaredNorm() +
                 g.log_scale.squaredNorm() + g.color.squaredNorm() +
                 g.opacity_logit * g.opacity_logit;
    CHECK(std::sqrt(norm2) < 1e-8);
}

TEST_CASE("raising beta tenfold cuts a region's data term a hundredfold") {
    auto K = cam();
    splat::GaussianMap map = wall_map(23);
    MapKeyframe kf = observe(0, map, Pose::identity(), K);
    // perturb the map so residuals are nonzero everywhere
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0, 0.05);
    for (auto& g : map.gaussians) g.color += Eigen::Vector3d(n(rng), n(rng), n(rng));

    LossWeights w;
    w.lambda7 = 0;
    splat::RenderTargets targets;
    targets.image = kf.image;
    targets.proxy_depth = kf.proxy_depth;
    auto loss_with = [&](double beta_left) {
        targets.beta = GridD(K.height, K.width, 1, 1.0);
        for (int y = 0; y < K.height; ++y)
            for (int x = 0; x < K.width / 2; ++x) targets.beta.at(y, x) = beta_left;
        return splat::rasterize_with_gradients(map, kf.pose, K, w, targets)
            .loss.total;
    };
    double all_one = loss_with(1.0);
    double damped = loss_with(10.0);
    double removed = loss_with(1e9);  // right half only
    double left_contribution = all_one - removed;
    REQUIRE(left_contribution > 1e-6);
    CHECK(damped - removed ==
          doctest::Approx(left_contribution / 100.0).epsilon(1e-6));
}

TEST_CASE("map steps and MLP steps stay detached") {
    auto K = cam();
    auto world = wall_map(29);
    splat::GaussianMap map;
    MapKeyframe kf = observe(0, world, Pose::identity(), K);
    expand_map(map, kf, K, MappingOptions{});
    splat::GaussianMap twin = map;

    LossWeights w;
    auto model = uncertainty::UncertaintyModel::create(kf.features.channels(), 16, 3);
    GridD beta = uncertainty::predict_uncertainty(model, kf.features, K.height,
                                                  K.width);

    // the render handed to the MLP is the pre-update forward pass
    MapOptimizer optimizer{MappingOptions{}};
    auto out = optimizer.step(map, kf, beta, K, w);
    auto plain = splat::rasterize(twin, kf.pose, K);
    REQUIRE(out.render.color.data == plain.color.data);
    REQUIRE(out.render.depth.data == plain.depth.data);

    // training on either copy of that render yields bitwise-equal models,
    // and touches neither map
    splat::GaussianMap map_before = map;
    uncertainty::UncertaintyTrainer ta(model), tb(model);
    auto nb = uncertainty::regv_neighbors(kf.features);
    ta.train_step(out.render.color, out.render.depth, kf.image, kf.proxy_depth,
                  kf.features, w, &nb);
    tb.train_step(plain.color, plain.depth, kf.image, kf.proxy_depth, kf.features,
                  w, &nb);
    CHECK(ta.model().bitwise_equal(tb.model()));
    CHECK(maps_bitwise_equal(map, map_before));
}

TEST_CASE("zero refinement iterations change nothing") {
    auto K = cam();
    auto world = wall_map(31);
    splat::GaussianMap map;
    std::vector<MapKeyframe> kfs = {observe(0, world, Pose::identity(), K)};
    expand_map(map, kfs[0], K, MappingOptions{});
    splat::GaussianMap map_before = map;
    auto model = uncertainty::UncertaintyModel::create(kfs[0].features.channels(),
                                                       16, 5);
    uncertainty::UncertaintyTrainer trainer(model);
    final_refinement(map, trainer, kfs, 0, K, LossWeights{}, MappingOptions{}, 1);
    CHECK(maps_bitwise_equal(map, map_before));
    CHECK(trainer.model().bitwise_equal(model));
}

TEST_CASE("refinement improves a held-out view") {
    auto K = cam();
    auto world = wall_map(37);
    std::vector<MapKeyframe> kfs;
    std::vector<Pose> poses;
    for (int i = 0; i < 5; ++i) poses.push_back(translated({0.08 * i - 0.16, 0, 0}));
    for (int i = 0; i < 5; ++i) kfs.push_back(observe(i, world, poses[i], K));
    Pose held_out = translated({0.04, 0.01, 0});
    auto truth = splat::rasterize(world, held_out, K);

    splat::GaussianMap map;
    MappingOptions opts;
    for (const auto& kf : kfs) expand_map(map, kf, K, opts);

    auto model = uncertainty::UncertaintyModel::create(kfs[0].features.channels(),
                                                       16, 7);
    uncertainty::UncertaintyTrainer trainer(model, 1e-3);
    double before = evalkit::psnr(splat::rasterize(map, held_out, K).color,
                                  truth.color);
    final_refinement(map, trainer, kfs, 300, K, LossWeights{}, opts, 4242);
    double after = evalkit::psnr(splat::rasterize(map, held_out, K).color,
                                 truth.color);
    CHECK(after >= before);
}

TEST_CASE("refinement learns high beta on unstable regions") {
    // Right third of every keyframe flickers and carries a bogus proxy depth;
    // features distinguish the two regions so the MLP can separate them.
    CameraIntrinsics K{20, 20, 15.5, 11.5, 32, 24};
    auto world = wall_map(41);
    const int split_x = 20;

    std::vector<MapKeyframe> kfs;
    for (int i = 0; i < 4; ++i) {
        MapKeyframe kf = observe(i, world, Pose::identity(), K);
        kf.features.data = GridD(3, 4, 2, 0.0);
        for (int cy = 0; cy < 3; ++cy)
            for (int cx = 0; cx < 4; ++cx)
                kf.features.data.at(cy, cx, cx * 8 >= split_x ? 1 : 0) = 1.0;
        double flicker = (i % 2 == 0) ? 0.35 : -0.35;
        for (int y = 0; y < K.height; ++y)
            for (int x = split_x; x < K.width; ++x) {
                for (int ch = 0; ch < 3; ++ch) {
                    double& v = kf.image.at(y, x, ch);
                    v = std::clamp(v + flicker, 0.0, 1.0);
                }
                kf.proxy_depth.at(y, x) += 3.0;
            }
        kfs.push_back(kf);
    }

    // start from a map that already fits the stable region perfectly
    splat::GaussianMap map = world;
    MappingOptions opts;
    auto model = uncertainty::UncertaintyModel::create(2, 16, 9);
    uncertainty::UncertaintyTrainer trainer(model, 1e-2);
    final_refinement(map, trainer, kfs, 400, K, LossWeights{}, opts, 99);

    GridD beta = uncertainty::predict_uncertainty(trainer.model(), kfs[0].features,
                                                  K.height, K.width);
    double stable = 0, unstable = 0;
    int n_stable = 0, n_unstable = 0;
    for (int y = 0; y < K.height; ++y) {
        for (int x = 0; x < 12; ++x, ++n_stable) stable += beta.at(y, x);
        for (int x = split_x + 4; x < K.width; ++x, ++n_unstable)
            unstable += beta.at(y, x);
    }
    stable /= n_stable;
    unstable /= n_unstable;
    CHECK(unstable / stable >= 5.0);
}
