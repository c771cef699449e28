#include <doctest.h>

#include <cstdio>
#include <random>

#include "uslam/core/ssim.hpp"
#include "uslam/evalkit.hpp"

using namespace uslam;
using namespace uslam::evalkit;

namespace {

Trajectory random_traj(int n, uint64_t seed, double spread = 5.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, 1);
    std::uniform_real_distribution<double> u(-spread, spread);
    Trajectory t;
    for (int i = 0; i < n; ++i) {
        geom::Pose p;
        p.q = Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng)).normalized();
        p.t = {u(rng), u(rng), u(rng)};
        t.push_back(i * 0.1, p);
    }
    return t;
}

Trajectory transformed(const Trajectory& in, const Sim3Transform& T) {
    Trajectory out = in;
    for (auto& p : out.poses) p.t = T.apply(p.t);
    return out;
}

Sim3Transform random_sim3(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0, 1);
    std::uniform_real_distribution<double> us(0.5, 2.0);
    Sim3Transform T;
    T.s = us(rng);
    T.R = Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng))
              .normalized()
              .toRotationMatrix();
    T.t = {g(rng), g(rng), g(rng)};
    return T;
}

GridD random_grid(int h, int w, int c, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    GridD g(h, w, c);
    for (auto& v : g.data) v = u(rng);
    return g;
}

}  // namespace

TEST_CASE("alignment of identical trajectories is the identity") {
    Trajectory t = random_traj(30, 1);
    Sim3Transform T = umeyama_align(t, t);
    CHECK(std::abs(T.s - 1.0) < 1e-9);
    CHECK((T.R - geom::Matrix3d::Identity()).norm() < 1e-9);
    CHECK(T.t.norm() < 1e-9);
}

TEST_CASE("alignment recovers an exact similarity transform") {
    std::mt19937_64 rng(2);
    Trajectory est = random_traj(25, 3);
    Sim3Transform truth = random_sim3(rng);
    truth.s = 2.0;
    Trajectory gt = transformed(est, truth);
    Sim3Transform T = umeyama_align(est, gt);
    CHECK(std::abs(T.s - truth.s) < 1e-9);
    CHECK((T.R - truth.R).norm() < 1e-9);
    CHECK((T.t - truth.t).norm() < 1e-9);
}

TEST_CASE("alignment beats 1000 random similarity candidates") {
    std::mt19937_64 rng(4);
    Trajectory est = random_traj(40, 5);
    Trajectory gt = random_traj(40, 6);
    Sim3Transform best = umeyama_align(est, gt);
    auto residual = [&](const Sim3Transform& T) {
        double sq = 0;
        for (size_t i = 0; i < est.size(); ++i)
            sq += (T.apply(est.poses[i].t) - gt.poses[i].t).squaredNorm();
        return sq;
    };
    double opt = residual(best);
    for (int i = 0; i < 1000; ++i) CHECK(opt <= residual(random_sim3(rng)) + 1e-12);
}

TEST_CASE("degenerate alignment inputs are rejected") {
    Trajectory two = random_traj(2, 7);
    CHECK_THROWS_AS(umeyama_align(two, two), DegenerateConfiguration);

    Trajectory line;
    for (int i = 0; i < 10; ++i) {
        geom::Pose p;
        p.t = {double(i), 2.0 * i, -1.0 * i};
        line.push_back(i * 0.1, p);
    }
    CHECK_THROWS_AS(umeyama_align(line, line), DegenerateConfiguration);

    // disjoint timestamps associate nothing
    Trajectory a = random_traj(10, 8);
    Trajectory b = a;
    for (auto& t : b.times) t += 100.0;
    CHECK_THROWS_AS(umeyama_align(a, b), DegenerateConfiguration);
}

TEST_CASE("ate_rmse basics") {
    Trajectory t = random_traj(30, 9);
    CHECK(ate_rmse(t, t) == doctest::Approx(0.0).epsilon(1e-12));

    Trajectory shifted = t;
    for (auto& p : shifted.poses) p.t += geom::Vector3d(1, -2, 3);
    CHECK(ate_rmse(shifted, t) < 1e-9);
}

TEST_CASE("ate_rmse invariant to pre-applied similarity transforms") {
    std::mt19937_64 rng(10);
    Trajectory est = random_traj(30, 11);
    Trajectory gt = random_traj(30, 12);
    double base = ate_rmse(est, gt);
    for (int i = 0; i < 5; ++i) {
        double moved = ate_rmse(transformed(est, random_sim3(rng)), gt);
        CHECK(std::abs(moved - base) < 1e-9);
    }
}

TEST_CASE("ate_rmse of isotropic noise approaches sigma sqrt(3)") {
    const double sigma = 0.01;
    std::mt19937_64 rng(13);
    std::normal_distribution<double> g(0, sigma);
    Trajectory gt = random_traj(5000, 14, 10.0);
    Trajectory est = gt;
    for (auto& p : est.poses) p.t += geom::Vector3d(g(rng), g(rng), g(rng));
    double rmse = ate_rmse(est, gt);
    double expect = sigma * std::sqrt(3.0);
    CHECK(std::abs(rmse - expect) / expect < 0.05);
}

TEST_CASE("psnr values") {
    GridD a = random_grid(16, 16, 3, 15);
    CHECK(psnr(a, a) == kPsnrSentinel);

    GridD b = a;
    for (auto& v : b.data) v += 0.1;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));

    GridD c = random_grid(16, 16, 3, 16);
    double mse = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a.data[i] - c.data[i];
        mse += d * d;
    }
    mse /= double(a.size());
    CHECK(psnr(a, c) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-9));
    CHECK(psnr(a, c) == psnr(c, a));
    CHECK_THROWS_AS(psnr(a, GridD(8, 8, 3)), DimensionMismatch);
}

TEST_CASE("ssim values") {
    GridD a = random_grid(32, 32, 3, 17);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    GridD b = random_grid(32, 32, 3, 18);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));

    // inverted checkerboard anti-correlates
    GridD cb(32, 32, 1), inv(32, 32, 1);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            cb.at(y, x) = (x + y) % 2;
            inv.at(y, x) = 1 - (x + y) % 2;
        }
    CHECK(ssim(cb, inv) < 0.0);
}

TEST_CASE("ssim of constant images reduces to the luminance term") {
    // away from the border, variance is zero so only luminance remains
    GridD a(32, 32, 1, 0.3), b(32, 32, 1, 0.5);
    auto ctx = ssim_map(a, b);
    const double c1 = 0.01 * 0.01;
    double lum = (2 * 0.3 * 0.5 + c1) / (0.3 * 0.3 + 0.5 * 0.5 + c1);
    CHECK(ctx.map.at(16, 16) == doctest::Approx(lum).epsilon(1e-9));
    CHECK(ssim(a, b) < 1.0);
}

TEST_CASE("auroc separates, is null on noise, matches brute force") {
    GridD beta(10, 10, 1), mask(10, 10, 1);
    for (int i = 0; i < 100; ++i) {
        beta.data[size_t(i)] = i < 40 ? 0.2 : 1.0 + i * 0.01;
        mask.data[size_t(i)] = i < 40 ? 0.0 : 1.0;
    }
    CHECK(dynamic_auroc(beta, mask) == doctest::Approx(1.0).epsilon(1e-12));

    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(0, 1);
    GridD b2(400, 250, 1), m2(400, 250, 1);
    for (auto& v : b2.data) v = u(rng);
    for (auto& v : m2.data) v = u(rng) < 0.5 ? 0.0 : 1.0;
    CHECK(std::abs(dynamic_auroc(b2, m2) - 0.5) < 0.02);

    // quantized scores force ties; compare against the pairwise definition
    GridD b3(8, 8, 1), m3(8, 8, 1);
    for (int i = 0; i < 64; ++i) {
        b3.data[size_t(i)] = double((i * 7) % 5);
        m3.data[size_t(i)] = (i * 3) % 2;
    }
    double num = 0;
    size_t np = 0, nn = 0;
    for (int p = 0; p < 64; ++p) {
        if (m3.data[size_t(p)] == 0) continue;
        ++np;
        for (int n = 0; n < 64; ++n) {
            if (m3.data[size_t(n)] != 0) continue;
            if (b3.data[size_t(p)] > b3.data[size_t(n)]) num += 1;
            else if (b3.data[size_t(p)] == b3.data[size_t(n)]) num += 0.5;
        }
    }
    nn = 64 - np;
    double oracle = num / (double(np) * double(nn));
    CHECK(dynamic_auroc(b3, m3) == doctest::Approx(oracle).epsilon(1e-6));

    // strictly monotone transforms leave the ranking unchanged
    GridD b4 = b3;
    for (auto& v : b4.data) v = std::exp(2.0 * v) - 3.0;
    CHECK(dynamic_auroc(b4, m3) == doctest::Approx(oracle).epsilon(1e-12));

    GridD all_static(8, 8, 1, 0.0);
    CHECK_THROWS_AS(dynamic_auroc(b3, all_static), SingleClass);
}

TEST_CASE("tum trajectory round trip") {
    Trajectory t = random_traj(20, 20);
    const char* path = "test_traj.tum";
    write_tum(path, t);
    Trajectory back = read_tum(path);
    std::remove(path);
    REQUIRE(back.size() == t.size());
    for (size_t i = 0; i < t.size(); ++i) {
        CHECK(back.times[i] == doctest::Approx(t.times[i]).epsilon(1e-9));
        CHECK((back.poses[i].t - t.poses[i].t).norm() < 1e-7);
        CHECK(geom::rotation_angle_deg(back.poses[i], t.poses[i]) < 1e-5);
    }
    CHECK_THROWS_AS(read_tum("missing.tum"), IoError);
}

TEST_CASE("non-monotone timestamps are rejected") {
    Trajectory t;
    t.push_back(0.0, geom::Pose::identity());
    CHECK_THROWS_AS(t.push_back(0.0, geom::Pose::identity()), InvalidConfig);
}
