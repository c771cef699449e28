#include "uslam/evalkit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "uslam/core/ssim.hpp"

namespace uslam::evalkit {

void Trajectory::push_back(double time, const Pose& pose) {
    if (!times.empty() && time <= times.back())
        throw InvalidConfig("trajectory timestamps must be strictly increasing");
    times.push_back(time);
    poses.push_back(pose);
}

void Trajectory::validate() const {
    if (times.size() != poses.size())
        throw DimensionMismatch("trajectory times/poses length mismatch");
    for (size_t i = 1; i < times.size(); ++i)
        if (times[i] <= times[i - 1])
            throw InvalidConfig("trajectory timestamps must be strictly increasing");
}

namespace {

/// Positions of est/gt pairs associated by nearest timestamp.
std::pair<Eigen::Matrix3Xd, Eigen::Matrix3Xd> associate(const Trajectory& est,
                                                        const Trajectory& gt) {
    est.validate();
    gt.validate();
    std::vector<std::pair<int, int>> pairs;
    for (size_t i = 0; i < est.size(); ++i) {
        auto it = std::lower_bound(gt.times.begin(), gt.times.end(), est.times[i]);
        int best = -1;
        double best_dt = kAssocTolerance;
        for (auto cand : {it, it == gt.times.begin() ? it : std::prev(it)}) {
            if (cand == gt.times.end()) continue;
            double dt = std::abs(*cand - est.times[i]);
            if (dt <= best_dt) {
                best_dt = dt;
                best = int(cand - gt.times.begin());
            }
        }
        if (best >= 0) pairs.emplace_back(int(i), best);
    }
    if (pairs.size() < 3)
        throw DegenerateConfiguration("need at least 3 associated trajectory points");
    Eigen::Matrix3Xd pe(3, long(pairs.size())), pg(3, long(pairs.size()));
    for (size_t k = 0; k < pairs.size(); ++k) {
        pe.col(long(k)) = est.poses[size_t(pairs[k].first)].t;
        pg.col(long(k)) = gt.poses[size_t(pairs[k].second)].t;
    }
    return {pe, pg};
}

Sim3Transform umeyama_points(const Eigen::Matrix3Xd& src, const Eigen::Matrix3Xd& dst) {
    const long n = src.cols();
    Vector3d mu_s = src.rowwise().mean();
    Vector3d mu_d = dst.rowwise().mean();
    Eigen::Matrix3Xd cs = src.colwise() - mu_s;
    Eigen::Matrix3Xd cd = dst.colwise() - mu_d;
    double var_s = cs.squaredNorm() / double(n);
    Matrix3d cov = cd * cs.transpose() / double(n);
    Eigen::JacobiSVD<Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    // collinear or coincident points leave the rotation under-determined
    if (var_s < 1e-18 || sv(1) < 1e-12 * std::max(sv(0), 1e-300))
        throw DegenerateConfiguration("trajectory points are collinear or coincident");
    Matrix3d S = Matrix3d::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) S(2, 2) = -1;
    Sim3Transform T;
    T.R = svd.matrixU() * S * svd.matrixV().transpose();
    T.s = (sv.asDiagonal() * S).trace() / var_s;
    if (T.s <= 0) throw DegenerateConfiguration("non-positive alignment scale");
    T.t = mu_d - T.s * (T.R * mu_s);
    return T;
}

}  // namespace

Sim3Transform umeyama_align(const Trajectory& est, const Trajectory& gt) {
    auto [pe, pg] = associate(est, gt);
    return umeyama_points(pe, pg);
}

double ate_rmse(const Trajectory& est, const Trajectory& gt) {
    auto [pe, pg] = associate(est, gt);
    Sim3Transform T = umeyama_points(pe, pg);
    double sq = 0;
    for (long k = 0; k < pe.cols(); ++k) sq += (T.apply(pe.col(k)) - pg.col(k)).squaredNorm();
    return std::sqrt(sq / double(pe.cols()));
}

double psnr(const GridD& a, const GridD& b) {
    require_same_shape(a, b, "psnr: image shape");
    double mse = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= double(a.size());
    if (mse == 0) return kPsnrSentinel;
    return std::min(kPsnrSentinel, 10.0 * std::log10(1.0 / mse));
}

double ssim(const GridD& a, const GridD& b) { return ssim_mean(a, b); }

double dynamic_auroc(const GridD& beta, const GridD& gt_mask) {
    require_same_shape(beta, gt_mask, "auroc: map shape");
    const size_t n = beta.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t i, size_t j) { return beta.data[i] < beta.data[j]; });
    // Mann-Whitney U via rank sum, average ranks over ties
    double pos_rank_sum = 0;
    size_t n_pos = 0, n_neg = 0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && beta.data[order[j]] == beta.data[order[i]]) ++j;
        double avg_rank = 0.5 * double(i + 1 + j);  // ranks are 1-based
        for (size_t k = i; k < j; ++k) {
            if (gt_mask.data[order[k]] != 0) {
                pos_rank_sum += avg_rank;
                ++n_pos;
            } else {
                ++n_neg;
            }
        }
        i = j;
    }
    if (n_pos == 0 || n_neg == 0)
        throw SingleClass("auroc needs both dynamic and static pixels");
    return (pos_rank_sum - 0.5 * double(n_pos) * double(n_pos + 1)) /
           (double(n_pos) * double(n_neg));
}

void write_tum(const std::string& path, const Trajectory& traj) {
    traj.validate();
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "# timestamp tx ty tz qx qy qz qw\n" << std::setprecision(9);
    for (size_t i = 0; i < traj.size(); ++i) {
        const Pose& p = traj.poses[i];
        f << traj.times[i] << ' ' << p.t.x() << ' ' << p.t.y() << ' ' << p.t.z() << ' '
          << p.q.x() << ' ' << p.q.y() << ' ' << p.q.z() << ' ' << p.q.w() << '\n';
    }
    if (!f) throw IoError("write failed: " + path);
}

Trajectory read_tum(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    Trajectory traj;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double time;
        Pose p;
        double qx, qy, qz, qw;
        if (!(ss >> time >> p.t.x() >> p.t.y() >> p.t.z() >> qx >> qy >> qz >> qw))
            throw IoError("bad trajectory line: " + line);
        p.q = Eigen::Quaterniond(qw, qx, qy, qz).normalized();
        traj.push_back(time, p);
    }
    return traj;
}

}  // namespace uslam::evalkit
