#include "uslam/tracking.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace uslam::tracking {

namespace {

double cell_center(int index, int stride) { return (index + 0.5) * stride - 0.5; }

/// beta of keyframe i at a cell center; empty maps mean "no MLP yet" = 1.
double beta_at(const Keyframe& kf, double u, double v) {
    if (kf.beta.size() == 0) return 1.0;
    return kf.beta.sample(u, v);
}

struct CellResidual {
    bool valid = false;
    Vector2d r = Vector2d::Zero();       // target - prediction
    Vector2d w = Vector2d::Zero();       // per-component weight
    Eigen::Matrix<double, 2, 6> Ji, Jj;  // d r / d twist_i, twist_j
    Vector2d Jd = Vector2d::Zero();      // d r / d disparity_i(cell)
};

/// Reprojection residual of one edge cell with analytic Jacobians.
CellResidual edge_cell_residual(const FrameGraph& g, const FrameGraphEdge& e, int cy,
                                int cx, bool beta_frozen, bool want_jacobians) {
    const Keyframe& ki = g.keyframes[size_t(e.i)];
    const Keyframe& kj = g.keyframes[size_t(e.j)];
    const auto& K = g.K;
    const int r = g.opts.stride;
    CellResidual out;

    double u = cell_center(cx, r), v = cell_center(cy, r);
    double d = ki.disparity.at(cy, cx);
    if (d <= 0) return out;
    Vector3d m((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
    Vector3d X_i = m / d;
    geom::Matrix3d R_i = ki.pose.rotation();
    geom::Matrix3d R_jt = kj.pose.rotation().transpose();
    Vector3d p_w = R_i * X_i + ki.pose.t;
    Vector3d X_j = R_jt * (p_w - kj.pose.t);
    if (X_j.z() <= geom::kMinDepth) return out;

    Vector2d pred(K.fx * X_j.x() / X_j.z() + K.cx, K.fy * X_j.y() / X_j.z() + K.cy);
    out.valid = true;
    out.r = Vector2d(e.target.at(cy, cx, 0), e.target.at(cy, cx, 1)) - pred;
    double b = beta_frozen ? 1.0 : beta_at(ki, u, v);
    out.w = Vector2d(e.confidence.at(cy, cx, 0), e.confidence.at(cy, cx, 1)) / (b * b);

    if (want_jacobians) {
        Eigen::Matrix<double, 2, 3> Jp = geom::projection_jacobian(K, X_j);
        Eigen::Matrix<double, 2, 3> A = Jp * R_jt;
        out.Ji.block<2, 3>(0, 0) = A * R_i * geom::skew(X_i);
        out.Ji.block<2, 3>(0, 3) = -A;
        out.Jj.block<2, 3>(0, 0) = -Jp * geom::skew(X_j);
        out.Jj.block<2, 3>(0, 3) = Jp * R_jt;
        out.Jd = A * R_i * X_i / d;
    }
    return out;
}

/// Inverse proxy depth sampled at cell centers; 0 where unsupervised.
GridD cell_inverse_proxy(const Keyframe& kf, int stride, int gh, int gw) {
    GridD inv(gh, gw, 1);
    for (int cy = 0; cy < gh; ++cy)
        for (int cx = 0; cx < gw; ++cx) {
            double d = kf.proxy_depth.sample(cell_center(cx, stride), cell_center(cy, stride));
            inv.at(cy, cx) = d > 0 ? 1.0 / d : 0.0;
        }
    return inv;
}

void check_connected(const FrameGraph& g) {
    const size_t n = g.keyframes.size();
    std::vector<size_t> parent(n);
    std::iota(parent.begin(), parent.end(), size_t(0));
    std::function<size_t(size_t)> find = [&](size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (const auto& e : g.edges) parent[find(size_t(e.i))] = find(size_t(e.j));
    for (size_t k = 1; k < n; ++k)
        if (find(k) != find(0)) throw DisconnectedGraph();
}

struct GridDims {
    int gh = 0, gw = 0, cells = 0;
};

GridDims grid_dims(const FrameGraph& g) {
    GridDims d;
    d.gh = g.K.height / g.opts.stride;
    d.gw = g.K.width / g.opts.stride;
    d.cells = d.gh * d.gw;
    return d;
}

}  // namespace

void TrackingOptions::validate() const {
    if (stride <= 0 || temporal_window < 1 || prox_min_gap < 1 || tau_flow < 0 ||
        max_keyframe_gap < 1 || eps_depth <= 0 || gamma_cos < -1 || gamma_cos > 1 ||
        n_min < 1 || dba_iterations < 1 || final_iterations < 1 || init_keyframes < 2 ||
        damping_init <= 0 || damping_factor <= 1 || max_retries < 1)
        throw InvalidConfig("invalid tracking options");
}

bool should_insert_keyframe(double mean_flow_px, int frames_since_last,
                            const TrackingOptions& opts) {
    return mean_flow_px > opts.tau_flow || frames_since_last >= opts.max_keyframe_gap;
}

void add_keyframe(FrameGraph& graph, Keyframe kf, const FlowProviderFn& provider) {
    GridDims dims = grid_dims(graph);
    kf.id = int(graph.keyframes.size());
    if (kf.disparity.size() == 0) {
        kf.disparity = GridD(dims.gh, dims.gw, 1);
        for (int cy = 0; cy < dims.gh; ++cy)
            for (int cx = 0; cx < dims.gw; ++cx) {
                double d = kf.proxy_depth.sample(cell_center(cx, graph.opts.stride),
                                                 cell_center(cy, graph.opts.stride));
                kf.disparity.at(cy, cx) = 1.0 / std::max(d, 10.0 * geom::kMinDepth);
            }
    }
    if (kf.reg_mask.size() == 0) kf.reg_mask = GridD(dims.gh, dims.gw, 1, 1.0);

    std::vector<int> partners;
    int first = std::max(0, kf.id - graph.opts.temporal_window);
    for (int j = first; j < kf.id; ++j) partners.push_back(j);
    for (int j = 0; j < kf.id - graph.opts.prox_min_gap + 1; ++j) {
        if (j >= first) break;
        const Keyframe& other = graph.keyframes[size_t(j)];
        if (kf.id - other.id < graph.opts.prox_min_gap) continue;
        if ((other.pose.t - kf.pose.t).norm() > graph.opts.prox_distance) continue;
        if (geom::rotation_angle_deg(other.pose, kf.pose) > graph.opts.prox_angle_deg)
            continue;
        partners.push_back(j);
    }

    graph.keyframes.push_back(std::move(kf));
    const Keyframe& added = graph.keyframes.back();
    for (int j : partners) {
        const Keyframe& other = graph.keyframes[size_t(j)];
        FlowField fwd = provider(added.frame_index, other.frame_index);
        FlowField bwd = provider(other.frame_index, added.frame_index);
        graph.edges.push_back({added.id, j, fwd.target, fwd.confidence});
        graph.edges.push_back({j, added.id, bwd.target, bwd.confidence});
    }
}

GridD compute_reg_mask(const FrameGraph& graph, int i) {
    GridDims dims = grid_dims(graph);
    const auto& K = graph.K;
    const int r = graph.opts.stride;
    const Keyframe& ki = graph.keyframes[size_t(i)];
    GridD mask(dims.gh, dims.gw, 1, 1.0);

    std::vector<int> neighbors;
    for (const auto& e : graph.edges) {
        int other = e.i == i ? e.j : (e.j == i ? e.i : -1);
        if (other >= 0 && std::find(neighbors.begin(), neighbors.end(), other) ==
                              neighbors.end())
            neighbors.push_back(other);
    }
    if (neighbors.empty()) return mask;

    const int C = ki.features.channels();
    for (int cy = 0; cy < dims.gh; ++cy)
        for (int cx = 0; cx < dims.gw; ++cx) {
            double u = cell_center(cx, r), v = cell_center(cy, r);
            double depth = ki.proxy_depth.sample(u, v);
            if (depth <= 0) continue;
            Vector3d p_w = geom::transform_point(
                ki.pose, geom::backproject_pixel(K, {u, v}, depth));
            int valid = 0, consistent = 0;
            for (int j : neighbors) {
                const Keyframe& kj = graph.keyframes[size_t(j)];
                Vector3d X_j = geom::transform_point(kj.pose.inverse(), p_w);
                if (X_j.z() <= geom::kMinDepth) continue;
                Vector2d uv(K.fx * X_j.x() / X_j.z() + K.cx,
                            K.fy * X_j.y() / X_j.z() + K.cy);
                if (uv.x() < 0 || uv.x() > K.width - 1 || uv.y() < 0 ||
                    uv.y() > K.height - 1)
                    continue;
                ++valid;
                double dj = kj.proxy_depth.sample(uv.x(), uv.y());
                if (dj <= 0) continue;
                if (std::abs(X_j.z() - dj) / dj >= graph.opts.eps_depth) continue;
                // nearest feature cell in frame j
                int ncx = std::clamp(int(std::lround((uv.x() + 0.5) / r - 0.5)), 0,
                                     dims.gw - 1);
                int ncy = std::clamp(int(std::lround((uv.y() + 0.5) / r - 0.5)), 0,
                                     dims.gh - 1);
                double dot = 0, na = 0, nb = 0;
                for (int c = 0; c < C; ++c) {
                    double a = ki.features.data.at(cy, cx, c);
                    double b = kj.features.data.at(ncy, ncx, c);
                    dot += a * b;
                    na += a * a;
                    nb += b * b;
                }
                double cos = dot / std::max(std::sqrt(na * nb), 1e-12);
                if (cos > graph.opts.gamma_cos) ++consistent;
            }
            if (valid > 1 && consistent < graph.opts.n_min) mask.at(cy, cx) = 0.0;
        }
    return mask;
}

double dba_objective(const FrameGraph& graph, const LossWeights& w, bool beta_frozen) {
    GridDims dims = grid_dims(graph);
    double total = 0;
    for (const auto& e : graph.edges)
        for (int cy = 0; cy < dims.gh; ++cy)
            for (int cx = 0; cx < dims.gw; ++cx) {
                CellResidual res = edge_cell_residual(graph, e, cy, cx, beta_frozen, false);
                if (!res.valid) continue;
                total += res.w.x() * res.r.x() * res.r.x() +
                         res.w.y() * res.r.y() * res.r.y();
            }
    if (w.lambda4 > 0)
        for (const auto& kf : graph.keyframes) {
            GridD inv = cell_inverse_proxy(kf, graph.opts.stride, dims.gh, dims.gw);
            for (int c = 0; c < dims.cells; ++c) {
                if (inv.data[size_t(c)] <= 0) continue;
                double rd = kf.disparity.data[size_t(c)] - inv.data[size_t(c)];
                total += w.lambda4 * kf.reg_mask.data[size_t(c)] * rd * rd;
            }
        }
    return total;
}

Eigen::VectorXd dba_gradient(const FrameGraph& graph, const LossWeights& w,
                             bool beta_frozen) {
    GridDims dims = grid_dims(graph);
    const int n = int(graph.keyframes.size());
    const int n_pose = 6 * (n - 1);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n_pose + n * dims.cells);

    auto pose_seg = [&](int k) { return 6 * (k - 1); };
    auto disp_idx = [&](int k, int c) { return n_pose + k * dims.cells + c; };

    for (const auto& e : graph.edges)
        for (int cy = 0; cy < dims.gh; ++cy)
            for (int cx = 0; cx < dims.gw; ++cx) {
                CellResidual res = edge_cell_residual(graph, e, cy, cx, beta_frozen, true);
                if (!res.valid) continue;
                Vector2d wr(2 * res.w.x() * res.r.x(), 2 * res.w.y() * res.r.y());
                if (e.i > 0) g.segment<6>(pose_seg(e.i)) += res.Ji.transpose() * wr;
                if (e.j > 0) g.segment<6>(pose_seg(e.j)) += res.Jj.transpose() * wr;
                g(disp_idx(e.i, cy * dims.gw + cx)) += res.Jd.dot(wr);
            }
    if (w.lambda4 > 0)
        for (int k = 0; k < n; ++k) {
            const Keyframe& kf = graph.keyframes[size_t(k)];
            GridD inv = cell_inverse_proxy(kf, graph.opts.stride, dims.gh, dims.gw);
            for (int c = 0; c < dims.cells; ++c) {
                if (inv.data[size_t(c)] <= 0) continue;
                double rd = kf.disparity.data[size_t(c)] - inv.data[size_t(c)];
                g(disp_idx(k, c)) += 2 * w.lambda4 * kf.reg_mask.data[size_t(c)] * rd;
            }
        }
    return g;
}

DbaReport dba_solve(FrameGraph& graph, const LossWeights& w, const DbaOptions& opts) {
    if (graph.keyframes.size() < 2) throw InsufficientFrames("dba needs >= 2 keyframes");
    check_connected(graph);
    GridDims dims = grid_dims(graph);
    const int n = int(graph.keyframes.size());
    const int n_pose = 6 * (n - 1);

    if (opts.update_reg_masks && w.lambda4 > 0)
        for (int k = 0; k < n; ++k)
            graph.keyframes[size_t(k)].reg_mask = compute_reg_mask(graph, k);

    std::vector<GridD> inv_proxy;
    for (const auto& kf : graph.keyframes)
        inv_proxy.push_back(cell_inverse_proxy(kf, graph.opts.stride, dims.gh, dims.gw));

    DbaReport report;
    double lambda = graph.opts.damping_init;
    double f_cur = dba_objective(graph, w, opts.beta_frozen);

    // without the disparity prior the global scale is a gauge freedom; fix it
    // by freezing the reference keyframe's disparities alongside its pose
    const bool freeze_ref_disp = w.lambda4 <= 0;
    auto disp_frozen = [&](int di) { return freeze_ref_disp && di < dims.cells; };

    for (int it = 0; it < opts.iterations; ++it) {
        // assemble the pose system and the per-disparity scalar rows
        Eigen::MatrixXd Hpp = Eigen::MatrixXd::Zero(n_pose, n_pose);
        Eigen::VectorXd bp = Eigen::VectorXd::Zero(n_pose);
        const int n_disp = n * dims.cells;
        Eigen::VectorXd hdd = Eigen::VectorXd::Zero(n_disp);
        Eigen::VectorXd bd = Eigen::VectorXd::Zero(n_disp);
        using Vector6d = Eigen::Matrix<double, 6, 1>;
        const size_t nd = static_cast<size_t>(n_disp);
        std::vector<std::map<int, Vector6d>> hpd(nd);

        auto pose_of = [&](int k) { return 6 * (k - 1); };
        for (const auto& e : graph.edges)
            for (int cy = 0; cy < dims.gh; ++cy)
                for (int cx = 0; cx < dims.gw; ++cx) {
                    CellResidual res =
                        edge_cell_residual(graph, e, cy, cx, opts.beta_frozen, true);
                    if (!res.valid) continue;
                    Eigen::Matrix2d W = res.w.asDiagonal();
                    int di = e.i * dims.cells + cy * dims.gw + cx;
                    hdd(di) += res.Jd.dot(W * res.Jd);
                    bd(di) += res.Jd.dot(W * res.r);
                    if (e.i > 0) {
                        int pi = pose_of(e.i);
                        Hpp.block<6, 6>(pi, pi) += res.Ji.transpose() * W * res.Ji;
                        bp.segment<6>(pi) += res.Ji.transpose() * W * res.r;
                        auto it = hpd[size_t(di)]
                                      .try_emplace(pi, Vector6d::Zero())
                                      .first;
                        it->second += res.Ji.transpose() * W * res.Jd;
                    }
                    if (e.j > 0) {
                        int pj = pose_of(e.j);
                        Hpp.block<6, 6>(pj, pj) += res.Jj.transpose() * W * res.Jj;
                        bp.segment<6>(pj) += res.Jj.transpose() * W * res.r;
                        auto it = hpd[size_t(di)]
                                      .try_emplace(pj, Vector6d::Zero())
                                      .first;
                        it->second += res.Jj.transpose() * W * res.Jd;
                    }
                    if (e.i > 0 && e.j > 0) {
                        int pi = pose_of(e.i), pj = pose_of(e.j);
                        Eigen::Matrix<double, 6, 6> cross =
                            res.Ji.transpose() * W * res.Jj;
                        Hpp.block<6, 6>(pi, pj) += cross;
                        Hpp.block<6, 6>(pj, pi) += cross.transpose();
                    }
                }
        if (w.lambda4 > 0)
            for (int k = 0; k < n; ++k) {
                const Keyframe& kf = graph.keyframes[size_t(k)];
                for (int c = 0; c < dims.cells; ++c) {
                    if (inv_proxy[size_t(k)].data[size_t(c)] <= 0) continue;
                    double m = kf.reg_mask.data[size_t(c)];
                    int di = k * dims.cells + c;
                    hdd(di) += w.lambda4 * m;
                    bd(di) += w.lambda4 * m *
                              (kf.disparity.data[size_t(c)] -
                               inv_proxy[size_t(k)].data[size_t(c)]);
                }
            }

        // note: residual convention r = target - prediction means the GN step
        // solves H delta = +J^T W r with J = d(prediction)/d(theta) ... we
        // assembled J = dr/dtheta, so the step is H delta = -b.
        bool accepted = false;
        int solve_failures = 0;
        for (int retry = 0; retry <= graph.opts.max_retries; ++retry) {
            Eigen::MatrixXd Hs = Hpp;
            for (int d = 0; d < n_pose; ++d)
                Hs(d, d) += lambda * std::max(Hpp(d, d), 1e-12);
            Eigen::VectorXd bs = bp;
            Eigen::VectorXd hdd_damped = hdd;
            for (int di = 0; di < n_disp; ++di) {
                hdd_damped(di) = hdd(di) * (1 + lambda);
                if (disp_frozen(di) || hdd_damped(di) < 1e-12) continue;
                for (const auto& [pa, va] : hpd[size_t(di)]) {
                    bs.segment<6>(pa) -= va * (bd(di) / hdd_damped(di));
                    for (const auto& [pb, vb] : hpd[size_t(di)]) {
                        Hs.block<6, 6>(pa, pb) -=
                            va * vb.transpose() / hdd_damped(di);
                    }
                }
            }

            Eigen::VectorXd dp = Eigen::VectorXd::Zero(n_pose);
            if (n_pose > 0) {
                Eigen::LDLT<Eigen::MatrixXd> ldlt(Hs);
                dp = ldlt.solve(-bs);
                if (!dp.allFinite()) {
                    ++solve_failures;
                    lambda *= graph.opts.damping_factor;
                    continue;
                }
            }

            // candidate state: retract poses, back-substitute disparities
            std::vector<Pose> new_poses;
            std::vector<GridD> new_disp;
            for (int k = 0; k < n; ++k) {
                const Keyframe& kf = graph.keyframes[size_t(k)];
                if (k == 0) {
                    new_poses.push_back(kf.pose);
                } else {
                    geom::Twist tw = dp.segment<6>(pose_of(k));
                    new_poses.push_back(geom::pose_retract(kf.pose, tw));
                }
                GridD d = kf.disparity;
                for (int c = 0; c < dims.cells; ++c) {
                    int di = k * dims.cells + c;
                    if (disp_frozen(di) || hdd_damped(di) < 1e-12) continue;
                    double vdp = 0;
                    for (const auto& [pa, va] : hpd[size_t(di)])
                        vdp += va.dot(dp.segment<6>(pa));
                    double dd = -(bd(di) + vdp) / hdd_damped(di);
                    d.data[size_t(c)] =
                        std::max(d.data[size_t(c)] + dd, 10.0 * geom::kMinDepth);
                }
                new_disp.push_back(std::move(d));
            }

            // trial evaluation
            std::vector<Pose> old_poses;
            std::vector<GridD> old_disp;
            for (int k = 0; k < n; ++k) {
                old_poses.push_back(graph.keyframes[size_t(k)].pose);
                old_disp.push_back(graph.keyframes[size_t(k)].disparity);
                graph.keyframes[size_t(k)].pose = new_poses[size_t(k)];
                graph.keyframes[size_t(k)].disparity = new_disp[size_t(k)];
            }
            double f_new = dba_objective(graph, w, opts.beta_frozen);
            if (f_new <= f_cur) {
                f_cur = f_new;
                accepted = true;
                // the floor keeps gauge-flat directions regularized
                lambda = std::max(lambda / graph.opts.damping_factor, 1e-6);
                break;
            }
            for (int k = 0; k < n; ++k) {
                graph.keyframes[size_t(k)].pose = old_poses[size_t(k)];
                graph.keyframes[size_t(k)].disparity = old_disp[size_t(k)];
            }
            lambda *= graph.opts.damping_factor;
        }
        if (!accepted) {
            // a system that never even solved is singular; a system whose
            // steps solve but cannot decrease the objective has converged to
            // floating-point resolution
            if (solve_failures > graph.opts.max_retries) throw SingularSystem();
            report.objective.push_back(f_cur);
            break;
        }
        report.objective.push_back(f_cur);
        ++report.iterations_run;
    }
    return report;
}

void initialize(FrameGraph& graph, const LossWeights& w) {
    if (int(graph.keyframes.size()) < graph.opts.init_keyframes)
        throw InsufficientFrames("two-stage initialization needs " +
                                 std::to_string(graph.opts.init_keyframes) +
                                 " keyframes");
    DbaOptions stage1;
    stage1.iterations = graph.opts.final_iterations;
    stage1.beta_frozen = true;
    dba_solve(graph, w, stage1);

    DbaOptions stage2;
    stage2.iterations = std::max(1, graph.opts.final_iterations / 2);
    stage2.beta_frozen = false;
    dba_solve(graph, w, stage2);
    graph.initialized = true;
}

DbaReport final_global_ba(FrameGraph& graph, const LossWeights& w,
                          const FlowProviderFn& provider, bool keep_disp_reg) {
    const int n = int(graph.keyframes.size());
    std::vector<std::vector<bool>> have(size_t(n), std::vector<bool>(size_t(n), false));
    for (const auto& e : graph.edges) have[size_t(e.i)][size_t(e.j)] = true;

    auto connect = [&](int a, int b) {
        if (a == b || have[size_t(a)][size_t(b)]) return;
        FlowField f = provider(graph.keyframes[size_t(a)].frame_index,
                               graph.keyframes[size_t(b)].frame_index);
        graph.edges.push_back({a, b, f.target, f.confidence});
        have[size_t(a)][size_t(b)] = true;
    };
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) {
            bool temporal = b - a <= 2 * graph.opts.temporal_window;
            bool proximal =
                b - a >= graph.opts.prox_min_gap &&
                (graph.keyframes[size_t(a)].pose.t - graph.keyframes[size_t(b)].pose.t)
                        .norm() <= graph.opts.prox_distance &&
                geom::rotation_angle_deg(graph.keyframes[size_t(a)].pose,
                                         graph.keyframes[size_t(b)].pose) <=
                    graph.opts.prox_angle_deg;
            if (temporal || proximal) {
                connect(a, b);
                connect(b, a);
            }
        }

    LossWeights wf = w;
    if (!keep_disp_reg) wf.lambda4 = 0;
    DbaOptions opts;
    opts.iterations = graph.opts.final_iterations;
    opts.beta_frozen = false;
    opts.update_reg_masks = keep_disp_reg;
    return dba_solve(graph, wf, opts);
}

namespace {

/// Pose-only damped GN of the Eq. 5 data term for one frame against fixed
/// reference keyframes; disparity comes from the frame's own proxy depth.
Pose motion_only_solve(const FrameGraph& graph, const FrameObservation& obs,
                       Pose init, const std::vector<int>& ref_kfs,
                       const FlowProviderFn& provider) {
    GridDims dims = grid_dims(graph);
    const auto& K = graph.K;
    const int r = graph.opts.stride;

    struct Obs {
        int kf;
        FlowField flow;
    };
    std::vector<Obs> flows;
    for (int k : ref_kfs)
        flows.push_back(
            {k, provider(obs.frame_index, graph.keyframes[size_t(k)].frame_index)});

    auto objective = [&](const Pose& pose) {
        double total = 0;
        for (const auto& fl : flows) {
            const Keyframe& kj = graph.keyframes[size_t(fl.kf)];
            geom::Pose inv_j = kj.pose.inverse();
            for (int cy = 0; cy < dims.gh; ++cy)
                for (int cx = 0; cx < dims.gw; ++cx) {
                    double u = cell_center(cx, r), v = cell_center(cy, r);
                    double depth = obs.proxy_depth.sample(u, v);
                    if (depth <= 0) continue;
                    Vector3d p_w = geom::transform_point(
                        pose, geom::backproject_pixel(K, {u, v}, depth));
                    Vector3d X_j = geom::transform_point(inv_j, p_w);
                    if (X_j.z() <= geom::kMinDepth) continue;
                    Vector2d pred(K.fx * X_j.x() / X_j.z() + K.cx,
                                  K.fy * X_j.y() / X_j.z() + K.cy);
                    Vector2d res(fl.flow.target.at(cy, cx, 0) - pred.x(),
                                 fl.flow.target.at(cy, cx, 1) - pred.y());
                    double b = obs.beta_dba.size() > 0 ? obs.beta_dba.sample(u, v) : 1.0;
                    total += (fl.flow.confidence.at(cy, cx, 0) * res.x() * res.x() +
                              fl.flow.confidence.at(cy, cx, 1) * res.y() * res.y()) /
                             (b * b);
                }
        }
        return total;
    };

    Pose pose = init;
    double lambda = graph.opts.damping_init;
    double f_cur = objective(pose);
    for (int it = 0; it < graph.opts.dba_iterations; ++it) {
        Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> b = Eigen::Matrix<double, 6, 1>::Zero();
        geom::Matrix3d R_i = pose.rotation();
        for (const auto& fl : flows) {
            const Keyframe& kj = graph.keyframes[size_t(fl.kf)];
            geom::Matrix3d R_jt = kj.pose.rotation().transpose();
            for (int cy = 0; cy < dims.gh; ++cy)
                for (int cx = 0; cx < dims.gw; ++cx) {
                    double u = cell_center(cx, r), v = cell_center(cy, r);
                    double depth = obs.proxy_depth.sample(u, v);
                    if (depth <= 0) continue;
                    Vector3d X_i = geom::backproject_pixel(K, {u, v}, depth);
                    Vector3d p_w = R_i * X_i + pose.t;
                    Vector3d X_j = R_jt * (p_w - kj.pose.t);
                    if (X_j.z() <= geom::kMinDepth) continue;
                    Vector2d pred(K.fx * X_j.x() / X_j.z() + K.cx,
                                  K.fy * X_j.y() / X_j.z() + K.cy);
                    Vector2d res(fl.flow.target.at(cy, cx, 0) - pred.x(),
                                 fl.flow.target.at(cy, cx, 1) - pred.y());
                    double bb = obs.beta_dba.size() > 0 ? obs.beta_dba.sample(u, v) : 1.0;
                    Vector2d wgt(fl.flow.confidence.at(cy, cx, 0) / (bb * bb),
                                 fl.flow.confidence.at(cy, cx, 1) / (bb * bb));
                    Eigen::Matrix<double, 2, 3> Jp = geom::projection_jacobian(K, X_j);
                    Eigen::Matrix<double, 2, 3> A = Jp * R_jt;
                    Eigen::Matrix<double, 2, 6> J;
                    J.block<2, 3>(0, 0) = A * R_i * geom::skew(X_i);
                    J.block<2, 3>(0, 3) = -A;
                    Eigen::Matrix2d W = wgt.asDiagonal();
                    H += J.transpose() * W * J;
                    b += J.transpose() * W * res;
                }
        }
        bool accepted = false;
        for (int retry = 0; retry <= graph.opts.max_retries; ++retry) {
            Eigen::Matrix<double, 6, 6> Hd = H;
            for (int d = 0; d < 6; ++d) Hd(d, d) += lambda * std::max(H(d, d), 1e-12);
            Eigen::Matrix<double, 6, 1> dp = Hd.ldlt().solve(-b);
            if (!dp.allFinite()) {
                lambda *= graph.opts.damping_factor;
                continue;
            }
            Pose cand = geom::pose_retract(pose, dp);
            double f_new = objective(cand);
            if (f_new <= f_cur) {
                pose = cand;
                f_cur = f_new;
                lambda = std::max(lambda / graph.opts.damping_factor, 1e-10);
                accepted = true;
                break;
            }
            lambda *= graph.opts.damping_factor;
        }
        if (!accepted) break;  // converged under damping; keep the best pose
    }
    return pose;
}

/// Backtracking descent on the uncertainty-weighted L1 re-render loss.
Pose rerender_refine(Pose pose, const FrameObservation& obs,
                     const splat::GaussianMap& map, const CameraIntrinsics& render_K,
                     const splat::RasterizerOptions& ropts, int steps = 5) {
    LossWeights w;
    w.lambda5 = 1.0;
    w.lambda6 = 0.0;
    w.lambda7 = 0.0;
    w.lambda_ssim = 0.0;
    splat::RenderTargets targets;
    targets.image = obs.image;
    targets.proxy_depth = GridD(obs.image.h, obs.image.w, 1, 0.0);
    targets.beta = obs.beta.size() > 0 ? obs.beta : GridD(obs.image.h, obs.image.w, 1, 1.0);

    for (int s = 0; s < steps; ++s) {
        auto out = splat::rasterize_with_gradients(map, pose, render_K, w, targets, ropts);
        double f_cur = out.loss.total;
        geom::Twist g = out.grads.camera;
        double gn = g.norm();
        if (gn < 1e-12) break;
        double step = 1e-2 / std::max(gn, 1.0);
        bool moved = false;
        for (int bt = 0; bt < 12; ++bt) {
            Pose cand = geom::pose_retract(pose, geom::Twist(-step * g));
            auto trial =
                splat::rasterize_with_gradients(map, cand, render_K, w, targets, ropts);
            if (trial.loss.total < f_cur) {
                pose = cand;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
    }
    return pose;
}

}  // namespace

evalkit::Trajectory solve_non_keyframe_poses(
    const FrameGraph& graph, const std::vector<FrameObservation>& frames,
    const FlowProviderFn& provider, const splat::GaussianMap& map,
    const CameraIntrinsics& render_K, const splat::RasterizerOptions& ropts) {
    evalkit::Trajectory traj;
    for (const auto& obs : frames) {
        // keyframe poses pass through untouched
        const Keyframe* kf_match = nullptr;
        for (const auto& kf : graph.keyframes)
            if (kf.frame_index == obs.frame_index) kf_match = &kf;
        if (kf_match) {
            traj.push_back(obs.timestamp, kf_match->pose);
            continue;
        }
        // bracketing keyframes
        const Keyframe* before = nullptr;
        const Keyframe* after = nullptr;
        for (const auto& kf : graph.keyframes) {
            if (kf.frame_index < obs.frame_index) before = &kf;
            if (kf.frame_index > obs.frame_index && !after) after = &kf;
        }
        if (!before && !after) throw InsufficientFrames("no keyframes to anchor frame");
        std::vector<int> refs;
        Pose init;
        if (before && after) {
            double a = double(obs.frame_index - before->frame_index) /
                       double(after->frame_index - before->frame_index);
            init.q = before->pose.q.slerp(a, after->pose.q);
            init.t = (1 - a) * before->pose.t + a * after->pose.t;
            refs = {before->id, after->id};
        } else {
            const Keyframe* only = before ? before : after;
            init = only->pose;
            refs = {only->id};
        }
        Pose pose = motion_only_solve(graph, obs, init, refs, provider);
        if (!map.gaussians.empty())
            pose = rerender_refine(pose, obs, map, render_K, ropts);
        traj.push_back(obs.timestamp, pose);
    }
    return traj;
}

}  // namespace uslam::tracking
