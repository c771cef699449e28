#pragma once

#include <functional>
#include <vector>

#include "uslam/core/image.hpp"
#include "uslam/evalkit.hpp"
#include "uslam/geom.hpp"
#include "uslam/loss_weights.hpp"
#include "uslam/simworld.hpp"
#include "uslam/splat.hpp"
#include "uslam/uncertainty.hpp"

namespace uslam::tracking {

using geom::CameraIntrinsics;
using geom::Pose;
using geom::Vector2d;
using geom::Vector3d;
using simworld::FlowField;

/// Supplies dense correspondences between two raw frame indices.
using FlowProviderFn = std::function<FlowField(int frame_i, int frame_j)>;

struct TrackingOptions {
    int stride = 8;             // correspondence/disparity grid stride
    int temporal_window = 3;    // bidirectional edges to this many neighbors
    double prox_distance = 0.5; // meters, pose-proximity edge rule
    double prox_angle_deg = 30.0;
    int prox_min_gap = 10;      // keyframe-index separation for proximity edges
    double tau_flow = 2.5;      // px, keyframe insertion threshold
    int max_keyframe_gap = 8;   // frames, forced insertion
    double eps_depth = 0.05;    // relative depth threshold of the mask rule
    double gamma_cos = 0.9;     // feature cosine threshold of the mask rule
    int n_min = 2;              // consistency-count threshold of the mask rule
    int dba_iterations = 8;     // incremental solves
    int final_iterations = 30;  // final global BA
    int init_keyframes = 12;    // two-stage initialization window
    double damping_init = 1e-4;
    double damping_factor = 10.0;
    int max_retries = 10;

    void validate() const;
};

struct Keyframe {
    int id = 0;           // dense keyframe index (position in the graph)
    int frame_index = 0;  // source frame in the raw sequence
    double timestamp = 0;
    GridD image;                        // H x W x 3
    uncertainty::FeatureMap features;   // stride-r descriptor grid
    GridD proxy_depth;                  // H x W meters
    uncertainty::UncertaintyMap beta;   // H x W, refreshed per MLP update
    Pose pose;                          // camera-to-world
    GridD disparity;                    // (H/r) x (W/r), 1/meters, > 0
    GridD reg_mask;                     // (H/r) x (W/r) in {0,1}
};

struct FrameGraphEdge {
    int i = 0, j = 0;  // keyframe ids, i != j
    GridD target;      // (H/r) x (W/r) x 2: predicted pixel in keyframe j
    GridD confidence;  // (H/r) x (W/r) x 2 in [0,1]
};

struct FrameGraph {
    CameraIntrinsics K;
    TrackingOptions opts;
    std::vector<Keyframe> keyframes;
    std::vector<FrameGraphEdge> edges;
    bool initialized = false;
};

bool should_insert_keyframe(double mean_flow_px, int frames_since_last,
                            const TrackingOptions& opts);

/// Inserts the keyframe and connects it to its temporal window (both
/// directions) plus any pose-proximity loop edges. Disparity is initialized
/// from the proxy depth if empty.
void add_keyframe(FrameGraph& graph, Keyframe kf, const FlowProviderFn& provider);

/// Multi-view consistency mask M_i at the disparity stride: 0 where the cell
/// has more than one valid correspondence yet fewer than n_min neighbors
/// agree on depth (relative error < eps) and appearance (cosine > gamma).
GridD compute_reg_mask(const FrameGraph& graph, int i);

struct DbaOptions {
    int iterations = 8;
    bool beta_frozen = false;    // treat beta as 1 everywhere (stage-1 init)
    bool update_reg_masks = true;
};

struct DbaReport {
    std::vector<double> objective;  // value after each accepted iteration
    int iterations_run = 0;
};

/// Objective of the uncertainty+depth-guided DBA over the current variables;
/// exposed so tests can check the analytic gradient against differences.
double dba_objective(const FrameGraph& graph, const LossWeights& w, bool beta_frozen);

/// Gradient of dba_objective w.r.t. the stacked variables
/// [twist_1..twist_{n-1}; all disparities in keyframe-major order]
/// (keyframe 0 is the gauge and carries no twist).
Eigen::VectorXd dba_gradient(const FrameGraph& graph, const LossWeights& w,
                             bool beta_frozen);

/// Damped Gauss-Newton on poses + per-cell disparities with the disparities
/// eliminated by a Schur complement each iteration. Keyframe 0 stays fixed.
DbaReport dba_solve(FrameGraph& graph, const LossWeights& w, const DbaOptions& opts);

/// Two-stage bootstrap over the first init_keyframes keyframes: a solve with
/// beta frozen at 1, then a half-length solve with beta active.
void initialize(FrameGraph& graph, const LossWeights& w);

/// Densifies the graph (wider temporal window + proximity edges) and solves
/// with the disparity regularization off. Set keep_disp_reg for the ablation.
DbaReport final_global_ba(FrameGraph& graph, const LossWeights& w,
                          const FlowProviderFn& provider, bool keep_disp_reg = false);

/// Non-keyframe sensor data needed for pose recovery.
struct FrameObservation {
    int frame_index = 0;
    double timestamp = 0;
    GridD image;        // at map/render resolution
    GridD proxy_depth;  // at DBA resolution of the raw frame
    uncertainty::UncertaintyMap beta;      // at render resolution
    uncertainty::UncertaintyMap beta_dba;  // at raw resolution (Eq. 5 weights)
};

/// Motion-only alignment against the two bracketing keyframes followed by a
/// backtracking refinement of the uncertainty-weighted L1 re-render loss.
/// Returns the full trajectory (keyframe poses passed through untouched).
evalkit::Trajectory solve_non_keyframe_poses(
    const FrameGraph& graph, const std::vector<FrameObservation>& frames,
    const FlowProviderFn& provider, const splat::GaussianMap& map,
    const CameraIntrinsics& render_K, const splat::RasterizerOptions& ropts);

}  // namespace uslam::tracking
