#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uslam/evalkit.hpp"
#include "uslam/loss_weights.hpp"
#include "uslam/mapping.hpp"
#include "uslam/simworld.hpp"
#include "uslam/splat.hpp"
#include "uslam/tracking.hpp"

namespace uslam::pipeline {

/// Study toggles: each disables one ingredient of the full method.
struct AblationToggles {
    bool uncertainty_enabled = true;       // per-pixel beta weighting + MLP
    bool depth_uncer_loss_enabled = true;  // L1 depth term of the MLP loss
    bool disparity_reg_enabled = true;     // proxy-depth prior in the DBA
    bool final_ba_disp_reg = false;        // keep that prior in the final BA
};

struct MlpConfig {
    int hidden = 16;
    double learning_rate = 1e-3;
};

struct PipelineConfig {
    uint64_t seed = 1;
    double resolution_scale = 1.0 / 3.0;  // mapping/render resolution
    int feature_channels = 16;
    int refinement_iterations = 600;
    int held_out_stride = 7;  // every Nth non-keyframe scores PSNR/SSIM
    bool fast = false;        // skip reg masks, map every 5th keyframe,
                              // 3000-iteration refinement
    LossWeights weights;
    tracking::TrackingOptions tracking;
    mapping::MappingOptions mapping;
    MlpConfig mlp;
    AblationToggles ablation;

    void validate() const;
};

/// JSON round trip; unknown keys anywhere in the document are rejected.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::string& path);
void save_config(const std::string& path, const PipelineConfig& config);

struct RunMetrics {
    double ate_full = 0;  // meters, Sim(3)-aligned, all frames
    double ate_kf = 0;    // meters, keyframes only
    double trajectory_length = 0;
    double psnr = 0;   // held-out views at mapping resolution
    double ssim = 0;
    double auroc = 0;  // beta ranking dynamic pixels, 0.5 if none exist
    int keyframes = 0;
    uint64_t gaussians = 0;
};

struct StageTiming {
    std::string stage;
    double seconds = 0;
};

struct RunReport {
    evalkit::Trajectory trajectory_full;
    evalkit::Trajectory trajectory_kf;
    std::string map_path;
    std::string mlp_path;
    std::string report_path;
    RunMetrics metrics;
    std::vector<StageTiming> timing;
};

/// Full pipeline on a synthetic scene: buffer + two-stage initialization,
/// per-frame tracking/mapping on a fixed schedule, final global BA, map
/// deformation, refinement, non-keyframe recovery, metrics and artifacts.
/// A stage checkpoint is written after the final BA; with `resume` set and
/// that checkpoint present in out_dir, the run restarts from it.
RunReport run_slam(const PipelineConfig& config, const simworld::SyntheticScene& scene,
                   const std::string& out_dir, bool resume = false);

struct AblationRow {
    std::string name;
    bool failed = false;  // tracking aborted (metrics are meaningless)
    RunMetrics metrics;
};

/// Runs the full method plus one variant per toggle letter ("a" = no
/// uncertainty, "b" = no depth term in the MLP loss, "d" = no disparity
/// regularization) with a shared seed; writes a side-by-side table.
std::vector<AblationRow> run_ablation(const PipelineConfig& config,
                                      const std::vector<std::string>& toggles,
                                      const simworld::SyntheticScene& scene,
                                      const std::string& out_dir);

void write_report_json(const std::string& path, const RunReport& report);
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace uslam::pipeline
