#pragma once

#include <random>
#include <vector>

#include "uslam/core/image.hpp"
#include "uslam/geom.hpp"
#include "uslam/loss_weights.hpp"
#include "uslam/splat.hpp"
#include "uslam/uncertainty.hpp"

namespace uslam::mapping {

using geom::CameraIntrinsics;
using geom::Pose;

struct MappingOptions {
    double tau_alpha = 0.5;        // spawn where rendered alpha is below this
    double depth_mismatch = 0.10;  // or rendered depth disagrees by this fraction
    int spawn_stride = 4;          // subsample every Nth pixel in each dimension
    int window_capacity = 8;
    double covisibility_threshold = 0.3;
    int iterations_per_keyframe = 60;
    double scene_extent = 1.0;  // scales the position learning rate
    double lr_means = 1.6e-4;   // multiplied by scene_extent
    double lr_scales = 1e-3;
    double lr_rotation = 1e-3;
    double lr_color = 2.5e-3;
    double lr_opacity = 5e-2;

    void validate() const;
};

/// Immutable keyframe snapshot at mapping resolution.
struct MapKeyframe {
    int id = 0;
    GridD image;        // H x W x 3
    GridD proxy_depth;  // H x W, <= 0 marks missing
    uncertainty::FeatureMap features;
    Pose pose;
};

/// Keyframe ids favored by the mapping sampler.
struct LocalWindow {
    std::vector<int> ids;
    int capacity = 8;
};

/// Fraction of one keyframe's observed surface that reprojects into another.
double covisibility(const MapKeyframe& a, const MapKeyframe& b,
                    const CameraIntrinsics& K, int stride = 4);

/// Window anchored at the most recent keyframe: its most covisible peers,
/// highest first, up to capacity.
LocalWindow build_local_window(const std::vector<MapKeyframe>& keyframes,
                               const CameraIntrinsics& K, const MappingOptions& opts);

/// Draws a keyframe id: probability >= 1/2 spread evenly inside the window,
/// the remainder spread evenly over everything else.
int sample_keyframe(const LocalWindow& window, int total_keyframes,
                    std::mt19937_64& rng);

/// Spawns Gaussians from the keyframe's proxy depth wherever the current map
/// renders thin (alpha < tau) or at the wrong depth. Returns the spawn count.
size_t expand_map(splat::GaussianMap& map, const MapKeyframe& kf,
                  const CameraIntrinsics& K, const MappingOptions& opts,
                  const splat::RasterizerOptions& ropts = {});

/// Rigidly transports every Gaussian by the pose update of its anchor
/// keyframe (new * old^-1); scales, color and opacity are untouched.
void deform_map(splat::GaussianMap& map, const std::vector<Pose>& old_poses,
                const std::vector<Pose>& new_poses);

/// First-order adaptive-moment optimizer over Gaussian parameters with
/// per-class learning rates. Moments extend with zeros as the map grows.
class MapOptimizer {
  public:
    explicit MapOptimizer(MappingOptions opts) : opts_(std::move(opts)) {}

    const MappingOptions& options() const { return opts_; }

    /// One render-loss descent step on the map from this keyframe's view.
    /// Returns the forward render and loss so the caller can feed the
    /// (detached) images to the uncertainty trainer.
    splat::RenderWithGradients step(splat::GaussianMap& map, const MapKeyframe& kf,
                                    const GridD& beta, const CameraIntrinsics& K,
                                    const LossWeights& w,
                                    const splat::RasterizerOptions& ropts = {});

  private:
    struct Moments {
        splat::GaussianGrad m, v;
    };
    MappingOptions opts_;
    std::vector<Moments> moments_;
    long step_ = 0;
};

/// Post-BA polish with poses frozen: `iterations` rounds of window-biased
/// keyframe sampling, each taking one map step and one MLP step on the same
/// detached render.
void final_refinement(splat::GaussianMap& map, uncertainty::UncertaintyTrainer& mlp,
                      const std::vector<MapKeyframe>& keyframes,
                      int iterations, const CameraIntrinsics& K,
                      const LossWeights& w, const MappingOptions& opts,
                      uint64_t seed, const splat::RasterizerOptions& ropts = {});

}  // namespace uslam::mapping
