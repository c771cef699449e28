#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "uslam/core/image.hpp"
#include "uslam/evalkit.hpp"
#include "uslam/geom.hpp"
#include "uslam/uncertainty.hpp"

namespace uslam::simworld {

using geom::CameraIntrinsics;
using geom::Pose;
using geom::Vector2d;
using geom::Vector3d;

/// Solid primitive in its own local frame. Boxes are axis-aligned locally;
/// an animated pose supplies any world-space rotation.
struct Primitive {
    enum class Kind { Plane, Box, Sphere };
    Kind kind = Kind::Sphere;
    // plane: point + unit normal (infinite); box: local AABB; sphere: center + radius
    Vector3d point = Vector3d::Zero();
    Vector3d normal = Vector3d::UnitY();
    Vector3d box_min = Vector3d::Constant(-0.5);
    Vector3d box_max = Vector3d::Constant(0.5);
    Vector3d center = Vector3d::Zero();
    double radius = 0.5;
};

/// Primitive plus a smooth procedural texture keyed by material id.
struct TexturedPrimitive {
    Primitive geom;
    int material_id = 0;
    Vector3d base_color = Vector3d::Constant(0.5);
    double tex_amp = 0.15;   // amplitude of the sinusoidal color modulation
    double tex_freq = 1.0;   // spatial frequency (cycles per meter)
};

/// Rigid motion script: waypoint poses linearly interpolated over time.
struct MotionScript {
    std::vector<double> times;  // strictly increasing, spans the sequence
    std::vector<Pose> poses;

    Pose at(double t) const;
    void validate(double t_begin, double t_end) const;
};

struct DynamicObject {
    TexturedPrimitive prim;
    MotionScript motion;
};

/// Sensor noise model. Per-frame depth affinity a~U(a_range), b~U(b_range),
/// per-pixel eta ~ N(0, sigma_d * depth); optional correlated error patches.
struct NoiseModel {
    double sigma_flow = 0.0;       // px, added to oracle correspondences
    double depth_a_min = 0.95, depth_a_max = 1.05;
    double depth_b_min = -0.02, depth_b_max = 0.02;  // meters
    double sigma_d = 0.0;          // relative depth noise scale
    double corrupt_fraction = 0.0; // pixel fraction in correlated error patches
    double corrupt_scale = 1.5;    // multiplicative depth error inside patches
    double sigma_f = 0.0;          // feature descriptor noise
    double flow_confidence = 0.9;  // uniform oracle confidence
};

/// Camera path waypoint: position plus a look-at target, both interpolated.
struct CameraWaypoint {
    double time = 0;
    Vector3d position = Vector3d::Zero();
    Vector3d look_at = Vector3d::UnitZ();
};

/// Full scene description; the JSON scene file maps onto this struct.
struct SceneConfig {
    std::string name = "scene";
    uint64_t seed = 1;
    CameraIntrinsics intrinsics{160.0, 160.0, 80.0, 60.0, 160, 120};
    int n_frames = 120;
    double fps = 30.0;
    std::vector<CameraWaypoint> camera_waypoints;
    std::vector<TexturedPrimitive> statics;
    std::vector<DynamicObject> dynamics;
    NoiseModel noise;
};

struct SyntheticScene {
    SceneConfig config;
    evalkit::Trajectory camera;  // GT camera-to-world poses, one per frame

    int n_frames() const { return config.n_frames; }
    double time_of(int frame) const { return camera.times[size_t(frame)]; }
    const CameraIntrinsics& K() const { return config.intrinsics; }
};

/// Ray-surface hit used by every oracle sensor.
struct SurfaceHit {
    bool hit = false;
    double depth = 0;          // camera-frame z
    Vector3d world;            // world-space hit point
    int material_id = -1;      // -1 = background
    int dynamic_index = -1;    // index into dynamics, -1 if static surface
    Vector3d color = Vector3d::Zero();
};

struct FrameRender {
    GridD color;      // H x W x 3 in [0,1]
    GridD depth;      // H x W meters, 0 where no surface
    GridD dyn_mask;   // H x W, 1 where a dynamic object is the front surface
};

/// Everything a SLAM frame consumes, fully registered to one GT frame.
struct SensorFrame {
    FrameRender gt;
    GridD proxy_depth;                 // noisy depth estimate
    uncertainty::FeatureMap features;  // stride-r descriptor grid
};

struct FlowField {
    GridD target;      // (H/r) x (W/r) x 2: predicted pixel in frame j
    GridD confidence;  // (H/r) x (W/r) x 2 in [0,1]
    int stride = 8;
};

/// Builds the GT trajectory and validates the scene (static visibility,
/// motion script coverage). Deterministic given (config, seed in config).
SyntheticScene generate_scene(const SceneConfig& config);

/// Nearest surface along the camera ray through continuous pixel (u, v).
SurfaceHit trace_pixel(const SyntheticScene& scene, int frame, double u, double v);

FrameRender render_gt(const SyntheticScene& scene, int frame);

/// Object-attached oracle correspondences from frame i cells into frame j.
FlowField oracle_flow(const SyntheticScene& scene, int i, int j, int stride = 8);

/// Noisy proxy depth per the scene's noise model; deterministic per frame.
GridD synth_depth(const GridD& gt_depth, const GridD& dyn_mask, const NoiseModel& noise,
                  uint64_t seed, int frame);

/// Stride-r descriptor grid: unit vectors keyed by front-surface material id.
uncertainty::FeatureMap synth_features(const SyntheticScene& scene, int frame,
                                       int channels, int stride);

SensorFrame make_sensor_frame(const SyntheticScene& scene, int frame, int feat_channels,
                              int stride);

/// JSON (de)serialization of scene configs; unknown keys are rejected.
SceneConfig load_scene_config(const std::string& path);
void save_scene_config(const std::string& path, const SceneConfig& config);

/// The six standard test scenes: static, slow distractor, fast distractor,
/// three distractors, distractor entering mid-sequence, loop trajectory.
std::vector<SceneConfig> default_suite();

/// Renders every frame and writes rgb PNG, depth/proxy PFM, mask PNG,
/// feature blocks, the GT trajectory (TUM) and the scene config into `dir`.
void write_sequence(const SyntheticScene& scene, const std::string& dir,
                    int feat_channels = 16, int stride = 8);

}  // namespace uslam::simworld
