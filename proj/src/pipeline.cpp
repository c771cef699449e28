#include "uslam/pipeline.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>

#include "uslam/core/io.hpp"

namespace uslam::pipeline {

using json = nlohmann::json;
using geom::CameraIntrinsics;
using geom::Pose;

namespace {

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

void require_keys(const json& j, std::initializer_list<const char*> allowed,
                  const char* where) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) ok = true;
        if (!ok)
            throw InvalidConfig(std::string("unknown key '") + item.key() + "' in " +
                                where);
    }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

/// Bilinear resize; maps output pixel centers onto input pixel centers.
GridD resize(const GridD& src, int oh, int ow) {
    GridD out(oh, ow, src.c);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double sx = (x + 0.5) * src.w / double(ow) - 0.5;
            double sy = (y + 0.5) * src.h / double(oh) - 0.5;
            for (int ch = 0; ch < src.c; ++ch)
                out.at(y, x, ch) = src.sample(sx, sy, ch);
        }
    return out;
}

double mean_flow_magnitude(const simworld::FlowField& field) {
    double sum = 0;
    long n = 0;
    for (int cy = 0; cy < field.target.h; ++cy)
        for (int cx = 0; cx < field.target.w; ++cx) {
            if (field.confidence.at(cy, cx, 0) <= 0) continue;
            double u = (cx + 0.5) * field.stride - 0.5;
            double v = (cy + 0.5) * field.stride - 0.5;
            sum += std::hypot(field.target.at(cy, cx, 0) - u,
                              field.target.at(cy, cx, 1) - v);
            ++n;
        }
    return n > 0 ? sum / double(n) : 0.0;
}

/// Lazily computed per-frame sensor data shared by all stages of a run.
class FrameCache {
  public:
    FrameCache(const simworld::SyntheticScene& scene, int channels, int stride)
        : scene_(scene), channels_(channels), stride_(stride),
          frames_(size_t(scene.n_frames())) {}

    const simworld::SensorFrame& get(int f) {
        auto& slot = frames_[size_t(f)];
        if (!slot) slot = simworld::make_sensor_frame(scene_, f, channels_, stride_);
        return *slot;
    }

  private:
    const simworld::SyntheticScene& scene_;
    int channels_, stride_;
    std::vector<std::optional<simworld::SensorFrame>> frames_;
};

struct StageClock {
    std::vector<StageTiming>& out;
    std::string stage;
    std::chrono::steady_clock::time_point begin = std::chrono::steady_clock::now();

    ~StageClock() {
        double s = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                 begin)
                       .count();
        out.push_back({stage, s});
    }
};

void binary_write(std::ofstream& s, const void* p, size_t n) {
    s.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

void binary_read(std::ifstream& s, void* p, size_t n) {
    s.read(reinterpret_cast<char*>(p), std::streamsize(n));
    if (!s) throw IoError("truncated checkpoint");
}

struct Checkpoint {
    struct KeyframeState {
        int id = 0, frame_index = 0;
        double timestamp = 0;
        Pose pose;
    };
    std::vector<KeyframeState> keyframes;
    splat::GaussianMap map;
    uncertainty::UncertaintyModel model;
};

constexpr char kCheckpointMagic[4] = {'U', 'C', 'K', 'P'};

/// Full-precision (f64) stage checkpoint so a resumed run continues bitwise
/// identically; the portable f32 map/model files are written separately.
void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream s(path, std::ios::binary);
    if (!s) throw IoError("cannot write checkpoint: " + path);
    binary_write(s, kCheckpointMagic, 4);
    uint32_t version = 1;
    binary_write(s, &version, 4);

    uint32_t n_kf = uint32_t(c.keyframes.size());
    binary_write(s, &n_kf, 4);
    for (const auto& k : c.keyframes) {
        binary_write(s, &k.id, 4);
        binary_write(s, &k.frame_index, 4);
        binary_write(s, &k.timestamp, 8);
        double q[4] = {k.pose.q.w(), k.pose.q.x(), k.pose.q.y(), k.pose.q.z()};
        binary_write(s, q, 32);
        binary_write(s, k.pose.t.data(), 24);
    }

    binary_write(s, c.map.background.data(), 24);
    uint64_t n_g = c.map.size();
    binary_write(s, &n_g, 8);
    for (const auto& g : c.map.gaussians) {
        binary_write(s, g.mean.data(), 24);
        binary_write(s, g.quat.data(), 32);
        binary_write(s, g.log_scale.data(), 24);
        binary_write(s, g.color.data(), 24);
        binary_write(s, &g.opacity_logit, 8);
        binary_write(s, &g.anchor_keyframe_id, 4);
    }

    uint32_t n_layers = uint32_t(c.model.w.size());
    binary_write(s, &n_layers, 4);
    binary_write(s, &c.model.beta_min, 8);
    for (uint32_t l = 0; l < n_layers; ++l) {
        uint32_t rows = uint32_t(c.model.w[l].rows());
        uint32_t cols = uint32_t(c.model.w[l].cols());
        binary_write(s, &rows, 4);
        binary_write(s, &cols, 4);
        binary_write(s, c.model.w[l].data(), size_t(rows) * cols * 8);
        binary_write(s, c.model.b[l].data(), size_t(rows) * 8);
    }
    if (!s) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream s(path, std::ios::binary);
    if (!s) throw IoError("cannot read checkpoint: " + path);
    char magic[4];
    binary_read(s, magic, 4);
    uint32_t version = 0;
    binary_read(s, &version, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0 || version != 1)
        throw IoError("not a stage checkpoint: " + path);

    Checkpoint c;
    uint32_t n_kf = 0;
    binary_read(s, &n_kf, 4);
    c.keyframes.resize(n_kf);
    for (auto& k : c.keyframes) {
        binary_read(s, &k.id, 4);
        binary_read(s, &k.frame_index, 4);
        binary_read(s, &k.timestamp, 8);
        double q[4];
        binary_read(s, q, 32);
        k.pose.q = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
        binary_read(s, k.pose.t.data(), 24);
    }

    binary_read(s, c.map.background.data(), 24);
    uint64_t n_g = 0;
    binary_read(s, &n_g, 8);
    c.map.gaussians.resize(size_t(n_g));
    for (auto& g : c.map.gaussians) {
        binary_read(s, g.mean.data(), 24);
        binary_read(s, g.quat.data(), 32);
        binary_read(s, g.log_scale.data(), 24);
        binary_read(s, g.color.data(), 24);
        binary_read(s, &g.opacity_logit, 8);
        binary_read(s, &g.anchor_keyframe_id, 4);
    }

    uint32_t n_layers = 0;
    binary_read(s, &n_layers, 4);
    binary_read(s, &c.model.beta_min, 8);
    c.model.w.resize(n_layers);
    c.model.b.resize(n_layers);
    for (uint32_t l = 0; l < n_layers; ++l) {
        uint32_t rows = 0, cols = 0;
        binary_read(s, &rows, 4);
        binary_read(s, &cols, 4);
        c.model.w[l].resize(rows, cols);
        c.model.b[l].resize(rows);
        binary_read(s, c.model.w[l].data(), size_t(rows) * cols * 8);
        binary_read(s, c.model.b[l].data(), size_t(rows) * 8);
    }
    return c;
}

void create_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory: " + dir);
}

json metrics_to_json(const RunMetrics& m) {
    return json{{"ate_full", m.ate_full},
                {"ate_kf", m.ate_kf},
                {"trajectory_length", m.trajectory_length},
                {"psnr", m.psnr},
                {"ssim", m.ssim},
                {"auroc", m.auroc},
                {"keyframes", m.keyframes},
                {"gaussians", m.gaussians}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
    if (resolution_scale <= 0 || resolution_scale > 1)
        throw InvalidConfig("resolution_scale must be in (0, 1]");
    if (feature_channels < 4) throw InvalidConfig("feature_channels must be >= 4");
    if (refinement_iterations < 0)
        throw InvalidConfig("refinement_iterations must be >= 0");
    if (held_out_stride < 1) throw InvalidConfig("held_out_stride must be >= 1");
    if (mlp.hidden < 1 || mlp.learning_rate < 0)
        throw InvalidConfig("invalid MLP settings");
    weights.validate();
    tracking.validate();
    mapping.validate();
}

PipelineConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("config is not valid JSON: ") + e.what());
    }
    require_keys(j,
                 {"seed", "resolution_scale", "feature_channels",
                  "refinement_iterations", "held_out_stride", "fast", "weights",
                  "tracking", "mapping", "mlp", "ablation"},
                 "config");
    PipelineConfig c;
    read_field(j, "seed", c.seed);
    read_field(j, "resolution_scale", c.resolution_scale);
    read_field(j, "feature_channels", c.feature_channels);
    read_field(j, "refinement_iterations", c.refinement_iterations);
    read_field(j, "held_out_stride", c.held_out_stride);
    read_field(j, "fast", c.fast);

    if (j.contains("weights")) {
        const json& w = j.at("weights");
        require_keys(w,
                     {"lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "lambda6",
                      "lambda7", "lambda_ssim"},
                     "weights");
        read_field(w, "lambda1", c.weights.lambda1);
        read_field(w, "lambda2", c.weights.lambda2);
        read_field(w, "lambda3", c.weights.lambda3);
        read_field(w, "lambda4", c.weights.lambda4);
        read_field(w, "lambda5", c.weights.lambda5);
        read_field(w, "lambda6", c.weights.lambda6);
        read_field(w, "lambda7", c.weights.lambda7);
        read_field(w, "lambda_ssim", c.weights.lambda_ssim);
    }
    if (j.contains("tracking")) {
        const json& t = j.at("tracking");
        require_keys(t,
                     {"stride", "temporal_window", "prox_distance", "prox_angle_deg",
                      "prox_min_gap", "tau_flow", "max_keyframe_gap", "eps_depth",
                      "gamma_cos", "n_min", "dba_iterations", "final_iterations",
                      "init_keyframes", "damping_init", "damping_factor",
                      "max_retries"},
                     "tracking");
        read_field(t, "stride", c.tracking.stride);
        read_field(t, "temporal_window", c.tracking.temporal_window);
        read_field(t, "prox_distance", c.tracking.prox_distance);
        read_field(t, "prox_angle_deg", c.tracking.prox_angle_deg);
        read_field(t, "prox_min_gap", c.tracking.prox_min_gap);
        read_field(t, "tau_flow", c.tracking.tau_flow);
        read_field(t, "max_keyframe_gap", c.tracking.max_keyframe_gap);
        read_field(t, "eps_depth", c.tracking.eps_depth);
        read_field(t, "gamma_cos", c.tracking.gamma_cos);
        read_field(t, "n_min", c.tracking.n_min);
        read_field(t, "dba_iterations", c.tracking.dba_iterations);
        read_field(t, "final_iterations", c.tracking.final_iterations);
        read_field(t, "init_keyframes", c.tracking.init_keyframes);
        read_field(t, "damping_init", c.tracking.damping_init);
        read_field(t, "damping_factor", c.tracking.damping_factor);
        read_field(t, "max_retries", c.tracking.max_retries);
    }
    if (j.contains("mapping")) {
        const json& m = j.at("mapping");
        require_keys(m,
                     {"tau_alpha", "depth_mismatch", "spawn_stride", "window_capacity",
                      "covisibility_threshold", "iterations_per_keyframe",
                      "scene_extent", "lr_means", "lr_scales", "lr_rotation",
                      "lr_color", "lr_opacity"},
                     "mapping");
        read_field(m, "tau_alpha", c.mapping.tau_alpha);
        read_field(m, "depth_mismatch", c.mapping.depth_mismatch);
        read_field(m, "spawn_stride", c.mapping.spawn_stride);
        read_field(m, "window_capacity", c.mapping.window_capacity);
        read_field(m, "covisibility_threshold", c.mapping.covisibility_threshold);
        read_field(m, "iterations_per_keyframe", c.mapping.iterations_per_keyframe);
        read_field(m, "scene_extent", c.mapping.scene_extent);
        read_field(m, "lr_means", c.mapping.lr_means);
        read_field(m, "lr_scales", c.mapping.lr_scales);
        read_field(m, "lr_rotation", c.mapping.lr_rotation);
        read_field(m, "lr_color", c.mapping.lr_color);
        read_field(m, "lr_opacity", c.mapping.lr_opacity);
    }
    if (j.contains("mlp")) {
        const json& m = j.at("mlp");
        require_keys(m, {"hidden", "learning_rate"}, "mlp");
        read_field(m, "hidden", c.mlp.hidden);
        read_field(m, "learning_rate", c.mlp.learning_rate);
    }
    if (j.contains("ablation")) {
        const json& a = j.at("ablation");
        require_keys(a,
                     {"uncertainty_enabled", "depth_uncer_loss_enabled",
                      "disparity_reg_enabled", "final_ba_disp_reg"},
                     "ablation");
        read_field(a, "uncertainty_enabled", c.ablation.uncertainty_enabled);
        read_field(a, "depth_uncer_loss_enabled", c.ablation.depth_uncer_loss_enabled);
        read_field(a, "disparity_reg_enabled", c.ablation.disparity_reg_enabled);
        read_field(a, "final_ba_disp_reg", c.ablation.final_ba_disp_reg);
    }
    c.validate();
    return c;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream s(path);
    if (!s) throw IoError("cannot read config: " + path);
    std::string text((std::istreambuf_iterator<char>(s)),
                     std::istreambuf_iterator<char>());
    return parse_config(text);
}

void save_config(const std::string& path, const PipelineConfig& c) {
    json j{
        {"seed", c.seed},
        {"resolution_scale", c.resolution_scale},
        {"feature_channels", c.feature_channels},
        {"refinement_iterations", c.refinement_iterations},
        {"held_out_stride", c.held_out_stride},
        {"fast", c.fast},
        {"weights",
         {{"lambda1", c.weights.lambda1},
          {"lambda2", c.weights.lambda2},
          {"lambda3", c.weights.lambda3},
          {"lambda4", c.weights.lambda4},
          {"lambda5", c.weights.lambda5},
          {"lambda6", c.weights.lambda6},
          {"lambda7", c.weights.lambda7},
          {"lambda_ssim", c.weights.lambda_ssim}}},
        {"tracking",
         {{"stride", c.tracking.stride},
          {"temporal_window", c.tracking.temporal_window},
          {"prox_distance", c.tracking.prox_distance},
          {"prox_angle_deg", c.tracking.prox_angle_deg},
          {"prox_min_gap", c.tracking.prox_min_gap},
          {"tau_flow", c.tracking.tau_flow},
          {"max_keyframe_gap", c.tracking.max_keyframe_gap},
          {"eps_depth", c.tracking.eps_depth},
          {"gamma_cos", c.tracking.gamma_cos},
          {"n_min", c.tracking.n_min},
          {"dba_iterations", c.tracking.dba_iterations},
          {"final_iterations", c.tracking.final_iterations},
          {"init_keyframes", c.tracking.init_keyframes},
          {"damping_init", c.tracking.damping_init},
          {"damping_factor", c.tracking.damping_factor},
          {"max_retries", c.tracking.max_retries}}},
        {"mapping",
         {{"tau_alpha", c.mapping.tau_alpha},
          {"depth_mismatch", c.mapping.depth_mismatch},
          {"spawn_stride", c.mapping.spawn_stride},
          {"window_capacity", c.mapping.window_capacity},
          {"covisibility_threshold", c.mapping.covisibility_threshold},
          {"iterations_per_keyframe", c.mapping.iterations_per_keyframe},
          {"scene_extent", c.mapping.scene_extent},
          {"lr_means", c.mapping.lr_means},
          {"lr_scales", c.mapping.lr_scales},
          {"lr_rotation", c.mapping.lr_rotation},
          {"lr_color", c.mapping.lr_color},
          {"lr_opacity", c.mapping.lr_opacity}}},
        {"mlp", {{"hidden", c.mlp.hidden}, {"learning_rate", c.mlp.learning_rate}}},
        {"ablation",
         {{"uncertainty_enabled", c.ablation.uncertainty_enabled},
          {"depth_uncer_loss_enabled", c.ablation.depth_uncer_loss_enabled},
          {"disparity_reg_enabled", c.ablation.disparity_reg_enabled},
          {"final_ba_disp_reg", c.ablation.final_ba_disp_reg}}}};
    std::ofstream s(path);
    if (!s) throw IoError("cannot write config: " + path);
    s << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Reports

void write_report_json(const std::string& path, const RunReport& report) {
    json timing = json::array();
    for (const auto& t : report.timing)
        timing.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
    json j{{"metrics", metrics_to_json(report.metrics)},
           {"timing", timing},
           {"artifacts",
            {{"map", report.map_path},
             {"mlp", report.mlp_path},
             {"trajectory_full", "trajectory_full.txt"},
             {"trajectory_kf", "trajectory_kf.txt"}}}};
    std::ofstream s(path);
    if (!s) throw IoError("cannot write report: " + path);
    s << j.dump(2) << "\n";
}

void write_ablation_csv(const std::string& path,
                        const std::vector<AblationRow>& rows) {
    std::ofstream s(path);
    if (!s) throw IoError("cannot write ablation table: " + path);
    s << "variant,failed,ate_full,ate_kf,psnr,ssim,auroc,keyframes,gaussians\n";
    char line[256];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%s,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%llu\n",
                      r.name.c_str(), int(r.failed), r.metrics.ate_full,
                      r.metrics.ate_kf, r.metrics.psnr, r.metrics.ssim,
                      r.metrics.auroc, r.metrics.keyframes,
                      static_cast<unsigned long long>(r.metrics.gaussians));
        s << line;
    }
}

// ---------------------------------------------------------------------------
// SLAM run

namespace {

/// Everything run_slam threads between stages.
struct RunState {
    tracking::FrameGraph graph;
    splat::GaussianMap map;
    uncertainty::UncertaintyModel model;
    std::vector<mapping::MapKeyframe> map_kfs;  // mapping-resolution mirrors
};

mapping::MapKeyframe to_map_keyframe(const tracking::Keyframe& kf,
                                     const simworld::SensorFrame& sf,
                                     const CameraIntrinsics& map_K) {
    mapping::MapKeyframe m;
    m.id = kf.id;
    m.pose = kf.pose;
    m.image = resize(sf.gt.color, map_K.height, map_K.width);
    m.proxy_depth = resize(sf.proxy_depth, map_K.height, map_K.width);
    m.features = sf.features;
    return m;
}

void sync_map_keyframe_poses(RunState& s) {
    for (auto& m : s.map_kfs) m.pose = s.graph.keyframes[size_t(m.id)].pose;
}

std::vector<Pose> keyframe_poses(const tracking::FrameGraph& graph) {
    std::vector<Pose> poses;
    poses.reserve(graph.keyframes.size());
    for (const auto& kf : graph.keyframes) poses.push_back(kf.pose);
    return poses;
}

void refresh_tracking_beta(RunState& s) {
    for (auto& kf : s.graph.keyframes)
        kf.beta = uncertainty::predict_uncertainty(s.model, kf.features,
                                                   s.graph.K.height, s.graph.K.width);
}

double gt_trajectory_length(const evalkit::Trajectory& gt) {
    double len = 0;
    for (size_t i = 1; i < gt.size(); ++i)
        len += (gt.poses[i].t - gt.poses[i - 1].t).norm();
    return len;
}

}  // namespace

RunReport run_slam(const PipelineConfig& config, const simworld::SyntheticScene& scene,
                   const std::string& out_dir, bool resume) {
    config.validate();
    create_dir(out_dir);
    const std::string checkpoint_path = out_dir + "/checkpoint_postba.bin";

    const bool unc = config.ablation.uncertainty_enabled;
    LossWeights w = config.weights;
    if (!config.ablation.depth_uncer_loss_enabled) w.lambda1 = 0;
    LossWeights w_track = w;
    if (!config.ablation.disparity_reg_enabled) w_track.lambda4 = 0;
    tracking::TrackingOptions topts = config.tracking;
    mapping::MappingOptions mopts = config.mapping;
    const int refine_iters =
        config.fast ? 3000 : config.refinement_iterations;
    const int map_every = config.fast ? 5 : 1;

    const CameraIntrinsics& K = scene.K();
    const CameraIntrinsics map_K = K.scaled(config.resolution_scale);
    const splat::RasterizerOptions ropts;

    FrameCache frames(scene, config.feature_channels, topts.stride);
    tracking::FlowProviderFn provider = [&](int i, int j) {
        return simworld::oracle_flow(scene, i, j, topts.stride);
    };

    RunReport report;
    RunState s;
    s.graph.K = K;
    s.graph.opts = topts;
    s.model = uncertainty::UncertaintyModel::create(config.feature_channels,
                                                    config.mlp.hidden, config.seed);
    uncertainty::UncertaintyTrainer trainer(s.model, config.mlp.learning_rate);
    mapping::MapOptimizer optimizer(mopts);
    std::mt19937_64 map_rng(mix64(config.seed ^ 0x6d61705full));
    std::vector<std::vector<std::vector<int>>> nb_cache;  // regv neighbors per kf

    auto predict_map_beta = [&](const uncertainty::FeatureMap& F) {
        if (!unc) return GridD(map_K.height, map_K.width, 1, 1.0);
        return uncertainty::predict_uncertainty(s.model, F, map_K.height,
                                                map_K.width);
    };

    auto make_keyframe = [&](int frame, int id) {
        const simworld::SensorFrame& sf = frames.get(frame);
        tracking::Keyframe kf;
        kf.id = id;
        kf.frame_index = frame;
        kf.timestamp = scene.time_of(frame);
        kf.image = sf.gt.color;
        kf.features = sf.features;
        kf.proxy_depth = sf.proxy_depth;
        // constant-velocity pose guess from the last two keyframes
        const auto& kfs = s.graph.keyframes;
        if (kfs.size() >= 2) {
            const Pose& a = kfs[kfs.size() - 2].pose;
            const Pose& b = kfs.back().pose;
            kf.pose = (b * a.inverse()) * b;
        } else if (!kfs.empty()) {
            kf.pose = kfs.back().pose;
        }
        return kf;
    };

    /// One mapping round for the newest keyframe: spawn, then window-sampled
    /// optimization with a parallel MLP step per iteration.
    auto map_new_keyframe = [&](int kf_id) {
        const auto& kf = s.graph.keyframes[size_t(kf_id)];
        s.map_kfs.push_back(to_map_keyframe(kf, frames.get(kf.frame_index), map_K));
        nb_cache.push_back(uncertainty::regv_neighbors(kf.features));
        mapping::expand_map(s.map, s.map_kfs.back(), map_K, mopts, ropts);

        mapping::LocalWindow window =
            mapping::build_local_window(s.map_kfs, map_K, mopts);
        for (int it = 0; it < mopts.iterations_per_keyframe; ++it) {
            int id = mapping::sample_keyframe(window, int(s.map_kfs.size()), map_rng);
            const mapping::MapKeyframe& mk = s.map_kfs[size_t(id)];
            GridD beta = predict_map_beta(mk.features);
            auto out = optimizer.step(s.map, mk, beta, map_K, w, ropts);
            if (unc) {
                trainer.train_step(out.render.color, out.render.depth, mk.image,
                                   mk.proxy_depth, mk.features, w,
                                   &nb_cache[size_t(id)]);
                s.model = trainer.model();
            }
        }
        if (unc) refresh_tracking_beta(s);
    };

    const bool resuming =
        resume && std::filesystem::exists(std::filesystem::path(checkpoint_path));

    if (!resuming) {
        {
            StageClock clock{report.timing, "tracking_mapping"};
            int last_kf_frame = 0;
            for (int f = 0; f < scene.n_frames(); ++f) {
                bool insert = f == 0;
                if (!insert) {
                    double flow = mean_flow_magnitude(provider(last_kf_frame, f));
                    insert = tracking::should_insert_keyframe(flow, f - last_kf_frame,
                                                              topts);
                }
                if (!insert) continue;

                int id = int(s.graph.keyframes.size());
                tracking::add_keyframe(s.graph, make_keyframe(f, id), provider);
                last_kf_frame = f;
                if (!config.fast && id > 0)
                    s.graph.keyframes[size_t(id)].reg_mask =
                        tracking::compute_reg_mask(s.graph, id);

                if (!s.graph.initialized) {
                    if (id + 1 < topts.init_keyframes) {
                        // bootstrap solve so pose guesses stay near the data
                        if (id > 0)
                            tracking::dba_solve(s.graph, w_track,
                                                {topts.dba_iterations, true,
                                                 !config.fast});
                        continue;
                    }
                    tracking::initialize(s.graph, w_track);
                    for (int k = 0; k <= id; ++k)
                        if (k % map_every == 0 || k == id) map_new_keyframe(k);
                    continue;
                }

                std::vector<Pose> old_poses = keyframe_poses(s.graph);
                tracking::dba_solve(s.graph, w_track,
                                    {topts.dba_iterations, false, !config.fast});
                mapping::deform_map(s.map, old_poses, keyframe_poses(s.graph));
                sync_map_keyframe_poses(s);
                if (id % map_every == 0) map_new_keyframe(id);
            }
            if (!s.graph.initialized)
                throw InsufficientFrames("sequence ended before initialization");
        }

        {
            StageClock clock{report.timing, "final_global_ba"};
            std::vector<Pose> old_poses = keyframe_poses(s.graph);
            tracking::final_global_ba(s.graph, w_track, provider,
                                      config.ablation.final_ba_disp_reg);
            mapping::deform_map(s.map, old_poses, keyframe_poses(s.graph));
            sync_map_keyframe_poses(s);
        }

        Checkpoint ck;
        for (const auto& kf : s.graph.keyframes)
            ck.keyframes.push_back({kf.id, kf.frame_index, kf.timestamp, kf.pose});
        ck.map = s.map;
        ck.model = trainer.model();
        save_checkpoint(checkpoint_path, ck);
        s.model = trainer.model();
    } else {
        StageClock clock{report.timing, "resume"};
        Checkpoint ck = load_checkpoint(checkpoint_path);
        s.map = std::move(ck.map);
        s.model = std::move(ck.model);
        for (const auto& k : ck.keyframes) {
            const simworld::SensorFrame& sf = frames.get(k.frame_index);
            tracking::Keyframe kf;
            kf.id = k.id;
            kf.frame_index = k.frame_index;
            kf.timestamp = k.timestamp;
            kf.image = sf.gt.color;
            kf.features = sf.features;
            kf.proxy_depth = sf.proxy_depth;
            kf.pose = k.pose;
            s.graph.keyframes.push_back(std::move(kf));
            s.map_kfs.push_back(
                to_map_keyframe(s.graph.keyframes.back(), sf, map_K));
        }
        s.graph.initialized = true;
    }

    {
        StageClock clock{report.timing, "final_refinement"};
        // the refinement stage starts its optimizers cold in both the
        // uninterrupted and the resumed path, so the two match exactly
        if (unc) {
            uncertainty::UncertaintyTrainer refine_trainer(s.model,
                                                           config.mlp.learning_rate);
            mapping::final_refinement(s.map, refine_trainer, s.map_kfs, refine_iters,
                                      map_K, w, mopts, mix64(config.seed ^ 0x726566ull),
                                      ropts);
            s.model = refine_trainer.model();
        } else {
            mapping::MapOptimizer refine_opt(mopts);
            mapping::LocalWindow window =
                mapping::build_local_window(s.map_kfs, map_K, mopts);
            std::mt19937_64 rng(mix64(config.seed ^ 0x726566ull));
            GridD ones(map_K.height, map_K.width, 1, 1.0);
            for (int it = 0; it < refine_iters && !s.map_kfs.empty(); ++it) {
                int id = mapping::sample_keyframe(window, int(s.map_kfs.size()), rng);
                refine_opt.step(s.map, s.map_kfs[size_t(id)], ones, map_K, w, ropts);
            }
        }
        if (unc) refresh_tracking_beta(s);
    }

    evalkit::Trajectory traj_full;
    {
        StageClock clock{report.timing, "non_keyframe_recovery"};
        std::vector<tracking::FrameObservation> obs(size_t(scene.n_frames()));
        for (int f = 0; f < scene.n_frames(); ++f) {
            const simworld::SensorFrame& sf = frames.get(f);
            auto& o = obs[size_t(f)];
            o.frame_index = f;
            o.timestamp = scene.time_of(f);
            o.image = resize(sf.gt.color, map_K.height, map_K.width);
            o.proxy_depth = sf.proxy_depth;
            if (unc) {
                o.beta = uncertainty::predict_uncertainty(s.model, sf.features,
                                                          map_K.height, map_K.width);
                o.beta_dba = uncertainty::predict_uncertainty(s.model, sf.features,
                                                              K.height, K.width);
            }
        }
        traj_full =
            tracking::solve_non_keyframe_poses(s.graph, obs, provider, s.map, map_K,
                                               ropts);
    }

    {
        StageClock clock{report.timing, "metrics_and_artifacts"};
        evalkit::Trajectory traj_kf;
        for (const auto& kf : s.graph.keyframes)
            traj_kf.push_back(kf.timestamp, kf.pose);

        RunMetrics& m = report.metrics;
        m.ate_full = evalkit::ate_rmse(traj_full, scene.camera);
        m.ate_kf = evalkit::ate_rmse(traj_kf, scene.camera);
        m.trajectory_length = gt_trajectory_length(scene.camera);
        m.keyframes = int(s.graph.keyframes.size());
        m.gaussians = s.map.size();

        // held-out views: every Nth non-keyframe rendered from its estimate
        std::vector<bool> is_kf(size_t(scene.n_frames()), false);
        for (const auto& kf : s.graph.keyframes) is_kf[size_t(kf.frame_index)] = true;
        create_dir(out_dir + "/renders");
        double psnr_sum = 0, ssim_sum = 0;
        int held_out = 0, skip = 0;
        char name[64];
        for (int f = 0; f < scene.n_frames(); ++f) {
            if (is_kf[size_t(f)]) continue;
            if (skip++ % config.held_out_stride != 0) continue;
            auto render = splat::rasterize(s.map, traj_full.poses[size_t(f)], map_K,
                                           ropts);
            GridD gt = resize(frames.get(f).gt.color, map_K.height, map_K.width);
            psnr_sum += evalkit::psnr(render.color, gt);
            ssim_sum += evalkit::ssim(render.color, gt);
            ++held_out;
            std::snprintf(name, sizeof(name), "/renders/heldout_%04d.png", f);
            io::write_png(out_dir + name, render.color);
        }
        m.psnr = held_out > 0 ? psnr_sum / held_out : 0.0;
        m.ssim = held_out > 0 ? ssim_sum / held_out : 0.0;

        // beta vs dynamic masks, stacked over all keyframes
        GridD beta_all(m.keyframes * map_K.height, map_K.width, 1);
        GridD mask_all(m.keyframes * map_K.height, map_K.width, 1);
        bool any_dynamic = false;
        for (int k = 0; k < m.keyframes; ++k) {
            const auto& kf = s.graph.keyframes[size_t(k)];
            GridD beta = predict_map_beta(kf.features);
            GridD mask = resize(frames.get(kf.frame_index).gt.dyn_mask, map_K.height,
                                map_K.width);
            for (int y = 0; y < map_K.height; ++y)
                for (int x = 0; x < map_K.width; ++x) {
                    beta_all.at(k * map_K.height + y, x) = beta.at(y, x);
                    double dyn = mask.at(y, x) > 0.5 ? 1.0 : 0.0;
                    mask_all.at(k * map_K.height + y, x) = dyn;
                    any_dynamic |= dyn > 0;
                }
        }
        m.auroc = any_dynamic ? evalkit::dynamic_auroc(beta_all, mask_all) : 0.5;

        report.trajectory_full = std::move(traj_full);
        report.trajectory_kf = std::move(traj_kf);
        report.map_path = out_dir + "/map.gmap";
        report.mlp_path = out_dir + "/uncertainty.umlp";
        report.report_path = out_dir + "/report.json";
        evalkit::write_tum(out_dir + "/trajectory_full.txt", report.trajectory_full);
        evalkit::write_tum(out_dir + "/trajectory_kf.txt", report.trajectory_kf);
        splat::save_map(report.map_path, s.map);
        uncertainty::save_model(report.mlp_path, s.model);
    }
    write_report_json(report.report_path, report);
    return report;
}

std::vector<AblationRow> run_ablation(const PipelineConfig& config,
                                      const std::vector<std::string>& toggles,
                                      const simworld::SyntheticScene& scene,
                                      const std::string& out_dir) {
    create_dir(out_dir);
    std::vector<std::pair<std::string, PipelineConfig>> variants;
    variants.emplace_back("full", config);
    for (const std::string& t : toggles) {
        PipelineConfig v = config;
        std::string name;
        if (t == "a") {
            v.ablation.uncertainty_enabled = false;
            name = "no_uncertainty";
        } else if (t == "b") {
            v.ablation.depth_uncer_loss_enabled = false;
            name = "no_depth_uncer_loss";
        } else if (t == "d") {
            v.ablation.disparity_reg_enabled = false;
            name = "no_disparity_reg";
        } else {
            throw InvalidConfig("unknown ablation toggle: " + t);
        }
        variants.emplace_back(name, v);
    }

    std::vector<AblationRow> rows;
    for (const auto& [name, cfg] : variants) {
        AblationRow row;
        row.name = name;
        try {
            row.metrics =
                run_slam(cfg, scene, out_dir + "/variant_" + name).metrics;
        } catch (const SingularSystem&) {
            row.failed = true;
        } catch (const DisconnectedGraph&) {
            row.failed = true;
        } catch (const InsufficientFrames&) {
            row.failed = true;
        }
        rows.push_back(std::move(row));
    }
    write_ablation_csv(out_dir + "/ablation.csv", rows);

    json j = json::array();
    for (const auto& r : rows)
        j.push_back({{"variant", r.name},
                     {"failed", r.failed},
                     {"metrics", metrics_to_json(r.metrics)}});
    std::ofstream s(out_dir + "/ablation.json");
    if (!s) throw IoError("cannot write ablation report");
    s << j.dump(2) << "\n";
    return rows;
}

}  // namespace uslam::pipeline
