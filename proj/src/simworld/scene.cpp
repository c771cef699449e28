#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "uslam/simworld.hpp"

namespace uslam::simworld {

using json = nlohmann::json;

namespace {

constexpr double kRayEps = 1e-6;

/// splitmix64; used to derive independent per-entity seeds.
uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

/// Nearest positive hit parameter of a ray against a local-frame primitive,
/// with dir scaled so the parameter equals camera z-depth.
std::optional<double> intersect_local(const Primitive& p, const Vector3d& o,
                                      const Vector3d& d) {
    switch (p.kind) {
        case Primitive::Kind::Plane: {
            double denom = d.dot(p.normal);
            if (std::abs(denom) < 1e-12) return std::nullopt;
            double t = (p.point - o).dot(p.normal) / denom;
            if (t <= kRayEps) return std::nullopt;
            return t;
        }
        case Primitive::Kind::Box: {
            double tmin = -1e300, tmax = 1e300;
            for (int k = 0; k < 3; ++k) {
                if (std::abs(d[k]) < 1e-15) {
                    if (o[k] < p.box_min[k] || o[k] > p.box_max[k]) return std::nullopt;
                    continue;
                }
                double t0 = (p.box_min[k] - o[k]) / d[k];
                double t1 = (p.box_max[k] - o[k]) / d[k];
                if (t0 > t1) std::swap(t0, t1);
                tmin = std::max(tmin, t0);
                tmax = std::min(tmax, t1);
            }
            if (tmax < tmin) return std::nullopt;
            if (tmin > kRayEps) return tmin;
            if (tmax > kRayEps) return tmax;  // camera inside the box
            return std::nullopt;
        }
        case Primitive::Kind::Sphere: {
            Vector3d oc = o - p.center;
            double a = d.squaredNorm();
            double half_b = oc.dot(d);
            double c = oc.squaredNorm() - p.radius * p.radius;
            double disc = half_b * half_b - a * c;
            if (disc < 0) return std::nullopt;
            double sq = std::sqrt(disc);
            double t = (-half_b - sq) / a;
            if (t <= kRayEps) t = (-half_b + sq) / a;
            if (t <= kRayEps) return std::nullopt;
            return t;
        }
    }
    return std::nullopt;
}

/// Smooth procedural color: sinusoids of the local hit point with phases and
/// directions keyed by the material id.
Vector3d texture_color(const TexturedPrimitive& tp, const Vector3d& local) {
    Vector3d c = tp.base_color;
    for (int ch = 0; ch < 3; ++ch) {
        uint64_t h = mix64(uint64_t(tp.material_id) * 3 + uint64_t(ch), 0x7e37u);
        Vector3d dir(double((h >> 0) & 0xffff) / 65535.0 - 0.5,
                     double((h >> 16) & 0xffff) / 65535.0 - 0.5,
                     double((h >> 32) & 0xffff) / 65535.0 - 0.5);
        dir.normalize();
        double phase = double((h >> 48) & 0xffff) / 65535.0 * 2 * M_PI;
        c[ch] += tp.tex_amp * std::sin(2 * M_PI * tp.tex_freq * local.dot(dir) + phase);
    }
    return c.cwiseMax(0.0).cwiseMin(1.0);
}

Pose lerp_pose(const Pose& a, const Pose& b, double f) {
    Pose p;
    p.q = a.q.slerp(f, b.q);
    p.t = (1 - f) * a.t + f * b.t;
    return p;
}

Pose look_at_pose(const Vector3d& position, const Vector3d& target) {
    Vector3d f = target - position;
    if (f.norm() < 1e-9) throw InvalidConfig("camera waypoint looks at itself");
    f.normalize();
    Vector3d up(0, 1, 0);
    Vector3d r = f.cross(up);
    if (r.norm() < 1e-9) throw InvalidConfig("camera looks straight along world up");
    r.normalize();
    Vector3d d = f.cross(r);  // camera y axis (points world-down)
    geom::Matrix3d R;
    R.col(0) = r;
    R.col(1) = d;
    R.col(2) = f;
    Pose p;
    p.q = Eigen::Quaterniond(R).normalized();
    p.t = position;
    return p;
}

}  // namespace

Pose MotionScript::at(double t) const {
    if (times.empty()) throw InvalidConfig("empty motion script");
    if (t <= times.front()) return poses.front();
    if (t >= times.back()) return poses.back();
    auto it = std::upper_bound(times.begin(), times.end(), t);
    size_t k = size_t(it - times.begin());
    double f = (t - times[k - 1]) / (times[k] - times[k - 1]);
    return lerp_pose(poses[k - 1], poses[k], f);
}

void MotionScript::validate(double t_begin, double t_end) const {
    if (times.size() != poses.size() || times.empty())
        throw InvalidConfig("motion script times/poses mismatch");
    for (size_t i = 1; i < times.size(); ++i)
        if (times[i] <= times[i - 1])
            throw InvalidConfig("motion script times must increase");
    if (times.front() > t_begin + 1e-9 || times.back() < t_end - 1e-9)
        throw InvalidConfig("motion script must span the whole sequence");
}

SurfaceHit trace_pixel(const SyntheticScene& scene, int frame, double u, double v) {
    const auto& K = scene.K();
    const Pose& cam = scene.camera.poses[size_t(frame)];
    Vector3d d_cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
    Vector3d o = cam.t;
    Vector3d d = cam.q * d_cam;  // z-component of d_cam is 1: hit param = depth

    SurfaceHit best;
    double best_t = 1e300;
    auto consider = [&](const TexturedPrimitive& tp, const Pose& world_from_local,
                        int dyn_index) {
        Pose inv = world_from_local.inverse();
        Vector3d ol = geom::transform_point(inv, o);
        Vector3d dl = inv.q * d;
        auto t = intersect_local(tp.geom, ol, dl);
        if (!t || *t >= best_t) return;
        best_t = *t;
        Vector3d local = ol + *t * dl;
        best.hit = true;
        best.depth = *t;
        best.world = o + *t * d;
        best.material_id = tp.material_id;
        best.dynamic_index = dyn_index;
        best.color = texture_color(tp, local);
    };
    for (const auto& tp : scene.config.statics) consider(tp, Pose::identity(), -1);
    double t_frame = scene.time_of(frame);
    for (size_t k = 0; k < scene.config.dynamics.size(); ++k)
        consider(scene.config.dynamics[k].prim,
                 scene.config.dynamics[k].motion.at(t_frame), int(k));
    return best;
}

FrameRender render_gt(const SyntheticScene& scene, int frame) {
    const auto& K = scene.K();
    FrameRender out;
    out.color = GridD(K.height, K.width, 3);
    out.depth = GridD(K.height, K.width, 1);
    out.dyn_mask = GridD(K.height, K.width, 1);
    for (int y = 0; y < K.height; ++y)
        for (int x = 0; x < K.width; ++x) {
            SurfaceHit h = trace_pixel(scene, frame, x, y);
            if (!h.hit) continue;
            for (int c = 0; c < 3; ++c) out.color.at(y, x, c) = h.color[c];
            out.depth.at(y, x) = h.depth;
            out.dyn_mask.at(y, x) = h.dynamic_index >= 0 ? 1.0 : 0.0;
        }
    return out;
}

SyntheticScene generate_scene(const SceneConfig& config) {
    config.intrinsics.validate();
    if (config.statics.empty()) throw InvalidConfig("need at least one static primitive");
    if (config.n_frames < 2) throw InvalidConfig("need at least two frames");
    if (config.camera_waypoints.empty()) throw InvalidConfig("need camera waypoints");
    if (config.fps <= 0) throw InvalidConfig("fps must be positive");

    SyntheticScene scene;
    scene.config = config;
    double duration = (config.n_frames - 1) / config.fps;
    for (const auto& dyn : config.dynamics) dyn.motion.validate(0.0, duration);

    // camera waypoints interpolate position and look-at target
    const auto& wp = config.camera_waypoints;
    for (size_t i = 1; i < wp.size(); ++i)
        if (wp[i].time <= wp[i - 1].time)
            throw InvalidConfig("camera waypoint times must increase");
    for (int f = 0; f < config.n_frames; ++f) {
        double t = f / config.fps;
        Vector3d pos, target;
        if (t <= wp.front().time) {
            pos = wp.front().position;
            target = wp.front().look_at;
        } else if (t >= wp.back().time) {
            pos = wp.back().position;
            target = wp.back().look_at;
        } else {
            size_t k = 1;
            while (wp[k].time < t) ++k;
            double a = (t - wp[k - 1].time) / (wp[k].time - wp[k - 1].time);
            pos = (1 - a) * wp[k - 1].position + a * wp[k].position;
            target = (1 - a) * wp[k - 1].look_at + a * wp[k].look_at;
        }
        scene.camera.push_back(t, look_at_pose(pos, target));
    }

    // validity rule: dynamic objects may never cover half the frame
    const auto& K = config.intrinsics;
    for (int f = 0; f < config.n_frames; ++f) {
        int dyn = 0;
        for (int y = 0; y < K.height; ++y)
            for (int x = 0; x < K.width; ++x)
                if (trace_pixel(scene, f, x, y).dynamic_index >= 0) ++dyn;
        if (2 * dyn > K.width * K.height)
            throw DegenerateScene("dynamic objects cover over half of frame " +
                                  std::to_string(f));
    }
    return scene;
}

// ---------------------------------------------------------------------------
// JSON scene files

namespace {

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

Vector3d vec3(const json& j) {
    if (!j.is_array() || j.size() != 3) throw InvalidConfig("expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json to_json(const Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

TexturedPrimitive primitive_from_json(const json& j) {
    require_keys(j,
                 {"kind", "material", "color", "tex_amp", "tex_freq", "point", "normal",
                  "min", "max", "center", "radius"},
                 "primitive");
    TexturedPrimitive tp;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "plane") {
        tp.geom.kind = Primitive::Kind::Plane;
        tp.geom.point = vec3(j.at("point"));
        tp.geom.normal = vec3(j.at("normal")).normalized();
    } else if (kind == "box") {
        tp.geom.kind = Primitive::Kind::Box;
        tp.geom.box_min = vec3(j.at("min"));
        tp.geom.box_max = vec3(j.at("max"));
    } else if (kind == "sphere") {
        tp.geom.kind = Primitive::Kind::Sphere;
        tp.geom.center = vec3(j.at("center"));
        tp.geom.radius = j.at("radius").get<double>();
        if (tp.geom.radius <= 0) throw InvalidConfig("sphere radius must be positive");
    } else {
        throw InvalidConfig("unknown primitive kind: " + kind);
    }
    tp.material_id = j.at("material").get<int>();
    if (j.contains("color")) tp.base_color = vec3(j.at("color"));
    if (j.contains("tex_amp")) tp.tex_amp = j.at("tex_amp").get<double>();
    if (j.contains("tex_freq")) tp.tex_freq = j.at("tex_freq").get<double>();
    return tp;
}

json primitive_to_json(const TexturedPrimitive& tp) {
    json j;
    switch (tp.geom.kind) {
        case Primitive::Kind::Plane:
            j["kind"] = "plane";
            j["point"] = to_json(tp.geom.point);
            j["normal"] = to_json(tp.geom.normal);
            break;
        case Primitive::Kind::Box:
            j["kind"] = "box";
            j["min"] = to_json(tp.geom.box_min);
            j["max"] = to_json(tp.geom.box_max);
            break;
        case Primitive::Kind::Sphere:
            j["kind"] = "sphere";
            j["center"] = to_json(tp.geom.center);
            j["radius"] = tp.geom.radius;
            break;
    }
    j["material"] = tp.material_id;
    j["color"] = to_json(tp.base_color);
    j["tex_amp"] = tp.tex_amp;
    j["tex_freq"] = tp.tex_freq;
    return j;
}

}  // namespace

SceneConfig scene_config_from_json(const json& j);

SceneConfig scene_config_from_json(const json& j) {
    require_keys(j,
                 {"name", "seed", "intrinsics", "n_frames", "fps", "camera_waypoints",
                  "static_primitives", "dynamic_objects", "noise"},
                 "scene");
    SceneConfig c;
    if (j.contains("name")) c.name = j.at("name").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
    if (j.contains("intrinsics")) {
        const json& k = j.at("intrinsics");
        require_keys(k, {"fx", "fy", "cx", "cy", "width", "height"}, "intrinsics");
        c.intrinsics = {k.at("fx").get<double>(),  k.at("fy").get<double>(),
                        k.at("cx").get<double>(),  k.at("cy").get<double>(),
                        k.at("width").get<int>(),  k.at("height").get<int>()};
    }
    if (j.contains("n_frames")) c.n_frames = j.at("n_frames").get<int>();
    if (j.contains("fps")) c.fps = j.at("fps").get<double>();
    for (const json& w : j.at("camera_waypoints")) {
        require_keys(w, {"time", "position", "look_at"}, "camera waypoint");
        c.camera_waypoints.push_back(
            {w.at("time").get<double>(), vec3(w.at("position")), vec3(w.at("look_at"))});
    }
    for (const json& p : j.at("static_primitives"))
        c.statics.push_back(primitive_from_json(p));
    if (j.contains("dynamic_objects"))
        for (const json& d : j.at("dynamic_objects")) {
            require_keys(d, {"primitive", "waypoints"}, "dynamic object");
            DynamicObject obj;
            obj.prim = primitive_from_json(d.at("primitive"));
            for (const json& w : d.at("waypoints")) {
                require_keys(w, {"time", "position", "rotation"}, "object waypoint");
                Pose p;
                p.t = vec3(w.at("position"));
                if (w.contains("rotation")) {
                    const json& q = w.at("rotation");
                    if (!q.is_array() || q.size() != 4)
                        throw InvalidConfig("rotation must be [w,x,y,z]");
                    p.q = Eigen::Quaterniond(q[0].get<double>(), q[1].get<double>(),
                                             q[2].get<double>(), q[3].get<double>())
                              .normalized();
                }
                obj.motion.times.push_back(w.at("time").get<double>());
                obj.motion.poses.push_back(p);
            }
            c.dynamics.push_back(std::move(obj));
        }
    if (j.contains("noise")) {
        const json& n = j.at("noise");
        require_keys(n,
                     {"sigma_flow", "depth_a", "depth_b", "sigma_d", "corrupt_fraction",
                      "corrupt_scale", "sigma_f", "flow_confidence"},
                     "noise");
        auto range = [&](const char* key, double& lo, double& hi) {
            if (!n.contains(key)) return;
            const json& r = n.at(key);
            if (!r.is_array() || r.size() != 2) throw InvalidConfig("range needs [lo, hi]");
            lo = r[0].get<double>();
            hi = r[1].get<double>();
            if (hi < lo) throw InvalidConfig("range is reversed");
        };
        if (n.contains("sigma_flow")) c.noise.sigma_flow = n.at("sigma_flow").get<double>();
        range("depth_a", c.noise.depth_a_min, c.noise.depth_a_max);
        range("depth_b", c.noise.depth_b_min, c.noise.depth_b_max);
        if (n.contains("sigma_d")) c.noise.sigma_d = n.at("sigma_d").get<double>();
        if (n.contains("corrupt_fraction"))
            c.noise.corrupt_fraction = n.at("corrupt_fraction").get<double>();
        if (n.contains("corrupt_scale"))
            c.noise.corrupt_scale = n.at("corrupt_scale").get<double>();
        if (n.contains("sigma_f")) c.noise.sigma_f = n.at("sigma_f").get<double>();
        if (n.contains("flow_confidence"))
            c.noise.flow_confidence = n.at("flow_confidence").get<double>();
    }
    return c;
}

SceneConfig load_scene_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open scene file: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("bad scene json: ") + e.what());
    }
    return scene_config_from_json(j);
}

void save_scene_config(const std::string& path, const SceneConfig& c) {
    json j;
    j["name"] = c.name;
    j["seed"] = c.seed;
    j["intrinsics"] = {{"fx", c.intrinsics.fx},       {"fy", c.intrinsics.fy},
                       {"cx", c.intrinsics.cx},       {"cy", c.intrinsics.cy},
                       {"width", c.intrinsics.width}, {"height", c.intrinsics.height}};
    j["n_frames"] = c.n_frames;
    j["fps"] = c.fps;
    j["camera_waypoints"] = json::array();
    for (const auto& w : c.camera_waypoints)
        j["camera_waypoints"].push_back({{"time", w.time},
                                         {"position", to_json(w.position)},
                                         {"look_at", to_json(w.look_at)}});
    j["static_primitives"] = json::array();
    for (const auto& p : c.statics) j["static_primitives"].push_back(primitive_to_json(p));
    j["dynamic_objects"] = json::array();
    for (const auto& d : c.dynamics) {
        json obj;
        obj["primitive"] = primitive_to_json(d.prim);
        obj["waypoints"] = json::array();
        for (size_t k = 0; k < d.motion.times.size(); ++k) {
            const Pose& p = d.motion.poses[k];
            obj["waypoints"].push_back(
                {{"time", d.motion.times[k]},
                 {"position", to_json(p.t)},
                 {"rotation", json::array({p.q.w(), p.q.x(), p.q.y(), p.q.z()})}});
        }
        j["dynamic_objects"].push_back(obj);
    }
    j["noise"] = {{"sigma_flow", c.noise.sigma_flow},
                  {"depth_a", json::array({c.noise.depth_a_min, c.noise.depth_a_max})},
                  {"depth_b", json::array({c.noise.depth_b_min, c.noise.depth_b_max})},
                  {"sigma_d", c.noise.sigma_d},
                  {"corrupt_fraction", c.noise.corrupt_fraction},
                  {"corrupt_scale", c.noise.corrupt_scale},
                  {"sigma_f", c.noise.sigma_f},
                  {"flow_confidence", c.noise.flow_confidence}};
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Standard test scenes

namespace {

/// Desk-scale room shared by the standard scenes: five walls plus two static
/// props that provide parallax.
SceneConfig room_base(const std::string& name, uint64_t seed) {
    SceneConfig c;
    c.name = name;
    c.seed = seed;
    c.intrinsics = {160.0, 160.0, 80.0, 60.0, 160, 120};
    c.n_frames = 120;
    c.fps = 30.0;

    auto plane = [](Vector3d point, Vector3d normal, int mat, Vector3d color,
                    double amp, double freq) {
        TexturedPrimitive tp;
        tp.geom.kind = Primitive::Kind::Plane;
        tp.geom.point = point;
        tp.geom.normal = normal;
        tp.material_id = mat;
        tp.base_color = color;
        tp.tex_amp = amp;
        tp.tex_freq = freq;
        return tp;
    };
    c.statics.push_back(plane({0, 0, 0}, {0, 1, 0}, 1, {0.55, 0.45, 0.35}, 0.12, 0.6));
    c.statics.push_back(plane({0, 0, 7}, {0, 0, -1}, 2, {0.40, 0.50, 0.62}, 0.15, 0.5));
    c.statics.push_back(plane({-3, 0, 0}, {1, 0, 0}, 3, {0.60, 0.52, 0.42}, 0.12, 0.7));
    c.statics.push_back(plane({3, 0, 0}, {-1, 0, 0}, 4, {0.46, 0.58, 0.46}, 0.12, 0.7));
    c.statics.push_back(plane({0, 3.5, 0}, {0, -1, 0}, 5, {0.68, 0.66, 0.60}, 0.08, 0.4));
    c.statics.push_back(plane({0, 0, -3}, {0, 0, 1}, 6, {0.5, 0.42, 0.5}, 0.1, 0.5));

    TexturedPrimitive crate;
    crate.geom.kind = Primitive::Kind::Box;
    crate.geom.box_min = {-1.6, 0.0, 4.4};
    crate.geom.box_max = {-0.7, 0.9, 5.3};
    crate.material_id = 7;
    crate.base_color = {0.66, 0.40, 0.28};
    crate.tex_amp = 0.14;
    crate.tex_freq = 1.1;
    c.statics.push_back(crate);

    TexturedPrimitive globe;
    globe.geom.kind = Primitive::Kind::Sphere;
    globe.geom.center = {1.2, 0.55, 4.8};
    globe.geom.radius = 0.55;
    globe.material_id = 8;
    globe.base_color = {0.32, 0.45, 0.65};
    globe.tex_amp = 0.16;
    globe.tex_freq = 1.3;
    c.statics.push_back(globe);

    c.camera_waypoints = {{0.0, {-1.2, 1.5, 0.6}, {0.1, 1.0, 5.0}},
                          {2.0, {0.0, 1.6, 1.0}, {0.0, 1.0, 5.0}},
                          {3.97, {1.2, 1.5, 0.6}, {-0.1, 1.0, 5.0}}};

    c.noise.sigma_flow = 0.05;
    c.noise.depth_a_min = 0.998;
    c.noise.depth_a_max = 1.002;
    c.noise.depth_b_min = -0.002;
    c.noise.depth_b_max = 0.002;
    c.noise.sigma_d = 0.003;
    c.noise.corrupt_fraction = 0.02;
    c.noise.corrupt_scale = 1.4;
    c.noise.sigma_f = 0.02;
    return c;
}

DynamicObject walker_sphere(double radius, Vector3d color, int mat,
                            std::vector<std::pair<double, Vector3d>> waypoints) {
    DynamicObject obj;
    obj.prim.geom.kind = Primitive::Kind::Sphere;
    obj.prim.geom.radius = radius;
    obj.prim.material_id = mat;
    obj.prim.base_color = color;
    obj.prim.tex_amp = 0.12;
    obj.prim.tex_freq = 1.5;
    for (auto& [t, p] : waypoints) {
        Pose pose;
        pose.t = p;
        obj.motion.times.push_back(t);
        obj.motion.poses.push_back(pose);
    }
    return obj;
}

}  // namespace

std::vector<SceneConfig> default_suite() {
    std::vector<SceneConfig> suite;

    suite.push_back(room_base("static", 11));

    SceneConfig slow = room_base("slow_distractor", 12);
    slow.dynamics.push_back(walker_sphere(
        0.35, {0.75, 0.30, 0.30}, 100,
        {{0.0, {-1.1, 0.9, 3.6}}, {3.97, {1.1, 0.9, 3.6}}}));
    suite.push_back(slow);

    SceneConfig fast = room_base("fast_distractor", 13);
    fast.dynamics.push_back(walker_sphere(0.22, {0.75, 0.65, 0.25}, 101,
                                          {{0.0, {-1.3, 0.55, 3.6}},
                                           {1.9, {1.3, 0.6, 3.8}},
                                           {3.97, {-1.2, 0.5, 3.6}}}));
    suite.push_back(fast);

    // The back wall is kept nearly untextured here so the camouflaged
    // distractor below offers no photometric cue against it.
    SceneConfig three = room_base("three_distractors", 14);
    for (auto& p : three.statics)
        if (p.material_id == 2) p.tex_amp = 0.02;
    three.dynamics.push_back(walker_sphere(
        0.16, {0.70, 0.30, 0.55}, 102,
        {{0.0, {-1.2, 0.8, 3.2}}, {3.97, {1.2, 0.8, 3.4}}}));
    three.dynamics.push_back(walker_sphere(
        0.14, {0.30, 0.65, 0.60}, 103,
        {{0.0, {1.2, 1.6, 4.2}}, {2.0, {-1.0, 1.4, 4.0}}, {3.97, {1.0, 1.7, 4.2}}}));
    // camouflaged distractor: colored like the flat back wall and barely
    // textured, so only its depth error separates it from the background; it
    // sits parked (indistinguishable from furniture) for the first 2.55 s,
    // then sweeps across the wall late in the sequence
    DynamicObject chameleon = walker_sphere(0.25, {0.40, 0.50, 0.62}, 104,
                                            {{0.0, {-1.55, 1.45, 3.55}},
                                             {2.55, {-1.55, 1.45, 3.55}},
                                             {3.97, {0.15, 1.5, 3.6}}});
    chameleon.prim.tex_amp = 0.02;
    chameleon.prim.tex_freq = 0.5;
    three.dynamics.push_back(chameleon);
    suite.push_back(three);

    SceneConfig entry = room_base("mid_entry", 15);
    entry.dynamics.push_back(walker_sphere(0.30, {0.30, 0.70, 0.35}, 105,
                                           {{0.0, {-2.2, 0.9, 3.5}},
                                            {2.0, {-2.2, 0.9, 3.5}},
                                            {3.97, {-0.2, 0.9, 3.6}}}));
    suite.push_back(entry);

    SceneConfig loop = room_base("loop", 16);
    loop.camera_waypoints = {{0.0, {-1.0, 1.5, 0.4}, {0.0, 1.0, 5.0}},
                             {1.0, {1.0, 1.5, 0.4}, {0.0, 1.0, 5.0}},
                             {2.0, {1.0, 1.5, 1.6}, {0.0, 1.0, 5.0}},
                             {3.0, {-1.0, 1.5, 1.6}, {0.0, 1.0, 5.0}},
                             {3.97, {-1.0, 1.5, 0.4}, {0.0, 1.0, 5.0}}};
    suite.push_back(loop);

    return suite;
}

}  // namespace uslam::simworld
