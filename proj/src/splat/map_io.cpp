#include <cstring>
#include <fstream>

#include "uslam/splat.hpp"

namespace uslam::splat {

namespace {
constexpr uint32_t kMagic = 0x50414d47u;  // "GMAP" little-endian
constexpr uint32_t kVersion = 1;
}  // namespace

void save_map(const std::string& path, const GaussianMap& map) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    uint64_t count = map.size();
    f.write(reinterpret_cast<const char*>(&kMagic), 4);
    f.write(reinterpret_cast<const char*>(&kVersion), 4);
    f.write(reinterpret_cast<const char*>(&count), 8);
    for (const auto& g : map.gaussians) {
        float rec[14];
        for (int i = 0; i < 3; ++i) rec[i] = float(g.mean[i]);
        for (int i = 0; i < 4; ++i) rec[3 + i] = float(g.quat[i]);
        for (int i = 0; i < 3; ++i) rec[7 + i] = float(g.log_scale[i]);
        for (int i = 0; i < 3; ++i) rec[10 + i] = float(g.color[i]);
        rec[13] = float(g.opacity_logit);
        f.write(reinterpret_cast<const char*>(rec), sizeof(rec));
        f.write(reinterpret_cast<const char*>(&g.anchor_keyframe_id), 4);
    }
    if (!f) throw IoError("write failed: " + path);
}

GaussianMap load_map(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    uint32_t magic = 0, version = 0;
    uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&magic), 4);
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&count), 8);
    if (!f || magic != kMagic || version != kVersion)
        throw IoError("bad map file: " + path);
    GaussianMap map;
    map.gaussians.resize(count);
    for (auto& g : map.gaussians) {
        float rec[14];
        f.read(reinterpret_cast<char*>(rec), sizeof(rec));
        f.read(reinterpret_cast<char*>(&g.anchor_keyframe_id), 4);
        for (int i = 0; i < 3; ++i) g.mean[i] = rec[i];
        for (int i = 0; i < 4; ++i) g.quat[i] = rec[3 + i];
        for (int i = 0; i < 3; ++i) g.log_scale[i] = rec[7 + i];
        for (int i = 0; i < 3; ++i) g.color[i] = rec[10 + i];
        g.opacity_logit = rec[13];
    }
    if (!f) throw IoError("truncated map file: " + path);
    return map;
}

}  // namespace uslam::splat
