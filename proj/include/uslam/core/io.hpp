#pragma once

#include <string>

#include "uslam/core/image.hpp"

namespace uslam::io {

/// 8-bit PNG, grayscale (c=1) or RGB (c=3). Values outside [0,1] are clamped.
void write_png(const std::string& path, const GridD& img);
GridD read_png(const std::string& path);

/// 32-bit float PFM, single channel ("Pf") or RGB ("PF"). Little-endian.
void write_pfm(const std::string& path, const GridD& img);
GridD read_pfm(const std::string& path);

/// Raw float feature block: magic "FBLK", u32 version, u32 h/w/c, f32 data.
void write_feature_block(const std::string& path, const GridD& f);
GridD read_feature_block(const std::string& path);

}  // namespace uslam::io
