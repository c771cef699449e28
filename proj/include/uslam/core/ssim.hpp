#pragma once

#include "uslam/core/image.hpp"

namespace uslam {

/// Windowed SSIM with an 11x11 Gaussian kernel (sigma 1.5), k1=0.01, k2=0.03.
/// Multi-channel inputs are converted to grayscale by channel mean.
/// Convolution uses zero padding, so the window is symmetric and self-adjoint.
struct SsimContext {
    GridD a, b;          // grayscale inputs
    GridD mu_a, mu_b;    // windowed means
    GridD var_a, var_b;  // windowed variances
    GridD cov;           // windowed covariance
    GridD map;           // per-pixel SSIM
};

/// Separable Gaussian blur of every channel, zero-padded.
GridD gaussian_blur(const GridD& img, int radius = 5, double sigma = 1.5);

GridD to_grayscale(const GridD& img);

/// Per-pixel SSIM map between images of identical shape.
SsimContext ssim_map(const GridD& a, const GridD& b);

double ssim_mean(const GridD& a, const GridD& b);

/// Given dL/d(ssim map), returns dL/da as a grayscale grid. Spread the result
/// over channels (divided by channel count) to backprop through to_grayscale.
GridD ssim_backward(const SsimContext& ctx, const GridD& grad_map);

}  // namespace uslam
